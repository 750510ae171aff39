//! Feature datasets: a matrix of row vectors plus a provenance tag.

use serde::{Deserialize, Serialize};

use crate::numeric::Matrix;

/// Where a dataset's rows came from, relative to the audited teacher model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Member,
    NonMember,
    Generated,
    Candidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub matrix: Matrix,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(matrix: Matrix, provenance: Provenance) -> Self {
        Dataset { matrix, provenance }
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

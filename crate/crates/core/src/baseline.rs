//! Instance-level membership baseline: score each query by its squared
//! distance to the nearest generated sample (lower means more member-like).
//!
//! This is the minimal-reconstruction-error style of intrinsic attack, used
//! here to show that per-instance signals die under distillation while the
//! distributional detector keeps working.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricSummary, ScoredSample};
use crate::numeric::{pairwise_sq_dists, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    /// min over generated g of ||x - g||^2; lower means more member-like.
    pub score: f64,
    pub is_member: bool,
    pub model: ModelTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScoreTable {
    pub rows: Vec<InstanceScore>,
}

/// Exact nearest-generated-sample squared distance for every query row,
/// by linear scan.
pub fn nearest_sq_dists(queries: &Matrix, generated: &Matrix) -> Result<Vec<f64>> {
    if generated.rows() == 0 {
        return Err(Error::SampleTooSmall {
            context: "instance_scores generated set",
            need: 1,
            got: 0,
        });
    }
    let d2 = pairwise_sq_dists(queries, generated)?;
    Ok((0..queries.rows())
        .map(|i| d2.row(i).iter().copied().fold(f64::INFINITY, f64::min))
        .collect())
}

/// Score labeled query sets against one model's generated pool.
pub fn instance_scores(
    member_queries: &Matrix,
    non_member_queries: &Matrix,
    generated: &Matrix,
    model: ModelTag,
) -> Result<InstanceScoreTable> {
    let mut rows = Vec::with_capacity(member_queries.rows() + non_member_queries.rows());
    for score in nearest_sq_dists(member_queries, generated)? {
        rows.push(InstanceScore {
            score,
            is_member: true,
            model,
        });
    }
    for score in nearest_sq_dists(non_member_queries, generated)? {
        rows.push(InstanceScore {
            score,
            is_member: false,
            model,
        });
    }
    Ok(InstanceScoreTable { rows })
}

/// ASR / AUC / TPR@FPR=0.05 of the instance attack, treating the negated
/// score as the membership statistic.
pub fn instance_attack_metrics(table: &InstanceScoreTable) -> Result<MetricSummary> {
    let samples: Vec<ScoredSample> = table
        .rows
        .iter()
        .map(|r| ScoredSample::new(-r.score, r.is_member))
        .collect();
    MetricSummary::from_samples(&samples)
}

impl InstanceScoreTable {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("score,is_member,model\n");
        for r in &self.rows {
            let model = match r.model {
                ModelTag::Teacher => "teacher",
                ModelTag::Student => "student",
            };
            out.push_str(&format!("{},{},{}\n", r.score, r.is_member as u8, model));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{gaussian_noise, RngStream};

    #[test]
    fn exact_match_scores_zero() {
        let generated = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let queries = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let scores = nearest_sq_dists(&queries, &generated).unwrap();
        assert_eq!(scores, vec![0.0]);
    }

    #[test]
    fn one_dimensional_arithmetic() {
        let generated = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let queries = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(nearest_sq_dists(&queries, &generated).unwrap(), vec![9.0]);
    }

    #[test]
    fn matches_brute_force_double_loop() {
        let queries = gaussian_noise(50, 4, 1.0, RngStream::new(1)).unwrap();
        let generated = gaussian_noise(30, 4, 1.0, RngStream::new(2)).unwrap();
        let fast = nearest_sq_dists(&queries, &generated).unwrap();
        for i in 0..queries.rows() {
            let mut best = f64::INFINITY;
            for j in 0..generated.rows() {
                let mut acc = 0.0;
                for k in 0..4 {
                    let d = queries.get(i, k) - generated.get(j, k);
                    acc += d * d;
                }
                best = best.min(acc);
            }
            assert!((fast[i] - best).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_generated_set_is_rejected() {
        let queries = Matrix::zeros(2, 2);
        let generated = Matrix::zeros(0, 2);
        assert!(nearest_sq_dists(&queries, &generated).is_err());
    }

    #[test]
    fn score_is_translation_invariant() {
        let queries = gaussian_noise(10, 3, 1.0, RngStream::new(3)).unwrap();
        let generated = gaussian_noise(8, 3, 1.0, RngStream::new(4)).unwrap();
        let base = nearest_sq_dists(&queries, &generated).unwrap();
        let shift = |m: &Matrix| {
            let mut s = m.clone();
            for v in s.data_mut() {
                *v += 17.25;
            }
            s
        };
        let shifted = nearest_sq_dists(&shift(&queries), &shift(&generated)).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn perfectly_separated_scores_give_auc_one() {
        let members = Matrix::from_vec(2, 1, vec![0.0, 0.1]).unwrap();
        let non_members = Matrix::from_vec(2, 1, vec![10.0, 11.0]).unwrap();
        let generated = Matrix::from_vec(2, 1, vec![0.05, 0.15]).unwrap();
        let table = instance_scores(&members, &non_members, &generated, ModelTag::Teacher).unwrap();
        let m = instance_attack_metrics(&table).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.asr, 1.0);

        let csv = table.to_csv_string();
        assert!(csv.starts_with("score,is_member,model\n"));
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains(",1,teacher"));
    }

    #[test]
    fn identical_distributions_give_chance_auc() {
        let members = gaussian_noise(500, 3, 1.0, RngStream::new(5)).unwrap();
        let non_members = gaussian_noise(500, 3, 1.0, RngStream::new(6)).unwrap();
        let generated = gaussian_noise(400, 3, 1.0, RngStream::new(7)).unwrap();
        let table = instance_scores(&members, &non_members, &generated, ModelTag::Student).unwrap();
        let m = instance_attack_metrics(&table).unwrap();
        assert!((m.auc - 0.5).abs() < 0.05, "auc {}", m.auc);
    }
}

//! Attack evaluation metrics: AUC, attack success rate, TPR at a capped FPR,
//! and histogram summaries for report figures.
//!
//! Conventions, pinned here since reported numbers depend on them:
//! higher statistic means "predicted positive"; AUC counts ties as 1/2
//! (Mann-Whitney); `asr` predicts positive at `statistic >= threshold`;
//! `best_asr` scans thresholds at midpoints between adjacent distinct
//! statistics plus both extremes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored decision: the membership statistic and the ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub statistic: f64,
    pub positive: bool,
}

impl ScoredSample {
    pub fn new(statistic: f64, positive: bool) -> Self {
        ScoredSample {
            statistic,
            positive,
        }
    }
}

fn class_counts(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    if let Some(bad) = samples.iter().find(|s| !s.statistic.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite statistic {} in scored samples",
            bad.statistic
        )));
    }
    let pos = samples.iter().filter(|s| s.positive).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Probability that a uniformly random positive outranks a random negative,
/// ties counting one half.
pub fn auc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_counts(samples)?;
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.statistic.partial_cmp(&b.statistic).unwrap());
    // Midranks handle ties exactly.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].statistic == sorted[i].statistic {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for s in &sorted[i..j] {
            if s.positive {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let np = pos as f64;
    let nn = neg as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Accuracy of "predict positive iff statistic >= threshold".
pub fn asr(samples: &[ScoredSample], threshold: f64) -> Result<f64> {
    class_counts(samples)?;
    let correct = samples
        .iter()
        .filter(|s| (s.statistic >= threshold) == s.positive)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Best achievable accuracy over all thresholds, and a threshold achieving it.
pub fn best_asr(samples: &[ScoredSample]) -> Result<(f64, f64)> {
    class_counts(samples)?;
    let mut stats: Vec<f64> = samples.iter().map(|s| s.statistic).collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stats.dedup();
    let mut thresholds = Vec::with_capacity(stats.len() + 1);
    thresholds.push(stats[0] - 1.0); // everything positive
    for w in stats.windows(2) {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    thresholds.push(stats[stats.len() - 1] + 1.0); // everything negative
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in thresholds {
        let a = asr(samples, t)?;
        if a > best.0 {
            best = (a, t);
        }
    }
    Ok(best)
}

/// Maximum TPR over thresholds whose empirical FPR stays at or below the cap.
pub fn tpr_at_fpr(samples: &[ScoredSample], fpr_cap: f64) -> Result<f64> {
    let (pos, neg) = class_counts(samples)?;
    if !(0.0 < fpr_cap && fpr_cap < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fpr cap must lie in (0, 1), got {fpr_cap}"
        )));
    }
    let mut stats: Vec<f64> = samples.iter().map(|s| s.statistic).collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stats.dedup();
    let mut best = 0.0f64;
    // Candidate thresholds: each distinct statistic, plus one above the max
    // (the all-negative classifier, TPR = FPR = 0).
    for t in stats {
        let tp = samples
            .iter()
            .filter(|s| s.positive && s.statistic >= t)
            .count();
        let fp = samples
            .iter()
            .filter(|s| !s.positive && s.statistic >= t)
            .count();
        let fpr = fp as f64 / neg as f64;
        if fpr <= fpr_cap {
            best = best.max(tp as f64 / pos as f64);
        }
    }
    Ok(best)
}

/// Fixed-width histogram of scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bin `values` into `bins` equal-width bins over [lo, hi]; values outside
    /// the range clamp to the end bins.
    pub fn from_values(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "histogram needs bins > 0 and hi > lo, got bins={bins}, lo={lo}, hi={hi}"
            )));
        }
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let idx = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1);
            counts[idx as usize] += 1;
        }
        Ok(Histogram { lo, hi, counts })
    }

    pub fn to_csv_string(&self) -> String {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.lo + i as f64 * width;
            out.push_str(&format!("{},{},{}\n", lo, lo + width, c));
        }
        out
    }
}

/// The summary triple reported everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub asr: f64,
    pub asr_threshold: f64,
    pub auc: f64,
    pub tpr_at_fpr_05: f64,
}

impl MetricSummary {
    pub fn from_samples(samples: &[ScoredSample]) -> Result<Self> {
        let (asr, asr_threshold) = best_asr(samples)?;
        Ok(MetricSummary {
            asr,
            asr_threshold,
            auc: auc(samples)?,
            tpr_at_fpr_05: tpr_at_fpr(samples, 0.05)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk(pos: &[f64], neg: &[f64]) -> Vec<ScoredSample> {
        pos.iter()
            .map(|&s| ScoredSample::new(s, true))
            .chain(neg.iter().map(|&s| ScoredSample::new(s, false)))
            .collect()
    }

    #[test]
    fn auc_perfect_separation() {
        let s = mk(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(auc(&s).unwrap(), 1.0);
    }

    #[test]
    fn auc_identical_multisets_is_half() {
        let s = mk(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]);
        assert_eq!(auc(&s).unwrap(), 0.5);
    }

    #[test]
    fn auc_enumerated_pairs() {
        // Pairs won: (0.3>0.1), (0.7>0.5), (0.7>0.1); lost: (0.3<0.5).
        let s = mk(&[0.3, 0.7], &[0.5, 0.1]);
        assert_eq!(auc(&s).unwrap(), 0.75);
    }

    #[test]
    fn auc_label_flip_complements() {
        let s = mk(&[0.3, 0.9, 0.4], &[0.5, 0.1]);
        let flipped: Vec<ScoredSample> = s
            .iter()
            .map(|x| ScoredSample::new(x.statistic, !x.positive))
            .collect();
        let a = auc(&s).unwrap();
        let b = auc(&flipped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let s = mk(&[0.3, 0.7, 0.65], &[0.5, 0.1, 0.2]);
        let mapped: Vec<ScoredSample> = s
            .iter()
            .map(|x| ScoredSample::new(x.statistic.exp() * 3.0 + 1.0, x.positive))
            .collect();
        assert_eq!(auc(&s).unwrap(), auc(&mapped).unwrap());
    }

    #[test]
    fn asr_perfect_separation() {
        let s = mk(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(asr(&s, 0.5).unwrap(), 1.0);
        let (best, _) = best_asr(&s).unwrap();
        assert_eq!(best, 1.0);
    }

    #[test]
    fn asr_constant_scores_hits_prevalence() {
        let s = mk(&[0.5], &[0.5, 0.5, 0.5]);
        let (best, _) = best_asr(&s).unwrap();
        assert_eq!(best, 0.75);
    }

    #[test]
    fn best_asr_threshold_scan() {
        let s = mk(&[0.9, 0.4], &[0.6, 0.1]);
        let (best, _) = best_asr(&s).unwrap();
        assert_eq!(best, 0.75);
    }

    #[test]
    fn asr_never_exceeds_best() {
        let s = mk(&[0.9, 0.4, 0.55], &[0.6, 0.1, 0.5]);
        let (best, _) = best_asr(&s).unwrap();
        for t in [-1.0, 0.0, 0.3, 0.5, 0.55, 0.7, 2.0] {
            assert!(asr(&s, t).unwrap() <= best);
        }
    }

    #[test]
    fn tpr_at_fpr_perfect() {
        let s = mk(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(tpr_at_fpr(&s, 0.05).unwrap(), 1.0);
    }

    #[test]
    fn tpr_at_fpr_enumerated() {
        // Only thresholds above 2.5 keep FPR at 0, catching one of three positives.
        let s = mk(&[3.0, 2.0, 1.0], &[2.5, 0.5]);
        let v = tpr_at_fpr(&s, 0.05).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tpr_at_fpr_monotone_in_cap() {
        let s = mk(&[3.0, 2.0, 1.0, 0.4], &[2.5, 0.5, 0.6, 1.1]);
        let mut prev = 0.0;
        for cap in [0.05, 0.25, 0.5, 0.75, 0.99] {
            let v = tpr_at_fpr(&s, cap).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let s: Vec<ScoredSample> = vec![ScoredSample::new(0.5, true)];
        assert!(matches!(auc(&s), Err(Error::SingleClass)));
        assert!(matches!(asr(&s, 0.5), Err(Error::SingleClass)));
        assert!(matches!(tpr_at_fpr(&s, 0.05), Err(Error::SingleClass)));
    }

    #[test]
    fn histogram_bins_and_clamping() {
        let h =
            Histogram::from_values(&[0.0, 0.05, 0.5, 0.99, 1.0, -5.0, 5.0], 10, 0.0, 1.0).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 7);
        assert_eq!(h.counts[0], 3); // 0.0, 0.05, -5.0
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.counts[9], 3); // 0.99, 1.0, 5.0
    }
}

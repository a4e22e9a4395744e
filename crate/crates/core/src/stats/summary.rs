use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::StatsError;

/// Max / mean / spread of one method's scores over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator). Zero when `n == 1`.
    pub std: f64,
    pub n: usize,
    /// Set when only one value was supplied and `std` carries no information.
    pub single_sample: bool,
}

/// Summarises `values` in a single pass (Welford's update).
pub fn aggregate(values: &[f64]) -> Result<Aggregate, StatsError> {
    let (first, rest) = values.split_first().ok_or(StatsError::Empty)?;
    let mut max = *first;
    let mut min = *first;
    let mut mean = *first;
    let mut m2 = 0.0;
    for (i, &value) in rest.iter().enumerate() {
        let count = (i + 2) as f64;
        let delta = value - mean;
        mean += delta / count;
        m2 += delta * (value - mean);
        max = max.max(value);
        min = min.min(value);
    }
    let n = values.len();
    let std = if n > 1 {
        (m2 / (n - 1) as f64).max(0.0).sqrt()
    } else {
        0.0
    };
    Ok(Aggregate {
        max,
        min,
        mean,
        std,
        n,
        single_sample: n == 1,
    })
}

/// Percentage of `true` entries, in `[0, 100]`.
pub fn success_rate(outcomes: &[bool]) -> Result<f64, StatsError> {
    if outcomes.is_empty() {
        return Err(StatsError::Empty);
    }
    let successes = outcomes.iter().filter(|&&ok| ok).count();
    Ok(100.0 * successes as f64 / outcomes.len() as f64)
}

/// Identifies one paired observation: `(dataset, run slot)`.
pub type PairKey = (String, usize);

/// Head-to-head comparison of two method variants run on the same slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    /// Fraction of pairs where the first variant is strictly better.
    pub win_fraction: f64,
    /// Mean over pairs of `(with - without) / without`.
    pub mean_relative_improvement: f64,
    /// Mean over datasets of `(mean_with - mean_without) / mean_without`.
    pub per_dataset_relative_improvement: f64,
    pub pairs: usize,
    /// Pairs left out of the relative means because the baseline was zero.
    pub excluded_zero_baseline: usize,
}

/// Compares per-slot metrics of a variant (`with`) against a baseline (`without`).
///
/// Both maps must carry exactly the same keys.
pub fn paired_improvement(
    with: &BTreeMap<PairKey, f64>,
    without: &BTreeMap<PairKey, f64>,
) -> Result<PairedComparison, StatsError> {
    if let Some(key) = with.keys().find(|k| !without.contains_key(*k)) {
        return Err(StatsError::KeyMismatch(format!(
            "{}#{} only in first",
            key.0, key.1
        )));
    }
    if let Some(key) = without.keys().find(|k| !with.contains_key(*k)) {
        return Err(StatsError::KeyMismatch(format!(
            "{}#{} only in second",
            key.0, key.1
        )));
    }
    if with.is_empty() {
        return Err(StatsError::Empty);
    }

    let mut wins = 0usize;
    let mut relative_sum = 0.0;
    let mut relative_count = 0usize;
    let mut excluded = 0usize;
    let mut per_dataset: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();

    for (key, &value_with) in with {
        let value_without = without[key];
        if value_with > value_without {
            wins += 1;
        }
        if value_without == 0.0 {
            excluded += 1;
        } else {
            relative_sum += (value_with - value_without) / value_without;
            relative_count += 1;
        }
        let entry = per_dataset.entry(key.0.as_str()).or_insert((0.0, 0.0, 0));
        entry.0 += value_with;
        entry.1 += value_without;
        entry.2 += 1;
    }
    if excluded > 0 {
        warn!("{excluded} pair(s) with a zero baseline excluded from relative improvement");
    }

    let mut dataset_sum = 0.0;
    let mut dataset_count = 0usize;
    for (sum_with, sum_without, count) in per_dataset.values() {
        let mean_without = sum_without / *count as f64;
        if mean_without != 0.0 {
            dataset_sum += (sum_with / *count as f64 - mean_without) / mean_without;
            dataset_count += 1;
        }
    }

    Ok(PairedComparison {
        win_fraction: wins as f64 / with.len() as f64,
        mean_relative_improvement: if relative_count > 0 {
            relative_sum / relative_count as f64
        } else {
            0.0
        },
        per_dataset_relative_improvement: if dataset_count > 0 {
            dataset_sum / dataset_count as f64
        } else {
            0.0
        },
        pairs: with.len(),
        excluded_zero_baseline: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(values: &[(f64, f64)]) -> (BTreeMap<PairKey, f64>, BTreeMap<PairKey, f64>) {
        let mut with = BTreeMap::new();
        let mut without = BTreeMap::new();
        for (slot, (a, b)) in values.iter().enumerate() {
            with.insert(("d".to_string(), slot), *a);
            without.insert(("d".to_string(), slot), *b);
        }
        (with, without)
    }

    #[test]
    fn aggregate_basic() {
        let agg = aggregate(&[0.7, 0.8, 0.75]).unwrap();
        assert_eq!(agg.max, 0.8);
        assert!((agg.mean - 0.75).abs() < 1e-15);
        assert!((agg.std - 0.05).abs() < 1e-12);
        assert_eq!(agg.n, 3);
        assert!(!agg.single_sample);
    }

    #[test]
    fn aggregate_single_value_is_flagged() {
        let agg = aggregate(&[0.42]).unwrap();
        assert_eq!(agg.std, 0.0);
        assert!(agg.single_sample);
        assert_eq!(aggregate(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn success_rate_examples() {
        assert_eq!(
            success_rate(&[true, true, true, false, false]).unwrap(),
            60.0
        );
        assert_eq!(success_rate(&[true; 5]).unwrap(), 100.0);
        assert_eq!(success_rate(&[false; 5]).unwrap(), 0.0);
        assert!(success_rate(&[]).is_err());
    }

    #[test]
    fn paired_strict_wins_only() {
        let (with, without) = pairs(&[(0.7, 0.6), (0.8, 0.9), (0.5, 0.5)]);
        let cmp = paired_improvement(&with, &without).unwrap();
        assert!((cmp.win_fraction - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cmp.pairs, 3);
    }

    #[test]
    fn paired_identical_is_neutral() {
        let (with, without) = pairs(&[(0.7, 0.7), (0.8, 0.8)]);
        let cmp = paired_improvement(&with, &without).unwrap();
        assert_eq!(cmp.win_fraction, 0.0);
        assert_eq!(cmp.mean_relative_improvement, 0.0);
        assert_eq!(cmp.per_dataset_relative_improvement, 0.0);
    }

    #[test]
    fn paired_dataset_means() {
        // Single pair per dataset: the mean-of-datasets variant is the plain ratio.
        let (with, without) = pairs(&[(0.726, 0.698)]);
        let cmp = paired_improvement(&with, &without).unwrap();
        assert!((cmp.per_dataset_relative_improvement - 0.028 / 0.698).abs() < 1e-12);
        assert!((cmp.per_dataset_relative_improvement * 100.0 - 4.01).abs() < 0.005);
    }

    #[test]
    fn paired_zero_baseline_is_excluded() {
        let (with, without) = pairs(&[(0.5, 0.0), (0.6, 0.5)]);
        let cmp = paired_improvement(&with, &without).unwrap();
        assert_eq!(cmp.excluded_zero_baseline, 1);
        assert!((cmp.mean_relative_improvement - 0.2).abs() < 1e-12);
        assert_eq!(cmp.win_fraction, 1.0);
    }

    #[test]
    fn paired_key_mismatch() {
        let (with, _) = pairs(&[(0.5, 0.4)]);
        let (_, mut without) = pairs(&[(0.5, 0.4)]);
        without.insert(("other".into(), 0), 0.1);
        assert!(matches!(
            paired_improvement(&with, &without),
            Err(StatsError::KeyMismatch(_))
        ));
    }
}

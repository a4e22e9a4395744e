//! Brute-force reference implementations used to check the production metrics.
//! Each one follows the textbook definition literally and shares no code with
//! the crate under test.

#![allow(dead_code)]

/// Literal counting loop.
pub fn accuracy_by_counting(labels: &[u8], predictions: &[u8]) -> f64 {
    let mut hits = 0;
    for i in 0..labels.len() {
        if labels[i] == predictions[i] {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

/// Explicit threshold sweep: for every distinct score (descending) recount
/// precision and recall from scratch over all samples scored at or above it.
pub fn average_precision_by_sweep(labels: &[u8], scores: &[f64], positive: u8) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let total_positive = labels.iter().filter(|&&l| l == positive).count() as f64;
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        for i in 0..scores.len() {
            if scores[i] >= t {
                predicted += 1.0;
                if labels[i] == positive {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / total_positive;
        ap += (recall - last_recall) * (tp / predicted);
        last_recall = recall;
    }
    ap
}

/// Two-pass mean and sample standard deviation.
pub fn two_pass_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Welch's test routed through `statrs`' Student-t survival function.
pub fn welch_reference(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let (ma, sa) = two_pass_mean_std(a);
    let (mb, sb) = two_pass_mean_std(b);
    let va = sa * sa / a.len() as f64;
    let vb = sb * sb / b.len() as f64;
    let t = (ma - mb) / (va + vb).sqrt();
    let df =
        (va + vb).powi(2) / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    let p = 2.0 * dist.sf(t.abs());
    (t, df, p)
}

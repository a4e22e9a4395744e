use super::StatsError;

/// Fraction of positions where `predictions` equals `labels`.
pub fn accuracy<T: PartialEq>(labels: &[T], predictions: &[T]) -> Result<f64, StatsError> {
    if labels.len() != predictions.len() {
        return Err(StatsError::LengthMismatch {
            left: labels.len(),
            right: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(StatsError::Empty);
    }
    let hits = labels
        .iter()
        .zip(predictions)
        .filter(|(label, prediction)| label == prediction)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the precision-recall step function.
///
/// Scores are swept from highest to lowest. All samples sharing a score form a
/// single threshold, so the result does not depend on the order of tied
/// samples. Each threshold contributes `(recall_k - recall_{k-1}) * precision_k`.
pub fn average_precision<T: PartialEq>(
    labels: &[T],
    scores: &[f64],
    positive_label: &T,
) -> Result<f64, StatsError> {
    if labels.len() != scores.len() {
        return Err(StatsError::LengthMismatch {
            left: labels.len(),
            right: scores.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(StatsError::NonFiniteScore(index));
    }
    let total_positives = labels.iter().filter(|l| *l == positive_label).count();
    if total_positives == 0 {
        return Err(StatsError::NoPositives);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut true_positives = 0usize;
    let mut predicted = 0usize;
    let mut previous_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == *positive_label {
                true_positives += 1;
            }
            predicted += 1;
            i += 1;
        }
        let recall = true_positives as f64 / total_positives as f64;
        let precision = true_positives as f64 / predicted as f64;
        ap += (recall - previous_recall) * precision;
        previous_recall = recall;
    }
    Ok(ap)
}

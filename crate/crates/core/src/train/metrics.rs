use crate::diffcore::logistic_loss;
use crate::error::{Error, Result};

/// Mean binary log loss of raw logits, in the overflow-free form
/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn logloss(logits: &[f64], labels: &[f64]) -> Result<f64> {
    check_labels(logits, labels)?;
    if logits.is_empty() {
        return Err(Error::UndefinedMetric("logloss of an empty set".into()));
    }
    let total: f64 = logits.iter().zip(labels).map(|(&z, &y)| logistic_loss(z, y)).sum();
    Ok(total / logits.len() as f64)
}

/// Area under the ROC curve as the Mann–Whitney statistic, with tied scores
/// sharing their average rank.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_labels(scores, labels)?;
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("auc score {bad}")));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auc needs both classes, got {positives} positive and {negatives} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (0-based) share the average 1-based rank
        let avg = (start + end + 1) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1.0).count();
        rank_sum += avg * pos_in_group as f64;
        start = end;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn check_labels(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "metric",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract(format!("label {y} is not 0 or 1")));
    }
    Ok(())
}

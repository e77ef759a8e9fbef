//! Losses over softmax outputs and scalar regressions.

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-row cross-entropy `-log p[label]` for `(batch, classes)` probabilities.
pub fn cross_entropy_rows(probs: &[f64], classes: usize, labels: &[u8]) -> Vec<f64> {
    probs
        .chunks(classes)
        .zip(labels)
        .map(|(row, &y)| -row[y as usize].max(PROB_FLOOR).ln())
        .collect()
}

pub fn cross_entropy(probs: &[f64], classes: usize, labels: &[u8]) -> f64 {
    let rows = cross_entropy_rows(probs, classes, labels);
    rows.iter().sum::<f64>() / rows.len().max(1) as f64
}

/// dL/dp of the mean cross-entropy.
pub fn cross_entropy_grad(probs: &[f64], classes: usize, labels: &[u8]) -> Vec<f64> {
    let n = labels.len().max(1) as f64;
    let mut g = vec![0.0; probs.len()];
    for (r, &y) in labels.iter().enumerate() {
        let k = r * classes + y as usize;
        let p = probs[k];
        if p > PROB_FLOOR {
            g[k] = -1.0 / (p * n);
        }
    }
    g
}

/// Shannon entropy `-Σ s log s` of each row.
pub fn entropy_rows(probs: &[f64], classes: usize) -> Vec<f64> {
    probs
        .chunks(classes)
        .map(|row| -row.iter().map(|&s| s * s.max(PROB_FLOOR).ln()).sum::<f64>())
        .collect()
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len().max(1) as f64
}

pub fn mse_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect()
}

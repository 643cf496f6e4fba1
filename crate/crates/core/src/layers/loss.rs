use crate::error::{Error, Result};
use crate::tensor::{Dims4, Tensor4};

/// Max-subtracted softmax in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// `softmax - onehot` with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> Result<(f64, Vec<f32>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let log_total = logits.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    let loss = log_total - (logits[label] as f64 - max);
    let grad = softmax(logits)
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p - if i == label { 1.0 } else { 0.0 }) as f32)
        .collect();
    Ok((loss, grad))
}

/// Mean loss over the batch; the gradient is scaled by `1 / n` to match.
pub fn softmax_cross_entropy_batch(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let d = logits.dims();
    if labels.len() != d.n {
        return Err(Error::shape(format!(
            "loss: {} labels for a batch of {}",
            labels.len(),
            d.n
        )));
    }
    let classes = d.sample_len();
    let scale = 1.0 / d.n.max(1) as f32;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(d.len());
    for (n, &label) in labels.iter().enumerate() {
        let (loss, g) = softmax_cross_entropy(logits.sample(n), label)?;
        total += loss;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    Ok((
        total / d.n.max(1) as f64,
        Tensor4::from_vec(Dims4::new(d.n, classes, 1, 1), grad)?,
    ))
}

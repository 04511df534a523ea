//! Softmax cross-entropy with mean reduction over the batch.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loss and gradient of -mean log softmax(logits)[label].
///
/// Computed with max-subtraction for stability; the gradient is
/// (softmax - onehot) / B.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_xent",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::config(format!("label {bad} outside 0..{k}")));
    }
    let mut grad = Tensor::zeros(&[b, k]);
    let mut loss = 0.0;
    for bi in 0..b {
        let row = &logits.data()[bi * k..(bi + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        loss -= row[labels[bi]] - max - log_denom;
        let grow = &mut grad.data_mut()[bi * k..(bi + 1) * k];
        for (j, g) in grow.iter_mut().enumerate() {
            let p = (row[j] - max).exp() / denom;
            *g = (p - if j == labels[bi] { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// Per-row argmax with ties resolved to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

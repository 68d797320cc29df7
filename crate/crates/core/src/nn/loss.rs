use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_labels(labels: &[usize], b: usize, k: usize) -> Result<()> {
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label { label, classes: k });
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Per-example output gradients `∂L_b/∂logits_b = softmax(logits_b) − onehot(label_b)`,
/// not divided by the batch size.
pub fn per_example_logit_grads(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = logits.dims2()?;
    check_labels(labels, b, k)?;
    let mut p = softmax(logits)?;
    for (row, &l) in p.data_mut().chunks_mut(k).zip(labels) {
        row[l] -= 1.0;
    }
    Ok(p)
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = logits.dims2()?;
    check_labels(labels, b, k)?;
    let mut loss = 0.0;
    for (row, &l) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[l];
    }
    let grad = per_example_logit_grads(logits, labels)?.scale(1.0 / b as f64);
    Ok((loss / b as f64, grad))
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, k) = logits.dims2()?;
    check_labels(labels, b, k)?;
    let hits = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            best == l
        })
        .count();
    Ok(hits as f64 / b as f64)
}

use super::tensor::Tensor;
use crate::error::{ensure, Result};

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    logits.require_matrix("logits")?;
    let mut out = logits.clone();
    for r in 0..logits.rows() {
        log_softmax_row(logits.row(r), out.row_mut(r));
        for v in out.row_mut(r) {
            *v = v.exp();
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot) / B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    logits.require_matrix("logits")?;
    let (b, c) = (logits.rows(), logits.cols());
    ensure!(
        labels.len() == b,
        Dimension,
        "{} labels for {} rows",
        labels.len(),
        b
    );
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(crate::Error::Validation(format!(
            "label {bad} outside [0, {c})"
        )));
    }
    if b == 0 {
        return Ok((0.0, Tensor::zeros(vec![0, c])));
    }
    let mut grad = Tensor::zeros(vec![b, c]);
    let mut logp = vec![0.0; c];
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for (r, &y) in labels.iter().enumerate() {
        log_softmax_row(logits.row(r), &mut logp);
        loss -= logp[y];
        let g = grad.row_mut(r);
        for (gi, &lp) in g.iter_mut().zip(&logp) {
            *gi = lp.exp() * inv_b;
        }
        g[y] -= inv_b;
    }
    Ok((loss * inv_b, grad))
}

/// Mean over rows of `KL(softmax(ref_row) ‖ softmax(cur_row))`.
pub fn kl_feature_divergence(reference: &Tensor, current: &Tensor) -> Result<f64> {
    Ok(kl_feature_divergence_with_grad(reference, current)?.0)
}

/// KL value plus its gradient w.r.t. `current`, which is
/// `(softmax(cur) − softmax(ref)) / B` per row. `reference` is treated as constant.
pub fn kl_feature_divergence_with_grad(reference: &Tensor, current: &Tensor) -> Result<(f64, Tensor)> {
    reference.require_matrix("reference features")?;
    ensure!(
        reference.shape() == current.shape(),
        Dimension,
        "feature shapes differ: {:?} vs {:?}",
        reference.shape(),
        current.shape()
    );
    let (b, d) = (reference.rows(), reference.cols());
    ensure!(b >= 1, Validation, "KL divergence needs at least one row");
    let mut grad = Tensor::zeros(vec![b, d]);
    let (mut lp, mut lq) = (vec![0.0; d], vec![0.0; d]);
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;
    for r in 0..b {
        log_softmax_row(reference.row(r), &mut lp);
        log_softmax_row(current.row(r), &mut lq);
        let mut kl = 0.0;
        let g = grad.row_mut(r);
        for i in 0..d {
            let p = lp[i].exp();
            if p > 0.0 {
                kl += p * (lp[i] - lq[i]);
            }
            g[i] = (lq[i].exp() - p) * inv_b;
        }
        total += kl.max(0.0);
    }
    Ok((total * inv_b, grad))
}

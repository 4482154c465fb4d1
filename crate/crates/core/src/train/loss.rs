use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Matrix};

/// Target distribution `(1−ε)·onehot(target) + ε/C` over `classes` entries.
pub fn smoothed_targets(target: usize, classes: usize, eps: f64) -> Vec<f64> {
    let mut t = vec![eps / classes as f64; classes];
    t[target] += 1.0 - eps;
    t
}

/// Label-smoothed cross-entropy averaged over the batch, and its gradient
/// `(softmax − t) / B` with respect to the logits.
pub fn smoothed_xent(logits: &Matrix, targets: &[usize], eps: f64) -> Result<(f64, Matrix)> {
    let (b, c) = logits.shape();
    if targets.len() != b {
        return Err(Error::shape(
            "smoothed_xent",
            format!("{} targets for {b} rows", targets.len()),
        ));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::arg(format!("label smoothing must be in [0, 1), got {eps}")));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::arg(format!("target {bad} out of range for {c} classes")));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("smoothed_xent logits"));
    }
    let inv_b = 1.0 / b as f64;
    let uniform = eps / c as f64;
    let mut grad = Matrix::zeros(b, c);
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        // −Σ t_c (z_c − lse) = lse − (1−ε) z_t − (ε/C) Σ z_c
        let sum_z: f64 = row.iter().sum();
        total += lse - (1.0 - eps) * row[t] - uniform * sum_z;
        let g = grad.row_mut(r);
        for (gc, &z) in g.iter_mut().zip(row) {
            *gc = ((z - lse).exp() - uniform) * inv_b;
        }
        g[t] -= (1.0 - eps) * inv_b;
    }
    Ok((total * inv_b, grad))
}

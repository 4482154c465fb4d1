//! Linear-model analysis of the index-as-target objective.
//!
//! For a linear backbone `V` (D×K) and head `W` (N×K) the loss over a data
//! matrix `X` (N×D) is the cross-entropy of the logits `XVWᵀ` against the
//! identity targets. Its gradients are `∇W = A X V` and `∇V = Xᵀ A W` with
//! `A = softmax_rows(XVWᵀ) − I`.
//!
//! When `X` consists of K centroids each repeated N/K times, the parameters
//! `V = V_X Σ_X⁻¹`, `W = κ U_X` from the thin SVD of `X` drive the gradient
//! to zero as κ grows, and `A` tends to a block matrix with within-block
//! constant K/N. The loss tends to `ln(N/K)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, DEFAULT_RANK_TOL};
use crate::seed;
use crate::train::optim::{AdamW, AdamWParams};

/// Smallest `κ·K/N` used by [`default_kappa`]. Off-block softmax mass decays
/// like `exp(−κK/N)`, so 40 puts the residual gradient far below 1e-8.
pub const MIN_SATURATION: f64 = 40.0;

/// Bound on `‖∇‖_F / ‖X‖_F` accepted as a stationary point.
pub const GRADIENT_REL_BOUND: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredSpec {
    /// K×D, one centroid per row.
    pub centroids: Matrix,
    /// Samples per centroid; N = K·reps.
    pub reps: usize,
}

impl ClusteredSpec {
    pub fn new(centroids: Matrix, reps: usize) -> Result<Self> {
        let spec = Self { centroids, reps };
        spec.validate()?;
        Ok(spec)
    }

    /// K random orthonormal centroids in R^dim (Gram–Schmidt on Gaussian
    /// draws), seeded.
    pub fn orthogonal(k: usize, reps: usize, dim: usize, seed: u64) -> Result<Self> {
        if k == 0 || reps == 0 {
            return Err(Error::arg("clusters and reps must be at least 1"));
        }
        if dim < k {
            return Err(Error::arg(format!(
                "{k} orthogonal centroids need dim >= {k}, got {dim}"
            )));
        }
        let mut rng = seed::rng(seed::derive(seed, seed::DATA));
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        while basis.len() < k {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            // Two passes of classical Gram–Schmidt.
            for _ in 0..2 {
                for b in &basis {
                    let proj = linalg::dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let norm = linalg::dot(&v, &v).sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        Self::new(Matrix::from_rows(&basis)?, reps)
    }

    pub fn clusters(&self) -> usize {
        self.centroids.rows()
    }

    pub fn samples(&self) -> usize {
        self.clusters() * self.reps
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    fn validate(&self) -> Result<()> {
        let k = self.centroids.rows();
        if k == 0 {
            return Err(Error::arg("centroid list is empty"));
        }
        if self.reps == 0 {
            return Err(Error::arg("reps must be at least 1"));
        }
        if !self.centroids.is_finite() {
            return Err(Error::NonFinite("centroids"));
        }
        for i in 0..k {
            for j in i + 1..k {
                if self.centroids.row(i) == self.centroids.row(j) {
                    return Err(Error::arg(format!("centroids {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }
}

/// N×D matrix whose row n is centroid `n / reps`.
pub fn make_clustered_data(spec: &ClusteredSpec) -> Result<Matrix> {
    spec.validate()?;
    let idx: Vec<usize> = (0..spec.samples()).map(|n| n / spec.reps).collect();
    Ok(spec.centroids.select_rows(&idx))
}

fn check_shapes(op: &'static str, x: &Matrix, v: &Matrix, w: &Matrix) -> Result<()> {
    let (n, d) = x.shape();
    if v.rows() != d || w.rows() != n || v.cols() != w.cols() {
        return Err(Error::shape(
            op,
            format!(
                "X {:?}, V {:?}, W {:?}; need X N×D, V D×K, W N×K",
                x.shape(),
                v.shape(),
                w.shape()
            ),
        ));
    }
    Ok(())
}

/// `XVWᵀ`.
pub fn linear_logits(x: &Matrix, v: &Matrix, w: &Matrix) -> Result<Matrix> {
    check_shapes("linear_logits", x, v, w)?;
    linalg::matmul_transb(&linalg::matmul(x, v)?, w)
}

/// Mean over samples of `−(XVWᵀ)ₙₙ + ln Σₘ exp((XVWᵀ)ₙₘ)`.
pub fn diet_linear_loss(x: &Matrix, v: &Matrix, w: &Matrix) -> Result<f64> {
    check_shapes("diet_linear_loss", x, v, w)?;
    let logits = linear_logits(x, v, w)?;
    let lse = linalg::log_sum_exp_rows(&logits)?;
    let n = x.rows();
    let total: f64 = lse.iter().enumerate().map(|(i, l)| l - logits.get(i, i)).sum();
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("diet_linear_loss"));
    }
    Ok(loss)
}

/// `softmax_rows(XVWᵀ) − I`.
pub fn a_matrix_numeric(x: &Matrix, v: &Matrix, w: &Matrix) -> Result<Matrix> {
    check_shapes("a_matrix_numeric", x, v, w)?;
    let mut a = linalg::softmax_rows(&linear_logits(x, v, w)?)?;
    for i in 0..a.rows() {
        a.set(i, i, a.get(i, i) - 1.0);
    }
    Ok(a)
}

/// Large-κ limit of `A` for `n` samples in `k` equal consecutive clusters:
/// `K/N` inside each diagonal block, minus the identity.
pub fn a_matrix_limit(n: usize, k: usize) -> Result<Matrix> {
    within_block_limit(n, k, k as f64 / n as f64)
}

/// The same block pattern with the within-block constant `1/K`. Agrees with
/// [`a_matrix_limit`] only when `N = K²`.
pub fn a_matrix_limit_one_over_k(n: usize, k: usize) -> Result<Matrix> {
    within_block_limit(n, k, 1.0 / k as f64)
}

fn within_block_limit(n: usize, k: usize, c: f64) -> Result<Matrix> {
    if k == 0 || n == 0 || n % k != 0 {
        return Err(Error::arg(format!("{k} clusters do not divide {n} samples")));
    }
    let block = n / k;
    Ok(Matrix::from_fn(n, n, |i, j| {
        let same = if i / block == j / block { c } else { 0.0 };
        same - if i == j { 1.0 } else { 0.0 }
    }))
}

/// Gradients of the summed (not averaged) loss: `(Aᵀ X V, Xᵀ A W)`.
///
/// `A` is symmetric only at the optimum, so the transpose matters for
/// general parameters.
pub fn diet_gradients(x: &Matrix, v: &Matrix, w: &Matrix) -> Result<(Matrix, Matrix)> {
    let a = a_matrix_numeric(x, v, w)?;
    let grad_w = linalg::matmul_transa(&a, &linalg::matmul(x, v)?)?;
    let grad_v = linalg::matmul_transa(x, &linalg::matmul(&a, w)?)?;
    Ok((grad_w, grad_v))
}

#[derive(Debug, Clone)]
pub struct ClosedFormSolution {
    /// D×r, `V_X Σ_X⁻¹`.
    pub v: Matrix,
    /// N×r, `κ U_X`.
    pub w: Matrix,
    pub kappa: f64,
}

/// `V = V_X Σ_X⁻¹`, `W = κ U_X` from the rank-truncated thin SVD of `x`.
pub fn closed_form_params(x: &Matrix, kappa: f64) -> Result<ClosedFormSolution> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::arg(format!("kappa must be positive, got {kappa}")));
    }
    let svd = linalg::svd_thin(x, DEFAULT_RANK_TOL)?;
    if svd.rank() == 0 {
        return Err(Error::Degenerate("data matrix has rank 0".into()));
    }
    let v = Matrix::from_fn(svd.v.rows(), svd.rank(), |r, c| svd.v.get(r, c) / svd.sigma[c]);
    let w = svd.u.scale(kappa);
    Ok(ClosedFormSolution { v, w, kappa })
}

/// Smallest κ with `κ·K/N ≥ MIN_SATURATION`.
pub fn default_kappa(n: usize, k: usize) -> f64 {
    MIN_SATURATION * n as f64 / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub samples: usize,
    pub clusters: usize,
    pub dim: usize,
    pub kappa: f64,
    pub tol: f64,
    pub x_norm: f64,
    pub grad_w_norm: f64,
    pub grad_v_norm: f64,
    /// `GRADIENT_REL_BOUND · ‖X‖_F`.
    pub grad_bound: f64,
    pub loss: f64,
    pub optimal_loss: f64,
    pub loss_gap: f64,
    /// Max entrywise deviation of the numeric A from the K/N block limit.
    pub a_max_deviation: f64,
    /// Max entrywise deviation of the numeric A from the 1/K block pattern.
    pub a_max_deviation_one_over_k: f64,
    /// Mean softmax mass per within-block entry, as computed.
    pub within_block_numeric: f64,
    pub within_block_k_over_n: f64,
    pub within_block_one_over_k: f64,
    pub gradient_pass: bool,
    pub a_matrix_pass: bool,
    pub loss_pass: bool,
    pub pass: bool,
}

/// Evaluates the closed-form parameters on clustered data. Failures are
/// reported through the flags, not as errors.
pub fn verify_optimality(spec: &ClusteredSpec, kappa: f64, tol: f64) -> Result<OptimalityReport> {
    let x = make_clustered_data(spec)?;
    let (n, k) = (spec.samples(), spec.clusters());
    let sol = closed_form_params(&x, kappa)?;
    let (gw, gv) = diet_gradients(&x, &sol.v, &sol.w)?;
    let loss = diet_linear_loss(&x, &sol.v, &sol.w)?;
    let a = a_matrix_numeric(&x, &sol.v, &sol.w)?;
    let a_max_deviation = a.max_abs_diff(&a_matrix_limit(n, k)?);
    let a_max_deviation_one_over_k = a.max_abs_diff(&a_matrix_limit_one_over_k(n, k)?);

    let block = spec.reps;
    let mut within = 0.0;
    for i in 0..n {
        let start = (i / block) * block;
        for j in start..start + block {
            within += a.get(i, j) + if i == j { 1.0 } else { 0.0 };
        }
    }
    let within_block_numeric = within / (n * block) as f64;

    let x_norm = x.frobenius_norm();
    let grad_bound = GRADIENT_REL_BOUND * x_norm;
    let (grad_w_norm, grad_v_norm) = (gw.frobenius_norm(), gv.frobenius_norm());
    let optimal_loss = (n as f64 / k as f64).ln();
    let loss_gap = (loss - optimal_loss).abs();

    let gradient_pass = grad_w_norm < grad_bound && grad_v_norm < grad_bound;
    let a_matrix_pass = a_max_deviation < tol;
    let loss_pass = loss_gap < tol;
    Ok(OptimalityReport {
        samples: n,
        clusters: k,
        dim: spec.dim(),
        kappa,
        tol,
        x_norm,
        grad_w_norm,
        grad_v_norm,
        grad_bound,
        loss,
        optimal_loss,
        loss_gap,
        a_max_deviation,
        a_max_deviation_one_over_k,
        within_block_numeric,
        within_block_k_over_n: k as f64 / n as f64,
        within_block_one_over_k: 1.0 / k as f64,
        gradient_pass,
        a_matrix_pass,
        loss_pass,
        pass: gradient_pass && a_matrix_pass && loss_pass,
    })
}

/// Settings for fitting `(V, W)` by first-order descent on the mean loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescentConfig {
    pub steps: usize,
    /// Feature width of `V`; defaults to the cluster count.
    pub features: Option<usize>,
    pub lr: f64,
    /// Initial entries are uniform in `[−init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
    /// Loss is recorded every `record_every` steps (and at the last step).
    pub record_every: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            features: None,
            lr: 0.01,
            init_scale: 0.1,
            seed: 0,
            record_every: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescentTrace {
    pub optimal_loss: f64,
    /// `(step, loss)` pairs; step 0 is the initial point.
    pub curve: Vec<(usize, f64)>,
    pub final_loss: f64,
    pub final_gap: f64,
    /// First recorded step whose gap is below 1e-5, if any.
    pub reached_1e5_at: Option<usize>,
    #[serde(skip)]
    pub v: Option<Matrix>,
    #[serde(skip)]
    pub w: Option<Matrix>,
}

/// Fits `(V, W)` on clustered data from a small random start using
/// Adam-style steps (no weight decay) on the analytic gradients.
pub fn fit_by_descent(spec: &ClusteredSpec, cfg: &DescentConfig) -> Result<DescentTrace> {
    let x = make_clustered_data(spec)?;
    let (n, d) = x.shape();
    let k = cfg.features.unwrap_or(spec.clusters());
    if k == 0 || cfg.record_every == 0 {
        return Err(Error::arg("features and record_every must be at least 1"));
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, seed::INIT));
    let s = cfg.init_scale;
    let mut v = Matrix::from_fn(d, k, |_, _| rng.random_range(-s..=s));
    let mut w = Matrix::from_fn(n, k, |_, _| rng.random_range(-s..=s));

    let optimal_loss = (n as f64 / spec.clusters() as f64).ln();
    let mut opt = AdamW::new(AdamWParams::default(), &[d * k, n * k]);
    let mut curve = vec![(0, diet_linear_loss(&x, &v, &w)?)];
    let mut reached = None;
    let inv_n = 1.0 / n as f64;
    for step in 1..=cfg.steps {
        let (gw, gv) = diet_gradients(&x, &v, &w)?;
        let gv = gv.scale(inv_n);
        let gw = gw.scale(inv_n);
        opt.step(
            &mut [v.data_mut(), w.data_mut()],
            &[gv.data(), gw.data()],
            cfg.lr,
            0.0,
        )?;
        if step % cfg.record_every == 0 || step == cfg.steps {
            let loss = diet_linear_loss(&x, &v, &w)?;
            if reached.is_none() && (loss - optimal_loss).abs() < 1e-5 {
                reached = Some(step);
            }
            curve.push((step, loss));
        }
    }
    let final_loss = curve.last().map(|c| c.1).unwrap_or(f64::NAN);
    Ok(DescentTrace {
        optimal_loss,
        final_gap: (final_loss - optimal_loss).abs(),
        final_loss,
        curve,
        reached_1e5_at: reached,
        v: Some(v),
        w: Some(w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> ClusteredSpec {
        let c = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        ClusteredSpec::new(c, 2).unwrap()
    }

    #[test]
    fn clustered_construction() {
        let x = make_clustered_data(&two_by_two()).unwrap();
        assert_eq!(x.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);

        let spec = ClusteredSpec::orthogonal(4, 4, 6, 3).unwrap();
        let x = make_clustered_data(&spec).unwrap();
        assert_eq!(x.shape(), (16, 6));
        for n in 0..16 {
            assert_eq!(x.row(n), spec.centroids.row(n / 4));
        }
        assert_eq!(linalg::svd_thin(&x, DEFAULT_RANK_TOL).unwrap().rank(), 4);

        let zero = ClusteredSpec::new(Matrix::zeros(1, 3), 3).unwrap();
        let x = make_clustered_data(&zero).unwrap();
        assert_eq!(x, Matrix::zeros(3, 3));
        assert_eq!(linalg::svd_thin(&x, DEFAULT_RANK_TOL).unwrap().rank(), 0);
    }

    #[test]
    fn clustered_errors() {
        assert!(matches!(
            ClusteredSpec::new(Matrix::zeros(0, 3), 2),
            Err(Error::Argument(_))
        ));
        assert!(ClusteredSpec::new(Matrix::zeros(2, 3), 2).is_err());
        assert!(ClusteredSpec::orthogonal(4, 2, 3, 0).is_err());
    }

    #[test]
    fn orthogonal_centroids_are_orthonormal() {
        let spec = ClusteredSpec::orthogonal(5, 2, 9, 11).unwrap();
        let g = linalg::matmul_transb(&spec.centroids, &spec.centroids).unwrap();
        assert!(g.max_abs_diff(&Matrix::identity(5)) < 1e-12);
    }

    #[test]
    fn zero_logits_give_log_n() {
        let x = make_clustered_data(&two_by_two()).unwrap();
        let v = Matrix::zeros(2, 2);
        let w = Matrix::filled(4, 2, 0.7);
        let loss = diet_linear_loss(&x, &v, &w).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);

        let a = a_matrix_numeric(&Matrix::zeros(2, 1), &Matrix::zeros(1, 1), &Matrix::zeros(2, 1)).unwrap();
        assert_eq!(a.data(), &[-0.5, 0.5, 0.5, -0.5]);
    }

    #[test]
    fn shape_errors() {
        let x = Matrix::zeros(4, 2);
        assert!(matches!(
            diet_linear_loss(&x, &Matrix::zeros(3, 2), &Matrix::zeros(4, 2)),
            Err(Error::Shape { .. })
        ));
        assert!(diet_gradients(&x, &Matrix::zeros(2, 2), &Matrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn limit_matrix() {
        let a = a_matrix_limit(16, 4).unwrap();
        assert_eq!(a.get(0, 0), -0.75);
        assert_eq!(a.get(0, 3), 0.25);
        assert_eq!(a.get(0, 4), 0.0);
        assert_eq!(a_matrix_limit(5, 5).unwrap(), Matrix::zeros(5, 5));
        let a = a_matrix_limit(8, 2).unwrap();
        assert_eq!(a.get(1, 0), 0.25);
        assert_eq!(a.get(1, 1), -0.75);
        assert!(matches!(a_matrix_limit(8, 3), Err(Error::Argument(_))));
        // The printed 1/K constant coincides only when N = K².
        assert_eq!(a_matrix_limit(16, 4).unwrap(), a_matrix_limit_one_over_k(16, 4).unwrap());
        assert_ne!(a_matrix_limit(8, 2).unwrap(), a_matrix_limit_one_over_k(8, 2).unwrap());
        for m in [a_matrix_limit(16, 4).unwrap(), a_matrix_limit(12, 3).unwrap()] {
            for r in 0..m.rows() {
                assert!(m.row(r).iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn numeric_a_tends_to_k_over_n() {
        // Oracle: for block-uniform logits with in-block value κ/reps and 0
        // elsewhere, each in-block softmax entry is
        // e^{κ/reps} / (reps·e^{κ/reps} + N − reps).
        let spec = ClusteredSpec::orthogonal(2, 4, 3, 5).unwrap();
        let x = make_clustered_data(&spec).unwrap();
        let sol = closed_form_params(&x, 400.0).unwrap();
        let a = a_matrix_numeric(&x, &sol.v, &sol.w).unwrap();
        let big = (400.0f64 / 4.0).exp();
        let oracle = big / (4.0 * big + 4.0);
        assert!((a.get(0, 1) - oracle).abs() < 1e-12);
        assert!((a.get(0, 1) - 0.25).abs() < 1e-12);
        assert!((a.get(0, 0) + 0.75).abs() < 1e-12);
        assert!(a.get(0, 5).abs() < 1e-12);
        assert!(a.max_abs_diff(&a_matrix_limit(8, 2).unwrap()) < 1e-6);
    }

    #[test]
    fn closed_form_maps_x_to_u() {
        let spec = ClusteredSpec::orthogonal(3, 3, 5, 2).unwrap();
        let x = make_clustered_data(&spec).unwrap();
        let sol = closed_form_params(&x, 7.0).unwrap();
        let xv = linalg::matmul(&x, &sol.v).unwrap();
        let g = linalg::matmul_transa(&xv, &xv).unwrap();
        assert!(g.max_abs_diff(&Matrix::identity(3)) < 1e-9);
        for c in 0..3 {
            let norm: f64 = sol.w.column(c).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 7.0).abs() < 1e-9);
        }
        assert!(matches!(
            closed_form_params(&Matrix::zeros(4, 2), 1.0),
            Err(Error::Degenerate(_))
        ));
        assert!(closed_form_params(&x, 0.0).is_err());
    }

    #[test]
    fn closed_form_loss_approaches_log_n_over_k() {
        let spec = ClusteredSpec::orthogonal(2, 4, 4, 9).unwrap();
        let x = make_clustered_data(&spec).unwrap();
        let mut prev = f64::INFINITY;
        for kappa in [1.0, 4.0, 16.0, 64.0, 256.0] {
            let sol = closed_form_params(&x, kappa).unwrap();
            let loss = diet_linear_loss(&x, &sol.v, &sol.w).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!((prev - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn verify_single_cluster() {
        let c = Matrix::from_rows(&[[0.0, 2.0, 0.0]]).unwrap();
        let spec = ClusteredSpec::new(c, 4).unwrap();
        let r = verify_optimality(&spec, 400.0, 1e-6).unwrap();
        assert!((r.optimal_loss - 4f64.ln()).abs() < 1e-15);
        assert!(r.pass, "{r:?}");
        let a = a_matrix_limit(4, 1).unwrap();
        assert_eq!(a, Matrix::from_fn(4, 4, |i, j| 0.25 - if i == j { 1.0 } else { 0.0 }));
    }

    #[test]
    fn verify_small_kappa_fails() {
        let spec = ClusteredSpec::orthogonal(4, 4, 8, 0).unwrap();
        let r = verify_optimality(&spec, 1.0, 1e-6).unwrap();
        assert!(!r.pass && !r.gradient_pass);
        assert!(r.grad_w_norm > 1e-3);
    }

    #[test]
    fn descent_reaches_optimum() {
        let spec = ClusteredSpec::orthogonal(4, 4, 8, 0).unwrap();
        let trace = fit_by_descent(&spec, &DescentConfig::default()).unwrap();
        assert!(trace.final_gap < 1e-5, "gap {}", trace.final_gap);
    }
}

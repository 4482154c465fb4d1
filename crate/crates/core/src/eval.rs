//! Linear probing of frozen backbone features, and the rank correlation
//! between training loss and probe accuracy.

use serde::{Deserialize, Serialize};

use crate::data::{IndexedDataset, Preprocess};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::Backbone;
use crate::train::MetricsRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl FeatureBank {
    pub fn new(features: Matrix, labels: Vec<usize>, split: Split) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "FeatureBank",
                format!("{} feature rows, {} labels", features.rows(), labels.len()),
            ));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("feature bank"));
        }
        Ok(Self {
            features,
            labels,
            split,
        })
    }
}

/// Backbone features of every sample (clean inputs, no augmentation). The
/// index head plays no part.
pub fn extract_features(
    backbone: &Backbone,
    ds: &IndexedDataset,
    prep: &Preprocess,
    split: Split,
) -> Result<FeatureBank> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::arg("feature extraction for probing needs labels"))?
        .to_vec();
    let all: Vec<usize> = (0..ds.len()).collect();
    let x = prep.clean_rows(ds, &all)?;
    FeatureBank::new(backbone.features(&x)?, labels, split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    /// Standardise each feature with the training bank's mean and std
    /// before fitting, so the fixed step budget does not depend on the
    /// feature scale.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            weight_decay: 1e-4,
            max_steps: 2000,
            grad_tol: 1e-6,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub train_acc: f64,
    pub test_acc: f64,
    pub classes: usize,
    pub steps: usize,
    pub grad_norm: f64,
    /// C×K weights and C biases of the fitted classifier (in standardised
    /// feature coordinates when `standardize` is set).
    #[serde(skip)]
    pub weights: Option<(Matrix, Vec<f64>)>,
}

/// Multinomial logistic regression on frozen features, fitted by
/// full-batch gradient descent from zero (weight decay on weights only),
/// stopping at the gradient-norm tolerance or the step cap.
pub fn linear_probe(train: &FeatureBank, test: &FeatureBank, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let k = train.features.cols();
    if test.features.cols() != k {
        return Err(Error::shape(
            "linear_probe",
            format!("train width {k}, test width {}", test.features.cols()),
        ));
    }
    let first = train
        .labels
        .first()
        .copied()
        .ok_or_else(|| Error::arg("empty training bank"))?;
    if train.labels.iter().all(|&y| y == first) {
        return Err(Error::Degenerate("probe training set has a single class".into()));
    }
    let classes = train
        .labels
        .iter()
        .chain(&test.labels)
        .copied()
        .max()
        .unwrap_or(0)
        + 1;

    let (train_x, test_x) = if cfg.standardize {
        let (mean, std) = column_stats(&train.features);
        (standardized(&train.features, &mean, &std), standardized(&test.features, &mean, &std))
    } else {
        (train.features.clone(), test.features.clone())
    };
    let x = &train_x;
    let m = x.rows();
    let inv_m = 1.0 / m as f64;
    let mut w = Matrix::zeros(classes, k);
    let mut b = vec![0.0; classes];
    let mut steps = 0;
    let mut grad_norm = f64::INFINITY;
    while steps < cfg.max_steps {
        let mut p = scores(x, &w, &b)?;
        for r in 0..m {
            linalg::softmax_in_place(p.row_mut(r));
            let y = train.labels[r];
            p.set(r, y, p.get(r, y) - 1.0);
        }
        // p now holds (softmax − onehot).
        let mut gw = linalg::matmul_transa(&p, x)?.scale(inv_m);
        for (g, &wv) in gw.data_mut().iter_mut().zip(w.data()) {
            *g += cfg.weight_decay * wv;
        }
        let mut gb = vec![0.0; classes];
        for r in 0..m {
            gb.iter_mut().zip(p.row(r)).for_each(|(s, v)| *s += v * inv_m);
        }
        grad_norm = (gw.frobenius_norm().powi(2) + gb.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("linear_probe gradient"));
        }
        if grad_norm < cfg.grad_tol {
            break;
        }
        for (wv, g) in w.data_mut().iter_mut().zip(gw.data()) {
            *wv -= cfg.lr * g;
        }
        for (bv, g) in b.iter_mut().zip(&gb) {
            *bv -= cfg.lr * g;
        }
        steps += 1;
    }
    let train_acc = top1(&scores(x, &w, &b)?, &train.labels)?;
    let test_acc = top1(&scores(&test_x, &w, &b)?, &test.labels)?;
    Ok(ProbeResult {
        train_acc,
        test_acc,
        classes,
        steps,
        grad_norm,
        weights: Some((w, b)),
    })
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let m = x.rows().max(1) as f64;
    let mut mean = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        mean.iter_mut().zip(x.row(r)).for_each(|(s, v)| *s += v / m);
    }
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((s, v), mu) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - mu) * (v - mu) / m;
        }
    }
    // Constant features are centred but left unscaled.
    let std = var.iter().map(|&v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

fn standardized(x: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |r, c| (x.get(r, c) - mean[c]) / std[c])
}

fn scores(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut s = linalg::matmul_transb(x, w)?;
    for r in 0..s.rows() {
        s.row_mut(r).iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
    }
    Ok(s)
}

/// Fraction of rows whose argmax (first maximum on ties) equals the label.
pub fn top1(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::shape(
            "top1",
            format!("{} rows, {} labels", logits.rows(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(logits.row(r)) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Ranks starting at 1; tied values share the average of their ranks.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation. A constant series correlates 0 with anything.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("spearman", format!("{} vs {} points", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::arg(format!("rank correlation needs at least 3 points, got {}", a.len())));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Spearman ρ between training loss and probe accuracy over the records
/// that carry a probe measurement.
pub fn loss_acc_correlation(log: &[MetricsRecord]) -> Result<f64> {
    let (loss, acc): (Vec<f64>, Vec<f64>) = log
        .iter()
        .filter_map(|r| r.probe_acc.map(|a| (r.loss, a)))
        .unzip();
    spearman(&loss, &acc)
}

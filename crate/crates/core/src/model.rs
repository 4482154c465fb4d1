//! Backbones (linear or ReLU MLP) and the bias-free index head.
//!
//! Gradients are computed by explicit layer-wise backward passes over the
//! activations cached by the last [`Model::forward`].

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Linear,
    Mlp,
}

/// Affine map `x ↦ x Wᵀ + b` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    /// Empty when the backbone has no biases.
    pub bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = linalg::matmul_transb(x, &self.weight)?;
        if !self.bias.is_empty() {
            for r in 0..z.rows() {
                z.row_mut(r).iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    kind: BackboneKind,
    widths: Vec<usize>,
    seed: u64,
    layers: Vec<Dense>,
}

/// Weights uniform in `±1/√fan_in`, biases zero.
pub fn init_backbone(kind: BackboneKind, widths: &[usize], seed: u64) -> Result<Backbone> {
    Backbone::new(kind, widths, true, seed)
}

impl Backbone {
    /// `widths` runs from the input width through any hidden widths to the
    /// feature width K. A linear backbone has exactly two widths; an MLP
    /// has at least one hidden layer.
    pub fn new(kind: BackboneKind, widths: &[usize], bias: bool, seed: u64) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::arg(format!("zero width in {widths:?}")));
        }
        match kind {
            BackboneKind::Linear if widths.len() != 2 => {
                return Err(Error::arg(format!(
                    "linear backbone takes (input, features) widths, got {widths:?}"
                )))
            }
            BackboneKind::Mlp if widths.len() < 3 => {
                return Err(Error::arg(format!(
                    "mlp backbone needs at least one hidden width, got {widths:?}"
                )))
            }
            _ => {}
        }
        let mut rng = seed::rng(seed::derive(seed, seed::INIT));
        let layers = widths
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..=bound));
                let bias = if bias { vec![0.0; fan_out] } else { Vec::new() };
                Dense { weight, bias }
            })
            .collect();
        Ok(Self {
            kind,
            widths: widths.to_vec(),
            seed,
            layers,
        })
    }

    /// Bias-free linear backbone with weight `vᵀ`, i.e. features `x·v`.
    pub fn linear_from(v: &Matrix) -> Self {
        Self {
            kind: BackboneKind::Linear,
            widths: vec![v.rows(), v.cols()],
            seed: 0,
            layers: vec![Dense {
                weight: v.transpose(),
                bias: Vec::new(),
            }],
        }
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn has_bias(&self) -> bool {
        !self.layers[0].bias.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "backbone forward",
                format!("input width {}, backbone expects {}", x.cols(), self.input_dim()),
            ));
        }
        Ok(())
    }

    /// Features for a batch, without caching.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if l < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }
}

fn relu_in_place(m: &mut Matrix) {
    m.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    /// Uniform in `±1/√K`, like a backbone layer.
    #[default]
    FanIn,
    Zeros,
}

/// N×K classifier over dataset indices (or classes), no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DietHead {
    pub w: Matrix,
}

impl DietHead {
    pub fn new(rows: usize, features: usize, init: HeadInit, seed: u64) -> Result<Self> {
        if rows == 0 || features == 0 {
            return Err(Error::arg("head needs at least one row and one feature"));
        }
        let w = match init {
            HeadInit::Zeros => Matrix::zeros(rows, features),
            HeadInit::FanIn => {
                let mut rng = seed::rng(seed::derive(seed, seed::HEAD));
                let bound = 1.0 / (features as f64).sqrt();
                Matrix::from_fn(rows, features, |_, _| rng.random_range(-bound..=bound))
            }
        };
        Ok(Self { w })
    }

    pub fn rows(&self) -> usize {
        self.w.rows()
    }

    pub fn features(&self) -> usize {
        self.w.cols()
    }

    /// `feats · wᵀ`.
    pub fn logits(&self, feats: &Matrix) -> Result<Matrix> {
        if feats.cols() != self.w.cols() {
            return Err(Error::shape(
                "head_logits",
                format!("feature width {}, head expects {}", feats.cols(), self.w.cols()),
            ));
        }
        linalg::matmul_transb(feats, &self.w)
    }
}

pub fn head_logits(h: &DietHead, feats: &Matrix) -> Result<Matrix> {
    h.logits(feats)
}

#[derive(Debug, Clone)]
struct Cache {
    /// Layer inputs: `inputs[l]` is the input to layer l.
    inputs: Vec<Matrix>,
    /// Pre-activations of each layer.
    pre: Vec<Matrix>,
    features: Matrix,
}

/// Per-parameter gradients, in the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    pub head: Matrix,
}

impl Gradients {
    /// Flat views in [`Model::params_mut`] order.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(l.weight.data());
            if !l.bias.is_empty() {
                out.push(l.bias.as_slice());
            }
        }
        out.push(self.head.data());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub backbone: Backbone,
    pub head: DietHead,
    cache: Option<Cache>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.backbone == other.backbone && self.head == other.head
    }
}

impl Model {
    pub fn new(backbone: Backbone, head: DietHead) -> Result<Self> {
        if head.features() != backbone.feature_dim() {
            return Err(Error::shape(
                "Model::new",
                format!(
                    "head has {} features, backbone produces {}",
                    head.features(),
                    backbone.feature_dim()
                ),
            ));
        }
        Ok(Self {
            backbone,
            head,
            cache: None,
        })
    }

    /// Logits for a batch; caches activations for [`Model::backward`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        self.backbone.check_input(x)?;
        let last = self.backbone.layers.len() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last + 1);
        let mut h = x.clone();
        for (l, layer) in self.backbone.layers.iter().enumerate() {
            let z = layer.apply(&h)?;
            inputs.push(h);
            h = z.clone();
            if l < last {
                relu_in_place(&mut h);
            }
            pre.push(z);
        }
        let logits = self.head.logits(&h)?;
        self.cache = Some(Cache {
            inputs,
            pre,
            features: h,
        });
        Ok(logits)
    }

    /// Gradients of the loss given `d_logits = ∂loss/∂logits` for the
    /// batch passed to the last forward. ReLU's derivative at 0 is 0.
    pub fn backward(&self, d_logits: &Matrix) -> Result<Gradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::State("backward called before forward"))?;
        if d_logits.shape() != (cache.features.rows(), self.head.rows()) {
            return Err(Error::shape(
                "backward",
                format!(
                    "upstream gradient {:?}, expected {:?}",
                    d_logits.shape(),
                    (cache.features.rows(), self.head.rows())
                ),
            ));
        }
        let head = linalg::matmul_transa(d_logits, &cache.features)?;
        let mut dz = linalg::matmul(d_logits, &self.head.w)?;

        let n_layers = self.backbone.layers.len();
        let mut layers: Vec<Dense> = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            if l < n_layers - 1 {
                for (g, &z) in dz.data_mut().iter_mut().zip(cache.pre[l].data()) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let weight = linalg::matmul_transa(&dz, &cache.inputs[l])?;
            let bias = if self.backbone.layers[l].bias.is_empty() {
                Vec::new()
            } else {
                let mut b = vec![0.0; dz.cols()];
                for r in 0..dz.rows() {
                    b.iter_mut().zip(dz.row(r)).for_each(|(s, v)| *s += v);
                }
                b
            };
            if l > 0 {
                dz = linalg::matmul(&dz, &self.backbone.layers[l].weight)?;
            }
            layers.push(Dense { weight, bias });
        }
        layers.reverse();
        Ok(Gradients { layers, head })
    }

    /// Mutable parameter tensors: each layer's weight then bias (if any),
    /// then the head.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.backbone.layers.len() + 1);
        for l in &mut self.backbone.layers {
            out.push(l.weight.data_mut());
            if !l.bias.is_empty() {
                out.push(l.bias.as_mut_slice());
            }
        }
        out.push(self.head.w.data_mut());
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in &self.backbone.layers {
            out.push(l.weight.data().len());
            if !l.bias.is_empty() {
                out.push(l.bias.len());
            }
        }
        out.push(self.head.w.data().len());
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn is_finite(&self) -> bool {
        self.backbone
            .layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
            && self.head.w.is_finite()
    }
}

pub const CHECKPOINT_FORMAT: &str = "diet-lab-checkpoint/1";

/// JSON side of a checkpoint; parameters live in a sibling blob of
/// little-endian f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub kind: BackboneKind,
    pub widths: Vec<usize>,
    pub bias: bool,
    pub seed: u64,
    /// Head rows (dataset size for index targets, class count otherwise).
    pub n: usize,
    /// Feature width.
    pub k: usize,
    pub param_count: usize,
    pub blob: String,
}

/// Writes `<path>` (manifest) and `<path>.bin` (parameters).
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let blob_path = blob_path(path);
    let blob_name = blob_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::arg(format!("bad checkpoint path {}", path.display())))?
        .to_string();
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        kind: model.backbone.kind,
        widths: model.backbone.widths.clone(),
        bias: model.backbone.has_bias(),
        seed: model.backbone.seed,
        n: model.head.rows(),
        k: model.head.features(),
        param_count: model.param_count(),
        blob: blob_name,
    };
    let mut bytes = Vec::with_capacity(8 * manifest.param_count);
    let mut m = model.clone();
    for p in m.params_mut() {
        for v in p.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    fs::write(&blob_path, bytes).map_err(|e| Error::io(&blob_path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        detail: e.to_string(),
    })?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("unsupported format {:?}", manifest.format),
        });
    }
    let backbone = Backbone::new(manifest.kind, &manifest.widths, manifest.bias, manifest.seed)?;
    let head = DietHead::new(manifest.n, manifest.k, HeadInit::Zeros, 0)?;
    let mut model = Model::new(backbone, head)?;
    if model.param_count() != manifest.param_count {
        return Err(Error::Format {
            path: path.into(),
            detail: format!(
                "manifest declares {} parameters, architecture has {}",
                manifest.param_count,
                model.param_count()
            ),
        });
    }
    let blob_path = path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if bytes.len() != 8 * manifest.param_count {
        return Err(Error::Length {
            path: blob_path,
            expected: 8 * manifest.param_count,
            found: bytes.len(),
        });
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for p in model.params_mut() {
        for v in p.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(model)
}

fn blob_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory;
    use crate::train::loss::smoothed_xent;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seed::rng(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Layer-by-layer evaluation with explicit loops.
    fn reference_features(b: &Backbone, x: &Matrix) -> Matrix {
        let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
        let last = b.layers().len() - 1;
        for (l, layer) in b.layers().iter().enumerate() {
            h = h
                .iter()
                .map(|row| {
                    (0..layer.weight.rows())
                        .map(|o| {
                            let mut s = layer.bias.get(o).copied().unwrap_or(0.0);
                            for (i, v) in row.iter().enumerate() {
                                s += layer.weight.get(o, i) * v;
                            }
                            if l < last { s.max(0.0) } else { s }
                        })
                        .collect()
                })
                .collect();
        }
        Matrix::from_rows(&h).unwrap()
    }

    #[test]
    fn init_contract() {
        let b = init_backbone(BackboneKind::Linear, &[5, 3], 1).unwrap();
        assert_eq!(b.layers().len(), 1);
        assert_eq!(b.param_count(), 5 * 3 + 3);
        assert_eq!(b, init_backbone(BackboneKind::Linear, &[5, 3], 1).unwrap());
        assert_ne!(b, init_backbone(BackboneKind::Linear, &[5, 3], 2).unwrap());

        let b = init_backbone(BackboneKind::Mlp, &[100, 20, 4], 3).unwrap();
        assert!(b.layers()[0].weight.data().iter().all(|v| v.abs() <= 0.1));
        assert!(b.layers().iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        assert_eq!(b.param_count(), 100 * 20 + 20 + 20 * 4 + 4);

        assert!(init_backbone(BackboneKind::Mlp, &[4, 0, 2], 0).is_err());
        assert!(init_backbone(BackboneKind::Mlp, &[4, 2], 0).is_err());
        assert!(init_backbone(BackboneKind::Linear, &[4, 3, 2], 0).is_err());
    }

    #[test]
    fn linear_forward_is_affine() {
        let mut b = init_backbone(BackboneKind::Linear, &[4, 3], 5).unwrap();
        b.layers_mut()[0].bias = vec![0.5, -1.0, 2.0];
        let x = random_matrix(6, 4, 6);
        let f = b.features(&x).unwrap();
        let mut want = linalg::matmul_transb(&x, &b.layers()[0].weight).unwrap();
        for r in 0..6 {
            for (v, bias) in want.row_mut(r).iter_mut().zip([0.5, -1.0, 2.0]) {
                *v += bias;
            }
        }
        assert_eq!(f, want);
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let mut b = init_backbone(BackboneKind::Mlp, &[3, 5, 2], 0).unwrap();
        for l in b.layers_mut() {
            l.weight = Matrix::zeros(l.weight.rows(), l.weight.cols());
        }
        b.layers_mut()[1].bias = vec![0.25, -3.0];
        let f = b.features(&random_matrix(4, 3, 1)).unwrap();
        for r in 0..4 {
            assert_eq!(f.row(r), &[0.25, -3.0]);
        }
    }

    #[test]
    fn mlp_matches_reference_evaluator() {
        let mut b = init_backbone(BackboneKind::Mlp, &[7, 9, 6, 3], 8).unwrap();
        for (i, l) in b.layers_mut().iter_mut().enumerate() {
            let n = l.bias.len();
            l.bias = random_matrix(1, n, 50 + i as u64).into_data();
        }
        let x = random_matrix(5, 7, 9);
        assert!(b.features(&x).unwrap().max_abs_diff(&reference_features(&b, &x)) < 1e-12);
        assert_eq!(b.features(&x).unwrap(), b.features(&x).unwrap());
    }

    #[test]
    fn head_logits_contract() {
        let head = DietHead::new(5, 3, HeadInit::FanIn, 0).unwrap();
        let z = head.logits(&Matrix::zeros(2, 3)).unwrap();
        assert_eq!(z, Matrix::zeros(2, 5));
        let id = DietHead { w: Matrix::identity(3) };
        let f = random_matrix(4, 3, 2);
        assert_eq!(id.logits(&f).unwrap(), f);
        let f = random_matrix(4, 3, 3);
        let naive = Matrix::from_fn(4, 5, |r, c| (0..3).map(|k| f.get(r, k) * head.w.get(c, k)).sum());
        assert!(head.logits(&f).unwrap().max_abs_diff(&naive) < 1e-12);
        assert!(head.logits(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let b = init_backbone(BackboneKind::Linear, &[3, 2], 0).unwrap();
        let model = Model::new(b, DietHead::new(4, 2, HeadInit::FanIn, 0).unwrap()).unwrap();
        assert!(matches!(model.backward(&Matrix::zeros(1, 4)), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let b = init_backbone(BackboneKind::Mlp, &[3, 4, 2], 0).unwrap();
        let mut model = Model::new(b, DietHead::new(5, 2, HeadInit::FanIn, 0).unwrap()).unwrap();
        model.forward(&random_matrix(3, 3, 1)).unwrap();
        let g = model.backward(&Matrix::zeros(3, 5)).unwrap();
        assert!(g.flat().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    fn loss_of(model: &Model, x: &Matrix, targets: &[usize], eps: f64) -> f64 {
        let mut m = model.clone();
        let logits = m.forward(x).unwrap();
        smoothed_xent(&logits, targets, eps).unwrap().0
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let (n, d, k) = (12, 6, 4);
        let b = init_backbone(BackboneKind::Mlp, &[d, 8, k], 21).unwrap();
        let mut model = Model::new(b, DietHead::new(n, k, HeadInit::FanIn, 21).unwrap()).unwrap();
        // Nonzero biases so every parameter path is exercised.
        let mut rng = seed::rng(5);
        for l in model.backbone.layers_mut() {
            l.bias.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        let x = random_matrix(n, d, 22);
        let targets: Vec<usize> = (0..n).collect();
        let logits = model.forward(&x).unwrap();
        let (_, dl) = smoothed_xent(&logits, &targets, 0.8).unwrap();
        let grads = model.backward(&dl).unwrap();
        let analytic: Vec<Vec<f64>> = grads.flat().iter().map(|g| g.to_vec()).collect();

        let h = 1e-5;
        let sizes = model.param_sizes();
        for (t, &size) in sizes.iter().enumerate() {
            let fd: Vec<f64> = (0..size)
                .map(|j| {
                    let mut plus = model.clone();
                    plus.params_mut()[t][j] += h;
                    let mut minus = model.clone();
                    minus.params_mut()[t][j] -= h;
                    (loss_of(&plus, &x, &targets, 0.8) - loss_of(&minus, &x, &targets, 0.8)) / (2.0 * h)
                })
                .collect();
            let rel = Matrix::relative_error(&analytic[t], &fd);
            assert!(rel < 1e-6, "tensor {t}: relative error {rel:e}");
        }
    }

    #[test]
    fn linear_backbone_matches_theory_gradients() {
        let spec = theory::ClusteredSpec::orthogonal(3, 2, 5, 4).unwrap();
        let x = theory::make_clustered_data(&spec).unwrap();
        let mut rng = seed::rng(3);
        let v = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let w = Matrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));

        let mut model = Model::new(Backbone::linear_from(&v), DietHead { w: w.clone() }).unwrap();
        let logits = model.forward(&x).unwrap();
        assert_eq!(logits, theory::linear_logits(&x, &v, &w).unwrap());
        let targets: Vec<usize> = (0..6).collect();
        let (_, dl) = smoothed_xent(&logits, &targets, 0.0).unwrap();
        let g = model.backward(&dl.scale(6.0)).unwrap();
        let (gw, gv) = theory::diet_gradients(&x, &v, &w).unwrap();
        assert!(g.head.max_abs_diff(&gw) < 1e-10);
        assert!(g.layers[0].weight.transpose().max_abs_diff(&gv) < 1e-10);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let b = init_backbone(BackboneKind::Mlp, &[4, 6, 3], 9).unwrap();
        let mut model = Model::new(b, DietHead::new(10, 3, HeadInit::FanIn, 9).unwrap()).unwrap();
        model.params_mut()[1][2] = std::f64::consts::PI * 1e-300;
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        let manifest: CheckpointManifest =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!((manifest.n, manifest.k), (10, 3));
        assert_eq!(fs::read(dir.path().join("ckpt.json.bin")).unwrap().len(), 8 * model.param_count());

        fs::write(dir.path().join("ckpt.json.bin"), [0u8; 7]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Length { .. })));
    }
}

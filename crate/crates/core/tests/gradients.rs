use diet_core::linalg::Matrix;
use diet_core::model::{Backbone, BackboneKind, DietHead, HeadInit, Model};
use diet_core::seed;
use diet_core::theory::{self, ClusteredSpec};
use diet_core::train::smoothed_xent;
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-5;

fn random_matrix(rows: usize, cols: usize, s: u64) -> Matrix {
    let mut rng = seed::rng(s);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn sum_loss(x: &Matrix, v: &Matrix, w: &Matrix) -> f64 {
    theory::diet_linear_loss(x, v, w).unwrap() * x.rows() as f64
}

/// Central differences of the summed linear loss with respect to every
/// entry of `v` and `w`.
fn linear_fd(x: &Matrix, v: &Matrix, w: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let fd_v = (0..v.data().len())
        .map(|i| {
            let (mut p, mut m) = (v.clone(), v.clone());
            p.data_mut()[i] += H;
            m.data_mut()[i] -= H;
            (sum_loss(x, &p, w) - sum_loss(x, &m, w)) / (2.0 * H)
        })
        .collect();
    let fd_w = (0..w.data().len())
        .map(|i| {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.data_mut()[i] += H;
            m.data_mut()[i] -= H;
            (sum_loss(x, v, &p) - sum_loss(x, v, &m)) / (2.0 * H)
        })
        .collect();
    (fd_v, fd_w)
}

fn check_linear(n: usize, d: usize, k: usize, s: u64) -> (f64, f64) {
    let x = random_matrix(n, d, s);
    let v = random_matrix(d, k, s + 1);
    let w = random_matrix(n, k, s + 2);
    let (gw, gv) = theory::diet_gradients(&x, &v, &w).unwrap();
    let (fd_v, fd_w) = linear_fd(&x, &v, &w);
    (
        Matrix::relative_error(gw.data(), &fd_w),
        Matrix::relative_error(gv.data(), &fd_v),
    )
}

#[test]
fn linear_gradients_match_finite_differences_on_twenty_instances() {
    for s in 0..20u64 {
        let (ew, ev) = check_linear(6, 5, 3, 100 * s);
        assert!(ew < 1e-6 && ev < 1e-6, "instance {s}: W {ew:e}, V {ev:e}");
    }
}

#[test]
fn zero_v_gradients() {
    let (n, d, k) = (5, 4, 2);
    let x = random_matrix(n, d, 1);
    let v = Matrix::zeros(d, k);
    let w = random_matrix(n, k, 2);
    let (gw, gv) = theory::diet_gradients(&x, &v, &w).unwrap();
    assert!(gw.data().iter().all(|&g| g == 0.0));
    let a = Matrix::from_fn(n, n, |i, j| 1.0 / n as f64 - if i == j { 1.0 } else { 0.0 });
    let expected = diet_core::linalg::matmul_transa(&x, &diet_core::linalg::matmul(&a, &w).unwrap()).unwrap();
    assert!(gv.max_abs_diff(&expected) < 1e-14);
    let (fd_v, _) = linear_fd(&x, &v, &w);
    assert!(Matrix::relative_error(gv.data(), &fd_v) < 1e-6);
}

#[test]
fn linear_backbone_backward_matches_theory() {
    for s in 0..5u64 {
        let spec = ClusteredSpec::orthogonal(3, 3, 6, s).unwrap();
        let x = theory::make_clustered_data(&spec).unwrap();
        let v = random_matrix(6, 3, s + 10);
        let w = random_matrix(9, 3, s + 20);
        let mut model = Model::new(Backbone::linear_from(&v), DietHead { w: w.clone() }).unwrap();
        let logits = model.forward(&x).unwrap();
        let targets: Vec<usize> = (0..9).collect();
        let (_, dl) = smoothed_xent(&logits, &targets, 0.0).unwrap();
        // Mean-form upstream gradient times N gives the summed loss.
        let g = model.backward(&dl.scale(9.0)).unwrap();
        let (gw, gv) = theory::diet_gradients(&x, &v, &w).unwrap();
        assert!(g.head.max_abs_diff(&gw) < 1e-10);
        assert!(g.layers[0].weight.transpose().max_abs_diff(&gv) < 1e-10);
    }
}

fn model_loss(model: &Model, x: &Matrix, eps: f64) -> f64 {
    let mut m = model.clone();
    let logits = m.forward(x).unwrap();
    let targets: Vec<usize> = (0..x.rows()).collect();
    smoothed_xent(&logits, &targets, eps).unwrap().0
}

fn random_model(kind: BackboneKind, widths: &[usize], n: usize, s: u64) -> Model {
    let mut b = Backbone::new(kind, widths, true, s).unwrap();
    let mut rng = seed::rng(s ^ 0xb1a5);
    for l in b.layers_mut() {
        l.bias.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    }
    let k = *widths.last().unwrap();
    Model::new(b, DietHead::new(n, k, HeadInit::FanIn, s).unwrap()).unwrap()
}

/// Smallest |pre-activation| of the first layer, which feeds a ReLU in the
/// MLP. Central differences are meaningless within `H` of that kink.
fn kink_margin(model: &Model, x: &Matrix) -> f64 {
    let l = &model.backbone.layers()[0];
    (0..x.rows())
        .flat_map(|r| (0..l.weight.rows()).map(move |o| (r, o)))
        .map(|(r, o)| (diet_core::linalg::dot(x.row(r), l.weight.row(o)) + l.bias[o]).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Relative error per parameter tensor over the sampled entries. Norms below
/// `floor` are clamped to it, so a tensor whose gradient is at the level of
/// finite-difference roundoff is judged on absolute error.
fn model_gradcheck(model: &Model, x: &Matrix, eps: f64, max_entries: Option<usize>, floor: f64) -> Vec<f64> {
    let mut m = model.clone();
    let logits = m.forward(x).unwrap();
    let targets: Vec<usize> = (0..x.rows()).collect();
    let (_, dl) = smoothed_xent(&logits, &targets, eps).unwrap();
    let grads = m.backward(&dl).unwrap();
    let analytic: Vec<Vec<f64>> = grads.flat().iter().map(|g| g.to_vec()).collect();
    let sizes = model.param_sizes();
    let total: usize = sizes.iter().sum();
    let stride = max_entries.map_or(1, |cap| total.div_ceil(cap).max(1));
    let mut flat_index = 0;
    let mut errors = Vec::new();
    for (t, &size) in sizes.iter().enumerate() {
        let (mut a, mut fd) = (Vec::new(), Vec::new());
        for j in 0..size {
            if flat_index % stride == 0 {
                let mut plus = model.clone();
                plus.params_mut()[t][j] += H;
                let mut minus = model.clone();
                minus.params_mut()[t][j] -= H;
                fd.push((model_loss(&plus, x, eps) - model_loss(&minus, x, eps)) / (2.0 * H));
                a.push(analytic[t][j]);
            }
            flat_index += 1;
        }
        if !a.is_empty() {
            let norm = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>().sqrt();
            let diff: Vec<f64> = a.iter().zip(&fd).map(|(p, q)| p - q).collect();
            let scale = norm(&a).max(norm(&fd));
            errors.push(if scale >= floor {
                Matrix::relative_error(&a, &fd)
            } else {
                norm(&diff) / floor
            });
        }
    }
    errors
}

#[test]
fn mlp_gradients_match_finite_differences_over_ten_seeds() {
    let (n, d, k) = (12, 6, 4);
    for s in 0..10u64 {
        let model = random_model(BackboneKind::Mlp, &[d, 8, k], n, s);
        let x = random_matrix(n, d, s + 1000);
        for (t, e) in model_gradcheck(&model, &x, 0.8, None, 0.0).into_iter().enumerate() {
            assert!(e < 1e-6, "seed {s}, tensor {t}: {e:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_gradients_match_fd(n in 2usize..7, d in 1usize..5, k in 1usize..4, s in 0u64..1000) {
        let (ew, ev) = check_linear(n, d, k, s);
        prop_assert!(ew < 1e-6 && ev < 1e-6, "W {:e}, V {:e}", ew, ev);
    }

    #[test]
    fn backbone_gradients_match_fd(
        mlp in any::<bool>(),
        n in 2usize..8,
        d in 1usize..6,
        hidden in 1usize..7,
        k in 1usize..5,
        eps in prop_oneof![Just(0.0), Just(0.4), Just(0.8)],
        s in 0u64..1000,
    ) {
        let (kind, widths) = if mlp {
            (BackboneKind::Mlp, vec![d, hidden, k])
        } else {
            (BackboneKind::Linear, vec![d, k])
        };
        let model = random_model(kind, &widths, n, s);
        let x = random_matrix(n, d, s + 7);
        prop_assume!(!mlp || kink_margin(&model, &x) > 1e-3);
        for e in model_gradcheck(&model, &x, eps, Some(50), 1e-4) {
            prop_assert!(e < 1e-6, "{:e}", e);
        }
    }
}


//! Training loop: every sample's index is its class.
//!
//! Per step: (optionally augment) → forward → label-smoothed cross-entropy
//! against the batch's indices → backward → AdamW with the warmup + cosine
//! learning rate. The supervised baseline runs the same loop with true
//! labels as targets and a class-sized head.

pub mod loss;
pub mod optim;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use loss::{smoothed_targets, smoothed_xent};
pub use optim::{lr_at, scale_lr, AdamW, AdamWParams};

use crate::augment::AugmentPipeline;
use crate::data::{batch_order, IndexedDataset, Preprocess};
use crate::error::{Error, Result};
use crate::eval::{self, ProbeConfig, Split};
use crate::model::{HeadInit, Model};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Base learning rate, before batch-size scaling.
    pub lr: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiply `lr` by `batch_size / 256`.
    pub scale_lr_by_batch: bool,
    pub adamw: AdamWParams,
    pub head_init: HeadInit,
    /// Epochs between online probes; `None` means `max(1, epochs / 50)`.
    pub probe_every: Option<usize>,
    /// Fill [`MetricsRecord::seconds`]. Off by default so that logs are
    /// byte-reproducible.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 0.05,
            label_smoothing: 0.8,
            warmup_epochs: 10,
            epochs: 100,
            batch_size: 256,
            seed: 0,
            scale_lr_by_batch: true,
            adamw: AdamWParams::default(),
            head_init: HeadInit::FanIn,
            probe_every: None,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    /// Baseline defaults: no label smoothing.
    pub fn supervised() -> Self {
        Self {
            label_smoothing: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::arg(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::arg(format!(
                "label smoothing must be in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::arg(format!(
                "warmup ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if self.probe_every == Some(0) {
            return Err(Error::arg("probe interval must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate reached at the end of warmup.
    pub fn peak_lr(&self) -> f64 {
        if self.scale_lr_by_batch {
            scale_lr(self.lr, self.batch_size)
        } else {
            self.lr
        }
    }

    pub fn probe_interval(&self) -> usize {
        self.probe_every.unwrap_or((self.epochs / 50).max(1))
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub probe_acc: Option<f64>,
    pub seconds: Option<f64>,
}

/// Labeled splits for the online linear probe.
#[derive(Debug, Clone, Copy)]
pub struct ProbeSets<'a> {
    pub train: &'a IndexedDataset,
    pub test: &'a IndexedDataset,
    pub cfg: ProbeConfig,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions<'a> {
    pub pipeline: Option<&'a AugmentPipeline>,
    pub preprocess: Preprocess,
    pub probe: Option<ProbeSets<'a>>,
    /// End the run after the first probe at or above this accuracy. The
    /// schedule still spans `epochs`.
    pub stop_at_probe_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<MetricsRecord>,
}

/// Trains `model` with each sample's index as its target. The head must
/// have exactly one row per sample.
pub fn train_diet(
    ds: &IndexedDataset,
    model: Model,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    if model.head.rows() != ds.len() {
        return Err(Error::arg(format!(
            "head has {} rows but the dataset has {} samples",
            model.head.rows(),
            ds.len()
        )));
    }
    let targets: Vec<usize> = (0..ds.len()).collect();
    run(ds, model, cfg, opts, &targets)
}

/// Trains `model` on the true labels; the head has one row per class.
pub fn train_supervised(
    ds: &IndexedDataset,
    model: Model,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::arg("supervised training needs labels"))?;
    let classes = ds.num_classes().unwrap_or(0);
    if model.head.rows() != classes {
        return Err(Error::arg(format!(
            "head has {} rows but the labels span {classes} classes",
            model.head.rows()
        )));
    }
    let targets = labels.to_vec();
    run(ds, model, cfg, opts, &targets)
}

fn run(
    ds: &IndexedDataset,
    mut model: Model,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
    targets: &[usize],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = ds.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let peak = cfg.peak_lr();
    let interval = cfg.probe_interval();
    let exec = Exec::default();
    let started = Instant::now();

    let mut opt = AdamW::new(cfg.adamw, &model.param_sizes());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in batch_order(n, cfg.batch_size, true, cfg.seed, epoch as u64)? {
            lr = lr_at(step, total_steps, warmup_steps, peak);
            let x = match opts.pipeline {
                Some(p) => {
                    let mut x = p.apply_batch(ds, &batch, cfg.seed, epoch as u64, exec)?;
                    opts.preprocess.normalize(&mut x);
                    x
                }
                None => opts.preprocess.clean_rows(ds, &batch)?,
            };
            let batch_targets: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let logits = model.forward(&x)?;
            let diverged = |model: &Model, log: &Vec<MetricsRecord>| Error::Diverged {
                epoch: epoch + 1,
                step,
                last_good: Box::new(model.clone()),
                log: log.clone(),
            };
            let (loss, d_logits) = match smoothed_xent(&logits, &batch_targets, cfg.label_smoothing) {
                Ok(v) if v.0.is_finite() => v,
                Ok(_) | Err(Error::NonFinite(_)) => return Err(diverged(&model, &log)),
                Err(e) => return Err(e),
            };
            let grads = model.backward(&d_logits)?;
            if !grads.is_finite() {
                return Err(diverged(&model, &log));
            }
            opt.step(&mut model.params_mut(), &grads.flat(), lr, cfg.weight_decay)?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        model.clear_cache();
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                step,
                last_good: Box::new(model),
                log,
            });
        }

        let done = epoch + 1;
        let probe_acc = match &opts.probe {
            Some(p) if done % interval == 0 || done == cfg.epochs => {
                Some(online_probe(&model, p, &opts.preprocess)?)
            }
            _ => None,
        };
        log.push(MetricsRecord {
            epoch: done,
            loss: loss_sum / n as f64,
            lr,
            probe_acc,
            seconds: cfg.record_wall_clock.then(|| started.elapsed().as_secs_f64()),
        });
        if let (Some(acc), Some(target)) = (probe_acc, opts.stop_at_probe_acc) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome { model, log })
}

fn online_probe(model: &Model, sets: &ProbeSets<'_>, prep: &Preprocess) -> Result<f64> {
    let train = eval::extract_features(&model.backbone, sets.train, prep, Split::Train)?;
    let test = eval::extract_features(&model.backbone, sets.test, prep, Split::Test)?;
    Ok(eval::linear_probe(&train, &test, &sets.cfg)?.test_acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobsSpec};
    use crate::model::{init_backbone, BackboneKind, DietHead};

    fn small_model(n: usize, d: usize, k: usize, seed: u64) -> Model {
        let b = init_backbone(BackboneKind::Mlp, &[d, 8, k], seed).unwrap();
        Model::new(b, DietHead::new(n, k, HeadInit::FanIn, seed).unwrap()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { label_smoothing: 1.0, ..Default::default() },
            TrainConfig { warmup_epochs: 11, epochs: 10, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert_eq!(TrainConfig { batch_size: 512, ..Default::default() }.peak_lr(), 0.002);
        assert_eq!(
            TrainConfig { batch_size: 512, scale_lr_by_batch: false, ..Default::default() }.peak_lr(),
            0.001
        );
        assert_eq!(TrainConfig { epochs: 200, ..Default::default() }.probe_interval(), 4);
        assert_eq!(TrainConfig { epochs: 20, ..Default::default() }.probe_interval(), 1);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let ds = gen_blobs(2, 4, 3, 0.1, 0).unwrap();
        let model = small_model(8, 3, 2, 1);
        let cfg = TrainConfig { epochs: 0, warmup_epochs: 0, ..Default::default() };
        let out = train_diet(&ds, model.clone(), &cfg, &TrainOptions::default()).unwrap();
        assert_eq!(out.model, model);
        assert!(out.log.is_empty());
    }

    #[test]
    fn head_size_checked() {
        let ds = gen_blobs(2, 4, 3, 0.1, 0).unwrap();
        let cfg = TrainConfig::default();
        assert!(train_diet(&ds, small_model(7, 3, 2, 0), &cfg, &TrainOptions::default()).is_err());
        assert!(train_supervised(&ds, small_model(8, 3, 2, 0), &cfg, &TrainOptions::default()).is_err());
        let unlabeled = IndexedDataset::with_indices(ds.samples().to_vec(), None).unwrap();
        assert!(matches!(
            train_supervised(&unlabeled, small_model(2, 3, 2, 0), &cfg, &TrainOptions::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn runs_are_reproducible_and_loss_drops() {
        let ds = gen_blobs(3, 10, 4, 0.1, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            warmup_epochs: 3,
            batch_size: 8,
            lr: 0.01,
            seed: 4,
            ..Default::default()
        };
        let probe = ProbeSets { train: &ds, test: &ds, cfg: ProbeConfig::default() };
        let opts = TrainOptions { probe: Some(probe), ..Default::default() };
        let a = train_diet(&ds, small_model(30, 4, 3, 5), &cfg, &opts).unwrap();
        let b = train_diet(&ds, small_model(30, 4, 3, 5), &cfg, &opts).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        assert_eq!(a.log.len(), 30);
        assert!(a.log.iter().all(|r| r.probe_acc.is_some() && r.seconds.is_none()));
        assert!(a.log.last().unwrap().loss < a.log[0].loss);
        assert!(a.log.windows(2).all(|w| w[0].epoch < w[1].epoch));
    }

    #[test]
    fn supervised_separable_blobs() {
        let ds = BlobsSpec { radius: 1.0, ..BlobsSpec::new(3, 20, 5, 0.05, 7) }.generate().unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            warmup_epochs: 5,
            batch_size: 16,
            lr: 0.02,
            ..TrainConfig::supervised()
        };
        let out = train_supervised(&ds, small_model(3, 5, 4, 1), &cfg, &TrainOptions::default()).unwrap();
        let logits = out.model.head.logits(&out.model.backbone.features(&ds.to_matrix()).unwrap()).unwrap();
        assert_eq!(eval::top1(&logits, ds.labels().unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn stops_at_probe_target() {
        let ds = gen_blobs(2, 6, 3, 0.05, 1).unwrap();
        let probe = ProbeSets { train: &ds, test: &ds, cfg: ProbeConfig::default() };
        let opts = TrainOptions { probe: Some(probe), stop_at_probe_acc: Some(0.5), ..Default::default() };
        let cfg = TrainConfig { epochs: 10, warmup_epochs: 1, batch_size: 4, ..Default::default() };
        let out = train_diet(&ds, small_model(12, 3, 2, 0), &cfg, &opts).unwrap();
        assert_eq!(out.log.len(), 1);
        assert!(out.log[0].probe_acc.unwrap() >= 0.5);
    }

    #[test]
    fn divergence_returns_last_good_model() {
        let ds = gen_blobs(2, 4, 3, 0.1, 0).unwrap();
        let cfg = TrainConfig { epochs: 5, warmup_epochs: 0, lr: 1e308, scale_lr_by_batch: false, ..Default::default() };
        match train_diet(&ds, small_model(8, 3, 2, 1), &cfg, &TrainOptions::default()) {
            Err(Error::Diverged { last_good, .. }) => assert!(last_good.is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn augmented_image_training_runs() {
        use crate::augment::build_pipeline;
        use crate::data::Sample;
        let samples: Vec<Sample> = (0..6)
            .map(|i| Sample::image(1, 6, 6, (0..36).map(|p| ((p * (i + 1)) % 7) as f64 / 7.0).collect()).unwrap())
            .collect();
        let ds = IndexedDataset::with_indices(samples, Some(vec![0, 1, 0, 1, 0, 1])).unwrap();
        let pipeline = build_pipeline(3, (4, 4)).unwrap();
        let opts = TrainOptions {
            pipeline: Some(&pipeline),
            preprocess: Preprocess { resize: Some((4, 4)), normalization: None },
            probe: Some(ProbeSets { train: &ds, test: &ds, cfg: ProbeConfig::default() }),
            stop_at_probe_acc: None,
        };
        let cfg = TrainConfig { epochs: 3, warmup_epochs: 1, batch_size: 4, ..Default::default() };
        let a = train_diet(&ds, small_model(6, 16, 3, 0), &cfg, &opts).unwrap();
        let b = train_diet(&ds, small_model(6, 16, 3, 0), &cfg, &opts).unwrap();
        assert_eq!(a.log, b.log);
    }
}

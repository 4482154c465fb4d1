use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use diet_core::augment::AugmentPipeline;
use diet_core::data::{save_csv, BlobsSpec, IndexedDataset, Normalization, Preprocess, SampleShape};
use diet_core::eval::{self, ProbeConfig, ProbeResult, Split};
use diet_core::model::{self, DietHead, Model};
use diet_core::theory::{self, ClusteredSpec, OptimalityReport};
use diet_core::train::{self, MetricsRecord, ProbeSets, TrainConfig, TrainOptions};
use diet_core::Error as CoreError;
use serde::Serialize;

use crate::config::{
    create_dir, write_file, BackboneSpec, DataSource, GenDataConfig, Mode, ProbeRunConfig, RunConfig,
    TheoryRunConfig, TrainRunConfig, DEFAULT_FEATURE_DIM,
};
use crate::error::{CliError, CliResult, InputContext};
use crate::{GenDataArgs, ProbeArgs, TheoryArgs, TrainArgs};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "loss_curve.csv";

fn base_config<T>(path: &Option<PathBuf>, pick: impl FnOnce(RunConfig) -> Option<T>) -> CliResult<Option<T>> {
    let Some(path) = path else { return Ok(None) };
    let cfg = RunConfig::load(path)?;
    let kind = cfg.name();
    pick(cfg)
        .map(Some)
        .ok_or_else(|| CliError::usage(format!("{} holds a `{kind}` config", path.display())))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::usage(format!("missing --{flag}")))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let base = base_config(&a.config, |c| match c {
        RunConfig::GenData(g) => Some(g),
        _ => None,
    })?;
    let defaults = base.as_ref().map(|b| b.blobs).unwrap_or(BlobsSpec::new(8, 125, 32, 0.1, 0));
    let cfg = GenDataConfig {
        blobs: BlobsSpec {
            classes: a.classes.unwrap_or(defaults.classes),
            per_class: a.per_class.unwrap_or(defaults.per_class),
            dim: a.dim.unwrap_or(defaults.dim),
            spread: a.spread.unwrap_or(defaults.spread),
            radius: a.radius.unwrap_or(defaults.radius),
            seed: a.seed.unwrap_or(defaults.seed),
        },
        test_per_class: a.test_per_class.or(base.as_ref().map(|b| b.test_per_class)).unwrap_or(50),
        out: required(a.out.clone().or(base.map(|b| b.out)), "out")?,
    };
    cfg.blobs.validate()?;

    let train = cfg.blobs.generate()?;
    let test = match cfg.test_per_class {
        0 => None,
        n => Some(cfg.blobs.generate_test(n)?),
    };
    create_dir(&cfg.out)?;
    save_csv(&train, &cfg.out.join("blobs.csv")).map_err(CliError::runtime)?;
    if let Some(test) = &test {
        save_csv(test, &cfg.out.join("blobs-test.csv")).map_err(CliError::runtime)?;
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        blobs: &'a BlobsSpec,
        train: &'static str,
        test: Option<&'static str>,
        samples: usize,
        test_samples: usize,
    }
    let manifest = Manifest {
        blobs: &cfg.blobs,
        train: "blobs.csv",
        test: test.as_ref().map(|_| "blobs-test.csv"),
        samples: train.len(),
        test_samples: test.as_ref().map_or(0, |t| t.len()),
    };
    write_file(&cfg.out.join("manifest.json"), to_json(&manifest)?.as_bytes())?;
    RunConfig::GenData(cfg.clone()).write(&cfg.out)?;
    println!(
        "wrote {} training and {} test samples to {}",
        manifest.samples,
        manifest.test_samples,
        cfg.out.display()
    );
    Ok(())
}

fn data_from_args(
    data: &Option<PathBuf>,
    test_data: &Option<PathBuf>,
    idx: [&Option<PathBuf>; 4],
) -> Option<DataSource> {
    let [images, labels, test_images, test_labels] = idx;
    if let Some(train) = data {
        return Some(DataSource::Csv {
            train: train.clone(),
            test: test_data.clone(),
        });
    }
    images.as_ref().map(|images| DataSource::Idx {
        images: images.clone(),
        labels: labels.clone(),
        test_images: test_images.clone(),
        test_labels: test_labels.clone(),
    })
}

fn resolve_train(a: &TrainArgs) -> CliResult<TrainRunConfig> {
    let base = base_config(&a.config, |c| match c {
        RunConfig::Train(t) => Some(t),
        _ => None,
    })?;
    let mode = a.mode.or(base.as_ref().map(|b| b.mode)).unwrap_or(Mode::Diet);
    let data = data_from_args(
        &a.data,
        &a.test_data,
        [&a.idx_images, &a.idx_labels, &a.idx_test_images, &a.idx_test_labels],
    )
    .or(base.as_ref().map(|b| b.data.clone()));
    let data = data.ok_or_else(|| CliError::usage("missing training data (--data or --idx-images)"))?;

    let feature_dim = a
        .feature_dim
        .or(base.as_ref().map(|b| b.backbone.feature_dim))
        .unwrap_or(DEFAULT_FEATURE_DIM);
    let backbone = match (&a.backbone, &base) {
        (Some(text), _) => BackboneSpec::parse(text, feature_dim)?,
        (None, Some(b)) => BackboneSpec {
            feature_dim,
            ..b.backbone.clone()
        },
        (None, None) => BackboneSpec::parse("mlp:64", feature_dim)?,
    };

    let mut t = match (&base, mode) {
        (Some(b), _) => b.train,
        (None, Mode::Diet) => TrainConfig::default(),
        (None, Mode::Supervised) => TrainConfig::supervised(),
    };
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.lr, a.lr);
    set(&mut t.weight_decay, a.weight_decay);
    set(&mut t.label_smoothing, a.label_smoothing);
    set(&mut t.warmup_epochs, a.warmup_epochs);
    set(&mut t.scale_lr_by_batch, a.lr_scaling);
    set(&mut t.seed, a.seed);
    set(&mut t.record_wall_clock, a.wall_clock);
    if a.probe_every.is_some() {
        t.probe_every = a.probe_every;
    }
    if a.epochs.is_some() && a.warmup_epochs.is_none() {
        t.warmup_epochs = t.warmup_epochs.min(t.epochs);
    }
    t.validate()?;

    let augment = a.augment.or(base.as_ref().map(|b| b.augment)).unwrap_or(0);
    if augment > 3 {
        return Err(CliError::usage(format!("augmentation strength must be 0-3, got {augment}")));
    }
    Ok(TrainRunConfig {
        mode,
        data,
        backbone,
        augment,
        image_size: a.image_size.or(base.as_ref().and_then(|b| b.image_size)),
        normalize: a.normalize.or(base.as_ref().map(|b| b.normalize)).unwrap_or(false),
        probe: base.as_ref().map(|b| b.probe).unwrap_or_default(),
        train: t,
        out: required(a.out.clone().or(base.map(|b| b.out)), "out")?,
    })
}

/// Resize and normalisation for model inputs, plus the resulting input width.
fn preprocess_for(
    ds: &IndexedDataset,
    image_size: Option<(usize, usize)>,
    normalize: bool,
) -> CliResult<(Preprocess, usize)> {
    let (resize, dim) = match (ds.sample_shape(), image_size) {
        (_, None) => (None, ds.input_dim()),
        (SampleShape::Image { channels, .. }, Some((h, w))) => {
            if h == 0 || w == 0 {
                return Err(CliError::usage("image size must be positive"));
            }
            (Some((h, w)), channels * h * w)
        }
        (SampleShape::Flat(_), Some(_)) => {
            return Err(CliError::usage("--image-size needs image data"));
        }
    };
    let normalization = normalize.then(|| Normalization::fit(ds));
    Ok((Preprocess { resize, normalization }, dim))
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    status: &'static str,
    mode: Mode,
    samples: usize,
    head_rows: usize,
    epochs_completed: usize,
    peak_lr: f64,
    final_loss: Option<f64>,
    final_probe_acc: Option<f64>,
    loss_acc_spearman: Option<f64>,
}

fn metrics_jsonl(log: &[MetricsRecord]) -> CliResult<String> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let cfg = resolve_train(a)?;
    let ds = cfg.data.load_train()?;
    let test = cfg.data.load_test()?;
    if let Some(t) = &test {
        if t.sample_shape() != ds.sample_shape() {
            return Err(CliError::usage("training and test samples differ in shape"));
        }
    }
    let (prep, input_dim) = preprocess_for(&ds, cfg.image_size, cfg.normalize)?;
    let pipeline = match (cfg.augment, ds.sample_shape()) {
        (0, _) => None,
        (s, SampleShape::Image { height, width, .. }) => {
            Some(AugmentPipeline::new(s, cfg.image_size.unwrap_or((height, width)))?)
        }
        (_, SampleShape::Flat(_)) => return Err(CliError::usage("augmentation needs image data")),
    };

    let head_rows = match cfg.mode {
        Mode::Diet => ds.len(),
        Mode::Supervised => ds
            .num_classes()
            .ok_or_else(|| CliError::usage("supervised mode needs labels"))?,
    };
    let seed = cfg.train.seed;
    let backbone = cfg.backbone.build(input_dim, seed)?;
    let head = DietHead::new(head_rows, cfg.backbone.feature_dim, cfg.train.head_init, seed)?;
    let model = Model::new(backbone, head)?;

    let probe = match (&test, ds.labels()) {
        (Some(t), Some(_)) if t.labels().is_some() => Some(ProbeSets {
            train: &ds,
            test: t,
            cfg: cfg.probe,
        }),
        _ => None,
    };
    let opts = TrainOptions {
        pipeline: pipeline.as_ref(),
        preprocess: prep,
        probe,
        stop_at_probe_acc: None,
    };

    create_dir(&cfg.out)?;
    RunConfig::Train(cfg.clone()).write(&cfg.out)?;
    let result = match cfg.mode {
        Mode::Diet => train::train_diet(&ds, model, &cfg.train, &opts),
        Mode::Supervised => train::train_supervised(&ds, model, &cfg.train, &opts),
    };
    let (model, log, failure) = match result {
        Ok(out) => (out.model, out.log, None),
        Err(CoreError::Diverged {
            epoch,
            step,
            last_good,
            log,
        }) => (
            *last_good,
            log,
            Some(CliError::runtime(format!(
                "training diverged at epoch {epoch} (step {step}); kept the last finite parameters"
            ))),
        ),
        Err(e) => return Err(e.into()),
    };

    write_file(&cfg.out.join(METRICS_FILE), metrics_jsonl(&log)?.as_bytes())?;
    model::save_checkpoint(&model, &cfg.out.join(CHECKPOINT_FILE)).map_err(CliError::runtime)?;
    let last = log.last();
    let summary = TrainSummary {
        status: if failure.is_some() { "diverged" } else { "ok" },
        mode: cfg.mode,
        samples: ds.len(),
        head_rows,
        epochs_completed: log.len(),
        peak_lr: cfg.train.peak_lr(),
        final_loss: last.map(|r| r.loss),
        final_probe_acc: last.and_then(|r| r.probe_acc),
        loss_acc_spearman: eval::loss_acc_correlation(&log).ok(),
    };
    write_file(&cfg.out.join(SUMMARY_FILE), to_json(&summary)?.as_bytes())?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut line = format!(
        "{} epochs, peak lr {}, final loss {:.6}",
        summary.epochs_completed,
        summary.peak_lr,
        summary.final_loss.unwrap_or(f64::NAN)
    );
    if let Some(acc) = summary.final_probe_acc {
        let _ = write!(line, ", probe acc {acc:.4}");
    }
    if let Some(rho) = summary.loss_acc_spearman {
        let _ = write!(line, ", spearman {rho:.3}");
    }
    println!("{line}");
    Ok(())
}

fn resolve_probe(a: &ProbeArgs) -> CliResult<ProbeRunConfig> {
    let base = base_config(&a.config, |c| match c {
        RunConfig::Probe(p) => Some(p),
        _ => None,
    })?;
    let data = data_from_args(
        &a.data,
        &a.test_data,
        [&a.idx_images, &a.idx_labels, &a.idx_test_images, &a.idx_test_labels],
    )
    .or(base.as_ref().map(|b| b.data.clone()));
    Ok(ProbeRunConfig {
        checkpoint: required(
            a.checkpoint.clone().or(base.as_ref().map(|b| b.checkpoint.clone())),
            "checkpoint",
        )?,
        data: data.ok_or_else(|| CliError::usage("missing probe data (--data or --idx-images)"))?,
        image_size: a.image_size.or(base.as_ref().and_then(|b| b.image_size)),
        normalize: a.normalize.or(base.as_ref().map(|b| b.normalize)).unwrap_or(false),
        probe: base.as_ref().map(|b| b.probe).unwrap_or_default(),
        metrics: a.metrics.clone().or(base.as_ref().and_then(|b| b.metrics.clone())),
        out: a.out.clone().or(base.and_then(|b| b.out)),
    })
}

#[derive(Debug, Serialize)]
struct ProbeReport<'a> {
    checkpoint: &'a Path,
    train_samples: usize,
    test_samples: usize,
    feature_dim: usize,
    probe: ProbeConfig,
    result: ProbeResult,
    loss_acc_spearman: Option<f64>,
}

fn read_metrics(path: &Path) -> CliResult<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::usage(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn probe(a: &ProbeArgs) -> CliResult<()> {
    let cfg = resolve_probe(a)?;
    let model = model::load_checkpoint(&cfg.checkpoint).input()?;
    let train = cfg.data.load_train()?;
    let test = cfg.data.load_test()?;
    let test = test.as_ref().unwrap_or(&train);
    let (prep, input_dim) = preprocess_for(&train, cfg.image_size, cfg.normalize)?;
    if input_dim != model.backbone.input_dim() {
        return Err(CliError::usage(format!(
            "checkpoint expects {}-dimensional inputs, data has {input_dim}",
            model.backbone.input_dim()
        )));
    }
    if test.sample_shape() != train.sample_shape() {
        return Err(CliError::usage("probe fitting and test samples differ in shape"));
    }
    let train_bank = eval::extract_features(&model.backbone, &train, &prep, Split::Train).input()?;
    let test_bank = eval::extract_features(&model.backbone, test, &prep, Split::Test).input()?;
    let result = eval::linear_probe(&train_bank, &test_bank, &cfg.probe)?;
    let loss_acc_spearman = match &cfg.metrics {
        Some(p) => eval::loss_acc_correlation(&read_metrics(p)?).ok(),
        None => None,
    };
    let report = ProbeReport {
        checkpoint: &cfg.checkpoint,
        train_samples: train.len(),
        test_samples: test.len(),
        feature_dim: model.backbone.feature_dim(),
        probe: cfg.probe,
        result,
        loss_acc_spearman,
    };
    let json = to_json(&report)?;
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        write_file(&out.join(REPORT_FILE), json.as_bytes())?;
        RunConfig::Probe(cfg.clone()).write(out)?;
    }
    print!("{json}");
    Ok(())
}

fn resolve_theory(a: &TheoryArgs) -> CliResult<TheoryRunConfig> {
    let base = base_config(&a.config, |c| match c {
        RunConfig::Theory(t) => Some(t),
        _ => None,
    })?;
    let k = a.k.or(base.as_ref().map(|b| b.k)).unwrap_or(4);
    if k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }
    let reps = match (a.reps, a.n) {
        (Some(r), _) => r,
        (None, Some(n)) if n % k != 0 => {
            return Err(CliError::usage(format!("{k} clusters do not divide {n} samples")));
        }
        (None, Some(n)) => n / k,
        (None, None) => base.as_ref().map(|b| b.reps).unwrap_or(4),
    };
    if reps == 0 {
        return Err(CliError::usage("each cluster needs at least one sample"));
    }
    let mut descent = base.as_ref().map(|b| b.descent).unwrap_or_default();
    if let Some(s) = a.steps {
        descent.steps = s;
    }
    if let Some(lr) = a.lr {
        descent.lr = lr;
    }
    let seed = a.seed.or(base.as_ref().map(|b| b.seed)).unwrap_or(0);
    descent.seed = seed;
    let tol = a.tol.or(base.as_ref().map(|b| b.tol)).unwrap_or(1e-6);
    if !(tol > 0.0) {
        return Err(CliError::usage("--tol must be positive"));
    }
    Ok(TheoryRunConfig {
        k,
        reps,
        dim: a.dim.or(base.as_ref().map(|b| b.dim)).unwrap_or(k),
        kappa: a.kappa.or(base.as_ref().and_then(|b| b.kappa)),
        tol,
        seed,
        descent,
        out: required(a.out.clone().or(base.map(|b| b.out)), "out")?,
    })
}

#[derive(Debug, Serialize)]
struct DescentSummary {
    steps: usize,
    lr: f64,
    optimal_loss: f64,
    final_loss: f64,
    final_gap: f64,
    reached_1e5_at: Option<usize>,
}

#[derive(Debug, Serialize)]
struct TheoryReport {
    optimality: OptimalityReport,
    descent: DescentSummary,
}

pub fn theory(a: &TheoryArgs) -> CliResult<()> {
    let cfg = resolve_theory(a)?;
    let spec = ClusteredSpec::orthogonal(cfg.k, cfg.reps, cfg.dim, cfg.seed)?;
    let kappa = cfg.kappa.unwrap_or_else(|| theory::default_kappa(spec.samples(), cfg.k));
    let optimality = theory::verify_optimality(&spec, kappa, cfg.tol)?;
    let trace = theory::fit_by_descent(&spec, &cfg.descent)?;

    let mut curve = String::from("step,loss,gap\n");
    for &(step, loss) in &trace.curve {
        let _ = writeln!(curve, "{step},{loss:?},{:?}", (loss - trace.optimal_loss).abs());
    }
    let report = TheoryReport {
        descent: DescentSummary {
            steps: cfg.descent.steps,
            lr: cfg.descent.lr,
            optimal_loss: trace.optimal_loss,
            final_loss: trace.final_loss,
            final_gap: trace.final_gap,
            reached_1e5_at: trace.reached_1e5_at,
        },
        optimality,
    };
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join(REPORT_FILE), to_json(&report)?.as_bytes())?;
    write_file(&cfg.out.join(CURVE_FILE), curve.as_bytes())?;
    RunConfig::Theory(cfg.clone()).write(&cfg.out)?;

    let o = &report.optimality;
    println!(
        "{}: N={} K={} kappa={} grad {} A {} loss {} (gap {:.3e}); descent gap {:.3e} after {} steps",
        if o.pass { "PASS" } else { "FAIL" },
        o.samples,
        o.clusters,
        o.kappa,
        flag(o.gradient_pass),
        flag(o.a_matrix_pass),
        flag(o.loss_pass),
        o.loss_gap,
        report.descent.final_gap,
        report.descent.steps
    );
    Ok(())
}

fn flag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "fail"
    }
}

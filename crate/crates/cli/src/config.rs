//! Fully resolved run configurations. Each command writes its own as
//! `resolved-config.json`, and `--config` replays it.

use std::fs;
use std::path::{Path, PathBuf};

use diet_core::data::{self, BlobsSpec, IndexedDataset};
use diet_core::eval::ProbeConfig;
use diet_core::model::{Backbone, BackboneKind};
use diet_core::theory::DescentConfig;
use diet_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, InputContext};

pub const RESOLVED_CONFIG: &str = "resolved-config.json";

/// Feature width when `--feature-dim` is not given.
pub const DEFAULT_FEATURE_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    GenData(GenDataConfig),
    Train(TrainRunConfig),
    Probe(ProbeRunConfig),
    Theory(TheoryRunConfig),
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> CliResult<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_file(&dir.join(RESOLVED_CONFIG), self.to_json()?.as_bytes())
    }

    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::GenData(_) => "gen-data",
            RunConfig::Train(_) => "train",
            RunConfig::Probe(_) => "probe",
            RunConfig::Theory(_) => "theory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub blobs: BlobsSpec,
    /// Held-out samples per class; 0 skips the test file.
    pub test_per_class: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Diet,
    Supervised,
}

/// Where samples come from. CSV label columns are auto-detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
    },
    Idx {
        images: PathBuf,
        labels: Option<PathBuf>,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
}

impl DataSource {
    pub fn load_train(&self) -> CliResult<IndexedDataset> {
        match self {
            DataSource::Csv { train, .. } => data::load_csv(train, None).input(),
            DataSource::Idx { images, labels, .. } => data::load_idx(images, labels.as_deref()).input(),
        }
    }

    pub fn load_test(&self) -> CliResult<Option<IndexedDataset>> {
        match self {
            DataSource::Csv { test: Some(p), .. } => data::load_csv(p, None).input().map(Some),
            DataSource::Idx {
                test_images: Some(images),
                test_labels,
                ..
            } => data::load_idx(images, test_labels.as_deref()).input().map(Some),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub bias: bool,
}

impl BackboneSpec {
    /// `linear` or `mlp:H1[,H2...]`.
    pub fn parse(text: &str, feature_dim: usize) -> CliResult<Self> {
        let bad = || CliError::usage(format!("bad backbone {text:?}; expected `linear` or `mlp:64[,64...]`"));
        let (kind, hidden) = match text.split_once(':') {
            None if text == "linear" => (BackboneKind::Linear, Vec::new()),
            None if text == "mlp" => (BackboneKind::Mlp, vec![64]),
            Some(("mlp", widths)) => {
                let hidden = widths
                    .split(',')
                    .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(bad)?;
                (BackboneKind::Mlp, hidden)
            }
            _ => return Err(bad()),
        };
        if feature_dim == 0 {
            return Err(CliError::usage("feature dim must be at least 1"));
        }
        Ok(Self {
            kind,
            hidden,
            feature_dim,
            bias: true,
        })
    }

    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(&self.hidden);
        w.push(self.feature_dim);
        w
    }

    pub fn build(&self, input_dim: usize, seed: u64) -> CliResult<Backbone> {
        Ok(Backbone::new(self.kind, &self.widths(input_dim), self.bias, seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub mode: Mode,
    pub data: DataSource,
    pub backbone: BackboneSpec,
    /// 0 disables augmentation; 1 to 3 need image data.
    pub augment: u8,
    /// Model input size for image data; defaults to the native size.
    pub image_size: Option<(usize, usize)>,
    /// Standardise inputs with the training set's scalar mean and std.
    pub normalize: bool,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRunConfig {
    pub checkpoint: PathBuf,
    pub data: DataSource,
    pub image_size: Option<(usize, usize)>,
    pub normalize: bool,
    pub probe: ProbeConfig,
    /// Training metrics log; adds the loss/accuracy rank correlation.
    pub metrics: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryRunConfig {
    pub k: usize,
    pub reps: usize,
    pub dim: usize,
    /// Defaults to the smallest κ that saturates the softmax.
    pub kappa: Option<f64>,
    pub tol: f64,
    pub seed: u64,
    pub descent: DescentConfig,
    pub out: PathBuf,
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

//! Datasets whose items carry their own storage index.
//!
//! The index of a sample is its training target; true labels, when
//! present, are kept alongside for evaluation only.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleShape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl SampleShape {
    pub fn len(&self) -> usize {
        match *self {
            SampleShape::Flat(d) => d,
            SampleShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One datum: a flat feature vector or a channels × height × width image
/// stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    shape: SampleShape,
    values: Vec<f64>,
}

impl Sample {
    pub fn flat(values: Vec<f64>) -> Self {
        Self {
            shape: SampleShape::Flat(values.len()),
            values,
        }
    }

    pub fn image(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::shape(
                "Sample::image",
                format!("{} values for {channels}x{height}x{width}", values.len()),
            ));
        }
        Ok(Self {
            shape: SampleShape::Image {
                channels,
                height,
                width,
            },
            values,
        })
    }

    pub fn shape(&self) -> SampleShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `(channels, height, width)` for images.
    pub fn image_dims(&self) -> Option<(usize, usize, usize)> {
        match self.shape {
            SampleShape::Image {
                channels,
                height,
                width,
            } => Some((channels, height, width)),
            SampleShape::Flat(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedDataset {
    samples: Vec<Sample>,
    labels: Option<Vec<usize>>,
}

impl IndexedDataset {
    /// Wraps samples so that item `n` is `(sample_n, n)`. All samples must
    /// share one shape.
    pub fn with_indices(samples: Vec<Sample>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::arg("dataset needs at least one sample"))?
            .shape;
        if let Some(i) = samples.iter().position(|s| s.shape != first) {
            return Err(Error::arg(format!(
                "sample {i} has shape {:?}, expected {first:?}",
                samples[i].shape
            )));
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::arg(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.len()
                )));
            }
        }
        Ok(Self { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The sample stored at `n`, paired with its index.
    pub fn get(&self, n: usize) -> (&Sample, usize) {
        (&self.samples[n], n)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn sample_shape(&self) -> SampleShape {
        self.samples[0].shape
    }

    pub fn input_dim(&self) -> usize {
        self.sample_shape().len()
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Samples listed in `idx`, flattened into rows.
    pub fn rows(&self, idx: &[usize]) -> Matrix {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.samples[i].values);
        }
        Matrix::new(idx.len(), d, data).expect("uniform sample shape")
    }

    pub fn to_matrix(&self) -> Matrix {
        let all: Vec<usize> = (0..self.len()).collect();
        self.rows(&all)
    }

    /// Rebuilds the dataset from a N×D matrix, keeping labels.
    pub fn from_matrix(m: &Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        let samples = (0..m.rows()).map(|r| Sample::flat(m.row(r).to_vec())).collect();
        Self::with_indices(samples, labels)
    }
}

/// Scalar mean/std standardisation fitted on one dataset and applied to
/// model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn fit(ds: &IndexedDataset) -> Self {
        let count = (ds.len() * ds.input_dim()) as f64;
        let mean = ds.samples.iter().flat_map(|s| &s.values).sum::<f64>() / count;
        let var = ds
            .samples
            .iter()
            .flat_map(|s| &s.values)
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / count;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, m: &mut Matrix) {
        let (mean, inv) = (self.mean, 1.0 / self.std);
        m.data_mut().iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
}

/// How clean (non-augmented) samples become model inputs: an optional
/// full-image bilinear resize, then optional standardisation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    pub resize: Option<(usize, usize)>,
    pub normalization: Option<Normalization>,
}

impl Preprocess {
    pub fn clean_rows(&self, ds: &IndexedDataset, idx: &[usize]) -> Result<Matrix> {
        let mut m = match self.resize {
            Some(size) => {
                let rows = idx
                    .iter()
                    .map(|&i| {
                        let s = &ds.samples[i];
                        match s.image_dims() {
                            Some((_, h, w)) if (h, w) != size => {
                                crate::augment::crop_resize(s, 0, 0, h, w, size).map(Sample::into_values)
                            }
                            _ => Ok(s.values.clone()),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Matrix::from_rows(&rows)?
            }
            None => ds.rows(idx),
        };
        self.normalize(&mut m);
        Ok(m)
    }

    pub fn normalize(&self, m: &mut Matrix) {
        if let Some(n) = &self.normalization {
            n.apply(m);
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn idx_header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let header = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(Error::Length {
            path: path.into(),
            expected: header,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("magic 0x{found:08x}, expected 0x{magic:08x}"),
        });
    }
    if bytes.len() < header {
        return Err(Error::Length {
            path: path.into(),
            expected: header,
            found: bytes.len(),
        });
    }
    let shape: Vec<usize> = (0..dims).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let expected = header + shape.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::Length {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(shape)
}

/// Reads an IDX u8 image file (and optionally a matching label file).
/// Pixels are scaled to `[0, 1]` by `/255`.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<IndexedDataset> {
    let bytes = read_file(images)?;
    let shape = idx_header(images, &bytes, IDX_IMAGES_MAGIC, 3)?;
    let (n, h, w) = (shape[0], shape[1], shape[2]);
    let payload = &bytes[16..];
    let samples = (0..n)
        .map(|i| {
            let px = payload[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|&b| f64::from(b) / 255.0)
                .collect();
            Sample::image(1, h, w, px)
        })
        .collect::<Result<Vec<_>>>()?;

    let labels = match labels {
        Some(p) => {
            let bytes = read_file(p)?;
            let shape = idx_header(p, &bytes, IDX_LABELS_MAGIC, 1)?;
            if shape[0] != n {
                return Err(Error::Format {
                    path: p.into(),
                    detail: format!("{} labels for {n} images", shape[0]),
                });
            }
            Some(bytes[8..].iter().map(|&b| usize::from(b)).collect())
        }
        None => None,
    };
    IndexedDataset::with_indices(samples, labels)
}

/// Writes single-channel images (values in `[0,1]`, rounded to u8) and
/// optional u8 labels in IDX format.
pub fn save_idx(ds: &IndexedDataset, images: &Path, labels: Option<&Path>) -> Result<()> {
    let (c, h, w) = ds.samples[0]
        .image_dims()
        .ok_or_else(|| Error::arg("IDX export needs image samples"))?;
    if c != 1 {
        return Err(Error::arg(format!("IDX export needs 1 channel, got {c}")));
    }
    let mut out = Vec::with_capacity(16 + ds.len() * h * w);
    for v in [IDX_IMAGES_MAGIC, ds.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for s in &ds.samples {
        out.extend(s.values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(images, out).map_err(|e| Error::io(images, e))?;

    if let Some(p) = labels {
        let l = ds
            .labels
            .as_ref()
            .ok_or_else(|| Error::arg("dataset has no labels to export"))?;
        let mut out = Vec::with_capacity(8 + l.len());
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(l.len() as u32).to_be_bytes());
        for &y in l {
            let b = u8::try_from(y).map_err(|_| Error::arg(format!("label {y} exceeds u8")))?;
            out.push(b);
        }
        fs::write(p, out).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Reads flat samples from CSV.
///
/// A header row is recognised when its first field does not parse as a
/// number. The first column holds labels when `label_column` is true, or,
/// when it is `None`, when the header names it `label`.
pub fn load_csv(path: &Path, label_column: Option<bool>) -> Result<IndexedDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let fmt_err = |detail: String| Error::Format {
        path: path.into(),
        detail,
    };

    let mut records = reader.records().peekable();
    let mut has_labels = label_column.unwrap_or(false);
    if let Some(Ok(first)) = records.peek() {
        let head = first.get(0).unwrap_or("");
        if head.parse::<f64>().is_err() {
            if label_column.is_none() {
                has_labels = head.eq_ignore_ascii_case("label");
            }
            records.next();
        }
    }

    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec.map_err(|e| fmt_err(e.to_string()))?;
        let mut fields = rec.iter();
        if has_labels {
            let raw = fields.next().unwrap_or("");
            let y: usize = raw
                .parse()
                .map_err(|_| fmt_err(format!("row {line}: bad label {raw:?}")))?;
            labels.push(y);
        }
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| fmt_err(format!("row {line}: bad value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fmt_err(format!("row {line}: non-finite value")));
        }
        samples.push(Sample::flat(values));
    }
    if samples.is_empty() {
        return Err(fmt_err("no data rows".into()));
    }
    IndexedDataset::with_indices(samples, has_labels.then_some(labels))
        .map_err(|e| fmt_err(e.to_string()))
}

/// Writes flat samples as CSV with a header row; the first column is
/// `label` when the dataset has labels. Values use the shortest
/// representation that parses back to the same bits.
pub fn save_csv(ds: &IndexedDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let d = ds.input_dim();
    let mut header: Vec<String> = Vec::with_capacity(d + 1);
    if ds.labels.is_some() {
        header.push("label".into());
    }
    header.extend((0..d).map(|i| format!("x{i}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for (n, s) in ds.samples.iter().enumerate() {
        let mut fields: Vec<String> = Vec::with_capacity(d + 1);
        if let Some(l) = &ds.labels {
            fields.push(l[n].to_string());
        }
        fields.extend(s.values.iter().map(|v| format!("{v:?}")));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Gaussian blobs around seeded random centroids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Per-coordinate noise standard deviation.
    pub spread: f64,
    /// Norm of every centroid.
    #[serde(default = "BlobsSpec::default_radius")]
    pub radius: f64,
    pub seed: u64,
}

impl BlobsSpec {
    pub const fn default_radius() -> f64 {
        0.5
    }

    pub fn new(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            dim,
            spread,
            radius: Self::default_radius(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::arg("classes, per-class and dim must be at least 1"));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::arg(format!("spread must be >= 0, got {}", self.spread)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::arg(format!("radius must be > 0, got {}", self.radius)));
        }
        Ok(())
    }

    /// `classes × dim`, each row of norm `radius`. Draws are rejected while
    /// closer than `radius / 2` to an earlier centroid (up to a retry cap).
    pub fn centroids(&self) -> Result<Matrix> {
        self.validate()?;
        let mut rng = seed::rng(seed::derive(self.seed, "blobs/centroids"));
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(self.classes);
        let min_dist = 0.5 * self.radius;
        while rows.len() < self.classes {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for _ in 0..1000 {
                let mut c: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                c.iter_mut().for_each(|v| *v *= self.radius / norm);
                let nearest = rows
                    .iter()
                    .map(|r| r.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min);
                if best.as_ref().is_none_or(|b| nearest > b.0) {
                    best = Some((nearest, c));
                }
                if nearest >= min_dist {
                    break;
                }
            }
            rows.push(best.expect("at least one nonzero draw").1);
        }
        Matrix::from_rows(&rows)
    }

    /// Training split: class-major order, so sample `n` belongs to class
    /// `n / per_class`.
    pub fn generate(&self) -> Result<IndexedDataset> {
        self.sample_split("blobs/train", self.per_class)
    }

    /// Held-out split with fresh noise around the same centroids.
    pub fn generate_test(&self, per_class: usize) -> Result<IndexedDataset> {
        self.sample_split("blobs/test", per_class)
    }

    fn sample_split(&self, label: &str, per_class: usize) -> Result<IndexedDataset> {
        let centroids = self.centroids()?;
        if per_class == 0 {
            return Err(Error::arg("per-class count must be at least 1"));
        }
        let mut rng = seed::rng(seed::derive(self.seed, label));
        let mut samples = Vec::with_capacity(self.classes * per_class);
        let mut labels = Vec::with_capacity(self.classes * per_class);
        for c in 0..self.classes {
            for _ in 0..per_class {
                let v = centroids
                    .row(c)
                    .iter()
                    .map(|&m| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + self.spread * z
                    })
                    .collect();
                samples.push(Sample::flat(v));
                labels.push(c);
            }
        }
        IndexedDataset::with_indices(samples, Some(labels))
    }
}

pub fn gen_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<IndexedDataset> {
    BlobsSpec::new(classes, per_class, dim, spread, seed).generate()
}

/// Index batches for one epoch. The order is a pure function of
/// `(seed, epoch)`; the final partial batch is kept.
#[derive(Debug, Clone)]
pub struct Batches {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(b)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches {}

pub fn batch_iter(
    ds: &IndexedDataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Batches> {
    batch_order(ds.len(), batch_size, shuffle, seed, epoch)
}

pub fn batch_order(
    n: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Batches> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = seed::rng(seed::mix(seed::derive(seed, seed::ORDER), &[epoch]));
        order.shuffle(&mut rng);
    }
    Ok(Batches {
        order,
        batch_size,
        pos: 0,
    })
}

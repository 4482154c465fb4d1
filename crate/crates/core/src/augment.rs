//! Raster augmentations at three nested strengths.
//!
//! * strength 1: random resized crop, horizontal flip (p = 0.5)
//! * strength 2: + color jitter (0.4, 0.4, 0.4, 0.2) with p = 0.3, grayscale with p = 0.2
//! * strength 3: + 3×3 Gaussian blur (σ ∈ [1, 2]) with p = 0.2, random erasing with p = 0.25
//!
//! Every transform takes its randomness from an explicit RNG, so an output
//! is fully determined by the RNG state. Color transforms only act on
//! 3-channel images and leave other channel counts untouched.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{IndexedDataset, Sample};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::par::{self, Exec};
use crate::seed;

/// Smallest accepted input height and width.
pub const MIN_SIDE: usize = 2;

pub const CROP_SCALE: (f64, f64) = (0.08, 1.0);
pub const CROP_RATIO: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
pub const ERASE_SCALE: (f64, f64) = (0.02, 0.33);
pub const ERASE_RATIO: (f64, f64) = (0.3, 3.3);
const MAX_ATTEMPTS: usize = 10;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    RandomResizedCrop {
        scale: (f64, f64),
        ratio: (f64, f64),
    },
    HorizontalFlip {
        p: f64,
    },
    ColorJitter {
        p: f64,
        brightness: f64,
        contrast: f64,
        saturation: f64,
        hue: f64,
    },
    Grayscale {
        p: f64,
    },
    GaussianBlur {
        p: f64,
        sigma: (f64, f64),
    },
    RandomErasing {
        p: f64,
        scale: (f64, f64),
        ratio: (f64, f64),
        fill: f64,
    },
}

impl Transform {
    pub fn probability(&self) -> f64 {
        match *self {
            Transform::RandomResizedCrop { .. } => 1.0,
            Transform::HorizontalFlip { p }
            | Transform::ColorJitter { p, .. }
            | Transform::Grayscale { p }
            | Transform::GaussianBlur { p, .. }
            | Transform::RandomErasing { p, .. } => p,
        }
    }

    fn set_probability(&mut self, value: f64) {
        match self {
            Transform::RandomResizedCrop { .. } => {}
            Transform::HorizontalFlip { p }
            | Transform::ColorJitter { p, .. }
            | Transform::Grayscale { p }
            | Transform::GaussianBlur { p, .. }
            | Transform::RandomErasing { p, .. } => *p = value,
        }
    }

    fn run(&self, s: Sample, out_size: (usize, usize), rng: &mut ChaCha8Rng) -> Result<Sample> {
        if let Transform::RandomResizedCrop { scale, ratio } = *self {
            return random_resized_crop_with(&s, out_size, scale, ratio, rng);
        }
        if rng.random::<f64>() >= self.probability() {
            return Ok(s);
        }
        Ok(match *self {
            Transform::HorizontalFlip { .. } => hflip(&s)?,
            Transform::ColorJitter {
                brightness,
                contrast,
                saturation,
                hue,
                ..
            } => {
                let draw = JitterDraw::sample(brightness, contrast, saturation, hue, rng);
                jitter_with(&s, &draw)?
            }
            Transform::Grayscale { .. } => grayscale(&s)?,
            Transform::GaussianBlur { sigma, .. } => {
                let sd = rng.random_range(sigma.0..=sigma.1);
                blur_with_sigma(&s, sd)?
            }
            Transform::RandomErasing {
                scale, ratio, fill, ..
            } => random_erase_with(&s, scale, ratio, fill, rng)?,
            Transform::RandomResizedCrop { .. } => unreachable!(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPipeline {
    strength: u8,
    out_size: (usize, usize),
    transforms: Vec<Transform>,
}

pub fn build_pipeline(strength: u8, out_size: (usize, usize)) -> Result<AugmentPipeline> {
    AugmentPipeline::new(strength, out_size)
}

impl AugmentPipeline {
    pub fn new(strength: u8, out_size: (usize, usize)) -> Result<Self> {
        if !(1..=3).contains(&strength) {
            return Err(Error::arg(format!("augmentation strength must be 1, 2 or 3, got {strength}")));
        }
        if out_size.0 == 0 || out_size.1 == 0 {
            return Err(Error::arg("output size must be non-zero"));
        }
        let mut transforms = vec![
            Transform::RandomResizedCrop {
                scale: CROP_SCALE,
                ratio: CROP_RATIO,
            },
            Transform::HorizontalFlip { p: 0.5 },
        ];
        if strength > 1 {
            transforms.push(Transform::ColorJitter {
                p: 0.3,
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
                hue: 0.2,
            });
            transforms.push(Transform::Grayscale { p: 0.2 });
        }
        if strength > 2 {
            transforms.push(Transform::GaussianBlur {
                p: 0.2,
                sigma: (1.0, 2.0),
            });
            transforms.push(Transform::RandomErasing {
                p: 0.25,
                scale: ERASE_SCALE,
                ratio: ERASE_RATIO,
                fill: 0.0,
            });
        }
        Ok(Self {
            strength,
            out_size,
            transforms,
        })
    }

    pub fn strength(&self) -> u8 {
        self.strength
    }

    pub fn out_size(&self) -> (usize, usize) {
        self.out_size
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    /// Overrides the application probability of transform `index`. The crop
    /// is always applied and ignores this.
    pub fn with_probability(mut self, index: usize, p: f64) -> Self {
        if let Some(t) = self.transforms.get_mut(index) {
            t.set_probability(p);
        }
        self
    }

    pub fn apply(&self, s: &Sample, rng: &mut ChaCha8Rng) -> Result<Sample> {
        check_image(s)?;
        let mut out = s.clone();
        for t in &self.transforms {
            out = t.run(out, self.out_size, rng)?;
        }
        clamp_unit(out.values_mut());
        Ok(out)
    }

    /// Augments the listed samples into rows of a matrix. Each sample draws
    /// from its own RNG derived from `(seed, epoch, index)`, so the result
    /// does not depend on the execution mode.
    pub fn apply_batch(
        &self,
        ds: &IndexedDataset,
        idx: &[usize],
        seed: u64,
        epoch: u64,
        exec: Exec,
    ) -> Result<Matrix> {
        let rows = par::map_range(exec, idx.len(), |i| {
            let n = idx[i];
            let mut rng = sample_rng(seed, epoch, n);
            self.apply(ds.get(n).0, &mut rng).map(Sample::into_values)
        });
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

/// RNG for one sample's augmentation in one epoch.
pub fn sample_rng(seed: u64, epoch: u64, index: usize) -> ChaCha8Rng {
    seed::rng(seed::mix(seed::derive(seed, seed::AUGMENT), &[epoch, index as u64]))
}

fn check_image(s: &Sample) -> Result<(usize, usize, usize)> {
    let (c, h, w) = s
        .image_dims()
        .ok_or_else(|| Error::arg("augmentation needs image samples"))?;
    if c == 0 || h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::arg(format!(
            "image {c}x{h}x{w} is smaller than the minimum {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    Ok((c, h, w))
}

fn clamp_unit(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
}

pub fn hflip(s: &Sample) -> Result<Sample> {
    let (c, h, w) = check_image(s)?;
    let src = s.values();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            out.extend(row.iter().rev());
        }
    }
    Sample::image(c, h, w, out)
}

/// Bilinear resample (half-pixel centres) of the window
/// `[top, top+height) × [left, left+width)` to `out_size`.
pub fn crop_resize(
    s: &Sample,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
    out_size: (usize, usize),
) -> Result<Sample> {
    let (c, h, w) = check_image(s)?;
    if height == 0 || width == 0 || top + height > h || left + width > w {
        return Err(Error::arg(format!(
            "crop {height}x{width} at ({top},{left}) exceeds {h}x{w}"
        )));
    }
    let (oh, ow) = out_size;
    let src = s.values();
    let axis = |o: usize, out: usize, len: usize, start: usize| {
        let pos = ((o as f64 + 0.5) * len as f64 / out as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (start + i0, start + i1, pos - i0 as f64)
    };
    let ys: Vec<_> = (0..oh).map(|o| axis(o, oh, height, top)).collect();
    let xs: Vec<_> = (0..ow).map(|o| axis(o, ow, width, left)).collect();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top_row = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top_row * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Sample::image(c, oh, ow, out)
}

/// Draws a crop window of relative area in `scale` and aspect ratio
/// (log-uniform) in `ratio`, falling back to a centred crop after ten
/// failed attempts.
fn crop_window(
    h: usize,
    w: usize,
    scale: (f64, f64),
    ratio: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (lr0, lr1) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..MAX_ATTEMPTS {
        let target = area * rng.random_range(scale.0..=scale.1);
        let aspect = rng.random_range(lr0..=lr1).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return (top, left, ch, cw);
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < ratio.0 {
        (((w as f64) / ratio.0).round() as usize, w)
    } else if in_ratio > ratio.1 {
        (h, ((h as f64) * ratio.1).round() as usize)
    } else {
        (h, w)
    };
    let (ch, cw) = (ch.clamp(1, h), cw.clamp(1, w));
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

pub fn random_resized_crop(s: &Sample, out_size: (usize, usize), rng: &mut ChaCha8Rng) -> Result<Sample> {
    random_resized_crop_with(s, out_size, CROP_SCALE, CROP_RATIO, rng)
}

pub fn random_resized_crop_with(
    s: &Sample,
    out_size: (usize, usize),
    scale: (f64, f64),
    ratio: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let (_, h, w) = check_image(s)?;
    let (top, left, ch, cw) = crop_window(h, w, scale, ratio, rng);
    crop_resize(s, top, left, ch, cw, out_size)
}

/// Concrete color-jitter parameters: multiplicative factors, a hue shift in
/// turns, and the order in which the four adjustments run
/// (0 brightness, 1 contrast, 2 saturation, 3 hue).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub order: [u8; 4],
}

impl JitterDraw {
    pub const IDENTITY: JitterDraw = JitterDraw {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
        order: [0, 1, 2, 3],
    };

    pub fn sample(brightness: f64, contrast: f64, saturation: f64, hue: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut order = [0u8, 1, 2, 3];
        order.shuffle(rng);
        let factor = |b: f64, rng: &mut ChaCha8Rng| rng.random_range((1.0 - b).max(0.0)..=1.0 + b);
        Self {
            brightness: factor(brightness, rng),
            contrast: factor(contrast, rng),
            saturation: factor(saturation, rng),
            hue: rng.random_range(-hue..=hue),
            order,
        }
    }
}

pub fn color_jitter(
    s: &Sample,
    brightness: f64,
    contrast: f64,
    saturation: f64,
    hue: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let draw = JitterDraw::sample(brightness, contrast, saturation, hue, rng);
    jitter_with(s, &draw)
}

pub fn jitter_with(s: &Sample, draw: &JitterDraw) -> Result<Sample> {
    let (c, h, w) = check_image(s)?;
    if c != 3 {
        return Ok(s.clone());
    }
    let mut v = s.values().to_vec();
    let plane = h * w;
    for op in draw.order {
        match op {
            0 => {
                v.iter_mut().for_each(|x| *x *= draw.brightness);
            }
            1 => {
                let mean = (0..plane).map(|i| luma(&v, plane, i)).sum::<f64>() / plane as f64;
                let f = draw.contrast;
                v.iter_mut().for_each(|x| *x = f * *x + (1.0 - f) * mean);
            }
            2 => {
                let f = draw.saturation;
                for i in 0..plane {
                    let g = luma(&v, plane, i);
                    for ch in 0..3 {
                        let x = &mut v[ch * plane + i];
                        *x = g + f * (*x - g);
                    }
                }
            }
            _ => {
                if draw.hue != 0.0 {
                    for i in 0..plane {
                        let (hh, ss, vv) = rgb_to_hsv(v[i], v[plane + i], v[2 * plane + i]);
                        let (r, g, b) = hsv_to_rgb((hh + draw.hue).rem_euclid(1.0), ss, vv);
                        v[i] = r;
                        v[plane + i] = g;
                        v[2 * plane + i] = b;
                    }
                }
            }
        }
        clamp_unit(&mut v);
    }
    Sample::image(c, h, w, v)
}

fn luma(v: &[f64], plane: usize, i: usize) -> f64 {
    LUMA[0] * v[i] + LUMA[1] * v[plane + i] + LUMA[2] * v[2 * plane + i]
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (sector as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Luma (0.299, 0.587, 0.114) replicated to all three channels.
pub fn grayscale(s: &Sample) -> Result<Sample> {
    let (c, h, w) = check_image(s)?;
    if c != 3 {
        return Ok(s.clone());
    }
    let v = s.values();
    let plane = h * w;
    let gray: Vec<f64> = (0..plane).map(|i| luma(v, plane, i)).collect();
    Sample::image(c, h, w, gray.repeat(3))
}

pub fn gaussian_blur(s: &Sample, sigma: (f64, f64), rng: &mut ChaCha8Rng) -> Result<Sample> {
    let sd = rng.random_range(sigma.0..=sigma.1);
    blur_with_sigma(s, sd)
}

/// Normalised 3-tap Gaussian weights for `sigma`.
pub fn blur_kernel(sigma: f64) -> [f64; 3] {
    let side = (-1.0 / (2.0 * sigma * sigma)).exp();
    let total = 1.0 + 2.0 * side;
    [side / total, 1.0 / total, side / total]
}

/// Separable 3×3 Gaussian blur with reflected borders.
pub fn blur_with_sigma(s: &Sample, sigma: f64) -> Result<Sample> {
    let (c, h, w) = check_image(s)?;
    if !(sigma > 0.0) {
        return Err(Error::arg(format!("blur sigma must be positive, got {sigma}")));
    }
    let k = blur_kernel(sigma);
    let reflect = |i: isize, len: usize| -> usize {
        if i < 0 {
            1
        } else if i as usize >= len {
            len - 2
        } else {
            i as usize
        }
    };
    let src = s.values();
    let mut tmp = vec![0.0; src.len()];
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                tmp[base + y * w + x] = (-1..=1)
                    .map(|d| k[(d + 1) as usize] * src[base + y * w + reflect(x as isize + d, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[base + y * w + x] = (-1..=1)
                    .map(|d| k[(d + 1) as usize] * tmp[base + reflect(y as isize + d, h) * w + x])
                    .sum();
            }
        }
    }
    Sample::image(c, h, w, out)
}

pub fn random_erase(s: &Sample, rng: &mut ChaCha8Rng) -> Result<Sample> {
    random_erase_with(s, ERASE_SCALE, ERASE_RATIO, 0.0, rng)
}

/// Fills one rectangle, in all channels, with `fill`. The rectangle's
/// realised area fraction lies in `scale` and its aspect ratio is drawn
/// log-uniformly from `ratio`; after ten rejected draws the image is
/// returned unchanged.
pub fn random_erase_with(
    s: &Sample,
    scale: (f64, f64),
    ratio: (f64, f64),
    fill: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let (c, h, w) = check_image(s)?;
    let area = (h * w) as f64;
    let (lr0, lr1) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..MAX_ATTEMPTS {
        let target = area * rng.random_range(scale.0..=scale.1);
        let aspect = rng.random_range(lr0..=lr1).exp();
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        let frac = (eh * ew) as f64 / area;
        if eh == 0 || ew == 0 || eh >= h || ew >= w || frac < scale.0 || frac > scale.1 {
            continue;
        }
        let top = rng.random_range(0..=h - eh);
        let left = rng.random_range(0..=w - ew);
        let mut v = s.values().to_vec();
        for ch in 0..c {
            for y in top..top + eh {
                let row = (ch * h + y) * w;
                v[row + left..row + left + ew].fill(fill);
            }
        }
        return Sample::image(c, h, w, v);
    }
    Ok(s.clone())
}

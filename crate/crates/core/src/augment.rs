//! Three-step image augmentation: narrow-side resize, random crop, random
//! affine (flip, rotate, scale), all seeded and reproducible.
//!
//! Every pipeline draw is a pure function of (image, config, counter): the
//! counter selects an independent ChaCha8 stream, so batches can be
//! augmented in parallel in any order without changing results.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

/// H x W x C raster, row-major channel-last, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// Builds an image, checking dimensions, channel count (1 or 3), and
    /// that every value lies in [0, 1].
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Input("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!("channels must be 1 or 3, got {channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Input(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                height * width * channels
            )));
        }
        if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Input("pixel values must lie in [0, 1]".into()));
        }
        Ok(Image { height, width, channels, pixels })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image { height, width, channels, pixels: vec![0.0; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.pixels[(row * self.width + col) * self.channels + ch] = v;
    }

    /// Mean over every pixel value and channel.
    pub fn mean_intensity(&self) -> f64 {
        let mut s = 0.0;
        for &v in &self.pixels {
            s += v;
        }
        s / self.pixels.len() as f64
    }

    /// Single-channel copy; RGB collapses by Rec. 601 luma.
    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(self.height * self.width);
        for px in self.pixels.chunks_exact(3) {
            pixels.push(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
        }
        Image { height: self.height, width: self.width, channels: 1, pixels }
    }

    /// Three-channel copy; grayscale replicates into R = G = B.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(self.height * self.width * 3);
        for &v in &self.pixels {
            pixels.extend_from_slice(&[v, v, v]);
        }
        Image { height: self.height, width: self.width, channels: 3, pixels }
    }
}

/// `[channels, height, width]` tensor view of an image, for model input.
pub fn image_to_chw(img: &Image) -> Tensor {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut data = vec![0.0; c * h * w];
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                data[(ch * h + row) * w + col] = img.get(row, col, ch);
            }
        }
    }
    Tensor::new(vec![c, h, w], data).expect("shape matches buffer")
}

/// Augmentation pipeline parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Output side length; the narrow side is resized to this.
    pub target: usize,
    pub flip_prob: f64,
    pub rotate_max_deg: f64,
    /// Isotropic scale range `[lo, hi]`, 0 < lo <= hi.
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl AugmentConfig {
    /// Defaults: 224 target, flip 0.5, rotation up to 10 degrees, scale
    /// 0.9..1.1 -- mild ranges that do not wash out radiograph detail.
    pub fn with_seed(seed: u64) -> Self {
        AugmentConfig { target: 224, flip_prob: 0.5, rotate_max_deg: 10.0, scale_range: (0.9, 1.1), seed }
    }

    /// No flip, no rotation, unit scale: the affine step becomes an exact
    /// no-op.
    pub fn identity(target: usize, seed: u64) -> Self {
        AugmentConfig { target, flip_prob: 0.0, rotate_max_deg: 0.0, scale_range: (1.0, 1.0), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target == 0 {
            return Err(Error::Config("target size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob must be in [0, 1], got {}", self.flip_prob)));
        }
        if !(self.rotate_max_deg >= 0.0) {
            return Err(Error::Config("rotate_max_deg must be >= 0".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("scale range [{lo}, {hi}] is not well-ordered")));
        }
        Ok(())
    }
}

/// Bilinear sample with edge clamping, for resampling within the source.
fn sample_clamped(img: &Image, y: f64, x: f64, ch: usize) -> f64 {
    let h = img.height() as isize;
    let w = img.width() as isize;
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let y0 = libm::floor(yc) as isize;
    let x0 = libm::floor(xc) as isize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = yc - y0 as f64;
    let fx = xc - x0 as f64;
    let p = |r: isize, c: isize| img.get(r as usize, c as usize, ch);
    (1.0 - fy) * (1.0 - fx) * p(y0, x0)
        + (1.0 - fy) * fx * p(y0, x1)
        + fy * (1.0 - fx) * p(y1, x0)
        + fy * fx * p(y1, x1)
}

/// Scales the image so its narrow side equals `target`, preserving aspect
/// ratio: the other side becomes `round(other * target / narrow)` (at least
/// 1). Bilinear interpolation with half-pixel sample centers.
pub fn resize_narrow_side(img: &Image, target: usize) -> Result<Image> {
    if target == 0 {
        return Err(Error::Input("target size must be >= 1".into()));
    }
    let (h, w) = (img.height(), img.width());
    let (new_h, new_w) = if h <= w {
        let scaled = libm::round(w as f64 * target as f64 / h as f64) as usize;
        (target, scaled.max(1))
    } else {
        let scaled = libm::round(h as f64 * target as f64 / w as f64) as usize;
        (scaled.max(1), target)
    };
    let mut out = Image::zeros(new_h, new_w, img.channels());
    let sy = h as f64 / new_h as f64;
    let sx = w as f64 / new_w as f64;
    for row in 0..new_h {
        let src_y = (row as f64 + 0.5) * sy - 0.5;
        for col in 0..new_w {
            let src_x = (col as f64 + 0.5) * sx - 0.5;
            for ch in 0..img.channels() {
                let v = sample_clamped(img, src_y, src_x, ch);
                out.set(row, col, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Copies a `size` x `size` window at offsets drawn uniformly from the valid
/// range (row offset first, then column).
pub fn random_crop(img: &Image, size: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    if h < size || w < size {
        return Err(Error::Input(format!(
            "image {h}x{w} is smaller than crop size {size}; resize first"
        )));
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let mut out = Image::zeros(size, size, img.channels());
    for row in 0..size {
        for col in 0..size {
            for ch in 0..img.channels() {
                out.set(row, col, ch, img.get(top + row, left + col, ch));
            }
        }
    }
    Ok(out)
}

/// Deterministic affine kernel: horizontal flip, rotation about the center
/// by `angle_deg` (counter-clockwise in row/column coordinates), isotropic
/// `scale`, applied as one composed inverse-mapped bilinear resample.
/// Samples falling outside the source are filled with 0. Output size equals
/// input size.
pub fn affine_transform(img: &Image, flip: bool, angle_deg: f64, scale: f64) -> Result<Image> {
    if !(scale > 0.0) {
        return Err(Error::Input(format!("scale must be positive, got {scale}")));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let theta = angle_deg * core::f64::consts::PI / 180.0;
    let (cos_t, sin_t) = (libm::cos(theta), libm::sin(theta));
    let inv_s = 1.0 / scale;

    let mut out = Image::zeros(h, w, c);
    for row in 0..h {
        let dy = (row as f64 - cy) * inv_s;
        for col in 0..w {
            let dx = (col as f64 - cx) * inv_s;
            // Inverse rotation, then inverse flip (flip is self-inverse).
            let rx = cos_t * dx + sin_t * dy;
            let ry = -sin_t * dx + cos_t * dy;
            let sx = if flip { -rx } else { rx } + cx;
            let sy = ry + cy;
            for ch in 0..c {
                let v = sample_zero_fill(img, sy, sx, ch);
                out.set(row, col, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Bilinear sample where taps outside the image contribute 0.
fn sample_zero_fill(img: &Image, y: f64, x: f64, ch: usize) -> f64 {
    let h = img.height() as isize;
    let w = img.width() as isize;
    let y0 = libm::floor(y) as isize;
    let x0 = libm::floor(x) as isize;
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let tap = |r: isize, c: isize| -> f64 {
        if r < 0 || r >= h || c < 0 || c >= w {
            0.0
        } else {
            img.get(r as usize, c as usize, ch)
        }
    };
    (1.0 - fy) * (1.0 - fx) * tap(y0, x0)
        + (1.0 - fy) * fx * tap(y0, x0 + 1)
        + fy * (1.0 - fx) * tap(y0 + 1, x0)
        + fy * fx * tap(y0 + 1, x0 + 1)
}

/// Draws flip / angle / scale from `rng` (in that order) and applies
/// [`affine_transform`]. Requires a square input.
pub fn random_affine(img: &Image, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Image> {
    cfg.validate()?;
    if img.height() != img.width() {
        return Err(Error::Input(format!(
            "random_affine expects a square (post-crop) image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let r = cfg.rotate_max_deg;
    let angle = if r == 0.0 { 0.0 } else { rng.random_range(-r..=r) };
    let (lo, hi) = cfg.scale_range;
    let scale = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    affine_transform(img, flip, angle, scale)
}

/// Full pipeline: resize narrow side to `cfg.target`, random crop to
/// `target` x `target`, random affine. The RNG stream is
/// `(cfg.seed, counter)`, so each counter value is an independent,
/// reproducible draw.
pub fn augment(img: &Image, cfg: &AugmentConfig, counter: u64) -> Result<Image> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, counter);
    let resized = resize_narrow_side(img, cfg.target)?;
    let cropped = random_crop(&resized, cfg.target, &mut rng)?;
    random_affine(&cropped, cfg, &mut rng)
}

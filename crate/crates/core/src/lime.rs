//! Model-agnostic local explanations for image classifiers.
//!
//! The image is segmented into superpixels, random subsets of segments are
//! blanked to the image's mean intensity, the black-box model is evaluated
//! on each perturbed image, and a weighted sparse linear surrogate is fitted
//! to the target-class probabilities. The surrogate's per-segment
//! coefficients are the explanation; a red/blue overlay renders them.
//!
//! Perturbations are generated up front from the seed, so model evaluations
//! may run in any order (or in parallel) without changing the result.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_MASKS};

/// Per-pixel segment assignment over an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    segments: usize,
}

impl SuperpixelMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of segments K; labels cover [0, K).
    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Pixels assigned to each segment.
    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.segments];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Splits the image into a `g` x `g` grid of axis-aligned tiles. Tile
/// boundaries fall at `floor(i * extent / g)`, so edge tiles absorb any
/// remainder. K = g^2; the label of tile (ty, tx) is `ty * g + tx`.
pub fn segment_grid(height: usize, width: usize, g: usize) -> Result<SuperpixelMap> {
    if g == 0 || g > height.min(width) {
        return Err(Error::Input(format!(
            "grid {g} does not fit a {height}x{width} image"
        )));
    }
    let tile = |i: usize, extent: usize| i * extent / g;
    let mut labels = vec![0usize; height * width];
    for ty in 0..g {
        let (r0, r1) = (tile(ty, height), tile(ty + 1, height));
        for tx in 0..g {
            let (c0, c1) = (tile(tx, width), tile(tx + 1, width));
            for r in r0..r1 {
                for c in c0..c1 {
                    labels[r * width + c] = ty * g + tx;
                }
            }
        }
    }
    Ok(SuperpixelMap { height, width, labels, segments: g * g })
}

/// Proximity weight of a mask: with `d` the fraction of removed segments,
/// the weight is `exp(-d^2 / sigma^2)`. The all-ones mask has weight 1.
/// `sigma` must be positive.
pub fn kernel_weight(mask: &[u8], sigma: f64) -> f64 {
    let kept: usize = mask.iter().map(|&b| b as usize).sum();
    let d = 1.0 - kept as f64 / mask.len() as f64;
    libm::exp(-(d * d) / (sigma * sigma))
}

/// Keeps pixels of segments with mask bit 1 and replaces the pixels of
/// removed segments with the image's global mean intensity.
pub fn apply_mask(img: &Image, spmap: &SuperpixelMap, mask: &[u8]) -> Result<Image> {
    if spmap.height() != img.height() || spmap.width() != img.width() {
        return Err(Error::Input(format!(
            "segment map {}x{} does not cover image {}x{}",
            spmap.height(),
            spmap.width(),
            img.height(),
            img.width()
        )));
    }
    if mask.len() != spmap.segments() {
        return Err(Error::Input(format!(
            "mask has {} bits for {} segments",
            mask.len(),
            spmap.segments()
        )));
    }
    let fill = img.mean_intensity();
    let mut out = img.clone();
    for row in 0..img.height() {
        for col in 0..img.width() {
            if mask[spmap.label(row, col)] == 0 {
                for ch in 0..img.channels() {
                    out.set(row, col, ch, fill);
                }
            }
        }
    }
    Ok(out)
}

/// Draws `n` masks of `k` Bernoulli(0.5) bits; the first mask is always
/// all-ones so the unperturbed image is in the sample.
pub fn sample_masks(k: usize, n: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = stream_rng(seed, STREAM_MASKS);
    let mut masks = Vec::with_capacity(n);
    masks.push(vec![1u8; k]);
    for _ in 1..n {
        masks.push((0..k).map(|_| if rng.random::<bool>() { 1 } else { 0 }).collect());
    }
    masks
}

/// One evaluated perturbation: the mask, the model's class probabilities on
/// the masked image, and the mask's proximity weight.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub mask: Vec<u8>,
    pub prediction: Vec<f64>,
    pub weight: f64,
}

/// Explanation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LimeConfig {
    /// Grid side g; K = g^2 superpixels.
    pub grid: usize,
    pub n_samples: usize,
    /// Proximity kernel width.
    pub sigma: f64,
    pub ridge_lambda: f64,
    /// Number of segments reported (and rendered) by |coefficient|.
    pub top_k: usize,
    pub seed: u64,
}

impl LimeConfig {
    /// Defaults: 8x8 grid (K = 64), 1000 samples, sigma 0.25, lambda 1e-3,
    /// top 10 segments.
    pub fn with_seed(seed: u64) -> Self {
        LimeConfig { grid: 8, n_samples: 1000, sigma: 0.25, ridge_lambda: 1e-3, top_k: 10, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 {
            return Err(Error::Config("grid must be >= 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if !(self.ridge_lambda > 0.0) {
            return Err(Error::Config("ridge_lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Result of fitting the local surrogate.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub target_class: usize,
    /// One weight per superpixel.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Segment ids ordered by |coefficient| descending (ties by id);
    /// zero-coefficient segments are never selected.
    pub top_k: Vec<usize>,
    /// Weighted R^2 of the surrogate on the sample; 0 when degenerate.
    pub fit_r2: f64,
    /// Set when every sampled prediction was identical, in which case all
    /// coefficients are zero and the intercept is that constant.
    pub degenerate: bool,
    /// Max-norm residual of the solved ridge normal equations.
    pub normal_eq_residual: f64,
}

/// Explains `model_fn`'s prediction for `target_class` on `img`.
///
/// `model_fn` maps an image to class probabilities and must be pure: the
/// explanation is then fully determined by (image, config, seed).
pub fn explain<F>(mut model_fn: F, img: &Image, target_class: usize, cfg: &LimeConfig) -> Result<Explanation>
where
    F: FnMut(&Image) -> Vec<f64>,
{
    cfg.validate()?;
    let spmap = segment_grid(img.height(), img.width(), cfg.grid)?;
    let masks = sample_masks(spmap.segments(), cfg.n_samples, cfg.seed);
    let mut perturbations = Vec::with_capacity(masks.len());
    for mask in masks {
        let perturbed = apply_mask(img, &spmap, &mask)?;
        let prediction = model_fn(&perturbed);
        let weight = kernel_weight(&mask, cfg.sigma);
        perturbations.push(Perturbation { mask, prediction, weight });
    }
    explain_from_perturbations(&perturbations, target_class, cfg)
}

/// Fits the surrogate to already-evaluated perturbations. Aggregation is
/// order-independent given the same set, so evaluations may be parallelized
/// by the caller.
pub fn explain_from_perturbations(
    perturbations: &[Perturbation],
    target_class: usize,
    cfg: &LimeConfig,
) -> Result<Explanation> {
    cfg.validate()?;
    let n = perturbations.len();
    if n == 0 {
        return Err(Error::Input("no perturbations to fit".into()));
    }
    let k = perturbations[0].mask.len();
    let classes = perturbations[0].prediction.len();
    if target_class >= classes {
        return Err(Error::Input(format!(
            "target class {target_class} out of range [0, {classes})"
        )));
    }
    for p in perturbations {
        if p.mask.len() != k || p.prediction.len() != classes {
            return Err(Error::Input("perturbations disagree on mask or class count".into()));
        }
    }
    let y: Vec<f64> = perturbations.iter().map(|p| p.prediction[target_class]).collect();
    let w: Vec<f64> = perturbations.iter().map(|p| p.weight).collect();

    if y.iter().all(|&v| v == y[0]) {
        return Ok(Explanation {
            target_class,
            coefficients: vec![0.0; k],
            intercept: y[0],
            top_k: Vec::new(),
            fit_r2: 0.0,
            degenerate: true,
            normal_eq_residual: 0.0,
        });
    }

    let fit = fit_weighted_ridge(perturbations, &y, &w, cfg.ridge_lambda)?;
    let top_k = select_top(&fit.coefficients, cfg.top_k);
    Ok(Explanation {
        target_class,
        coefficients: fit.coefficients,
        intercept: fit.intercept,
        top_k,
        fit_r2: fit.r2,
        degenerate: false,
        normal_eq_residual: fit.residual,
    })
}

struct RidgeFit {
    coefficients: Vec<f64>,
    intercept: f64,
    r2: f64,
    residual: f64,
}

/// Weighted ridge regression of `y` on the mask bits, intercept left
/// unpenalized by centering both sides at their weighted means. Solves
/// `(Xc' W Xc + lambda I) beta = Xc' W yc` by Cholesky factorization and
/// reports the max-norm residual of that system.
fn fit_weighted_ridge(
    perturbations: &[Perturbation],
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<RidgeFit> {
    let n = perturbations.len();
    let k = perturbations[0].mask.len();
    let wsum: f64 = w.iter().sum();

    let mut xmean = vec![0.0; k];
    for (p, &wi) in perturbations.iter().zip(w) {
        for (m, &bit) in xmean.iter_mut().zip(&p.mask) {
            *m += wi * bit as f64;
        }
    }
    for m in xmean.iter_mut() {
        *m /= wsum;
    }
    let ymean = y.iter().zip(w).map(|(&yi, &wi)| wi * yi).sum::<f64>() / wsum;

    // Centered design, row-major n x k.
    let mut xc = vec![0.0; n * k];
    for (i, p) in perturbations.iter().enumerate() {
        for (j, &bit) in p.mask.iter().enumerate() {
            xc[i * k + j] = bit as f64 - xmean[j];
        }
    }
    let yc: Vec<f64> = y.iter().map(|&v| v - ymean).collect();

    // Normal matrix and right-hand side.
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for i in 0..n {
        let wi = w[i];
        let row = &xc[i * k..(i + 1) * k];
        for p in 0..k {
            let wp = wi * row[p];
            b[p] += wp * yc[i];
            let arow = &mut a[p * k..(p + 1) * k];
            for q in p..k {
                arow[q] += wp * row[q];
            }
        }
    }
    for p in 0..k {
        a[p * k + p] += lambda;
        for q in 0..p {
            a[p * k + q] = a[q * k + p];
        }
    }

    let beta = cholesky_solve(&a, &b, k)?;

    // Residual of the solved system, max norm.
    let mut residual = 0.0f64;
    for p in 0..k {
        let mut s = 0.0;
        for q in 0..k {
            s += a[p * k + q] * beta[q];
        }
        residual = residual.max(libm::fabs(s - b[p]));
    }

    let intercept = ymean - xmean.iter().zip(&beta).map(|(&m, &c)| m * c).sum::<f64>();

    let mut sse = 0.0;
    let mut sst = 0.0;
    for (i, p) in perturbations.iter().enumerate() {
        let pred: f64 = intercept
            + p.mask.iter().zip(&beta).map(|(&bit, &c)| bit as f64 * c).sum::<f64>();
        let e = y[i] - pred;
        sse += w[i] * e * e;
        sst += w[i] * yc[i] * yc[i];
    }
    let r2 = 1.0 - sse / sst;

    Ok(RidgeFit { coefficients: beta, intercept, r2, residual })
}

/// In-place Cholesky solve of a symmetric positive-definite system.
fn cholesky_solve(a: &[f64], b: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut l = a.to_vec();
    for j in 0..k {
        for i in j..k {
            let mut s = l[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Input("ridge system is not positive definite".into()));
                }
                l[j * k + j] = libm::sqrt(s);
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    // Forward then back substitution.
    let mut x = b.to_vec();
    for i in 0..k {
        let mut s = x[i];
        for p in 0..i {
            s -= l[i * k + p] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = x[i];
        for p in i + 1..k {
            s -= l[p * k + i] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    Ok(x)
}

/// Segment ids by |coefficient| descending (ties broken by id), skipping
/// exact zeros, truncated to `limit`.
fn select_top(coefficients: &[f64], limit: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..coefficients.len())
        .filter(|&i| coefficients[i] != 0.0)
        .collect();
    ids.sort_by(|&a, &b| {
        libm::fabs(coefficients[b])
            .partial_cmp(&libm::fabs(coefficients[a]))
            .expect("coefficients are finite")
            .then(a.cmp(&b))
    });
    ids.truncate(limit);
    ids
}

/// Renders the explanation over a grayscale base: positive-coefficient
/// segments tint red, negative tint blue, with alpha proportional to
/// |coefficient| / max|coefficient| and capped at 0.5. Returns RGB.
pub fn render_overlay(img: &Image, spmap: &SuperpixelMap, expl: &Explanation) -> Result<Image> {
    if spmap.height() != img.height() || spmap.width() != img.width() {
        return Err(Error::Input("segment map does not cover the image".into()));
    }
    if expl.coefficients.len() != spmap.segments() {
        return Err(Error::Input(format!(
            "explanation covers {} segments, map has {}",
            expl.coefficients.len(),
            spmap.segments()
        )));
    }
    let gray = img.to_grayscale();
    let mut out = gray.to_rgb();
    let cmax = expl
        .top_k
        .iter()
        .map(|&i| libm::fabs(expl.coefficients[i]))
        .fold(0.0f64, f64::max);
    if cmax == 0.0 {
        return Ok(out);
    }
    let mut alpha = vec![0.0f64; spmap.segments()];
    let mut positive = vec![false; spmap.segments()];
    for &i in &expl.top_k {
        alpha[i] = 0.5 * libm::fabs(expl.coefficients[i]) / cmax;
        positive[i] = expl.coefficients[i] > 0.0;
    }
    for row in 0..img.height() {
        for col in 0..img.width() {
            let seg = spmap.label(row, col);
            let a = alpha[seg];
            if a == 0.0 {
                continue;
            }
            let base = gray.get(row, col, 0);
            let tint: [f64; 3] = if positive[seg] { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
            for ch in 0..3 {
                out.set(row, col, ch, (1.0 - a) * base + a * tint[ch]);
            }
        }
    }
    Ok(out)
}

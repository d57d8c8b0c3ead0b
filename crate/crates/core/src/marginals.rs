//! Target marginal densities.
//!
//! Every marginal is a finite mixture of isotropic Gaussians
//! `Σⱼ wⱼ N(μⱼ, σⱼ² I)`. Analytic Gaussians, explicit mixtures and
//! image-derived mixtures share the representation; only [`MarginalKind`]
//! records where a marginal came from.
//!
//! Log-densities and their gradients go through log-sum-exp with a running
//! max shift, so queries deep in the tails return the gradient of the
//! dominant component instead of `NaN`.

use std::f64::consts::PI;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{check_dim, invalid, OtError, Result};
use crate::points::{sq_dist, Points};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalKind {
    Gaussian,
    Mixture,
    ImageMixture,
}

/// One isotropic Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    kind: MarginalKind,
    dim: usize,
    components: Vec<Component>,
}

impl Marginal {
    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::build(
            MarginalKind::Gaussian,
            vec![Component {
                weight: 1.0,
                mean,
                variance,
            }],
        )
    }

    /// Mixture with non-negative weights; weights are normalized to sum to one.
    pub fn mixture(components: Vec<Component>) -> Result<Self> {
        Self::build(MarginalKind::Mixture, components)
    }

    fn build(kind: MarginalKind, mut components: Vec<Component>) -> Result<Self> {
        let dim = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| invalid("a marginal needs at least one component"))?;
        if dim == 0 {
            return Err(invalid("component means must be non-empty"));
        }
        let mut total = 0.0;
        for (j, c) in components.iter().enumerate() {
            check_dim(dim, c.mean.len())?;
            if !(c.variance > 0.0 && c.variance.is_finite()) {
                return Err(invalid(format!(
                    "component {j}: variance must be strictly positive, got {}",
                    c.variance
                )));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(invalid(format!(
                    "component {j}: weight must be non-negative, got {}",
                    c.weight
                )));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("component {j}: mean must be finite")));
            }
            total += c.weight;
        }
        if total.is_nan() || total <= 0.0 {
            return Err(invalid("mixture weights must not all be zero"));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self {
            kind,
            dim,
            components,
        })
    }

    pub fn kind(&self) -> MarginalKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// `log ϱ(x)` including normalization constants.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let half_d = 0.5 * self.dim as f64;
        let mut max = f64::NEG_INFINITY;
        let mut acc = 0.0;
        for c in &self.components {
            let l = c.weight.ln()
                - half_d * (2.0 * PI * c.variance).ln()
                - 0.5 * sq_dist(x, &c.mean) / c.variance;
            if l == f64::NEG_INFINITY {
                continue;
            }
            if l > max {
                acc = acc * (max - l).exp() + 1.0;
                max = l;
            } else {
                acc += (l - max).exp();
            }
        }
        Ok(max + acc.ln())
    }

    /// `∇ log ϱ(x)`; allocation-free variant of [`Marginal::grad_log_density`].
    ///
    /// Responsibilities are accumulated online with a running max, so the
    /// result never depends on the global normalization and stays finite
    /// however far `x` is from every component.
    pub fn grad_log_density_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        if let [c] = self.components.as_slice() {
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(&c.mean) {
                *o = -(xi - mi) / c.variance;
            }
            return;
        }
        let half_d = 0.5 * self.dim as f64;
        let mut max = f64::NEG_INFINITY;
        let mut norm = 0.0;
        out.iter_mut().for_each(|o| *o = 0.0);
        for c in &self.components {
            let l = c.weight.ln() - half_d * c.variance.ln() - 0.5 * sq_dist(x, &c.mean) / c.variance;
            if l == f64::NEG_INFINITY {
                continue;
            }
            let w = if l > max {
                let rescale = (max - l).exp();
                norm *= rescale;
                out.iter_mut().for_each(|o| *o *= rescale);
                max = l;
                1.0
            } else {
                (l - max).exp()
            };
            norm += w;
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(&c.mean) {
                *o -= w * (xi - mi) / c.variance;
            }
        }
        out.iter_mut().for_each(|o| *o /= norm);
    }

    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.grad_log_density_into(x, &mut out);
        Ok(out)
    }

    /// `n` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Points> {
        if n == 0 {
            return Err(invalid("sample size must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.sample_with(&mut rng, n))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Points {
        let mut pts = Points::zeros(n, self.dim);
        let picker = (self.components.len() > 1).then(|| {
            WeightedIndex::new(self.components.iter().map(|c| c.weight))
                .expect("weights validated at construction")
        });
        for i in 0..n {
            let c = match &picker {
                Some(p) => &self.components[p.sample(rng)],
                None => &self.components[0],
            };
            let sd = c.variance.sqrt();
            for (v, m) in pts.row_mut(i).iter_mut().zip(&c.mean) {
                let z: f64 = rng.sample(StandardNormal);
                *v = m + sd * z;
            }
        }
        pts
    }

    /// Marginal law of coordinate `k`: a 1-D mixture with the same weights.
    pub fn coordinate_marginal(&self, k: usize) -> Result<Marginal> {
        if k >= self.dim {
            return Err(invalid(format!(
                "coordinate {k} out of range for dimension {}",
                self.dim
            )));
        }
        let components = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: vec![c.mean[k]],
                variance: c.variance,
            })
            .collect();
        Self::build(self.kind, components)
    }

    /// CDF of a one-dimensional marginal.
    pub fn cdf_1d(&self, x: f64) -> f64 {
        debug_assert_eq!(self.dim, 1);
        self.components
            .iter()
            .map(|c| {
                let z = (x - c.mean[0]) / c.variance.sqrt();
                c.weight * 0.5 * erfc(-z / std::f64::consts::SQRT_2)
            })
            .sum()
    }

    /// Quantile of a one-dimensional marginal by bisection on the CDF,
    /// bracketed by `[min μⱼ − 12σⱼ, max μⱼ + 12σⱼ]`, to width `1e-10`.
    pub fn quantile_1d(&self, u: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(OtError::DimensionMismatch {
                expected: 1,
                got: self.dim,
            });
        }
        if !(0.0..=1.0).contains(&u) {
            return Err(invalid(format!("quantile level {u} outside [0, 1]")));
        }
        let (mut lo, mut hi) =
            self.components
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    let s = 12.0 * c.variance.sqrt();
                    (lo.min(c.mean[0] - s), hi.max(c.mean[0] + s))
                });
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf_1d(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Grayscale image, row-major, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    intensities: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, intensities: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        if intensities.len() != width * height {
            return Err(invalid(format!(
                "expected {} intensities for a {width}x{height} image, got {}",
                width * height,
                intensities.len()
            )));
        }
        if intensities.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("image intensities must be finite and non-negative"));
        }
        if !intensities.iter().any(|v| *v > 0.0) {
            return Err(invalid("image has no strictly positive pixel"));
        }
        Ok(Self {
            width,
            height,
            intensities,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intensity(&self, row: usize, col: usize) -> f64 {
        self.intensities[row * self.width + col]
    }

    /// Parses whitespace-separated rows of non-negative numbers.
    pub fn parse_matrix(text: &str) -> Result<Self> {
        let mut width = None;
        let mut values = Vec::new();
        let mut height = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| OtError::Parse {
                        location: format!("line {}", lineno + 1),
                        message: format!("{tok:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(OtError::Parse {
                        location: format!("line {}", lineno + 1),
                        message: format!("expected {w} columns, found {}", row.len()),
                    })
                }
                _ => {}
            }
            values.extend(row);
            height += 1;
        }
        Self::new(width.unwrap_or(0), height, values)
    }

    /// Loads an 8-bit grayscale PNG (`.png`) or a plain-text matrix (anything else).
    pub fn load(path: &Path) -> Result<Self> {
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            let img = image::open(path)?.to_luma8();
            let (w, h) = img.dimensions();
            let data = img.as_raw().iter().map(|&v| f64::from(v)).collect();
            Self::new(w as usize, h as usize, data)
        } else {
            Self::parse_matrix(&std::fs::read_to_string(path)?)
        }
    }
}

/// One Gaussian per strictly positive pixel, centred at the pixel centre in
/// the unit square (x to the right, y up) with variance `bandwidth²`.
pub fn image_to_mixture(img: &GrayImage, bandwidth: f64) -> Result<Marginal> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(invalid(format!(
            "image bandwidth must be positive, got {bandwidth}"
        )));
    }
    let (w, h) = (img.width as f64, img.height as f64);
    let mut components = Vec::new();
    for r in 0..img.height {
        for c in 0..img.width {
            let v = img.intensity(r, c);
            if v > 0.0 {
                components.push(Component {
                    weight: v,
                    mean: vec![(c as f64 + 0.5) / w, (h - r as f64 - 0.5) / h],
                    variance: bandwidth * bandwidth,
                });
            }
        }
    }
    Marginal::build(MarginalKind::ImageMixture, components)
}

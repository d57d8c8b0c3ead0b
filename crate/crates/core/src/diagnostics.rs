//! Validation oracles and run diagnostics.
//!
//! The exact solvers here ([`sorted_coupling_1d`], [`exact_assignment`])
//! and the closed forms ([`gaussian_map_1d`], [`gaussian_barycenter_1d`])
//! are the references the particle output is checked against.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CostFunction, Kernels};
use crate::error::{check_dim, invalid, Result};
use crate::marginals::Marginal;
use crate::points::Points;

/// Largest problem [`exact_assignment`] accepts by default.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 512;

/// Equally weighted pairs `(xᵢ, yᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub x: Points,
    pub y: Points,
}

impl Coupling {
    pub fn new(x: Points, y: Points) -> Result<Self> {
        check_dim(x.dim(), y.dim())?;
        if x.len() != y.len() {
            return Err(invalid(format!(
                "coupling sides differ in size: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(invalid("coupling is empty"));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// `(1/N) Σᵢ c(xᵢ, yᵢ)`.
    pub fn mean_cost(&self, cost: &CostFunction) -> f64 {
        let total: f64 = self
            .x
            .rows()
            .zip(self.y.rows())
            .map(|(a, b)| cost.eval(a, b))
            .sum();
        total / self.len() as f64
    }
}

/// Monotone rearrangement: the i-th order statistic of `xs` is paired with
/// the i-th order statistic of `ys`. Optimal for every strictly convex
/// `c(x, y) = h(x − y)` in one dimension.
pub fn sorted_coupling_1d(xs: &[f64], ys: &[f64], cost: &CostFunction) -> Result<(Coupling, f64)> {
    if xs.len() != ys.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.is_empty() {
        return Err(invalid("cannot couple empty samples"));
    }
    let mut sx = xs.to_vec();
    let mut sy = ys.to_vec();
    sx.sort_by(f64::total_cmp);
    sy.sort_by(f64::total_cmp);
    let c = Coupling::new(Points::from_scalars(&sx), Points::from_scalars(&sy))?;
    let value = c.mean_cost(cost);
    Ok((c, value))
}

/// Minimum-cost perfect matching between two equally sized clouds.
#[derive(Debug, Clone)]
pub struct Assignment {
    /// `x` in input order, `y` permuted to its partner.
    pub coupling: Coupling,
    pub cost: f64,
    /// `matching[i]` is the index in `ys` paired with `xs[i]`.
    pub matching: Vec<usize>,
}

/// Exact empirical OT by the O(N³) Hungarian method with potentials.
pub fn exact_assignment(xs: &Points, ys: &Points, cost: &CostFunction, cap: usize) -> Result<Assignment> {
    check_dim(xs.dim(), ys.dim())?;
    let n = xs.len();
    if n != ys.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", n, ys.len())));
    }
    if n == 0 {
        return Err(invalid("cannot match empty clouds"));
    }
    if n > cap {
        return Err(invalid(format!(
            "assignment size {n} exceeds the cap of {cap} points"
        )));
    }
    let a: Vec<f64> = xs
        .rows()
        .flat_map(|x| ys.rows().map(move |y| cost.eval(x, y)))
        .collect();
    let matching = hungarian(&a, n);
    let total: f64 = matching.iter().enumerate().map(|(i, &j)| a[i * n + j]).sum();
    let coupling = Coupling::new(xs.clone(), ys.gather(&matching))?;
    Ok(Assignment {
        coupling,
        cost: total / n as f64,
        matching,
    })
}

/// Square assignment on a row-major `n × n` cost matrix; returns the column
/// assigned to each row.
fn hungarian(a: &[f64], n: usize) -> Vec<usize> {
    // 1-based potentials; column 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}

/// Affine map `x ↦ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub slope: f64,
    pub intercept: f64,
}

impl AffineMap {
    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Monotone map pushing `N(m₁, σ₁²)` onto `N(m₂, σ₂²)`; arguments are
/// `(mean, standard deviation)`.
pub fn gaussian_map_1d(from: (f64, f64), to: (f64, f64)) -> Result<AffineMap> {
    let ((m1, s1), (m2, s2)) = (from, to);
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(invalid(format!(
            "standard deviations must be positive, got {s1} and {s2}"
        )));
    }
    let slope = s2 / s1;
    Ok(AffineMap {
        slope,
        intercept: m2 - slope * m1,
    })
}

/// Barycenter of 1-D Gaussians `(mⱼ, σⱼ)` with weights `λⱼ` (normalized
/// here): `N(Σλⱼmⱼ, (Σλⱼσⱼ)²)`, returned as `(mean, std)`.
pub fn gaussian_barycenter_1d(params: &[(f64, f64)], weights: &[f64]) -> Result<(f64, f64)> {
    let w = normalize_weights(weights)?;
    if params.len() != w.len() {
        return Err(invalid(format!(
            "{} Gaussians but {} weights",
            params.len(),
            w.len()
        )));
    }
    let mean = params.iter().zip(&w).map(|((m, _), l)| l * m).sum();
    let std = params.iter().zip(&w).map(|((_, s), l)| l * s).sum();
    Ok((mean, std))
}

pub(crate) fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(invalid("weights must be non-empty"));
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(invalid(format!("weights must be positive, got {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

/// `W₂` between an empirical 1-D sample and a 1-D marginal, by matching
/// order statistics to quantiles. Each of the `N` probability cells
/// `((i−1)/N, i/N)` is integrated with `quadrature_n` midpoint nodes;
/// `quadrature_n = 1` matches the i-th order statistic to the quantile at
/// `(i − ½)/N`.
pub fn marginal_w2_1d(sample: &[f64], m: &Marginal, quadrature_n: usize) -> Result<f64> {
    check_dim(1, m.dim())?;
    if sample.is_empty() {
        return Err(invalid("sample is empty"));
    }
    if quadrature_n == 0 {
        return Err(invalid("quadrature_n must be at least 1"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let q = quadrature_n as f64;
    let sq: Vec<f64> = sorted
        .par_iter()
        .enumerate()
        .map(|(i, &x)| -> Result<f64> {
            let mut acc = 0.0;
            for l in 0..quadrature_n {
                let u = (i as f64 + (l as f64 + 0.5) / q) / n;
                let diff = x - m.quantile_1d(u)?;
                acc += diff * diff;
            }
            Ok(acc / q)
        })
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / n).sqrt())
}

/// Marginal fit of a d-dimensional sample: `sqrt(Σₖ W₂(sampleₖ, mₖ)²)` over
/// the coordinate projections. Equals [`marginal_w2_1d`] when `d = 1`.
pub fn marginal_fit(sample: &Points, m: &Marginal) -> Result<f64> {
    check_dim(m.dim(), sample.dim())?;
    let mut total = 0.0;
    for k in 0..sample.dim() {
        let w = marginal_w2_1d(&sample.coordinate(k), &m.coordinate_marginal(k)?, 1)?;
        total += w * w;
    }
    Ok(total.sqrt())
}

/// Plug-in estimate of the KL entropy-transport energy of a coupling:
/// mean cost plus `Λ` times kernel-estimated `KL(ρ̂ₓ‖μ) + KL(ρ̂ᵧ‖ν)`.
/// Biased; meant only as a progress monitor.
pub fn energy_estimate(
    c: &Coupling,
    mu: &Marginal,
    nu: &Marginal,
    lambda: f64,
    kernels: &Kernels,
    cost: &CostFunction,
) -> f64 {
    let transport = c.mean_cost(cost);
    if lambda == 0.0 {
        return transport;
    }
    let kl = |pts: &Points, k: &crate::kde::RbfKernel, target: &Marginal| -> f64 {
        let terms: Vec<f64> = (0..pts.len())
            .into_par_iter()
            .map(|i| {
                let x = pts.row(i);
                k.log_kde_density_unchecked(x, pts.as_slice())
                    - target.log_density(x).expect("dimension checked by caller")
            })
            .collect();
        terms.iter().sum::<f64>() / pts.len() as f64
    };
    transport + lambda * (kl(&c.x, &kernels.x, mu) + kl(&c.y, &kernels.y, nu))
}

/// Displacement interpolation `{(1 − t)xᵢ + t·yᵢ}`.
pub fn interpolate(c: &Coupling, t: f64) -> Result<Points> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("interpolation time {t} outside [0, 1]")));
    }
    let data =
        c.x.as_slice()
            .iter()
            .zip(c.y.as_slice())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
    Points::new(c.dim(), data)
}

/// Ordinary least-squares fit `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<AffineMap> {
    let (mx, my, sxx, sxy, _) = moments(xs, ys)?;
    if sxx == 0.0 {
        return Err(invalid("x values have zero spread"));
    }
    let slope = sxy / sxx;
    Ok(AffineMap {
        slope,
        intercept: my - slope * mx,
    })
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let (_, _, sxx, sxy, syy) = moments(xs, ys)?;
    if sxx == 0.0 || syy == 0.0 {
        return Err(invalid("correlation undefined for constant data"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn moments(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("need two equally long samples of size >= 2"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    Ok((mx, my, sxx, sxy, syy))
}

/// Fraction of index pairs `i < j` with `(xᵢ − xⱼ)(yᵢ − yⱼ) < 0`.
pub fn discordant_fraction(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("need two equally long samples of size >= 2"));
    }
    let n = xs.len();
    let discordant: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .filter(|&j| (xs[i] - xs[j]) * (ys[i] - ys[j]) < 0.0)
                .count()
        })
        .sum();
    Ok(discordant as f64 / (n * (n - 1) / 2) as f64)
}

/// Sample mean and unbiased standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

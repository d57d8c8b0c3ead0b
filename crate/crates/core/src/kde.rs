//! Gaussian RBF kernel and the kernel estimator of `∇ log ρ` over particles.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::points::{sq_dist, Points};

/// `K(x, ξ) = exp(−|x − ξ|² / 2τ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    tau: f64,
}

/// Denominators below this are recomputed with the max-shift trick.
const UNDERFLOW_GUARD: f64 = 1e-280;

impl RbfKernel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self { tau })
        } else {
            Err(invalid(format!("kernel bandwidth must be positive, got {tau}")))
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    #[inline]
    fn inv_two_tau_sq(&self) -> f64 {
        0.5 / (self.tau * self.tau)
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        check_dim(x.len(), xi.len())?;
        Ok((-sq_dist(x, xi) * self.inv_two_tau_sq()).exp())
    }

    /// Gradient in the first argument: `−(x − ξ)/τ² · K(x, ξ)`.
    pub fn grad(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let k = self.eval(x, xi)?;
        let s = k / (self.tau * self.tau);
        Ok(x.iter().zip(xi).map(|(a, b)| -(a - b) * s).collect())
    }

    /// `Σₖ ∇ₓK(x, ξₖ) / Σₖ K(x, ξₖ)` over the rows of `points`.
    pub fn grad_log_kde(&self, x: &[f64], points: &Points) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(invalid("kernel estimate needs at least one point"));
        }
        check_dim(points.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.grad_log_kde_into(x, points.as_slice(), &mut out);
        Ok(out)
    }

    /// Allocation-free core of [`RbfKernel::grad_log_kde`]; `points` is a
    /// flat row-major buffer with rows of length `x.len()`.
    ///
    /// Sums run sequentially in point order. A query that is itself one of
    /// the points contributes `K = 1` to the denominator, so the fast path
    /// only falls back to the shifted form for queries far from every point.
    pub fn grad_log_kde_into(&self, x: &[f64], points: &[f64], out: &mut [f64]) {
        let d = x.len();
        let a = self.inv_two_tau_sq();
        let inv_tau_sq = 2.0 * a;
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut den = 0.0;
        if d == 1 {
            let x0 = x[0];
            let mut num = 0.0;
            for &p in points {
                let diff = p - x0;
                let w = (-diff * diff * a).exp();
                den += w;
                num += w * diff;
            }
            out[0] = num;
        } else {
            for p in points.chunks_exact(d) {
                let w = (-sq_dist(x, p) * a).exp();
                den += w;
                for ((o, pk), xk) in out.iter_mut().zip(p).zip(x) {
                    *o += w * (pk - xk);
                }
            }
        }
        if den < UNDERFLOW_GUARD {
            let min_r2 = points
                .chunks_exact(d)
                .map(|p| sq_dist(x, p))
                .fold(f64::INFINITY, f64::min);
            out.iter_mut().for_each(|o| *o = 0.0);
            den = 0.0;
            for p in points.chunks_exact(d) {
                let w = (-(sq_dist(x, p) - min_r2) * a).exp();
                den += w;
                for ((o, pk), xk) in out.iter_mut().zip(p).zip(x) {
                    *o += w * (pk - xk);
                }
            }
        }
        let scale = inv_tau_sq / den;
        out.iter_mut().for_each(|o| *o *= scale);
    }

    /// `log[ (1/(N(2πτ²)^{d/2})) Σₖ K(x, ξₖ) ]` via log-sum-exp.
    pub fn log_kde_density(&self, x: &[f64], points: &Points) -> Result<f64> {
        if points.is_empty() {
            return Err(invalid("kernel estimate needs at least one point"));
        }
        check_dim(points.dim(), x.len())?;
        Ok(self.log_kde_density_unchecked(x, points.as_slice()))
    }

    pub(crate) fn log_kde_density_unchecked(&self, x: &[f64], points: &[f64]) -> f64 {
        let d = x.len();
        let n = (points.len() / d) as f64;
        let a = self.inv_two_tau_sq();
        let min_r2 = points
            .chunks_exact(d)
            .map(|p| sq_dist(x, p))
            .fold(f64::INFINITY, f64::min);
        let s: f64 = points
            .chunks_exact(d)
            .map(|p| (-(sq_dist(x, p) - min_r2) * a).exp())
            .sum();
        let log_norm = n.ln() + 0.5 * d as f64 * (2.0 * std::f64::consts::PI * self.tau * self.tau).ln();
        -min_r2 * a + s.ln() - log_norm
    }
}

/// Rule-of-thumb bandwidth for a block of particles:
/// `0.9 · min(σ̂, IQR/1.34) · N^{−1/(d+4)}`, with the scale averaged over
/// coordinates when `d > 1`.
pub fn default_bandwidth(points: &Points) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(invalid(
            "automatic bandwidth needs at least two particles; set tau explicitly",
        ));
    }
    let d = points.dim();
    let mut scale = 0.0;
    for k in 0..d {
        let mut col = points.coordinate(k);
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        col.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
        let robust = iqr / 1.34;
        scale += if robust > 0.0 { sd.min(robust) } else { sd };
    }
    scale /= d as f64;
    let tau = 0.9 * scale * (n as f64).powf(-1.0 / (d as f64 + 4.0));
    if tau > 0.0 && tau.is_finite() {
        Ok(tau)
    } else {
        Err(invalid(
            "particles are degenerate (zero spread); set tau explicitly",
        ))
    }
}

/// Linear-interpolation sample quantile of already sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

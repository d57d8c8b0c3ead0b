//! The coupled particle system, its forward-Euler integrator and the
//! random-batch run loop.
//!
//! Each particle carries a pair `(Xᵢ, Yᵢ)`. Its velocity is
//!
//! ```text
//! Ẋᵢ = −∇ₓc(Xᵢ,Yᵢ) + Λ(∇log ϱ₁(Xᵢ) − ∇log ρ̂₁(Xᵢ))
//! Ẏᵢ = −∇ᵧc(Xᵢ,Yᵢ) + Λ(∇log ϱ₂(Yᵢ) − ∇log ρ̂₂(Yᵢ))
//! ```
//!
//! where `ρ̂` is the kernel estimate over the particles that share `i`'s
//! batch in the current iteration (including `i` itself).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diagnostics::{energy_estimate, Coupling};
use crate::error::{check_dim, invalid, OtError, Result};
use crate::kde::{default_bandwidth, RbfKernel};
use crate::marginals::Marginal;
use crate::points::Points;
use crate::rng;

/// Translation-invariant convex transport cost `c(x, y) = h(x − y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CostFunction {
    /// `|x − y|²`
    #[default]
    Quadratic,
    /// `|x − y|^p`, `p > 1`
    Power { exponent: f64 },
}

impl CostFunction {
    pub fn power(exponent: f64) -> Result<Self> {
        let c = CostFunction::Power { exponent };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CostFunction::Quadratic => Ok(()),
            CostFunction::Power { exponent } if exponent > 1.0 && exponent.is_finite() => Ok(()),
            CostFunction::Power { exponent } => Err(invalid(format!(
                "power cost exponent must be > 1 for strict convexity, got {exponent}"
            ))),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match *self {
            CostFunction::Quadratic => r2,
            CostFunction::Power { exponent } => r2.powf(0.5 * exponent),
        }
    }

    /// Writes `∇ₓc(x, y)` into `gx`; `∇ᵧc = −∇ₓc`. Returns `true` when the
    /// zero subgradient was substituted at `x = y` for `p < 2`.
    pub fn grad_x_into(&self, x: &[f64], y: &[f64], gx: &mut [f64]) -> bool {
        match *self {
            CostFunction::Quadratic => {
                for ((g, a), b) in gx.iter_mut().zip(x).zip(y) {
                    *g = 2.0 * (a - b);
                }
                false
            }
            CostFunction::Power { exponent } => {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                if r2 == 0.0 {
                    gx.iter_mut().for_each(|g| *g = 0.0);
                    return exponent < 2.0;
                }
                let s = exponent * r2.powf(0.5 * exponent - 1.0);
                for ((g, a), b) in gx.iter_mut().zip(x).zip(y) {
                    *g = s * (a - b);
                }
                false
            }
        }
    }

    /// `(∇ₓc, ∇ᵧc)` at `(x, y)`.
    pub fn gradient(&self, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(x.len(), y.len())?;
        let mut gx = vec![0.0; x.len()];
        if self.grad_x_into(x, y, &mut gx) {
            log::warn!("power cost gradient at coincident points: using the zero subgradient");
        }
        let gy = gx.iter().map(|g| -g).collect();
        Ok((gx, gy))
    }
}

/// Kernel bandwidth: a fixed value or the rule-of-thumb applied once to the
/// initial particles of each block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    #[default]
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve(&self, block: &Points) -> Result<RbfKernel> {
        match *self {
            Bandwidth::Auto => RbfKernel::new(default_bandwidth(block)?),
            Bandwidth::Fixed(tau) => RbfKernel::new(tau),
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Auto => s.serialize_str("auto"),
            Bandwidth::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bandwidth::Fixed(v)),
            Raw::Text(t) if t == "auto" => Ok(Bandwidth::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected \"auto\" or a positive number, got {t:?}"
            ))),
        }
    }
}

/// Paired particle positions `{(Xᵢ, Yᵢ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub x: Points,
    pub y: Points,
}

impl ParticleSystem {
    pub fn new(x: Points, y: Points) -> Result<Self> {
        check_dim(x.dim(), y.dim())?;
        if x.len() != y.len() {
            return Err(invalid(format!(
                "X has {} particles but Y has {}",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(invalid("particle system is empty"));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(invalid("particle positions must be finite"));
        }
        Ok(Self { x, y })
    }

    /// Draws `X ~ init_x`, `Y ~ init_y` independently from seeded streams.
    pub fn sample(init_x: &Marginal, init_y: &Marginal, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("particle count must be at least 1"));
        }
        let x = init_x.sample_with(&mut rng::stream(seed, rng::DOMAIN_INIT, 0), n);
        let y = init_y.sample_with(&mut rng::stream(seed, rng::DOMAIN_INIT, 1), n);
        Self::new(x, y)
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

    pub fn into_coupling(self) -> Coupling {
        Coupling::new(self.x, self.y).expect("particle system invariants imply a valid coupling")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Relaxation strength Λ of the KL marginal penalties.
    pub lambda: f64,
    pub dt: f64,
    pub iters: usize,
    #[serde(default = "one")]
    pub batches: usize,
    #[serde(default)]
    pub tau: Bandwidth,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `max(1, iters / 20)` when absent.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
    #[serde(default)]
    pub cost: CostFunction,
}

fn one() -> usize {
    1
}

impl SolverConfig {
    pub fn new(lambda: f64, dt: f64, iters: usize) -> Self {
        Self {
            lambda,
            dt,
            iters,
            batches: 1,
            tau: Bandwidth::Auto,
            seed: 0,
            snapshot_every: None,
            cost: CostFunction::Quadratic,
        }
    }

    pub fn snapshot_interval(&self) -> usize {
        self.snapshot_every.unwrap_or((self.iters / 20).max(1))
    }

    /// Checks ranges; `n` is the particle count the config will run with.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.batches == 0 {
            return Err(invalid("batches must be at least 1"));
        }
        if self.batches > n {
            return Err(invalid(format!(
                "batches ({}) exceeds the particle count ({n})",
                self.batches
            )));
        }
        if self.snapshot_every == Some(0) {
            return Err(invalid("snapshot_every must be at least 1"));
        }
        if let Bandwidth::Fixed(t) = self.tau {
            RbfKernel::new(t)?;
        }
        self.cost.validate()
    }
}

/// Shuffles `0..n` with the stream of `iteration` and cuts the permutation
/// into `m` contiguous batches whose sizes differ by at most one.
pub fn rbm_partition(n: usize, m: usize, seed: u64, iteration: u64) -> Result<Vec<Vec<usize>>> {
    if m == 0 || m > n {
        return Err(invalid(format!(
            "batch count must satisfy 1 <= m <= n, got m = {m}, n = {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, rng::DOMAIN_PARTITION, iteration));
    let (base, extra) = (n / m, n % m);
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for q in 0..m {
        let len = base + usize::from(q < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// Velocities of the particles of one batch, in batch order.
#[derive(Debug, Clone)]
pub struct BatchDrift {
    pub dx: Points,
    pub dy: Points,
    pub subgradient_events: usize,
}

/// Kernels used on the X and Y sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernels {
    pub x: RbfKernel,
    pub y: RbfKernel,
}

/// Velocities for every member of `batch`, all evaluated at the positions
/// the batch had on entry.
pub fn batch_drift(
    sys: &ParticleSystem,
    batch: &[usize],
    mu: &Marginal,
    nu: &Marginal,
    lambda: f64,
    cost: &CostFunction,
    kernels: &Kernels,
) -> Result<BatchDrift> {
    if batch.is_empty() {
        return Err(invalid("batch is empty"));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= sys.len()) {
        return Err(invalid(format!("batch index {bad} out of range")));
    }
    check_dim(mu.dim(), sys.dim())?;
    check_dim(nu.dim(), sys.dim())?;
    let bx = sys.x.gather(batch);
    let by = sys.y.gather(batch);
    let d = sys.dim();
    let mut dx = Points::zeros(batch.len(), d);
    let mut dy = Points::zeros(batch.len(), d);
    let events = AtomicUsize::new(0);
    dx.as_mut_slice()
        .par_chunks_mut(d)
        .zip(dy.as_mut_slice().par_chunks_mut(d))
        .enumerate()
        .for_each_init(
            || vec![0.0; 2 * d],
            |scratch, (l, (vx, vy))| {
                let (s_target, s_kde) = scratch.split_at_mut(d);
                let xi = bx.row(l);
                let yi = by.row(l);
                if cost.grad_x_into(xi, yi, vx) {
                    events.fetch_add(1, Ordering::Relaxed);
                }
                for (v, g) in vy.iter_mut().zip(vx.iter_mut()) {
                    *v = *g;
                    *g = -*g;
                }
                if lambda != 0.0 {
                    mu.grad_log_density_into(xi, s_target);
                    kernels.x.grad_log_kde_into(xi, bx.as_slice(), s_kde);
                    for ((v, a), b) in vx.iter_mut().zip(s_target.iter()).zip(s_kde.iter()) {
                        *v += lambda * (a - b);
                    }
                    nu.grad_log_density_into(yi, s_target);
                    kernels.y.grad_log_kde_into(yi, by.as_slice(), s_kde);
                    for ((v, a), b) in vy.iter_mut().zip(s_target.iter()).zip(s_kde.iter()) {
                        *v += lambda * (a - b);
                    }
                }
            },
        );
    Ok(BatchDrift {
        dx,
        dy,
        subgradient_events: events.into_inner(),
    })
}

/// Outcome of one Euler step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub max_displacement: f64,
    pub subgradient_events: usize,
}

/// One Euler step over a given partition. Batches only read their own
/// entry positions, so processing them in sequence is equivalent to
/// processing them concurrently.
pub fn step_with_partition(
    sys: &mut ParticleSystem,
    partition: &[Vec<usize>],
    mu: &Marginal,
    nu: &Marginal,
    cfg: &SolverConfig,
    kernels: &Kernels,
) -> Result<StepReport> {
    let mut report = StepReport::default();
    for batch in partition {
        let drift = batch_drift(sys, batch, mu, nu, cfg.lambda, &cfg.cost, kernels)?;
        report.subgradient_events += drift.subgradient_events;
        for (l, &i) in batch.iter().enumerate() {
            for (side, vel) in [(&mut sys.x, &drift.dx), (&mut sys.y, &drift.dy)] {
                let mut disp2 = 0.0;
                for (p, v) in side.row_mut(i).iter_mut().zip(vel.row(l)) {
                    let delta = cfg.dt * v;
                    *p += delta;
                    disp2 += delta * delta;
                }
                report.max_displacement = report.max_displacement.max(disp2.sqrt());
            }
        }
    }
    Ok(report)
}

/// One full iteration: a fresh random partition, then an Euler step.
pub fn step(
    sys: &mut ParticleSystem,
    mu: &Marginal,
    nu: &Marginal,
    cfg: &SolverConfig,
    kernels: &Kernels,
    iteration: u64,
) -> Result<StepReport> {
    let partition = rbm_partition(sys.len(), cfg.batches, cfg.seed, iteration)?;
    step_with_partition(sys, &partition, mu, nu, cfg, kernels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iter: usize,
    pub x: Points,
    pub y: Points,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPoint {
    pub iter: usize,
    pub energy: f64,
}

/// Result of [`run_transport`].
#[derive(Debug, Clone)]
pub struct TransportRun {
    /// Final pairs: a sample approximation of the relaxed optimal plan.
    pub coupling: Coupling,
    /// Initial state, every `snapshot_every` iterations, and the final state.
    pub snapshots: Vec<Snapshot>,
    pub kernels: Kernels,
    /// Plug-in entropy-transport energy at each snapshot.
    pub energy_trace: Vec<EnergyPoint>,
    /// Wall-clock seconds spent in each step (snapshot work excluded).
    pub iteration_seconds: Vec<f64>,
    pub max_displacement: f64,
    pub subgradient_events: usize,
}

/// Runs `cfg.iters` random-batch iterations from `init`.
pub fn run_transport(
    mu: &Marginal,
    nu: &Marginal,
    init: ParticleSystem,
    cfg: &SolverConfig,
) -> Result<TransportRun> {
    cfg.validate(init.len())?;
    check_dim(mu.dim(), init.dim())?;
    check_dim(nu.dim(), init.dim())?;
    let kernels = Kernels {
        x: cfg.tau.resolve(&init.x)?,
        y: cfg.tau.resolve(&init.y)?,
    };
    log::info!(
        "transport run: n = {}, d = {}, tau_x = {:.4}, tau_y = {:.4}",
        init.len(),
        init.dim(),
        kernels.x.tau(),
        kernels.y.tau()
    );
    let every = cfg.snapshot_interval();
    let mut sys = init;
    let mut snapshots = Vec::new();
    let mut energy_trace = Vec::new();
    let mut record = |sys: &ParticleSystem, iter: usize| {
        snapshots.push(Snapshot {
            iter,
            x: sys.x.clone(),
            y: sys.y.clone(),
        });
        let c = Coupling::new(sys.x.clone(), sys.y.clone()).expect("valid system");
        energy_trace.push(EnergyPoint {
            iter,
            energy: energy_estimate(&c, mu, nu, cfg.lambda, &kernels, &cfg.cost),
        });
    };
    record(&sys, 0);

    let mut iteration_seconds = Vec::with_capacity(cfg.iters);
    let mut max_displacement: f64 = 0.0;
    let mut subgradient_events = 0;
    for t in 1..=cfg.iters {
        let start = Instant::now();
        let report = step(&mut sys, mu, nu, cfg, &kernels, t as u64)?;
        iteration_seconds.push(start.elapsed().as_secs_f64());
        if !sys.x.is_finite() || !sys.y.is_finite() || !report.max_displacement.is_finite() {
            log::error!(
                "non-finite positions at iteration {t}; largest displacement so far {max_displacement:.3e}"
            );
            return Err(OtError::BlowUp {
                iter: t,
                dt: cfg.dt,
                lambda: cfg.lambda,
                tau: format!("x: {}, y: {}", kernels.x.tau(), kernels.y.tau()),
                max_displacement,
            });
        }
        max_displacement = max_displacement.max(report.max_displacement);
        subgradient_events += report.subgradient_events;
        if t % every == 0 || t == cfg.iters {
            record(&sys, t);
        }
    }
    if subgradient_events > 0 {
        log::warn!("zero subgradient used {subgradient_events} times at coincident pairs");
    }
    log::info!("largest per-step displacement: {max_displacement:.3e}");
    Ok(TransportRun {
        coupling: sys.into_coupling(),
        snapshots,
        kernels,
        energy_trace,
        iteration_seconds,
        max_displacement,
        subgradient_events,
    })
}

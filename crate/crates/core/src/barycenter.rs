//! Multi-marginal particle system for Wasserstein barycenters.
//!
//! Every particle is a tuple `(X⁽⁰⁾, X⁽¹⁾, …, X⁽ᵐ⁾)`. Block 0 is free: it
//! only feels the cost `Σⱼ λⱼ|x⁽⁰⁾ − x⁽ʲ⁾|²`. Blocks `j ≥ 1` additionally
//! carry a KL penalty of strength `Λⱼ` towards the marginal `μⱼ`. The
//! empirical law of block 0 approximates the barycenter.

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;

use crate::diagnostics::normalize_weights;
use crate::dynamics::{rbm_partition, Bandwidth, EnergyPoint};
use crate::error::{check_dim, invalid, OtError, Result};
use crate::kde::RbfKernel;
use crate::marginals::Marginal;
use crate::points::Points;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterConfig {
    marginals: Vec<Marginal>,
    weights: Vec<f64>,
    relaxations: Vec<f64>,
    pub dt: f64,
    pub iters: usize,
    pub batches: usize,
    pub tau: Bandwidth,
    pub seed: u64,
    pub snapshot_every: Option<usize>,
}

impl BarycenterConfig {
    /// Weights are normalized; every marginal gets the shared relaxation
    /// strength `lambda` (override with [`BarycenterConfig::with_relaxations`]).
    pub fn new(
        marginals: Vec<Marginal>,
        weights: &[f64],
        lambda: f64,
        dt: f64,
        iters: usize,
    ) -> Result<Self> {
        if marginals.len() < 2 {
            return Err(invalid(format!(
                "a barycenter needs at least two marginals, got {}",
                marginals.len()
            )));
        }
        let dim = marginals[0].dim();
        for m in &marginals {
            check_dim(dim, m.dim())?;
        }
        let weights = normalize_weights(weights)?;
        if weights.len() != marginals.len() {
            return Err(invalid(format!(
                "{} marginals but {} weights",
                marginals.len(),
                weights.len()
            )));
        }
        let relaxations = vec![lambda; marginals.len()];
        let cfg = Self {
            marginals,
            weights,
            relaxations,
            dt,
            iters,
            batches: 1,
            tau: Bandwidth::Auto,
            seed: 0,
            snapshot_every: None,
        };
        cfg.check_relaxations()?;
        Ok(cfg)
    }

    pub fn with_relaxations(mut self, relaxations: Vec<f64>) -> Result<Self> {
        if relaxations.len() != self.marginals.len() {
            return Err(invalid(format!(
                "{} marginals but {} relaxation strengths",
                self.marginals.len(),
                relaxations.len()
            )));
        }
        self.relaxations = relaxations;
        self.check_relaxations()?;
        Ok(self)
    }

    fn check_relaxations(&self) -> Result<()> {
        if self.relaxations.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(invalid(format!(
                "relaxation strengths must be non-negative, got {:?}",
                self.relaxations
            )));
        }
        Ok(())
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn relaxations(&self) -> &[f64] {
        &self.relaxations
    }

    pub fn dim(&self) -> usize {
        self.marginals[0].dim()
    }

    pub fn snapshot_interval(&self) -> usize {
        self.snapshot_every.unwrap_or((self.iters / 20).max(1))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.batches == 0 || self.batches > n {
            return Err(invalid(format!(
                "batches ({}) must be between 1 and the particle count ({n})",
                self.batches
            )));
        }
        if self.snapshot_every == Some(0) {
            return Err(invalid("snapshot_every must be at least 1"));
        }
        if let Bandwidth::Fixed(t) = self.tau {
            RbfKernel::new(t)?;
        }
        Ok(())
    }
}

/// `m + 1` blocks of `N` points each; block 0 is the barycenter component.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterSystem {
    pub blocks: Vec<Points>,
}

impl BarycenterSystem {
    pub fn new(blocks: Vec<Points>) -> Result<Self> {
        if blocks.len() < 3 {
            return Err(invalid("need block 0 plus at least two marginal blocks"));
        }
        let (n, d) = (blocks[0].len(), blocks[0].dim());
        if n == 0 {
            return Err(invalid("barycenter system is empty"));
        }
        for b in &blocks {
            check_dim(d, b.dim())?;
            if b.len() != n {
                return Err(invalid("all blocks must hold the same number of particles"));
            }
            if !b.is_finite() {
                return Err(invalid("particle positions must be finite"));
            }
        }
        Ok(Self { blocks })
    }

    /// Blocks `j ≥ 1` are drawn from `inits[j−1]`; block 0 from the
    /// `weights`-mixture of the same samplers.
    pub fn sample(inits: &[Marginal], weights: &[f64], n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("particle count must be at least 1"));
        }
        let w = normalize_weights(weights)?;
        if w.len() != inits.len() {
            return Err(invalid(format!(
                "{} init samplers but {} weights",
                inits.len(),
                w.len()
            )));
        }
        let d = inits[0].dim();
        let mut block0 = Points::zeros(n, d);
        let mut r0 = rng::stream(seed, rng::DOMAIN_INIT, 0);
        let pick = WeightedIndex::new(&w).expect("weights validated");
        for i in 0..n {
            let j = pick.sample(&mut r0);
            check_dim(d, inits[j].dim())?;
            let p = inits[j].sample_with(&mut r0, 1);
            block0.row_mut(i).copy_from_slice(p.row(0));
        }
        let mut blocks = vec![block0];
        for (j, m) in inits.iter().enumerate() {
            blocks.push(m.sample_with(&mut rng::stream(seed, rng::DOMAIN_INIT, j as u64 + 1), n));
        }
        Self::new(blocks)
    }

    pub fn len(&self) -> usize {
        self.blocks[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks[0].is_empty()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].dim()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(Points::is_finite)
    }
}

/// Per-block velocities over `batch` (index 0 is the barycenter block),
/// all evaluated at the batch-entry positions. `kernels[j]` serves block
/// `j + 1`.
pub fn bary_drift(
    sys: &BarycenterSystem,
    batch: &[usize],
    cfg: &BarycenterConfig,
    kernels: &[RbfKernel],
) -> Result<Vec<Points>> {
    let m = cfg.marginals.len();
    if sys.blocks.len() != m + 1 {
        return Err(invalid(format!(
            "system has {} blocks, config expects {}",
            sys.blocks.len(),
            m + 1
        )));
    }
    if kernels.len() != m {
        return Err(invalid(format!("expected {m} kernels, got {}", kernels.len())));
    }
    check_dim(cfg.dim(), sys.dim())?;
    if batch.is_empty() {
        return Err(invalid("batch is empty"));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= sys.len()) {
        return Err(invalid(format!("batch index {bad} out of range")));
    }
    let d = sys.dim();
    let gathered: Vec<Points> = sys.blocks.iter().map(|b| b.gather(batch)).collect();
    let stride = (m + 1) * d;
    let mut out = vec![0.0; batch.len() * stride];
    out.par_chunks_mut(stride).enumerate().for_each_init(
        || vec![0.0; 2 * d],
        |scratch, (l, vel)| {
            let (s_target, s_kde) = scratch.split_at_mut(d);
            let x0 = gathered[0].row(l);
            let (v0, rest) = vel.split_at_mut(d);
            v0.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..m {
                let xj = gathered[j + 1].row(l);
                let lam = cfg.weights[j];
                let vj = &mut rest[j * d..(j + 1) * d];
                for k in 0..d {
                    v0[k] -= 2.0 * lam * (x0[k] - xj[k]);
                    vj[k] = -2.0 * lam * (xj[k] - x0[k]);
                }
                let relax = cfg.relaxations[j];
                if relax != 0.0 {
                    cfg.marginals[j].grad_log_density_into(xj, s_target);
                    kernels[j].grad_log_kde_into(xj, gathered[j + 1].as_slice(), s_kde);
                    for k in 0..d {
                        vj[k] += relax * (s_target[k] - s_kde[k]);
                    }
                }
            }
        },
    );
    let mut blocks: Vec<Points> = (0..=m).map(|_| Points::zeros(batch.len(), d)).collect();
    for (l, vel) in out.chunks_exact(stride).enumerate() {
        for (j, b) in blocks.iter_mut().enumerate() {
            b.row_mut(l).copy_from_slice(&vel[j * d..(j + 1) * d]);
        }
    }
    Ok(blocks)
}

/// One Euler step of the barycenter system over a fresh random partition.
/// Returns the largest single-particle displacement.
pub fn bary_step(
    sys: &mut BarycenterSystem,
    cfg: &BarycenterConfig,
    kernels: &[RbfKernel],
    iteration: u64,
) -> Result<f64> {
    let partition = rbm_partition(sys.len(), cfg.batches, cfg.seed, iteration)?;
    let mut max_disp: f64 = 0.0;
    for batch in &partition {
        let vel = bary_drift(sys, batch, cfg, kernels)?;
        for (block, v) in sys.blocks.iter_mut().zip(&vel) {
            for (l, &i) in batch.iter().enumerate() {
                let mut disp2 = 0.0;
                for (p, dv) in block.row_mut(i).iter_mut().zip(v.row(l)) {
                    let delta = cfg.dt * dv;
                    *p += delta;
                    disp2 += delta * delta;
                }
                max_disp = max_disp.max(disp2.sqrt());
            }
        }
    }
    Ok(max_disp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterSnapshot {
    pub iter: usize,
    pub blocks: Vec<Points>,
}

#[derive(Debug, Clone)]
pub struct BarycenterRun {
    /// Final block-0 positions: the barycenter sample.
    pub sample: Points,
    pub system: BarycenterSystem,
    pub snapshots: Vec<BarycenterSnapshot>,
    /// Kernel of each marginal block `j ≥ 1`.
    pub kernels: Vec<RbfKernel>,
    /// Mean barycenter cost `(1/N) Σᵢ Σⱼ λⱼ|X⁽⁰⁾ᵢ − X⁽ʲ⁾ᵢ|²` at each snapshot.
    pub cost_trace: Vec<EnergyPoint>,
    pub iteration_seconds: Vec<f64>,
    pub max_displacement: f64,
}

fn mean_bary_cost(sys: &BarycenterSystem, weights: &[f64]) -> f64 {
    let n = sys.len();
    let mut total = 0.0;
    for i in 0..n {
        let x0 = sys.blocks[0].row(i);
        for (j, w) in weights.iter().enumerate() {
            let xj = sys.blocks[j + 1].row(i);
            total += w * x0.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    total / n as f64
}

pub fn run_barycenter(cfg: &BarycenterConfig, init: BarycenterSystem) -> Result<BarycenterRun> {
    cfg.validate(init.len())?;
    if init.blocks.len() != cfg.marginals.len() + 1 {
        return Err(invalid(format!(
            "init has {} blocks, config expects {}",
            init.blocks.len(),
            cfg.marginals.len() + 1
        )));
    }
    check_dim(cfg.dim(), init.dim())?;
    let kernels = init.blocks[1..]
        .iter()
        .map(|b| cfg.tau.resolve(b))
        .collect::<Result<Vec<_>>>()?;
    let every = cfg.snapshot_interval();
    let mut sys = init;
    let mut snapshots = vec![BarycenterSnapshot {
        iter: 0,
        blocks: sys.blocks.clone(),
    }];
    let mut cost_trace = vec![EnergyPoint {
        iter: 0,
        energy: mean_bary_cost(&sys, &cfg.weights),
    }];
    let mut iteration_seconds = Vec::with_capacity(cfg.iters);
    let mut max_displacement: f64 = 0.0;
    for t in 1..=cfg.iters {
        let start = Instant::now();
        let disp = bary_step(&mut sys, cfg, &kernels, t as u64)?;
        iteration_seconds.push(start.elapsed().as_secs_f64());
        if !sys.is_finite() || !disp.is_finite() {
            let lambda = cfg.relaxations.iter().cloned().fold(0.0, f64::max);
            return Err(OtError::BlowUp {
                iter: t,
                dt: cfg.dt,
                lambda,
                tau: format!("{:?}", kernels.iter().map(|k| k.tau()).collect::<Vec<_>>()),
                max_displacement,
            });
        }
        max_displacement = max_displacement.max(disp);
        if t % every == 0 || t == cfg.iters {
            snapshots.push(BarycenterSnapshot {
                iter: t,
                blocks: sys.blocks.clone(),
            });
            cost_trace.push(EnergyPoint {
                iter: t,
                energy: mean_bary_cost(&sys, &cfg.weights),
            });
        }
    }
    Ok(BarycenterRun {
        sample: sys.blocks[0].clone(),
        system: sys,
        snapshots,
        kernels,
        cost_trace,
        iteration_seconds,
        max_displacement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(m: f64) -> Marginal {
        Marginal::gaussian(vec![m], 1.0).unwrap()
    }

    fn sys1d(b: &[&[f64]]) -> BarycenterSystem {
        BarycenterSystem::new(b.iter().map(|v| Points::from_scalars(v)).collect()).unwrap()
    }

    fn kern(m: usize) -> Vec<RbfKernel> {
        vec![RbfKernel::new(0.5).unwrap(); m]
    }

    #[test]
    fn coincident_tuple_has_no_block0_drift() {
        let cfg = BarycenterConfig::new(vec![g(-1.0), g(1.0)], &[0.3, 0.7], 5.0, 0.01, 10).unwrap();
        let sys = sys1d(&[&[0.4], &[0.4], &[0.4]]);
        let v = bary_drift(&sys, &[0], &cfg, &kern(2)).unwrap();
        assert_eq!(v[0].as_slice(), &[0.0]);
    }

    #[test]
    fn balanced_pull_cancels() {
        let cfg = BarycenterConfig::new(vec![g(-1.0), g(1.0)], &[0.5, 0.5], 5.0, 0.01, 10).unwrap();
        let sys = sys1d(&[&[0.0], &[-1.0], &[1.0]]);
        let v = bary_drift(&sys, &[0], &cfg, &kern(2)).unwrap();
        assert_eq!(v[0].as_slice(), &[0.0]);
        // Marginal blocks: −2·½·(xⱼ − 0) + 5·(∇log ϱⱼ(xⱼ) − 0).
        assert!((v[1].as_slice()[0] - 1.0).abs() < 1e-14);
        assert!((v[2].as_slice()[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn block0_contracts_to_weighted_mean_with_frozen_blocks() {
        let cfg =
            BarycenterConfig::new(vec![g(0.0), g(0.0), g(0.0)], &[0.2, 0.3, 0.5], 0.0, 0.05, 1).unwrap();
        let mut sys = sys1d(&[&[7.0, -3.0], &[1.0, 2.0], &[-2.0, 0.5], &[4.0, 1.0]]);
        let target = [
            0.2 * 1.0 + 0.3 * -2.0 + 0.5 * 4.0,
            0.2 * 2.0 + 0.3 * 0.5 + 0.5 * 1.0,
        ];
        let mut gap: Vec<f64> = (0..2).map(|i| sys.blocks[0].row(i)[0] - target[i]).collect();
        for _ in 0..60 {
            let v = bary_drift(&sys, &[0, 1], &cfg, &kern(3)).unwrap();
            for i in 0..2 {
                sys.blocks[0].row_mut(i)[0] += cfg.dt * v[0].row(i)[0];
                let new_gap = sys.blocks[0].row(i)[0] - target[i];
                assert!((new_gap - (1.0 - 2.0 * cfg.dt) * gap[i]).abs() < 1e-12);
                gap[i] = new_gap;
            }
        }
        assert!(gap.iter().all(|g| g.abs() < 1e-2));
    }

    #[test]
    fn config_and_system_validation() {
        assert!(BarycenterConfig::new(vec![g(0.0)], &[1.0], 1.0, 0.1, 1).is_err());
        assert!(BarycenterConfig::new(vec![g(0.0), g(1.0)], &[1.0], 1.0, 0.1, 1).is_err());
        assert!(BarycenterConfig::new(vec![g(0.0), g(1.0)], &[1.0, -1.0], 1.0, 0.1, 1).is_err());
        let cfg = BarycenterConfig::new(vec![g(0.0), g(1.0)], &[1.0, 3.0], 1.0, 0.1, 1).unwrap();
        assert_eq!(cfg.weights(), &[0.25, 0.75]);
        assert!(cfg.clone().with_relaxations(vec![1.0]).is_err());
        assert_eq!(
            cfg.with_relaxations(vec![2.0, 3.0]).unwrap().relaxations(),
            &[2.0, 3.0]
        );
        assert!(BarycenterSystem::new(vec![Points::from_scalars(&[0.0]); 2]).is_err());
    }

    #[test]
    fn sampled_block0_lies_between_marginals() {
        let s = BarycenterSystem::sample(&[g(-10.0), g(10.0)], &[0.5, 0.5], 400, 3).unwrap();
        let b0 = s.blocks[0].as_slice();
        let left = b0.iter().filter(|v| **v < 0.0).count();
        assert!((150..250).contains(&left));
        assert_eq!(
            s,
            BarycenterSystem::sample(&[g(-10.0), g(10.0)], &[0.5, 0.5], 400, 3).unwrap()
        );
    }

    #[test]
    fn identical_marginals_give_themselves() {
        let mut cfg = BarycenterConfig::new(vec![g(2.0), g(2.0)], &[0.5, 0.5], 50.0, 0.005, 600).unwrap();
        cfg.seed = 1;
        let init = BarycenterSystem::sample(cfg.marginals(), &[0.5, 0.5], 300, 9).unwrap();
        let run = run_barycenter(&cfg, init).unwrap();
        let (m, s) = crate::diagnostics::mean_std(run.sample.as_slice());
        assert!((m - 2.0).abs() < 0.2, "{m}");
        assert!((s - 1.0).abs() < 0.3, "{s}");
    }
}

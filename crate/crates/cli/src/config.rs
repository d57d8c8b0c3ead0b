//! TOML run configuration.
//!
//! A config names the problem (marginals, initial particles), the solver
//! settings and an output directory. Relative paths are resolved against the
//! directory holding the config file. After [`RunConfig::resolve`] every
//! default is explicit, so the echo written next to the outputs parses back
//! to an identical value.

use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use otflow::{
    image_to_mixture, Bandwidth, BarycenterConfig, CostFunction, GrayImage, Marginal, Points, SolverConfig,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PARTICLES: usize = 1000;
pub const DEFAULT_OUTPUT: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Transport,
    Barycenter,
    Interpolate,
    Diagnose,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Transport => "transport",
            Command::Barycenter => "barycenter",
            Command::Interpolate => "interpolate",
            Command::Diagnose => "diagnose",
        })
    }
}

impl FromStr for Command {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transport" => Ok(Command::Transport),
            "barycenter" => Ok(Command::Barycenter),
            "interpolate" => Ok(Command::Interpolate),
            "diagnose" => Ok(Command::Diagnose),
            _ => bail!("unknown command {s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// A density (or, for initial particles, a point file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MarginalSpec {
    /// Isotropic Gaussian `N(mean, variance·I)`.
    Gaussian {
        mean: Vec<f64>,
        variance: f64,
    },
    Mixture {
        components: Vec<ComponentSpec>,
    },
    /// Grayscale image (PNG or whitespace matrix) smoothed into a mixture.
    Image {
        path: PathBuf,
        bandwidth: f64,
    },
    /// Explicit initial positions from a point-cloud CSV. Only valid under `init`.
    Points {
        path: PathBuf,
    },
}

impl MarginalSpec {
    fn resolve_paths(&mut self, base: &Path) {
        match self {
            MarginalSpec::Image { path, .. } | MarginalSpec::Points { path } => {
                *path = join(base, path);
            }
            _ => {}
        }
    }

    fn check(&self, key: &str, allow_points: bool) -> Result<()> {
        match self {
            MarginalSpec::Points { path } if !allow_points => {
                bail!(
                    "{key}: kind \"points\" ({}) is only allowed for initial particles",
                    path.display()
                )
            }
            MarginalSpec::Image { path, .. } | MarginalSpec::Points { path } => {
                if !path.is_file() {
                    bail!("{key}.path: file not found: {}", path.display());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, key: &str) -> Result<Marginal> {
        let m = match self {
            MarginalSpec::Gaussian { mean, variance } => Marginal::gaussian(mean.clone(), *variance),
            MarginalSpec::Mixture { components } => Marginal::mixture(
                components
                    .iter()
                    .map(|c| otflow::Component {
                        weight: c.weight,
                        mean: c.mean.clone(),
                        variance: c.variance,
                    })
                    .collect(),
            ),
            MarginalSpec::Image { path, bandwidth } => {
                let img = GrayImage::load(path).with_context(|| format!("{key}.path"))?;
                image_to_mixture(&img, *bandwidth)
            }
            MarginalSpec::Points { .. } => bail!("{key}: a point file is not a density"),
        };
        m.with_context(|| format!("{key}: invalid marginal"))
    }

    /// Reads the positions of a `points` spec; `n` is the expected count.
    pub fn load_points(&self, key: &str, n: usize) -> Result<Points> {
        let MarginalSpec::Points { path } = self else {
            bail!("{key}: not a point file");
        };
        let file = std::fs::File::open(path).with_context(|| format!("{key}.path: {}", path.display()))?;
        let pts = otflow::io::read_points(std::io::BufReader::new(file))
            .with_context(|| format!("{key}.path: {}", path.display()))?;
        if pts.len() != n {
            bail!("{key}.path holds {} points but init.particles is {n}", pts.len());
        }
        Ok(pts)
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            MarginalSpec::Gaussian { mean, .. } => Some(mean.len()),
            MarginalSpec::Mixture { components } => components.first().map(|c| c.mean.len()),
            MarginalSpec::Image { .. } => Some(2),
            MarginalSpec::Points { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Defaults to `source`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<MarginalSpec>,
    /// Defaults to `target`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<MarginalSpec>,
}

fn default_particles() -> usize {
    DEFAULT_PARTICLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarycenterSpec {
    #[serde(default = "default_particles")]
    pub particles: usize,
    pub marginals: Vec<MarginalSpec>,
    pub weights: Vec<f64>,
    /// Per-marginal Λⱼ; defaults to `solver.lambda` for every marginal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaxations: Option<Vec<f64>>,
    /// Per-marginal init samplers for blocks `j ≥ 1`; default to the marginals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<MarginalSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateSpec {
    /// Snapshot or coupling CSV; the last iteration is used.
    pub coupling: PathBuf,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSpec {
    pub coupling: PathBuf,
    #[serde(default = "default_cap")]
    pub assignment_cap: usize,
    #[serde(default)]
    pub cost: CostFunction,
}

fn default_cap() -> usize {
    otflow::diagnostics::DEFAULT_ASSIGNMENT_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<MarginalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<MarginalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barycenter: Option<BarycenterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpolate: Option<InterpolateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnose: Option<DiagnoseSpec>,
}

fn default_output() -> PathBuf {
    PathBuf::from(DEFAULT_OUTPUT)
}

fn join(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    };
    let mut out = PathBuf::new();
    for c in joined.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                out.pop();
            }
            c => out.push(c),
        }
    }
    out
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads `path`, applies `overrides`, resolves defaults and validates.
    pub fn load(path: &Path, command: Command, overrides: &Overrides) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            base
        };
        Self::from_toml(&text)
            .and_then(|c| c.resolve(command, base, overrides))
            .with_context(|| format!("config {}", path.display()))
    }

    /// Fills every default, makes paths absolute relative to `base`, and
    /// validates the sections `command` needs.
    pub fn resolve(mut self, command: Command, base: &Path, overrides: &Overrides) -> Result<Self> {
        if let Some(c) = self.command {
            if c != command {
                bail!("command = \"{c}\" in the config but the subcommand is {command}");
            }
        }
        self.command = Some(command);
        let base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
        if let Some(out) = &overrides.output {
            self.output = out.clone();
        }
        self.output = join(&base, &self.output);
        for spec in [&mut self.source, &mut self.target].into_iter().flatten() {
            spec.resolve_paths(&base);
        }
        if let Some(init) = &mut self.init {
            for spec in [&mut init.x, &mut init.y].into_iter().flatten() {
                spec.resolve_paths(&base);
            }
        }
        if let Some(b) = &mut self.barycenter {
            for spec in b.marginals.iter_mut().chain(b.init.iter_mut().flatten()) {
                spec.resolve_paths(&base);
            }
        }
        if let Some(i) = &mut self.interpolate {
            i.coupling = join(&base, &i.coupling);
        }
        if let Some(d) = &mut self.diagnose {
            d.coupling = join(&base, &d.coupling);
        }
        if let (Some(seed), Some(solver)) = (overrides.seed, &mut self.solver) {
            solver.seed = seed;
        }
        if let Some(solver) = &mut self.solver {
            solver.snapshot_every = Some(solver.snapshot_interval());
        }
        match command {
            Command::Transport => self.resolve_transport()?,
            Command::Barycenter => self.resolve_barycenter()?,
            Command::Interpolate => {
                let i = self
                    .interpolate
                    .as_ref()
                    .ok_or_else(|| anyhow!("missing [interpolate] section"))?;
                if !i.coupling.is_file() {
                    bail!("interpolate.coupling: file not found: {}", i.coupling.display());
                }
                if i.times.is_empty() {
                    bail!("interpolate.times must list at least one time");
                }
                if let Some(t) = i.times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                    bail!("interpolate.times: {t} lies outside [0, 1]");
                }
            }
            Command::Diagnose => {
                let d = self
                    .diagnose
                    .as_ref()
                    .ok_or_else(|| anyhow!("missing [diagnose] section"))?;
                if !d.coupling.is_file() {
                    bail!("diagnose.coupling: file not found: {}", d.coupling.display());
                }
                d.cost.validate().context("diagnose.cost")?;
                for (key, spec) in [("source", &self.source), ("target", &self.target)] {
                    if let Some(s) = spec {
                        s.check(key, false)?;
                    }
                }
            }
        }
        Ok(self)
    }

    fn resolve_transport(&mut self) -> Result<()> {
        let source = self
            .source
            .clone()
            .ok_or_else(|| anyhow!("missing [source] marginal"))?;
        let target = self
            .target
            .clone()
            .ok_or_else(|| anyhow!("missing [target] marginal"))?;
        source.check("source", false)?;
        target.check("target", false)?;
        let init = self.init.get_or_insert(InitSpec {
            particles: DEFAULT_PARTICLES,
            x: None,
            y: None,
        });
        init.x.get_or_insert(source.clone());
        init.y.get_or_insert(target.clone());
        init.x.as_ref().unwrap().check("init.x", true)?;
        init.y.as_ref().unwrap().check("init.y", true)?;
        let n = init.particles;
        if n < 2 {
            bail!("init.particles must be at least 2, got {n}");
        }
        let dims = [
            ("source", source.dim()),
            ("target", target.dim()),
            ("init.x", init.x.as_ref().unwrap().dim()),
            ("init.y", init.y.as_ref().unwrap().dim()),
        ];
        check_dims(&dims)?;
        let solver = self
            .solver
            .as_ref()
            .ok_or_else(|| anyhow!("missing [solver] section"))?;
        check_solver(solver, n)
    }

    fn resolve_barycenter(&mut self) -> Result<()> {
        let solver = self
            .solver
            .clone()
            .ok_or_else(|| anyhow!("missing [solver] section"))?;
        let b = self
            .barycenter
            .as_mut()
            .ok_or_else(|| anyhow!("missing [barycenter] section"))?;
        if b.marginals.len() < 2 {
            bail!(
                "barycenter.marginals needs at least two entries, got {}",
                b.marginals.len()
            );
        }
        if b.weights.len() != b.marginals.len() {
            bail!(
                "barycenter.weights has {} entries but barycenter.marginals has {}",
                b.weights.len(),
                b.marginals.len()
            );
        }
        let relax = b
            .relaxations
            .get_or_insert_with(|| vec![solver.lambda; b.marginals.len()]);
        if relax.len() != b.marginals.len() {
            bail!(
                "barycenter.relaxations has {} entries but barycenter.marginals has {}",
                relax.len(),
                b.marginals.len()
            );
        }
        let init = b.init.get_or_insert_with(|| b.marginals.clone());
        if init.len() != b.marginals.len() {
            bail!(
                "barycenter.init has {} entries but barycenter.marginals has {}",
                init.len(),
                b.marginals.len()
            );
        }
        let mut dims = Vec::new();
        for (j, m) in b.marginals.iter().enumerate() {
            m.check(&format!("barycenter.marginals[{j}]"), false)?;
            dims.push((format!("barycenter.marginals[{j}]"), m.dim()));
        }
        for (j, m) in init.iter().enumerate() {
            m.check(&format!("barycenter.init[{j}]"), false)?;
            dims.push((format!("barycenter.init[{j}]"), m.dim()));
        }
        let dims: Vec<(&str, Option<usize>)> = dims.iter().map(|(k, d)| (k.as_str(), *d)).collect();
        check_dims(&dims)?;
        if b.particles < 2 {
            bail!("barycenter.particles must be at least 2, got {}", b.particles);
        }
        if solver.cost != CostFunction::Quadratic {
            bail!("solver.cost: the barycenter system only supports the quadratic cost");
        }
        if solver.batches > b.particles {
            bail!(
                "solver.batches ({}) exceeds barycenter.particles ({})",
                solver.batches,
                b.particles
            );
        }
        let n = b.particles;
        check_solver(&solver, n)
    }

    pub fn solver(&self) -> Result<&SolverConfig> {
        self.solver
            .as_ref()
            .ok_or_else(|| anyhow!("missing [solver] section"))
    }

    /// The core barycenter configuration described by `[barycenter]` and `[solver]`.
    pub fn barycenter_config(&self) -> Result<BarycenterConfig> {
        let solver = self.solver()?;
        let b = self
            .barycenter
            .as_ref()
            .ok_or_else(|| anyhow!("missing [barycenter] section"))?;
        let marginals = b
            .marginals
            .iter()
            .enumerate()
            .map(|(j, m)| m.build(&format!("barycenter.marginals[{j}]")))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = BarycenterConfig::new(marginals, &b.weights, solver.lambda, solver.dt, solver.iters)
            .context("barycenter")?;
        if let Some(r) = &b.relaxations {
            cfg = cfg
                .with_relaxations(r.clone())
                .context("barycenter.relaxations")?;
        }
        cfg.batches = solver.batches;
        cfg.tau = solver.tau;
        cfg.seed = solver.seed;
        cfg.snapshot_every = solver.snapshot_every;
        Ok(cfg)
    }
}

fn check_dims(dims: &[(&str, Option<usize>)]) -> Result<()> {
    let mut known = dims.iter().filter_map(|(k, d)| d.map(|d| (*k, d)));
    if let Some((k0, d0)) = known.next() {
        if let Some((k, d)) = known.find(|(_, d)| *d != d0) {
            bail!("{k} has dimension {d} but {k0} has dimension {d0}");
        }
    }
    Ok(())
}

fn check_solver(s: &SolverConfig, n: usize) -> Result<()> {
    if s.batches > n {
        bail!("solver.batches ({}) exceeds init.particles ({n})", s.batches);
    }
    if s.batches == 0 {
        bail!("solver.batches must be at least 1");
    }
    if !(s.lambda >= 0.0 && s.lambda.is_finite()) {
        bail!("solver.lambda must be a non-negative number, got {}", s.lambda);
    }
    if !(s.dt > 0.0 && s.dt.is_finite()) {
        bail!("solver.dt must be positive, got {}", s.dt);
    }
    if let Bandwidth::Fixed(t) = s.tau {
        if !(t > 0.0 && t.is_finite()) {
            bail!("solver.tau must be \"auto\" or a positive number, got {t}");
        }
    }
    s.cost.validate().context("solver.cost")?;
    s.validate(n).context("solver")?;
    Ok(())
}

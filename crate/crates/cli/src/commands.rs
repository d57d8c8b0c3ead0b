use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use otflow::diagnostics::{
    discordant_fraction, exact_assignment, gaussian_barycenter_1d, gaussian_map_1d, interpolate, linear_fit,
    marginal_fit, mean_std, pearson, sorted_coupling_1d,
};
use otflow::marginals::MarginalKind;
use otflow::{
    io, run_barycenter, run_transport, BarycenterSystem, Coupling, Marginal, ParticleSystem, Points,
};
use serde_json::{json, Value};

use crate::config::{Command, MarginalSpec, RunConfig};

/// Files written by a command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub output: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Runs the command recorded in `cfg`. Machine-readable diagnose records go to `stdout`.
pub fn run(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Outcome> {
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    match cfg
        .command
        .ok_or_else(|| anyhow!("config has no resolved command"))?
    {
        Command::Transport => cmd_transport(cfg),
        Command::Barycenter => cmd_barycenter(cfg),
        Command::Interpolate => cmd_interpolate(cfg),
        Command::Diagnose => cmd_diagnose(cfg, stdout),
    }
}

fn create(dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    files.push(path);
    Ok(BufWriter::new(f))
}

fn write_json(dir: &Path, name: &str, value: &Value, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut w = create(dir, name, files)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_echo(cfg: &RunConfig, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut w = create(&cfg.output, "config.toml", files)?;
    w.write_all(cfg.to_toml()?.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn metadata(cfg: &RunConfig, extra: Value) -> Result<Value> {
    let mut v = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command.map(|c| c.to_string()),
        "threads": rayon::current_num_threads(),
        "config": serde_json::to_value(cfg)?,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    Ok(v)
}

fn timings(seconds: &[f64]) -> Value {
    json!({
        "total_seconds": seconds.iter().sum::<f64>(),
        "iteration_seconds": seconds,
    })
}

fn initial_system(cfg: &RunConfig) -> Result<ParticleSystem> {
    let init = cfg
        .init
        .as_ref()
        .ok_or_else(|| anyhow!("missing [init] section"))?;
    let n = init.particles;
    let seed = cfg.solver()?.seed;
    let x_spec = init.x.as_ref().ok_or_else(|| anyhow!("init.x is unresolved"))?;
    let y_spec = init.y.as_ref().ok_or_else(|| anyhow!("init.y is unresolved"))?;
    let density = |spec: &MarginalSpec, key: &str| match spec {
        MarginalSpec::Points { .. } => Ok(None),
        s => s.build(key).map(Some),
    };
    let sys = match (density(x_spec, "init.x")?, density(y_spec, "init.y")?) {
        (Some(dx), Some(dy)) => ParticleSystem::sample(&dx, &dy, n, seed)?,
        (dx, dy) => {
            let x = match dx {
                Some(m) => m.sample(n, seed)?,
                None => x_spec.load_points("init.x", n)?,
            };
            let y = match dy {
                Some(m) => m.sample(n, seed.wrapping_add(1))?,
                None => y_spec.load_points("init.y", n)?,
            };
            ParticleSystem::new(x, y)?
        }
    };
    Ok(sys)
}

pub fn cmd_transport(cfg: &RunConfig) -> Result<Outcome> {
    let solver = cfg.solver()?;
    let mu = cfg
        .source
        .as_ref()
        .ok_or_else(|| anyhow!("missing [source]"))?
        .build("source")?;
    let nu = cfg
        .target
        .as_ref()
        .ok_or_else(|| anyhow!("missing [target]"))?
        .build("target")?;
    let init = initial_system(cfg)?;
    let start = Instant::now();
    let run = run_transport(&mu, &nu, init, solver).context("transport run failed")?;
    let wall = start.elapsed().as_secs_f64();

    let dir = &cfg.output;
    let mut files = Vec::new();
    let mut w = create(dir, "snapshots.csv", &mut files)?;
    io::write_transport_snapshots(&mut w, &run.snapshots)?;
    w.flush()?;
    let mut w = create(dir, "coupling.csv", &mut files)?;
    io::write_coupling(&mut w, solver.iters, &run.coupling)?;
    w.flush()?;
    write_echo(cfg, &mut files)?;

    let mut extra = json!({
        "tau": { "x": run.kernels.x.tau(), "y": run.kernels.y.tau() },
        "run_seconds": wall,
        "energy_trace": run.energy_trace.iter().map(|e| json!({"iter": e.iter, "energy": e.energy})).collect::<Vec<_>>(),
        "max_displacement": run.max_displacement,
        "subgradient_events": run.subgradient_events,
    });
    merge(&mut extra, timings(&run.iteration_seconds));
    write_json(dir, "metadata.json", &metadata(cfg, extra)?, &mut files)?;

    let mut per_snapshot = Vec::new();
    for (s, e) in run.snapshots.iter().zip(&run.energy_trace) {
        per_snapshot.push(json!({
            "iter": s.iter,
            "energy": e.energy,
            "w2_marginal_x": marginal_fit(&s.x, &mu)?,
            "w2_marginal_y": marginal_fit(&s.y, &nu)?,
        }));
    }
    let mut report = json!({ "snapshots": per_snapshot });
    if run.coupling.dim() == 1 {
        let (x, y) = (run.coupling.x.as_slice(), run.coupling.y.as_slice());
        let fit = linear_fit(x, y)?;
        report["final"] = json!({
            "slope": fit.slope,
            "intercept": fit.intercept,
            "pearson": pearson(x, y)?,
            "discordant_fraction": discordant_fraction(x, y)?,
        });
    }
    write_json(dir, "diagnostics.json", &report, &mut files)?;
    log::info!("transport finished in {wall:.2} s; outputs in {}", dir.display());
    Ok(Outcome {
        output: dir.clone(),
        files,
    })
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        a.extend(b);
    }
}

fn gaussian_1d(m: &Marginal) -> Option<(f64, f64)> {
    match (m.kind(), m.dim(), m.components()) {
        (MarginalKind::Gaussian, 1, [c]) => Some((c.mean[0], c.variance.sqrt())),
        _ => None,
    }
}

pub fn cmd_barycenter(cfg: &RunConfig) -> Result<Outcome> {
    let bcfg = cfg.barycenter_config()?;
    let spec = cfg.barycenter.as_ref().expect("resolved");
    let inits = spec
        .init
        .as_ref()
        .unwrap_or(&spec.marginals)
        .iter()
        .enumerate()
        .map(|(j, m)| m.build(&format!("barycenter.init[{j}]")))
        .collect::<Result<Vec<_>>>()?;
    let init = BarycenterSystem::sample(&inits, bcfg.weights(), spec.particles, bcfg.seed)?;
    let start = Instant::now();
    let run = run_barycenter(&bcfg, init).context("barycenter run failed")?;
    let wall = start.elapsed().as_secs_f64();

    let dir = &cfg.output;
    let mut files = Vec::new();
    let mut w = create(dir, "snapshots.csv", &mut files)?;
    io::write_barycenter_snapshots(&mut w, &run.snapshots)?;
    w.flush()?;
    let mut w = create(dir, "barycenter.csv", &mut files)?;
    io::write_points(&mut w, &run.sample, None)?;
    w.flush()?;
    write_echo(cfg, &mut files)?;

    let mut extra = json!({
        "tau": run.kernels.iter().map(|k| k.tau()).collect::<Vec<_>>(),
        "weights": bcfg.weights(),
        "relaxations": bcfg.relaxations(),
        "run_seconds": wall,
        "energy_trace": run.cost_trace.iter().map(|e| json!({"iter": e.iter, "energy": e.energy})).collect::<Vec<_>>(),
        "max_displacement": run.max_displacement,
    });
    merge(&mut extra, timings(&run.iteration_seconds));
    write_json(dir, "metadata.json", &metadata(cfg, extra)?, &mut files)?;

    let mut per_snapshot = Vec::new();
    for (s, e) in run.snapshots.iter().zip(&run.cost_trace) {
        let fits = s.blocks[1..]
            .iter()
            .zip(bcfg.marginals())
            .map(|(b, m)| marginal_fit(b, m))
            .collect::<otflow::Result<Vec<_>>>()?;
        per_snapshot.push(json!({ "iter": s.iter, "energy": e.energy, "w2_marginals": fits }));
    }
    let stats: Vec<(f64, f64)> = (0..run.sample.dim())
        .map(|k| mean_std(&run.sample.coordinate(k)))
        .collect();
    let mut report = json!({
        "snapshots": per_snapshot,
        "barycenter": {
            "mean": stats.iter().map(|s| s.0).collect::<Vec<_>>(),
            "std": stats.iter().map(|s| s.1).collect::<Vec<_>>(),
        },
    });
    if let Some(params) = bcfg
        .marginals()
        .iter()
        .map(gaussian_1d)
        .collect::<Option<Vec<_>>>()
    {
        let (m, s) = gaussian_barycenter_1d(&params, bcfg.weights())?;
        report["oracle"] = json!({ "mean": m, "std": s });
    }
    write_json(dir, "diagnostics.json", &report, &mut files)?;
    log::info!("barycenter finished in {wall:.2} s; outputs in {}", dir.display());
    Ok(Outcome {
        output: dir.clone(),
        files,
    })
}

fn read_coupling(path: &Path) -> Result<Coupling> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    io::read_coupling(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn cmd_interpolate(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg
        .interpolate
        .as_ref()
        .ok_or_else(|| anyhow!("missing [interpolate] section"))?;
    let c = read_coupling(&spec.coupling)?;
    let dir = &cfg.output;
    let mut files = Vec::new();
    for (k, &t) in spec.times.iter().enumerate() {
        let pts = interpolate(&c, t)?;
        let mut w = create(dir, &format!("interp_{k:03}.csv"), &mut files)?;
        io::write_points(&mut w, &pts, Some(t))?;
        w.flush()?;
    }
    write_echo(cfg, &mut files)?;
    let extra = json!({ "particles": c.len(), "dim": c.dim(), "times": spec.times });
    write_json(dir, "metadata.json", &metadata(cfg, extra)?, &mut files)?;
    Ok(Outcome {
        output: dir.clone(),
        files,
    })
}

pub fn cmd_diagnose(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Outcome> {
    let spec = cfg
        .diagnose
        .as_ref()
        .ok_or_else(|| anyhow!("missing [diagnose] section"))?;
    let c = read_coupling(&spec.coupling)?;
    let cost = spec.cost;
    let mut records = Vec::new();
    let coupling_cost = c.mean_cost(&cost);
    records.push(
        json!({ "check": "coupling_cost", "particles": c.len(), "dim": c.dim(), "cost": coupling_cost }),
    );

    if c.dim() == 1 {
        let (x, y) = (c.x.as_slice(), c.y.as_slice());
        let (_, oracle) = sorted_coupling_1d(x, y, &cost)?;
        records.push(json!({ "check": "sorted_oracle", "cost": oracle, "gap": coupling_cost - oracle }));
        let fit = linear_fit(x, y)?;
        records.push(json!({
            "check": "linear_fit",
            "slope": fit.slope,
            "intercept": fit.intercept,
            "pearson": pearson(x, y).ok(),
            "discordant_fraction": discordant_fraction(x, y)?,
        }));
    }
    if c.len() <= spec.assignment_cap {
        let a = exact_assignment(&c.x, &c.y, &cost, spec.assignment_cap)?;
        records.push(json!({ "check": "exact_assignment", "cost": a.cost, "gap": coupling_cost - a.cost }));
    } else {
        records.push(json!({
            "check": "exact_assignment",
            "skipped": format!("{} particles exceed assignment_cap {}", c.len(), spec.assignment_cap),
        }));
    }
    let mu = cfg.source.as_ref().map(|s| s.build("source")).transpose()?;
    let nu = cfg.target.as_ref().map(|s| s.build("target")).transpose()?;
    for (side, m, pts) in [("x", &mu, &c.x), ("y", &nu, &c.y)] {
        if let Some(m) = m {
            records.push(json!({ "check": "marginal_fit", "side": side, "w2": marginal_fit(pts, m)? }));
        }
    }
    if let (Some(a), Some(b)) = (
        mu.as_ref().and_then(gaussian_1d),
        nu.as_ref().and_then(gaussian_1d),
    ) {
        let map = gaussian_map_1d(a, b)?;
        records.push(json!({ "check": "gaussian_map", "slope": map.slope, "intercept": map.intercept }));
    }

    for r in &records {
        writeln!(stdout, "{}", serde_json::to_string(r)?)?;
    }
    let dir = &cfg.output;
    let mut files = Vec::new();
    write_json(dir, "diagnostics.json", &Value::Array(records), &mut files)?;
    write_echo(cfg, &mut files)?;
    Ok(Outcome {
        output: dir.clone(),
        files,
    })
}

/// Convenience for tests and benches: points of one CSV column block.
pub fn read_points(path: &Path) -> Result<Points> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(io::read_points(BufReader::new(f))?)
}

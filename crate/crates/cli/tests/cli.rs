use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use otflow_cli::config::Command as Cmd;
use otflow_cli::{Overrides, RunConfig};

const TRANSPORT: &str = r#"
command = "transport"
output = "out"

[source]
kind = "gaussian"
mean = [-1.0, 0.5]
variance = 1.0

[target]
kind = "gaussian"
mean = [2.0, 1.0]
variance = 0.5

[init]
particles = 60

[solver]
lambda = 20.0
dt = 0.01
iters = 40
batches = 3
seed = 5
"#;

fn otflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otflow"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn numbers(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .flat_map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn transport_outputs_are_deterministic_and_thread_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", TRANSPORT);
    let cfg = cfg.to_str().unwrap();
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        ok(&otflow(&[
            "transport",
            "--config",
            cfg,
            "--threads",
            threads,
            "--out",
            out,
        ]));
    }
    for name in ["snapshots.csv", "coupling.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs between identical runs");
        let a = numbers(&dir.path().join("a").join(name));
        let c = numbers(&dir.path().join("c").join(name));
        assert_eq!(a.len(), c.len());
        let worst = a.iter().zip(&c).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{name}: threads 1 vs 4 differ by {worst}");
    }
    let header = fs::read_to_string(dir.path().join("a/snapshots.csv")).unwrap();
    assert!(header.starts_with("iter,particle,x0,x1,y0,y1\n0,0,"));

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["iteration_seconds"].as_array().unwrap().len(), 40);
    assert!(meta["tau"]["x"].as_f64().unwrap() > 0.0);
    assert_eq!(meta["config"]["solver"]["snapshot_every"], 2);
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/diagnostics.json")).unwrap()).unwrap();
    let snaps = diag["snapshots"].as_array().unwrap();
    assert_eq!(snaps.len(), 21);
    for s in snaps {
        for key in ["energy", "w2_marginal_x", "w2_marginal_y"] {
            assert!(s[key].as_f64().unwrap().is_finite(), "{key} in {s}");
        }
        assert!(s["w2_marginal_y"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn echoed_config_reparses_to_the_same_run_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "run.toml", TRANSPORT);
    ok(&otflow(&[
        "transport",
        "--config",
        path.to_str().unwrap(),
        "--seed",
        "9",
    ]));
    let overrides = Overrides {
        seed: Some(9),
        output: None,
    };
    let original = RunConfig::load(&path, Cmd::Transport, &overrides).unwrap();
    let echo = dir.path().join("out/config.toml");
    let again = RunConfig::load(&echo, Cmd::Transport, &Overrides::default()).unwrap();
    assert_eq!(again, original);
    assert_eq!(again.solver().unwrap().seed, 9);
}

#[test]
fn interpolation_endpoints_reproduce_the_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let coupling = "iter,particle,x0,y0\n7,0,0.5,3.25\n7,1,-1.0,2.0\n7,2,0.125,-4.0\n";
    fs::write(dir.path().join("coupling.csv"), coupling).unwrap();
    let cfg = write_config(
        dir.path(),
        "interp.toml",
        "output = \"interp\"\n[interpolate]\ncoupling = \"coupling.csv\"\ntimes = [0.0, 0.5, 1.0]\n",
    );
    ok(&otflow(&["interpolate", "--config", cfg.to_str().unwrap()]));
    let col = |k: usize| -> Vec<f64> {
        let text = fs::read_to_string(dir.path().join(format!("interp/interp_{k:03}.csv"))).unwrap();
        assert!(text.starts_with("t,particle,x0\n"));
        text.lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect()
    };
    assert_eq!(col(0), vec![0.5, -1.0, 0.125]);
    assert_eq!(col(2), vec![3.25, 2.0, -4.0]);
    assert_eq!(col(1), vec![1.875, 0.5, -1.9375]);
}

#[test]
fn diagnose_identity_coupling_reports_zero_cost() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("iter,particle,x0,x1,y0,y1\n");
    for i in 0..12 {
        let (a, b) = (i as f64 * 0.3 - 1.0, (i * i) as f64 * 0.01);
        csv.push_str(&format!("0,{i},{a},{b},{a},{b}\n"));
    }
    fs::write(dir.path().join("id.csv"), csv).unwrap();
    let cfg = write_config(
        dir.path(),
        "d.toml",
        "output = \"diag\"\n[diagnose]\ncoupling = \"id.csv\"\n",
    );
    let out = otflow(&["diagnose", "--config", cfg.to_str().unwrap()]);
    ok(&out);
    let records: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let find = |check: &str| records.iter().find(|r| r["check"] == check).unwrap().clone();
    assert_eq!(find("coupling_cost")["cost"].as_f64(), Some(0.0));
    assert_eq!(find("exact_assignment")["cost"].as_f64(), Some(0.0));
    assert!(dir.path().join("diag/diagnostics.json").is_file());
}

#[test]
fn barycenter_command_writes_block_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.toml",
        r#"
output = "bary"
[barycenter]
particles = 40
weights = [1.0, 3.0]
marginals = [
    { kind = "gaussian", mean = [-2.0], variance = 1.0 },
    { kind = "gaussian", mean = [2.0], variance = 1.0 },
]
[solver]
lambda = 5.0
dt = 0.01
iters = 30
"#,
    );
    ok(&otflow(&["barycenter", "--config", cfg.to_str().unwrap()]));
    let snaps = fs::read_to_string(dir.path().join("bary/snapshots.csv")).unwrap();
    assert!(snaps.starts_with("iter,particle,block,x0\n0,0,0,"));
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bary/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["oracle"]["mean"].as_f64(), Some(1.0));
    assert_eq!(numbers(&dir.path().join("bary/barycenter.csv")).len(), 80);
}

#[test]
fn invalid_configs_exit_nonzero_with_key_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        &TRANSPORT.replace("particles = 60", "particles = 2"),
    );
    let out = otflow(&["transport", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("solver.batches (3)") && err.contains("init.particles (2)"),
        "{err}"
    );

    let cfg = write_config(dir.path(), "typo.toml", &TRANSPORT.replace("iters", "iterations"));
    let out = otflow(&["transport", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("iterations"));

    let out = otflow(&[
        "barycenter",
        "--config",
        dir.path().join("bad.toml").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn blow_up_is_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = TRANSPORT
        .replace("dt = 0.01", "dt = 1000.0")
        .replace("iters = 40", "iters = 400");
    let cfg = write_config(dir.path(), "boom.toml", &text);
    let out = otflow(&["transport", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("numerical blow-up"));
}

#[test]
fn plot_script_is_printed() {
    let out = otflow(&["plot-script", "transport", "--dim", "2"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("coupling.csv"));
}

#[test]
fn shipped_configs_parse() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (name, cmd) in [
        ("gauss1d.toml", Cmd::Transport),
        ("mixture1d.toml", Cmd::Transport),
        ("gauss2d.toml", Cmd::Transport),
        ("image2d.toml", Cmd::Transport),
        ("barycenter1d.toml", Cmd::Barycenter),
    ] {
        RunConfig::load(&configs.join(name), cmd, &Overrides::default())
            .unwrap_or_else(|e| panic!("{name}: {e:#}"));
    }
}

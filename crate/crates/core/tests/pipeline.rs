use std::path::Path;
use std::process::Command;

use gkdv_lab::evolve::evolve;
use gkdv_lab::harness::{
    emit_report, run_experiment, run_instability, sweep, ExperimentConfig, RunManifest,
    MANIFEST_FILE,
};
use gkdv_lab::exec::Execution;
use gkdv_lab::io;
use gkdv_lab::{ground_state, GridSpec};

fn small(n: u64) -> ExperimentConfig {
    ExperimentConfig {
        grid: GridSpec::centered(60.0, 1024).unwrap(),
        t_max: 0.3,
        ..ExperimentConfig::instability(n)
    }
}

fn strip_time(mut m: RunManifest) -> RunManifest {
    m.created_unix = 0;
    m
}

#[test]
fn supercritical_mass_halts_early() {
    let cfg = ExperimentConfig {
        grid: GridSpec::centered(60.0, 1024).unwrap(),
        t_max: 10.0,
        ..Default::default()
    };
    let gs = ground_state(5, 1.0, cfg.grid).unwrap();
    let u0 = gs.q.scale(3.0);
    let traj = evolve(&u0, &cfg.evolver_config(u0.sup_norm()), &mut []).unwrap();
    assert!(traj.halt.is_blowup_signal(), "{:?}", traj.halt);
    assert!(traj.t_end() < cfg.t_max);
}

#[test]
fn run_directory_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (_, ma) = run_instability(&small(10), Some(&a)).unwrap();
    let (_, mb) = run_instability(&small(10), Some(&b)).unwrap();
    assert_eq!(strip_time(ma.clone()), strip_time(mb));
    for f in &ma.files {
        let bytes_a = std::fs::read(a.join(f)).unwrap();
        let bytes_b = std::fs::read(b.join(f)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{f} differs between runs");
    }
    let back: RunManifest = io::read_json(&a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(back, ma);
    assert!(ma.files.iter().any(|f| f == "functionals.csv"));
    assert!(ma.initial.b0 < 1.0);
    assert!(ma.metrics.max_orthogonality_residual < 1e-10);
    let table = io::read_columns(&a.join("modulation.csv")).unwrap();
    assert_eq!(
        table.0,
        ["t", "s", "lambda", "x", "eps_l2", "eps_h1", "dlam", "dx", "resQ3", "resQy"]
    );
}

#[test]
fn sequential_and_parallel_analysis_agree() {
    let cfg = small(12);
    let seq = run_experiment(&cfg, Execution::Sequential).unwrap();
    let par = run_experiment(&cfg, Execution::Parallel).unwrap();
    assert_eq!(seq.metrics, par.metrics);
    assert_eq!(seq.modulated.lambda, par.modulated.lambda);
    assert_eq!(seq.modulated.x, par.modulated.x);
}

#[test]
fn sweep_isolates_failures_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = small(10);
    bad.n = 2;
    let configs = [small(10), bad, small(16)];
    let entries = sweep(&configs, 2, Some(dir.path())).unwrap();
    assert!(entries[0].manifest.is_some() && entries[2].manifest.is_some());
    assert!(entries[1].error.as_deref().unwrap().contains("b₀"));

    let serial = sweep(&configs, 1, None).unwrap();
    for (x, y) in entries.iter().zip(&serial) {
        assert_eq!(
            x.manifest.as_ref().map(|m| &m.metrics),
            y.manifest.as_ref().map(|m| &m.metrics)
        );
    }

    let summary = io::read_columns(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.1[0].len(), 2);

    let out = dir.path().join("report");
    let report = emit_report(dir.path(), &out).unwrap();
    assert_eq!(report.runs.len(), 2);
    for f in &report.files {
        assert!(out.join(f).exists());
    }
    let k = io::read_columns(&out.join("k_series.csv")).unwrap();
    assert_eq!(k.0, ["run", "s", "K_A", "dKds"]);
}

#[test]
fn report_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(dir.path(), &dir.path().join("out")).is_err());
}

fn cli(args: &[&str], cwd: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_gkdv-lab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn command_line_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cli(&["groundstate", "--p", "5", "--length", "60", "--n", "1024", "--out", "q.csv"], d);
    let q = io::read_columns(&d.join("q.csv")).unwrap();
    assert_eq!(q.0, ["x", "Q", "Q_y", "LambdaQ", "F"]);
    assert!(d.join("q.json").exists());

    let eig = cli(&["spectrum", "--k", "3", "--length", "60", "--n", "512", "--out", "eig"], d);
    assert_eq!(eig.lines().count(), 3);
    assert!(d.join("eig/eigen_02.csv").exists());

    let args = [
        "evolve", "--init", "perturbed:10", "--tmax", "0.1", "--every", "0.01", "--length", "60",
        "--n", "1024", "--out", "traj",
    ];
    cli(&args, d);
    cli(&["modulate", "--traj", "traj", "--out", "mod.csv"], d);
    let m = io::read_columns(&d.join("mod.csv")).unwrap();
    assert_eq!(m.1[0].len(), 11);
    cli(&["functionals", "--traj", "traj", "--A", "30", "--M", "4", "--out", "fun.csv"], d);
    let f = io::read_columns(&d.join("fun.csv")).unwrap();
    assert_eq!(f.0, ["s", "J", "J_A", "K", "K_A", "dKds"]);
    assert!(d.join("fun.json").exists());

    std::fs::write(d.join("sweep.json"), r#"[{"n": 10, "t_max": 0.05, "grid": {"length": 60.0, "n_points": 1024, "origin_offset": 0.0}}]"#).unwrap();
    cli(&["sweep", "--config", "sweep.json", "--workers", "1", "--out", "sw"], d);
    cli(&["report", "--in", "sw", "--out", "rep"], d);
    assert!(d.join("rep/summary.csv").exists());
}

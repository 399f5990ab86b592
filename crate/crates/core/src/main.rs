use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gkdv_lab::evolve::{evolve, EvolverConfig};
use gkdv_lab::exec::Execution;
use gkdv_lab::functionals::{functional_j, functional_k, WeightConfig};
use gkdv_lab::harness::{
    self, emit_report, make_initial_data, read_trajectory, run_instability, run_stability_control,
    sweep, write_trajectory, CutoffChoice, ExperimentConfig,
};
use gkdv_lab::io;
use gkdv_lab::linop::LinearizedOperator;
use gkdv_lab::modulation::{modulated_trajectory, ModulationOptions, ALPHA_BAR_NUM};
use gkdv_lab::{ground_state, Field, GridSpec};

type AnyError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(name = "gkdv-lab", version, about = "Soliton instability laboratory for the generalized KdV equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct GridArgs {
    /// Periodic box length.
    #[arg(long, default_value_t = 100.0)]
    length: f64,
    /// Number of grid points.
    #[arg(long = "n", default_value_t = 4096)]
    n_points: usize,
}

impl GridArgs {
    fn grid(self) -> Result<GridSpec, AnyError> {
        Ok(GridSpec::centered(self.length, self.n_points)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ground state profile and its integrals.
    Groundstate {
        #[arg(long, default_value_t = 5)]
        p: u32,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[command(flatten)]
        grid: GridArgs,
        /// CSV output; the integrals go to the same path with a .json extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Lowest eigenvalues of the linearized operator.
    Spectrum {
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        p: u32,
        #[arg(long, default_value_t = 60.0)]
        length: f64,
        #[arg(long = "n", default_value_t = 1024)]
        n_points: usize,
        /// Directory for eigenfunction CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evolve initial data and store snapshots.
    Evolve {
        #[arg(long, default_value_t = 5)]
        p: u32,
        /// `soliton`, `perturbed:<n>`, `3q` or the path of an (x, u) CSV.
        #[arg(long, default_value = "soliton")]
        init: String,
        #[arg(long, default_value_t = 1.0)]
        tmax: f64,
        /// Time step; chosen from the stability ceiling when omitted.
        #[arg(long)]
        dt: Option<f64>,
        /// Time between stored snapshots.
        #[arg(long, default_value_t = 0.1)]
        every: f64,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Modulation parameters along a stored trajectory.
    Modulate {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ALPHA_BAR_NUM)]
        alpha_bar: f64,
    },
    /// Virial functionals along a stored p = 5 trajectory.
    Functionals {
        #[arg(long)]
        traj: PathBuf,
        /// Cutoff scale, or `inf` for the untruncated functional.
        #[arg(long = "A", default_value = "inf")]
        a: String,
        #[arg(long = "M", default_value_t = 4.0)]
        m: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// The p = 5 instability experiment.
    Instability {
        #[arg(long, default_value_t = 10)]
        n: u64,
        /// `auto` or a cutoff scale.
        #[arg(long = "A", default_value = "auto")]
        a: String,
        #[arg(long, default_value_t = harness::DEFAULT_ALPHA0)]
        alpha0: f64,
        #[arg(long, default_value_t = harness::DEFAULT_T_MAX)]
        tmax: f64,
        #[arg(long, default_value_t = 4096)]
        npoints: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// The same perturbation at a subcritical power.
    Control {
        #[arg(long, default_value_t = 3)]
        p: u32,
        #[arg(long, default_value_t = 10)]
        n: u64,
        #[arg(long, default_value_t = harness::CONTROL_T_MAX)]
        tmax: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Independent runs from a JSON config (one object or an array).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value = "sweep_out")]
        out: PathBuf,
    },
    /// Aggregate run directories into plot-ready tables.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SweepFile {
    Many(Vec<ExperimentConfig>),
    One(ExperimentConfig),
}

fn parse_cutoff(s: &str) -> Result<Option<f64>, AnyError> {
    match s {
        "inf" | "infinity" | "none" => Ok(None),
        v => Ok(Some(v.parse::<f64>().map_err(|e| format!("bad --A {v:?}: {e}"))?)),
    }
}

fn initial_field(init: &str, p: u32, grid: GridSpec) -> Result<Field, AnyError> {
    let gs = ground_state(p, 1.0, grid)?;
    if init == "soliton" {
        return Ok(gs.q);
    }
    if init == "3q" {
        return Ok(gs.q.scale(3.0));
    }
    if let Some(n) = init.strip_prefix("perturbed:") {
        let n: u64 = n.parse()?;
        return Ok(make_initial_data(n, &gs)?.u0);
    }
    Ok(io::read_field(Path::new(init), grid)?)
}

fn print_json<T: Serialize>(v: &T) -> Result<(), AnyError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn run(cli: Cli) -> Result<(), AnyError> {
    match cli.command {
        Command::Groundstate { p, c, grid, out } => {
            let gs = ground_state(p, c, grid.grid()?)?;
            let x = gs.grid().points();
            io::write_columns(
                &out,
                &["x", "Q", "Q_y", "LambdaQ", "F"],
                &[
                    &x,
                    gs.q.values(),
                    gs.q_deriv.values(),
                    gs.lambda_q.values(),
                    gs.f_primitive.values(),
                ],
            )?;
            #[derive(Serialize)]
            struct Record {
                p: u32,
                c: f64,
                integrals: gkdv_lab::GroundStateIntegrals,
                ode_residual: f64,
                kappa: f64,
                f_sup_norm: f64,
            }
            let rec = Record {
                p,
                c,
                integrals: gs.integrals,
                ode_residual: gs.ode_residual(),
                kappa: gs.kappa(),
                f_sup_norm: gs.f_sup_norm(),
            };
            io::write_json(&sibling(&out, "json"), &rec)?;
            print_json(&rec)
        }
        Command::Spectrum {
            k,
            p,
            length,
            n_points,
            out,
        } => {
            let gs = ground_state(p, 1.0, GridSpec::centered(length, n_points)?)?;
            let op = LinearizedOperator::new(&gs);
            let pairs = op.spectrum(k)?;
            if let Some(dir) = &out {
                io::create_dir(dir)?;
            }
            for (i, e) in pairs.iter().enumerate() {
                println!("{i:>3}  {:+.12e}", e.eigenvalue);
                if let Some(dir) = &out {
                    io::write_field(&dir.join(format!("eigen_{i:02}.csv")), "f", &e.eigenfunction)?;
                }
            }
            Ok(())
        }
        Command::Evolve {
            p,
            init,
            tmax,
            dt,
            every,
            grid,
            out,
        } => {
            let grid = grid.grid()?;
            let u0 = initial_field(&init, p, grid)?;
            let probe = ExperimentConfig {
                p,
                grid,
                dt,
                t_max: tmax,
                snapshot_interval: every,
                ..Default::default()
            };
            let cfg: EvolverConfig = probe.evolver_config(u0.sup_norm());
            let traj = evolve(&u0, &cfg, &mut [])?;
            let m = write_trajectory(&out, &traj)?;
            println!(
                "{} snapshots to t = {:.4}, dt = {:.3e}, halt: {:?}",
                m.snapshots.len(),
                traj.t_end(),
                traj.dt_used,
                traj.halt
            );
            print_json(&m.audit)
        }
        Command::Modulate {
            traj,
            out,
            alpha_bar,
        } => {
            let t = read_trajectory(&traj)?;
            let gs = ground_state(t.config.p, 1.0, *t.points[0].u.grid())?;
            let opts = ModulationOptions {
                alpha_bar,
                ..Default::default()
            };
            let mt = modulated_trajectory(&t.points, &gs, &opts, Execution::Parallel)?;
            io::write_columns(
                &out,
                &["t", "s", "lambda", "x", "eps_l2", "eps_h1", "dlam", "dx", "resQ3", "resQy"],
                &[
                    &mt.t,
                    &mt.s,
                    &mt.lambda,
                    &mt.x,
                    &mt.eps_l2,
                    &mt.eps_h1,
                    &mt.lambda_s_over_lambda,
                    &mt.x_s_over_lambda_minus_1,
                    &mt.residual_q3,
                    &mt.residual_qy,
                ],
            )?;
            println!("{} modulated snapshots", mt.len());
            if let Some(exit) = &mt.exit {
                println!("window ends at t = {:.4}: {}", exit.t, exit.reason);
            }
            Ok(())
        }
        Command::Functionals { traj, a, m, out } => {
            let a = parse_cutoff(&a)?;
            let weights = WeightConfig {
                m,
                ..Default::default()
            };
            weights.validate()?;
            let t = read_trajectory(&traj)?;
            let gs = ground_state(t.config.p, 1.0, *t.points[0].u.grid())?;
            let mt = modulated_trajectory(&t.points, &gs, &ModulationOptions::default(), Execution::Parallel)?;
            let k_a = functional_k(&mt, &gs, a)?;
            let k = functional_k(&mt, &gs, None)?;
            let j_a = functional_j(&mt, &gs, a)?;
            let j = functional_j(&mt, &gs, None)?;
            io::write_columns(
                &out,
                &["s", "J", "J_A", "K", "K_A", "dKds"],
                &[&k_a.s, &j.values, &j_a.values, &k.values, &k_a.values, &k_a.slope],
            )?;
            let summary = harness::monotonicity_summary(&t.points, &mt, &weights)?;
            io::write_json(&sibling(&out, "json"), &summary)?;
            println!(
                "K_A mean slope {:?}, strictly increasing {}",
                k_a.mean_slope(),
                k_a.strictly_increasing()
            );
            print_json(&summary)
        }
        Command::Instability {
            n,
            a,
            alpha0,
            tmax,
            npoints,
            out,
        } => {
            let mut cfg = ExperimentConfig::instability(n);
            cfg.cutoff = match a.as_str() {
                "auto" => CutoffChoice::Auto,
                v => CutoffChoice::Fixed(v.parse().map_err(|e| format!("bad --A {v:?}: {e}"))?),
            };
            cfg.alpha0 = alpha0;
            cfg.t_max = tmax;
            cfg.grid = GridSpec::centered(cfg.grid.length, npoints)?;
            let (_, manifest) = run_instability(&cfg, Some(&out))?;
            print_json(&manifest)
        }
        Command::Control { p, n, tmax, out } => {
            let mut cfg = ExperimentConfig::control(p, n);
            cfg.t_max = tmax;
            let (_, manifest) = run_stability_control(&cfg, Some(&out))?;
            print_json(&manifest)
        }
        Command::Sweep {
            config,
            workers,
            out,
        } => {
            let configs = match io::read_json::<SweepFile>(&config)? {
                SweepFile::Many(v) => v,
                SweepFile::One(c) => vec![c],
            };
            let entries = sweep(&configs, workers, Some(&out))?;
            for e in &entries {
                match (&e.manifest, &e.error) {
                    (Some(m), _) => println!(
                        "run {:03}: p = {}, n = {}, window end t = {:.3}, halt {:?}",
                        e.index, e.config.p, e.config.n, m.metrics.window_end_t, m.halt
                    ),
                    (None, Some(err)) => println!("run {:03}: failed: {err}", e.index),
                    _ => {}
                }
            }
            Ok(())
        }
        Command::Report { input, out } => {
            let summary = emit_report(&input, &out)?;
            print_json(&summary)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

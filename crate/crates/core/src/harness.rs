//! Experiment drivers: initial data, the instability run, the subcritical
//! control, parallel sweeps, persistence and report aggregation.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evolve::{
    evolve, stability_ceiling, EvolveError, EvolverConfig, HaltReason, Trajectory,
};
use crate::exec::{with_workers, Execution};
use crate::functionals::{
    functional_j, functional_k, monotonicity_i, right_tail_mass, select_cutoff_scale,
    FunctionalError, FunctionalSeries, WeightConfig,
};
use crate::grid::{Field, GridError, GridSpec};
use crate::ground_state::{ground_state, GroundState, GroundStateError};
use crate::io::{self, IoError};
use crate::modulation::{
    epsilon_equation_residual, modulated_trajectory, parameter_cross_check, ModulatedTrajectory,
    ModulationError, ModulationOptions, ParameterCrossCheck, TubeNorm, ALPHA_BAR_NUM,
};
use crate::spectral::Spectral;
use crate::stats::linear_fit;

pub const DEFAULT_ALPHA0: f64 = 0.05;
pub const DEFAULT_T_MAX: f64 = 40.0;
pub const CONTROL_T_MAX: f64 = 50.0;
pub const SNAPSHOT_INTERVAL: f64 = 0.01;
/// Automatic steps use this fraction of the stability ceiling of the data.
pub const DT_SAFETY: f64 = 0.5;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    GroundState(#[from] GroundStateError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("initial data violates ‖ε₀‖²_H¹ < ∫ε₀Q (b₀ = {b0:.4} >= 1); increase n")]
    Hypothesis { b0: f64 },
    #[error("this driver expects p = {expected}, got p = {got}")]
    WrongPower { expected: String, got: u32 },
}

/// How the cutoff scale `A` of `J_A` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CutoffChoice {
    /// Balance `A^{1/2}e^{−A/(4M)} + A^{−1/2}` against `(∫ε₀Q)^{1/2}`.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub p: u32,
    /// Perturbation scale: `ε₀ = (Q + rQ³)/n`.
    pub n: u64,
    pub grid: GridSpec,
    /// Time step; `None` picks a divisor of the snapshot interval below
    /// `DT_SAFETY` times the stability ceiling of the initial data.
    pub dt: Option<f64>,
    pub t_max: f64,
    pub snapshot_interval: f64,
    pub dealias: bool,
    pub weights: WeightConfig,
    pub cutoff: CutoffChoice,
    pub alpha0: f64,
    pub alpha_bar: f64,
    /// Keep `ε` every `eps_stride` snapshots of the confined window.
    pub eps_stride: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            p: 5,
            n: 10,
            grid: GridSpec::default(),
            dt: None,
            t_max: DEFAULT_T_MAX,
            snapshot_interval: SNAPSHOT_INTERVAL,
            dealias: true,
            weights: WeightConfig::default(),
            cutoff: CutoffChoice::Auto,
            alpha0: DEFAULT_ALPHA0,
            alpha_bar: ALPHA_BAR_NUM,
            eps_stride: 1,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn instability(n: u64) -> Self {
        ExperimentConfig {
            n,
            ..Default::default()
        }
    }

    pub fn control(p: u32, n: u64) -> Self {
        ExperimentConfig {
            p,
            n,
            t_max: CONTROL_T_MAX,
            eps_stride: 10,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.grid.validate()?;
        self.weights
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(2..=9).contains(&self.p) {
            return bad(format!("p = {} not in 2..=9", self.p));
        }
        if self.n < 2 {
            return bad(format!("n = {} < 2", self.n));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return bad(format!("t_max = {}", self.t_max));
        }
        if !(self.snapshot_interval > 0.0) {
            return bad(format!("snapshot_interval = {}", self.snapshot_interval));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return bad(format!("dt = {dt}"));
            }
        }
        if let CutoffChoice::Fixed(a) = self.cutoff {
            if !(a >= 1.0) {
                return bad(format!("A = {a} < 1"));
            }
        }
        if !(self.alpha0 > 0.0 && self.alpha_bar > 0.0) {
            return bad("tube thresholds must be positive".into());
        }
        if self.eps_stride == 0 {
            return bad("eps_stride must be positive".into());
        }
        Ok(())
    }

    /// Evolver settings for initial data of sup norm `sup0`.
    pub fn evolver_config(&self, sup0: f64) -> EvolverConfig {
        let interval = self.snapshot_interval;
        let (dt, stride) = match self.dt {
            Some(dt) => (dt, ((interval / dt).round() as usize).max(1)),
            None => {
                let ceiling = stability_ceiling(&self.grid, self.p, sup0, self.dealias);
                let m = (interval / (DT_SAFETY * ceiling)).ceil().max(1.0) as usize;
                (interval / m as f64, m)
            }
        };
        let mut cfg = EvolverConfig::new(self.p, dt, self.t_max, stride);
        cfg.dealias = self.dealias;
        cfg
    }

    /// SHA-256 of the canonical JSON form and the crate version.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        h.update(serde_json::to_vec(self).unwrap_or_default());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialChecks {
    /// `r = −∫Q⁴/∫Q⁶`.
    pub r: f64,
    pub ortho_q3: f64,
    pub ortho_qy: f64,
    pub int_eps0_q: f64,
    pub eps0_l2: f64,
    pub eps0_h1: f64,
    /// `‖ε₀‖²_H¹ / ∫ε₀Q`.
    pub b0: f64,
    /// Fitted `δ` in `|ε₀(y)| ≲ e^{−δ|y|}` over `y ∈ [5, 15]`.
    pub decay_rate: f64,
}

#[derive(Debug, Clone)]
pub struct InitialData {
    pub u0: Field,
    pub eps0: Field,
    pub checks: InitialChecks,
}

/// `u₀ = Q + ε₀` with `ε₀ = (Q + rQ³)/n`.
pub fn make_initial_data(n: u64, gs: &GroundState) -> Result<InitialData, HarnessError> {
    if n < 2 {
        return Err(HarnessError::Config(format!("n = {n} < 2")));
    }
    let r = -gs.integrals.int_q4 / gs.integrals.int_q6;
    let q3 = gs.q_pow(3);
    let scale = 1.0 / n as f64;
    let eps0 = gs.q.zip_map(&q3, |q, c| scale * (q + r * c))?;
    let u0 = gs.q.axpy(1.0, &eps0)?;
    let sp = Spectral::new(*gs.grid());
    let int_eps0_q = eps0.inner(&gs.q)?;
    let eps0_h1 = sp.h1_norm_sq(eps0.values()).sqrt();
    let b0 = eps0_h1 * eps0_h1 / int_eps0_q;

    let grid = gs.grid();
    let (ys, logs): (Vec<f64>, Vec<f64>) = (0..grid.n_points)
        .map(|k| (grid.x(k), eps0.values()[k].abs()))
        .filter(|(y, v)| (5.0..=15.0).contains(y) && *v > 0.0)
        .map(|(y, v)| (y, v.ln()))
        .unzip();
    let decay_rate = if ys.len() >= 2 {
        -linear_fit(&ys, &logs).slope
    } else {
        f64::NAN
    };
    let checks = InitialChecks {
        r,
        ortho_q3: eps0.inner(&q3)?,
        ortho_qy: eps0.inner(&gs.q_deriv)?,
        int_eps0_q,
        eps0_l2: eps0.norm_l2(),
        eps0_h1,
        b0,
        decay_rate,
    };
    if !(b0 < 1.0) {
        return Err(HarnessError::Hypothesis { b0 });
    }
    Ok(InitialData { u0, eps0, checks })
}

/// Grid of `I(t0) − I(t)` values and the fitted constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub m: f64,
    /// Rows `(x0, t, t0, I(t0), I(t))`.
    pub rows: Vec<[f64; 5]>,
    /// Smallest `θ` with `I(t0) − I(t) <= θ e^{−x0/M}` on the whole grid.
    pub theta: f64,
    pub x0s: Vec<f64>,
    /// `max_{t, t0} (I(t0) − I(t))` for each `x0`.
    pub worst: Vec<f64>,
    /// Least-squares slope of `ln worst` against `x0` (positive entries).
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub times: Vec<f64>,
    /// Slope of `ln ∫_{x>x0} u²(·+x(t))` against `x0 ∈ [1, 10]`.
    pub u_slopes: Vec<f64>,
    /// Slope of `ln ∫_{y>y0} ε²` against `y0 ∈ [1, 10]`.
    pub eps_slopes: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadlineMetrics {
    pub int_eps0_q: f64,
    pub b0: f64,
    pub tube_initial_h1: f64,
    pub tube_initial_l2: f64,
    pub tube_max_h1: f64,
    pub tube_max_ratio: f64,
    /// First time the H¹ tube distance exceeds `alpha0`.
    pub exit_time_h1: Option<f64>,
    pub exit_time_l2: Option<f64>,
    /// Last time of the confined window.
    pub window_end_t: f64,
    pub window_len: usize,
    pub window_exit: Option<String>,
    pub cutoff_a: Option<f64>,
    pub k_a_mean_slope: Option<f64>,
    pub k_a_min_slope: Option<f64>,
    pub k_a_strictly_increasing: Option<bool>,
    pub k_mean_slope: Option<f64>,
    pub k_strictly_increasing: Option<bool>,
    /// `0.25 ∫ε₀Q`.
    pub slope_threshold: f64,
    pub mass_drift: f64,
    pub energy_drift: f64,
    pub mean_drift: f64,
    pub max_edge_tail: f64,
    pub c1_max: Option<f64>,
    pub c2_max: Option<f64>,
    pub c5_max: Option<f64>,
    pub x_at_least_half_t: bool,
    pub max_orthogonality_residual: f64,
    pub theta: Option<f64>,
    pub monotonicity_slope: Option<f64>,
    pub tail_slope_u_max: Option<f64>,
    pub tail_slope_eps_max: Option<f64>,
    /// Smallest `c` with `|K_A| <= (3/2)^{1/2}(c(1+A^{1/2})‖ε‖₂‖F‖_∞ + κ)`.
    pub k_a_bound_c: Option<f64>,
}

/// Everything computed by one run, kept in memory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub evolver: EvolverConfig,
    pub initial: InitialData,
    pub trajectory: Trajectory,
    pub modulated: ModulatedTrajectory,
    pub k_a: Option<FunctionalSeries>,
    pub k: Option<FunctionalSeries>,
    pub j_a: Option<FunctionalSeries>,
    pub j: Option<FunctionalSeries>,
    pub monotonicity: Option<MonotonicityReport>,
    pub tails: Option<TailReport>,
    pub metrics: HeadlineMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub input_hash: String,
    pub created_unix: u64,
    pub config: ExperimentConfig,
    pub evolver: EvolverConfig,
    pub dt_used: f64,
    pub files: Vec<String>,
    pub halt: HaltReason,
    pub initial: InitialChecks,
    pub metrics: HeadlineMetrics,
}

fn monotonicity_report(
    points: &[crate::evolve::TrajectoryPoint],
    mt: &ModulatedTrajectory,
    weights: &WeightConfig,
) -> Result<MonotonicityReport, HarnessError> {
    let t_end = *mt.t.last().unwrap_or(&0.0);
    let x0s: Vec<f64> = (0..10).map(|j| 1.0 + 2.0 * j as f64).collect();
    let mut rows = Vec::with_capacity(1000);
    let mut worst = vec![f64::NEG_INFINITY; x0s.len()];
    let mut theta: f64 = 0.0;
    for (ix, &x0) in x0s.iter().enumerate() {
        let w = WeightConfig { x0, ..*weights };
        for i0 in 0..10 {
            let t0 = t_end * (i0 as f64 + 1.0) / 10.0;
            let i_t0 = monotonicity_i(points, mt, &w, t0, t0)?;
            for i in 0..10 {
                let t = (t0 * i as f64 / 9.0).min(t0);
                let i_t = monotonicity_i(points, mt, &w, t, t0)?;
                let d = i_t0 - i_t;
                worst[ix] = worst[ix].max(d);
                theta = theta.max(d * (x0 / weights.m).exp());
                rows.push([x0, t, t0, i_t0, i_t]);
            }
        }
    }
    let (xs, ls): (Vec<f64>, Vec<f64>) = x0s
        .iter()
        .zip(&worst)
        .filter(|(_, w)| **w > 0.0)
        .map(|(x, w)| (*x, w.ln()))
        .unzip();
    let slope = (xs.len() >= 2).then(|| linear_fit(&xs, &ls).slope);
    Ok(MonotonicityReport {
        m: weights.m,
        rows,
        theta,
        x0s,
        worst,
        slope,
    })
}

fn tail_report(points: &[crate::evolve::TrajectoryPoint], mt: &ModulatedTrajectory) -> TailReport {
    let x0s: Vec<f64> = (1..=10).map(f64::from).collect();
    let fit = |vals: Vec<f64>| {
        let (xs, ls): (Vec<f64>, Vec<f64>) = x0s
            .iter()
            .zip(vals)
            .filter(|(_, v)| *v > 0.0)
            .map(|(x, v)| (*x, v.ln()))
            .unzip();
        if xs.len() >= 2 {
            linear_fit(&xs, &ls).slope
        } else {
            f64::NAN
        }
    };
    let stored = &mt.epsilons;
    let picks: Vec<usize> = if stored.len() <= 10 {
        (0..stored.len()).collect()
    } else {
        (0..10).map(|j| j * (stored.len() - 1) / 9).collect()
    };
    let mut rep = TailReport {
        times: Vec::new(),
        u_slopes: Vec::new(),
        eps_slopes: Vec::new(),
    };
    for k in picks {
        let st = &stored[k];
        let i = st.index;
        let u = &points[i].u;
        rep.times.push(mt.t[i]);
        rep.u_slopes
            .push(fit(x0s.iter().map(|&x0| right_tail_mass(u, mt.x[i], x0)).collect()));
        rep.eps_slopes
            .push(fit(x0s.iter().map(|&y0| right_tail_mass(&st.jet.eps, 0.0, y0)).collect()));
    }
    rep
}

/// Monotonicity constants and tail slopes of a modulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicitySummary {
    pub m: f64,
    pub theta: f64,
    pub x0s: Vec<f64>,
    pub worst: Vec<f64>,
    pub slope: Option<f64>,
    pub tails: Option<TailReport>,
}

pub fn monotonicity_summary(
    points: &[crate::evolve::TrajectoryPoint],
    mt: &ModulatedTrajectory,
    weights: &WeightConfig,
) -> Result<MonotonicitySummary, HarnessError> {
    if mt.len() < 3 {
        return Err(HarnessError::Config("confined window shorter than 3 snapshots".into()));
    }
    let r = monotonicity_report(points, mt, weights)?;
    Ok(MonotonicitySummary {
        m: r.m,
        theta: r.theta,
        x0s: r.x0s,
        worst: r.worst,
        slope: r.slope,
        tails: (mt.epsilons.len() >= 2).then(|| tail_report(points, mt)),
    })
}

/// Runs data construction, evolution, modulation and the functionals.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<RunArtifacts, HarnessError> {
    cfg.validate()?;
    let gs = ground_state(cfg.p, 1.0, cfg.grid)?;
    let initial = make_initial_data(cfg.n, &gs)?;
    let evolver = cfg.evolver_config(initial.u0.sup_norm());
    let trajectory = evolve(&initial.u0, &evolver, &mut [])?;
    let opts = ModulationOptions {
        alpha_bar: cfg.alpha_bar,
        eps_stride: cfg.eps_stride,
        store_jets: false,
    };
    let mt = modulated_trajectory(&trajectory.points, &gs, &opts, exec)?;
    let checks = initial.checks;

    let critical = cfg.p == 5 && !mt.epsilons.is_empty();
    let cutoff_a = if critical {
        Some(match cfg.cutoff {
            CutoffChoice::Auto => select_cutoff_scale(checks.int_eps0_q, cfg.weights.m)?,
            CutoffChoice::Fixed(a) => a,
        })
    } else {
        None
    };
    let (k_a, k, j_a, j) = match cutoff_a {
        Some(a) => (
            Some(functional_k(&mt, &gs, Some(a))?),
            Some(functional_k(&mt, &gs, None)?),
            Some(functional_j(&mt, &gs, Some(a))?),
            Some(functional_j(&mt, &gs, None)?),
        ),
        None => (None, None, None, None),
    };
    let monotonicity = if mt.len() >= 3 {
        Some(monotonicity_report(&trajectory.points, &mt, &cfg.weights)?)
    } else {
        None
    };
    let tails = (mt.epsilons.len() >= 2).then(|| tail_report(&trajectory.points, &mt));

    let audit = trajectory.audit();
    let tube0 = mt.tube_h1.first().copied().unwrap_or(f64::NAN);
    let tube_max = mt.tube_h1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c1_max = (0..mt.len())
        .map(|i| (mt.lambda[i] - 1.0).abs() / mt.tube_h1[i].max(1e-300))
        .reduce(f64::max);
    let c2_max = mt.parameter_control_ratio().into_iter().reduce(f64::max);
    let c5_den = cfg.alpha0 * checks.int_eps0_q.abs() + checks.eps0_h1 * checks.eps0_h1;
    let c5_max = mt.eps_h1.iter().map(|e| e * e / c5_den).reduce(f64::max);
    let k_a_bound_c = match (&k_a, cutoff_a) {
        (Some(series), Some(a)) => {
            let kappa = gs.kappa();
            let fsup = gs.f_sup_norm();
            mt.epsilons
                .iter()
                .zip(&series.values)
                .map(|(st, kv)| {
                    (kv.abs() / 1.5f64.sqrt() - kappa)
                        / ((1.0 + a.sqrt()) * mt.eps_l2[st.index] * fsup).max(1e-300)
                })
                .reduce(f64::max)
        }
        _ => None,
    };
    let metrics = HeadlineMetrics {
        int_eps0_q: checks.int_eps0_q,
        b0: checks.b0,
        tube_initial_h1: tube0,
        tube_initial_l2: mt.tube_l2.first().copied().unwrap_or(f64::NAN),
        tube_max_h1: tube_max,
        tube_max_ratio: tube_max / tube0,
        exit_time_h1: mt.exit_time(cfg.alpha0, TubeNorm::H1),
        exit_time_l2: mt.exit_time(cfg.alpha0, TubeNorm::L2),
        window_end_t: mt.t.last().copied().unwrap_or(0.0),
        window_len: mt.len(),
        window_exit: mt.exit.as_ref().map(|e| e.reason.clone()),
        cutoff_a,
        k_a_mean_slope: k_a.as_ref().and_then(FunctionalSeries::mean_slope),
        k_a_min_slope: k_a.as_ref().and_then(FunctionalSeries::min_slope),
        k_a_strictly_increasing: k_a.as_ref().map(FunctionalSeries::strictly_increasing),
        k_mean_slope: k.as_ref().and_then(FunctionalSeries::mean_slope),
        k_strictly_increasing: k.as_ref().map(FunctionalSeries::strictly_increasing),
        slope_threshold: 0.25 * checks.int_eps0_q,
        mass_drift: audit.mass_drift_rel_per_time,
        energy_drift: audit.energy_drift_per_time,
        mean_drift: audit.mean_drift_per_time,
        max_edge_tail: audit.max_edge_tail,
        c1_max,
        c2_max,
        c5_max,
        x_at_least_half_t: mt.x.iter().zip(&mt.t).all(|(x, t)| *x >= 0.5 * t - 1e-12),
        max_orthogonality_residual: mt
            .residual_q3
            .iter()
            .chain(&mt.residual_qy)
            .fold(0.0, |a, r| a.max(r.abs())),
        theta: monotonicity.as_ref().map(|m| m.theta),
        monotonicity_slope: monotonicity.as_ref().and_then(|m| m.slope),
        tail_slope_u_max: tails
            .as_ref()
            .and_then(|t| t.u_slopes.iter().copied().reduce(f64::max)),
        tail_slope_eps_max: tails
            .as_ref()
            .and_then(|t| t.eps_slopes.iter().copied().reduce(f64::max)),
        k_a_bound_c,
    };
    Ok(RunArtifacts {
        config: *cfg,
        evolver,
        initial,
        trajectory,
        modulated: mt,
        k_a,
        k,
        j_a,
        j,
        monotonicity,
        tails,
        metrics,
    })
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunArtifacts {
    pub fn manifest(&self, files: Vec<String>) -> RunManifest {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").into(),
            input_hash: self.config.content_hash(),
            created_unix: now_unix(),
            config: self.config,
            evolver: self.evolver,
            dt_used: self.trajectory.dt_used,
            files,
            halt: self.trajectory.halt.clone(),
            initial: self.initial.checks,
            metrics: self.metrics.clone(),
        }
    }

    /// Writes every series and the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<RunManifest, HarnessError> {
        io::create_dir(dir)?;
        let mut files = Vec::new();
        let mut put = |name: &str, names: &[&str], cols: &[&[f64]]| -> Result<(), HarnessError> {
            io::write_columns(&dir.join(name), names, cols)?;
            files.push(name.to_string());
            Ok(())
        };

        let x = self.initial.u0.grid().points();
        put(
            "initial.csv",
            &["x", "u0", "eps0"],
            &[&x, self.initial.u0.values(), self.initial.eps0.values()],
        )?;

        let pts = &self.trajectory.points;
        let mt = &self.modulated;
        let col = |f: &dyn Fn(&crate::evolve::TrajectoryPoint) -> f64| -> Vec<f64> {
            pts.iter().map(f).collect()
        };
        put(
            "tube.csv",
            &["t", "tube_h1", "tube_l2", "mass", "energy", "mean", "edge_tail", "sup"],
            &[
                &mt.tube_t,
                &mt.tube_h1,
                &mt.tube_l2,
                &col(&|p| p.mass),
                &col(&|p| p.energy),
                &col(&|p| p.mean_integral),
                &col(&|p| p.edge_tail),
                &col(&|p| p.u.sup_norm()),
            ],
        )?;
        put(
            "modulation.csv",
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
        if let (Some(ka), Some(k), Some(ja), Some(j)) = (&self.k_a, &self.k, &self.j_a, &self.j) {
            put(
                "functionals.csv",
                &["s", "J", "J_A", "K", "K_A", "dKds"],
                &[&ka.s, &j.values, &ja.values, &k.values, &ka.values, &ka.slope],
            )?;
        }
        if let Some(m) = &self.monotonicity {
            let c = |i: usize| m.rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
            let diff: Vec<f64> = m.rows.iter().map(|r| r[3] - r[4]).collect();
            put(
                "monotonicity.csv",
                &["x0", "t", "t0", "I_t0", "I_t", "diff"],
                &[&c(0), &c(1), &c(2), &c(3), &c(4), &diff],
            )?;
        }
        let manifest = self.manifest(files);
        io::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

fn run_and_maybe_write(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    exec: Execution,
) -> Result<(RunArtifacts, RunManifest), HarnessError> {
    let art = run_experiment(cfg, exec)?;
    let manifest = match out {
        Some(dir) => art.write(dir)?,
        None => art.manifest(Vec::new()),
    };
    Ok((art, manifest))
}

/// The critical-power instability experiment.
pub fn run_instability(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(RunArtifacts, RunManifest), HarnessError> {
    if cfg.p != 5 {
        return Err(HarnessError::WrongPower {
            expected: "5".into(),
            got: cfg.p,
        });
    }
    run_and_maybe_write(cfg, out, Execution::Parallel)
}

/// The same pipeline at a subcritical power.
pub fn run_stability_control(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(RunArtifacts, RunManifest), HarnessError> {
    if cfg.p >= 5 {
        return Err(HarnessError::WrongPower {
            expected: "< 5".into(),
            got: cfg.p,
        });
    }
    run_and_maybe_write(cfg, out, Execution::Parallel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub config: ExperimentConfig,
    pub manifest: Option<RunManifest>,
    pub error: Option<String>,
}

/// Runs independent experiments on `workers` threads. Failures stay inside
/// their entry. With `out`, run `i` is written to `out/run_{i:03}` and a
/// `summary.csv` is added.
pub fn sweep(
    configs: &[ExperimentConfig],
    workers: usize,
    out: Option<&Path>,
) -> Result<Vec<SweepEntry>, HarnessError> {
    if configs.is_empty() {
        return Err(HarnessError::Config("empty sweep".into()));
    }
    let entries = with_workers(workers, |exec| {
        exec.map_range(configs.len(), |i| {
            let dir = out.map(|o| o.join(format!("run_{i:03}")));
            let res = run_and_maybe_write(&configs[i], dir.as_deref(), Execution::Sequential);
            match res {
                Ok((_, m)) => SweepEntry {
                    index: i,
                    config: configs[i],
                    manifest: Some(m),
                    error: None,
                },
                Err(e) => SweepEntry {
                    index: i,
                    config: configs[i],
                    manifest: None,
                    error: Some(e.to_string()),
                },
            }
        })
    });
    if let Some(dir) = out {
        let manifests: Vec<RunManifest> = entries.iter().filter_map(|e| e.manifest.clone()).collect();
        write_summary(&dir.join("summary.csv"), &manifests)?;
    }
    Ok(entries)
}

const SUMMARY_COLUMNS: [&str; 11] = [
    "run",
    "p",
    "n",
    "int_eps0_q",
    "tube_initial_h1",
    "tube_max_h1",
    "exit_time_h1",
    "window_end_t",
    "k_a_mean_slope",
    "slope_over_int",
    "mass_drift",
];

fn write_summary(path: &Path, manifests: &[RunManifest]) -> Result<(), HarnessError> {
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let rows: Vec<[f64; 11]> = manifests
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let k = &m.metrics;
            [
                i as f64,
                m.config.p as f64,
                m.config.n as f64,
                k.int_eps0_q,
                k.tube_initial_h1,
                k.tube_max_h1,
                opt(k.exit_time_h1),
                k.window_end_t,
                opt(k.k_a_mean_slope),
                opt(k.k_a_mean_slope) / k.int_eps0_q,
                k.mass_drift,
            ]
        })
        .collect();
    let cols: Vec<Vec<f64>> = (0..SUMMARY_COLUMNS.len())
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    io::write_columns(path, &SUMMARY_COLUMNS, &refs)?;
    Ok(())
}

fn as_refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

fn find_manifests(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.filter_map(Result::ok).collect();
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_manifests(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub runs: Vec<String>,
    pub files: Vec<String>,
}

/// Collects every run below `input` into plot-ready tables in `output`:
/// `summary.csv`, `tube_series.csv`, `k_series.csv` and
/// `monotonicity_heat.csv` (the last two only when some run provides them).
pub fn emit_report(input: &Path, output: &Path) -> Result<ReportSummary, HarnessError> {
    let mut paths = Vec::new();
    find_manifests(input, &mut paths).map_err(|e| {
        HarnessError::Io(IoError::File {
            path: input.display().to_string(),
            source: e,
        })
    })?;
    if paths.is_empty() {
        return Err(HarnessError::Config(format!(
            "no {MANIFEST_FILE} below {}",
            input.display()
        )));
    }
    io::create_dir(output)?;
    let mut manifests = Vec::new();
    let mut runs = Vec::new();
    let mut tube = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut kser = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut heat = [Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for (i, path) in paths.iter().enumerate() {
        let m: RunManifest = io::read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for f in &m.files {
            if !dir.join(f).exists() {
                return Err(HarnessError::Config(format!(
                    "{} references missing file {f}",
                    path.display()
                )));
            }
        }
        let run = i as f64;
        if m.files.iter().any(|f| f == "tube.csv") {
            let t = io::read_columns(&dir.join("tube.csv"))?;
            let cols = ["t", "tube_h1", "tube_l2"].map(|c| io::column(&t, c).unwrap_or(&[]).to_vec());
            tube[0].extend(std::iter::repeat_n(run, cols[0].len()));
            for (dst, src) in tube[1..].iter_mut().zip(cols) {
                dst.extend(src);
            }
        }
        if m.files.iter().any(|f| f == "functionals.csv") {
            let t = io::read_columns(&dir.join("functionals.csv"))?;
            let cols = ["s", "K_A", "dKds"].map(|c| io::column(&t, c).unwrap_or(&[]).to_vec());
            kser[0].extend(std::iter::repeat_n(run, cols[0].len()));
            for (dst, src) in kser[1..].iter_mut().zip(cols) {
                dst.extend(src);
            }
        }
        if m.files.iter().any(|f| f == "monotonicity.csv") {
            let t = io::read_columns(&dir.join("monotonicity.csv"))?;
            let cols = ["x0", "t", "t0", "diff"].map(|c| io::column(&t, c).unwrap_or(&[]).to_vec());
            heat[0].extend(std::iter::repeat_n(run, cols[0].len()));
            for (dst, src) in heat[1..].iter_mut().zip(cols) {
                dst.extend(src);
            }
        }
        runs.push(dir.display().to_string());
        manifests.push(m);
    }
    let mut files = vec!["summary.csv".to_string()];
    write_summary(&output.join("summary.csv"), &manifests)?;
    io::write_columns(
        &output.join("tube_series.csv"),
        &["run", "t", "tube_h1", "tube_l2"],
        &as_refs(&tube),
    )?;
    files.push("tube_series.csv".into());
    if !kser[0].is_empty() {
        io::write_columns(
            &output.join("k_series.csv"),
            &["run", "s", "K_A", "dKds"],
            &as_refs(&kser),
        )?;
        files.push("k_series.csv".into());
    }
    if !heat[0].is_empty() {
        io::write_columns(
            &output.join("monotonicity_heat.csv"),
            &["run", "x0", "t", "t0", "diff"],
            &as_refs(&heat),
        )?;
        files.push("monotonicity_heat.csv".into());
    }
    Ok(ReportSummary { runs, files })
}

/// One snapshot entry of a stored trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub file: String,
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub mean_integral: f64,
    pub edge_tail: f64,
    pub spectral_tail: f64,
}

/// Manifest of a trajectory directory written by [`write_trajectory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub version: String,
    pub grid: GridSpec,
    pub config: EvolverConfig,
    pub dt_used: f64,
    pub audit: crate::evolve::ConservationAudit,
    pub halt: HaltReason,
    pub snapshots: Vec<SnapshotEntry>,
}

/// Writes each snapshot as `snap_NNNNN.csv` (columns x, u) plus a manifest.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<TrajectoryManifest, HarnessError> {
    let first = traj
        .points
        .first()
        .ok_or_else(|| HarnessError::Config("empty trajectory".into()))?;
    io::create_dir(dir)?;
    let mut snapshots = Vec::with_capacity(traj.points.len());
    for (i, p) in traj.points.iter().enumerate() {
        let file = format!("snap_{i:05}.csv");
        io::write_field(&dir.join(&file), "u", &p.u)?;
        snapshots.push(SnapshotEntry {
            file,
            t: p.t,
            mass: p.mass,
            energy: p.energy,
            mean_integral: p.mean_integral,
            edge_tail: p.edge_tail,
            spectral_tail: p.spectral_tail,
        });
    }
    let manifest = TrajectoryManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        grid: *first.u.grid(),
        config: traj.config,
        dt_used: traj.dt_used,
        audit: traj.audit(),
        halt: traj.halt.clone(),
        snapshots,
    };
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads a directory written by [`write_trajectory`].
pub fn read_trajectory(dir: &Path) -> Result<Trajectory, HarnessError> {
    let m: TrajectoryManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
    let points = m
        .snapshots
        .iter()
        .map(|e| {
            Ok(crate::evolve::TrajectoryPoint {
                t: e.t,
                u: io::read_field(&dir.join(&e.file), m.grid)?,
                mass: e.mass,
                energy: e.energy,
                mean_integral: e.mean_integral,
                edge_tail: e.edge_tail,
                spectral_tail: e.spectral_tail,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(Trajectory {
        config: m.config,
        dt_used: m.dt_used,
        points,
        halt: m.halt,
    })
}

/// Residual of the ε equation around `t_center`, from a short burst of
/// snapshots taken every `dt_fine`, at time spacings `dt_fine` and
/// `2 dt_fine`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStudy {
    pub t_center: f64,
    pub dt_fine: f64,
    pub residual_fine: f64,
    pub residual_coarse: f64,
    /// `residual_coarse / residual_fine`.
    pub ratio: f64,
    pub cross_check: ParameterCrossCheck,
}

pub fn residual_study(
    cfg: &ExperimentConfig,
    t_center: f64,
    dt_fine: f64,
) -> Result<ResidualStudy, HarnessError> {
    cfg.validate()?;
    if cfg.p != 5 {
        return Err(HarnessError::WrongPower {
            expected: "5".into(),
            got: cfg.p,
        });
    }
    let gs = ground_state(cfg.p, 1.0, cfg.grid)?;
    let data = make_initial_data(cfg.n, &gs)?;
    const HALF: usize = 3;
    let steps_before = ((t_center / dt_fine).round() as usize).saturating_sub(HALF);
    let t_a = steps_before as f64 * dt_fine;
    let mut lead = EvolverConfig::new(cfg.p, dt_fine, t_a, steps_before.max(1));
    lead.dealias = cfg.dealias;
    let lead_run = evolve(&data.u0, &lead, &mut [])?;
    let start = lead_run
        .points
        .last()
        .map(|p| p.u.clone())
        .ok_or_else(|| HarnessError::Config("empty lead trajectory".into()))?;
    if !lead_run.halt.is_completed() {
        return Err(HarnessError::Config(format!(
            "lead run halted before t = {t_a}: {:?}",
            lead_run.halt
        )));
    }
    let mut burst = EvolverConfig::new(cfg.p, dt_fine, 2.0 * HALF as f64 * dt_fine, 1);
    burst.dealias = cfg.dealias;
    let mut run = evolve(&start, &burst, &mut [])?;
    for p in &mut run.points {
        p.t += t_a;
    }
    let opts = ModulationOptions {
        alpha_bar: f64::INFINITY,
        eps_stride: 1,
        store_jets: true,
    };
    let mt = modulated_trajectory(&run.points, &gs, &opts, Execution::Sequential)?;
    if mt.epsilons.len() < 2 * HALF + 1 {
        return Err(HarnessError::Config("burst left the modulation domain".into()));
    }
    let fine = epsilon_equation_residual(&mt, &gs, HALF, 1)?;
    let coarse = epsilon_equation_residual(&mt, &gs, HALF, 2)?;
    Ok(ResidualStudy {
        t_center: t_a + HALF as f64 * dt_fine,
        dt_fine,
        residual_fine: fine,
        residual_coarse: coarse,
        ratio: coarse / fine,
        cross_check: parameter_cross_check(&mt, &gs, HALF)?,
    })
}

/// `|a − b| / max(|a|, |b|)`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

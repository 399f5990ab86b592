//! Acceptance suite: one PASS/FAIL line per criterion, each with the measured
//! numbers it was judged on. Run with `cargo test --release --test acceptance`.
//! The process exits non-zero when any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gkdv_lab::evolve::{evolve, stability_ceiling, EvolverConfig};
use gkdv_lab::functionals::{energy_linearization_check, smallness_comparisons};
use gkdv_lab::ground_state::sech_profile;
use gkdv_lab::harness::{
    make_initial_data, relative_gap, residual_study, run_instability, run_stability_control,
    ExperimentConfig, HeadlineMetrics,
};
use gkdv_lab::linop::{project_orthogonal, random_band_limited, LinearizedOperator, NOISE_BAND};
use gkdv_lab::modulation::{Modulator, ALPHA_BAR_NUM};
use gkdv_lab::{ground_state, Field, GridSpec};

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn check(id: u32, name: &'static str, budget_s: u64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_s);
    Outcome {
        id,
        name,
        pass: ok && elapsed <= budget,
        detail,
        elapsed,
        budget,
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISS"
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn default_grid() -> GridSpec {
    GridSpec::centered(100.0, 4096).unwrap()
}

fn ground_state_identities() -> (bool, String) {
    let gs = ground_state(5, 1.0, default_grid()).unwrap();
    let i = gs.integrals;
    let s3 = 3f64.sqrt();
    let res = gs.ode_residual();
    let e2 = rel(i.int_q2, s3 * PI / 2.0);
    let e4 = rel(i.int_q4, 3.0);
    let e6 = rel(i.int_q6, 3.0 * s3 * PI / 4.0);
    let ee = i.energy.abs();
    let ok = res <= 1e-8 && e2 <= 1e-8 && e4 <= 1e-8 && e6 <= 1e-8 && ee <= 1e-8;
    (
        ok,
        format!("ode residual {res:.1e}, rel errors Q2 {e2:.1e} Q4 {e4:.1e} Q6 {e6:.1e}, |E[Q]| {ee:.1e}"),
    )
}

fn spectral_structure() -> (bool, String) {
    let gs = ground_state(5, 1.0, GridSpec::centered(100.0, 2048).unwrap()).unwrap();
    let op = LinearizedOperator::new(&gs);
    let pairs = op.spectrum(2).unwrap();
    let q3 = gs.q_pow(3);
    let qy = &gs.q_deriv;
    let overlap = |f: &Field, g: &Field| f.inner(g).unwrap().abs() / (f.norm_l2() * g.norm_l2());
    let (l0, l1) = (pairs[0].eigenvalue, pairs[1].eigenvalue);
    let o0 = overlap(&pairs[0].eigenfunction, &q3);
    let o1 = overlap(&pairs[1].eigenfunction, qy);
    let l_lq = op.apply(&gs.lambda_q).unwrap();
    let lq_err = l_lq.axpy(2.0, &gs.q).unwrap().sup_norm() / (2.0 * gs.q.sup_norm());
    let lq_q = gs.lambda_q.inner(&gs.q).unwrap().abs();
    let ok = (l0 + 8.0).abs() <= 1e-5
        && l1.abs() <= 1e-5
        && o0 >= 1.0 - 1e-6
        && o1 >= 1.0 - 1e-6
        && lq_err <= 1e-8
        && lq_q <= 1e-8;
    (
        ok,
        format!(
            "λ0 {l0:.8} (overlap Q³ {o0:.9}), λ1 {l1:.1e} (overlap Q_y {o1:.9}), \
             |L(ΛQ)+2Q|/|2Q| {lq_err:.1e}, |(ΛQ,Q)| {lq_q:.1e}"
        ),
    )
}

fn coercivity() -> (bool, String) {
    let gs = ground_state(5, 1.0, default_grid()).unwrap();
    let op = LinearizedOperator::new(&gs);
    let basis = [gs.q_pow(3), gs.q_deriv.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let bands = [0.005, 0.02, 0.1, NOISE_BAND];
    let mut worst = [f64::INFINITY; 4];
    for i in 0..1000 {
        let f = random_band_limited(*gs.grid(), bands[i % 4], &mut rng);
        let g = project_orthogonal(&f, &basis).unwrap();
        worst[i % 4] = worst[i % 4].min(op.coercivity_ratio(&g).unwrap());
    }
    let min = worst.iter().copied().fold(f64::INFINITY, f64::min);
    (
        min >= 1.0 - 1e-6,
        format!("min (Lf,f)/|f|² over 1000 fields = {min:.9}; per band {bands:.3?}: {worst:.4?}"),
    )
}

fn solver_fidelity() -> (bool, String) {
    let grid = default_grid();
    let gs = ground_state(5, 1.0, grid).unwrap();
    let exact = |t: f64| Field::from_fn(grid, |x| sech_profile(5, 1.0, x - t)).unwrap();

    let cfg = EvolverConfig::new(5, 5e-4, 10.0, 2000);
    let traj = evolve(&gs.q, &cfg, &mut []).unwrap();
    let last = traj.points.last().unwrap();
    let err = last.u.axpy(-1.0, &exact(last.t)).unwrap().sup_norm();
    let audit = traj.audit();
    let completed = traj.halt.is_completed() && (last.t - 10.0).abs() < 1e-12;

    let run_to_one = |dt: f64| {
        let mut c = EvolverConfig::new(5, dt, 1.0, 1_000_000);
        c.enforce_ceiling = false;
        let t = evolve(&gs.q, &c, &mut []).unwrap();
        t.points.last().unwrap().u.axpy(-1.0, &exact(1.0)).unwrap().sup_norm()
    };
    let (e_coarse, e_fine) = (run_to_one(2e-3), run_to_one(1e-3));
    let ratio = e_coarse / e_fine;

    let ok = completed
        && err <= 1e-6
        && audit.mass_drift_rel_per_time <= 1e-10
        && audit.energy_drift_per_time <= 1e-8
        && audit.mean_drift_per_time <= 1e-10
        && ratio >= 12.0;
    (
        ok,
        format!(
            "t=10 error {err:.2e} [{}], drifts mass {:.1e} energy {:.1e} mean {:.1e} [{}], \
             dt-halving ratio {ratio:.1} ({e_coarse:.2e} -> {e_fine:.2e}) [{}]",
            mark(completed && err <= 1e-6),
            audit.mass_drift_rel_per_time,
            audit.energy_drift_per_time,
            audit.mean_drift_per_time,
            mark(
                audit.mass_drift_rel_per_time <= 1e-10
                    && audit.energy_drift_per_time <= 1e-8
                    && audit.mean_drift_per_time <= 1e-10
            ),
            mark(ratio >= 12.0)
        ),
    )
}

fn modulation(mid_t: f64) -> (bool, String) {
    let grid = default_grid();
    let gs = ground_state(5, 1.0, grid).unwrap();
    let m = Modulator::new(&gs);
    let (a, b) = (1.2f64, 3.0f64);
    let u = Field::from_fn(grid, |x| sech_profile(5, 1.0, (x - b) / a) / a.sqrt()).unwrap();
    let fit = m.modulate(&u).unwrap();
    let fit_err = (fit.lambda1 - a).abs().max((fit.x1 - b).abs());

    let cfg = ExperimentConfig::instability(10);
    let study = residual_study(&cfg, mid_t, 0.01 / 44.0).unwrap();
    let drop_ok = (3.0..=5.0).contains(&study.ratio);
    let ok = fit_err <= 1e-8 && study.residual_fine <= 0.05 && drop_ok;
    (
        ok,
        format!(
            "fit error {fit_err:.1e} [{}]; residual at t={:.3}: {:.4} (Δs~dt={:.2e}) [{}], \
             {:.4} at doubled spacing, ratio {:.2} [{}]",
            mark(fit_err <= 1e-8),
            study.t_center,
            study.residual_fine,
            study.dt_fine,
            mark(study.residual_fine <= 0.05),
            study.residual_coarse,
            study.ratio,
            mark(drop_ok)
        ),
    )
}

fn monotonicity(m: &HeadlineMetrics, mm: f64) -> (bool, String) {
    let theta = m.theta.unwrap_or(f64::NAN);
    let slope = m.monotonicity_slope.unwrap_or(f64::NAN);
    let u_tail = m.tail_slope_u_max.unwrap_or(f64::NAN);
    let eps_tail = m.tail_slope_eps_max.unwrap_or(f64::NAN);
    let theta_ok = theta.is_finite() && theta >= 0.0;
    let slope_ok = slope <= -0.8 / mm;
    let u_ok = u_tail <= -0.7 / mm;
    let eps_ok = eps_tail <= -0.7 / (2.0 * mm);
    (
        theta_ok && slope_ok && u_ok && eps_ok,
        format!(
            "window {} snapshots, θ = {theta:.4} [{}]; ln max(I(t0)-I(t)) slope {slope:.4} vs -1/M = {:.4} [{}]; \
             steepest-case tail slopes u {u_tail:.3} (bound {:.4}) [{}], ε {eps_tail:.3} (bound {:.4}) [{}]",
            m.window_len,
            mark(theta_ok),
            -1.0 / mm,
            mark(slope_ok),
            -1.0 / mm,
            mark(u_ok),
            -0.5 / mm,
            mark(eps_ok)
        ),
    )
}

fn instability_headline(m: &HeadlineMetrics, fine: &HeadlineMetrics, t_max: f64) -> (bool, String) {
    let a = m.k_a_strictly_increasing == Some(true);
    let slope = m.k_a_mean_slope.unwrap_or(f64::NAN);
    let b = slope >= m.slope_threshold;
    let c = m.exit_time_h1.is_some_and(|t| t < t_max);
    let k_slope = m.k_mean_slope.unwrap_or(f64::NAN);
    let d = m.k_strictly_increasing == Some(true) && k_slope >= m.slope_threshold;
    let gap_slope = relative_gap(slope, fine.k_a_mean_slope.unwrap_or(f64::NAN));
    let gap_window = relative_gap(m.window_end_t, fine.window_end_t);
    let gap_exit = relative_gap(
        m.exit_time_h1.unwrap_or(f64::NAN),
        fine.exit_time_h1.unwrap_or(f64::NAN),
    );
    let gap_exit = if gap_exit.is_nan() { 1.0 } else { gap_exit };
    let stable = gap_slope <= 0.05 && gap_window <= 0.05 && gap_exit <= 0.05;
    (
        a && b && c && d && stable,
        format!(
            "(a) K_A increasing [{}]; (b) mean slope {slope:.4} >= {:.4} [{}] (½∫ε₀Q = {:.4}, min slope {:.4}); \
             (c) H¹ tube {:.4} > α₀ at t = {:?}, ᾱ crossing t = {:.2} [{}]; (d) K slope {k_slope:.4} [{}]; \
             N=8192 gaps: slope {gap_slope:.1e}, window {gap_window:.1e}, exit {gap_exit:.1e} [{}]",
            mark(a),
            m.slope_threshold,
            mark(b),
            0.5 * m.int_eps0_q,
            m.k_a_min_slope.unwrap_or(f64::NAN),
            m.tube_initial_h1,
            m.exit_time_h1,
            m.window_end_t,
            mark(c),
            mark(d),
            mark(stable)
        ),
    )
}

fn stability_contrast() -> (bool, String) {
    let cfg = ExperimentConfig::control(3, 10);
    let (art, manifest) = run_stability_control(&cfg, None).unwrap();
    let m = &manifest.metrics;
    let reached = art.trajectory.halt.is_completed() && (art.trajectory.t_end() - cfg.t_max).abs() < 1e-9;
    let confined = m.window_len == art.trajectory.points.len();
    let ok = reached && confined && m.tube_max_ratio <= 3.0;
    (
        ok,
        format!(
            "p=3 to t = {:.1} [{}], tube {:.4} -> max {:.4}, ratio {:.3} [{}]",
            art.trajectory.t_end(),
            mark(reached && confined),
            m.tube_initial_h1,
            m.tube_max_h1,
            m.tube_max_ratio,
            mark(m.tube_max_ratio <= 3.0)
        ),
    )
}

fn identities() -> (bool, String) {
    let gs = ground_state(5, 1.0, default_grid()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_lin: f64 = 0.0;
    for _ in 0..20 {
        let noise = random_band_limited(*gs.grid(), NOISE_BAND, &mut rng);
        let bump = Field::from_fn(*gs.grid(), |x| (-x * x / 16.0).exp()).unwrap();
        let eps = noise.zip_map(&bump, |a, b| 0.05 * a * b).unwrap();
        worst_lin = worst_lin.max(energy_linearization_check(&eps, &gs).unwrap());
    }
    let d10 = make_initial_data(10, &gs).unwrap();
    let d20 = make_initial_data(20, &gs).unwrap();
    let r10 = smallness_comparisons(&d10.eps0, &gs).unwrap();
    let r20 = smallness_comparisons(&d20.eps0, &gs).unwrap();
    let u = gs.q.axpy(1.0, &d10.eps0).unwrap();
    let m0_direct = u.inner(&u).unwrap() - gs.q.inner(&gs.q).unwrap();
    let mass_err = ((m0_direct - 2.0 * r10.int_eps0_q).abs() - d10.eps0.inner(&d10.eps0).unwrap()).abs();
    let scalings = [
        r10.mass_gap / r20.mass_gap,
        r10.energy_gap / r20.energy_gap,
        r10.mixed_gap / r20.mixed_gap,
        r10.eps0_h1_sq / r20.eps0_h1_sq,
    ];
    let scal_ok = scalings.iter().all(|s| (s / 4.0 - 1.0).abs() <= 0.1);
    let ok = worst_lin <= 1e-9 && mass_err <= 1e-12 && scal_ok;
    (
        ok,
        format!(
            "energy expansion discrepancy {worst_lin:.1e} [{}]; ||M0-2∫ε0Q| - |ε0|²| = {mass_err:.1e} [{}]; \
             halving ratios (mass, energy, mixed, H¹²) = {:.3?} [{}]",
            mark(worst_lin <= 1e-9),
            mark(mass_err <= 1e-12),
            scalings,
            mark(scal_ok)
        ),
    )
}

fn main() -> ExitCode {
    let mut out = vec![
        check(1, "ground-state identities", 1, ground_state_identities),
        check(2, "linearized spectrum", 30, spectral_structure),
        check(3, "constrained coercivity", 10, coercivity),
    ];
    out.push(check(4, "solver fidelity", 120, solver_fidelity));

    let start = Instant::now();
    let cfg = ExperimentConfig::instability(10);
    let (_, coarse) = run_instability(&cfg, None).unwrap();
    let shared = start.elapsed();
    let m = coarse.metrics.clone();
    assert!(m.window_len >= 3 && m.tube_initial_h1 < ALPHA_BAR_NUM);

    out.push(check(5, "modulation", 300, || modulation(0.5 * m.window_end_t)));
    let mut o6 = check(6, "monotonicity", 300, || monotonicity(&m, cfg.weights.m));
    o6.elapsed += shared;
    o6.pass &= o6.elapsed <= o6.budget;
    out.push(o6);
    let mut o7 = check(7, "instability headline", 900, || {
        let mut fine_cfg = cfg;
        fine_cfg.grid = GridSpec::centered(100.0, 8192).unwrap();
        let (_, fine) = run_instability(&fine_cfg, None).unwrap();
        instability_headline(&m, &fine.metrics, cfg.t_max)
    });
    o7.elapsed += shared;
    o7.pass &= o7.elapsed <= o7.budget;
    out.push(o7);
    out.push(check(8, "stability contrast", 600, stability_contrast));
    out.push(check(9, "identity suite", 10, identities));

    println!();
    for o in &out {
        println!(
            "{} criterion {}: {} ({:.1} s of {} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.elapsed.as_secs_f64(),
            o.budget.as_secs(),
            o.detail
        );
    }
    let ceiling = stability_ceiling(&cfg.grid, 5, 1.0, true);
    println!("(reference: unit-amplitude step ceiling at N=4096 is {ceiling:.3e})");
    let failed: Vec<u32> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", out.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}

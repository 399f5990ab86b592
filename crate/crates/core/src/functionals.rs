//! Scalar functionals evaluated along modulated trajectories: the
//! monotonicity weight `ψ` and the weighted mass `I`, right-tail masses,
//! the virial pairings `J_A`, `J` and their rescaled forms `K_A`, `K`, the
//! energy linearization identity and the smallness comparisons for the
//! initial perturbation.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolve::TrajectoryPoint;
use crate::grid::{dot, Field, GridError};
use crate::ground_state::GroundState;
use crate::linop::{LinearizedOperator, LinopError};
use crate::modulation::ModulatedTrajectory;
use crate::spectral::Spectral;
use crate::stats::derivative_nonuniform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error("invalid weight configuration: {0}")]
    Weights(String),
    #[error("time {t} outside the trajectory [{t_min}, {t_max}]")]
    TimeOutOfRange { t: f64, t_min: f64, t_max: f64 },
    #[error("require t <= t0 (got t = {t}, t0 = {t0})")]
    TimeOrder { t: f64, t0: f64 },
    #[error("the identity is specific to p = 5, c = 1")]
    UnsupportedGroundState,
    #[error("empty modulated trajectory")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub m: f64,
    pub x0: f64,
    pub a: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            m: 4.0,
            x0: 1.0,
            a: 1.0,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<(), FunctionalError> {
        if !(self.m >= 4.0) {
            return Err(FunctionalError::Weights(format!("M = {} < 4", self.m)));
        }
        if !(self.x0 > 0.0) {
            return Err(FunctionalError::Weights(format!("x0 = {} <= 0", self.x0)));
        }
        if !(self.a >= 1.0) {
            return Err(FunctionalError::Weights(format!("A = {} < 1", self.a)));
        }
        Ok(())
    }
}

/// `ψ(x) = (2/π) arctan(e^{x/M})`.
pub fn psi(x: f64, m: f64) -> f64 {
    let z = x / m;
    if z > 0.0 {
        1.0 - 2.0 / PI * (-z).exp().atan()
    } else {
        2.0 / PI * z.exp().atan()
    }
}

/// `ψ′(x) = 1 / (πM cosh(x/M))`.
pub fn psi1(x: f64, m: f64) -> f64 {
    1.0 / (PI * m * (x / m).cosh())
}

/// `ψ‴(x) = sech(x/M) (1 − 2 sech²(x/M)) / (πM³)`.
pub fn psi3(x: f64, m: f64) -> f64 {
    let sech = 1.0 / (x / m).cosh();
    sech * (1.0 - 2.0 * sech * sech) / (PI * m * m * m)
}

const GL_NODES: usize = 48;

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton on `P_n`.
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_NODES;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            x[i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
        (x, w)
    })
}

/// `b(t) = exp(−1 / (t(1 − t)))` on `(0, 1)`, zero elsewhere.
fn bump(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

const PANELS: usize = 16;

/// `∫_0^τ b` by composite Gauss–Legendre on fixed panels of `[0, 1]`.
fn bump_integral(tau: f64) -> f64 {
    let tau = tau.clamp(0.0, 1.0);
    let (x, w) = gauss_legendre();
    let width = 1.0 / PANELS as f64;
    let mut total = 0.0;
    let mut left = 0.0;
    while left < tau {
        let right = (left + width).min(tau);
        let (mid, half) = (0.5 * (left + right), 0.5 * (right - left));
        total += half * x.iter().zip(w).map(|(xi, wi)| wi * bump(mid + half * xi)).sum::<f64>();
        left += width;
    }
    total
}

fn bump_total() -> f64 {
    static TOTAL: OnceLock<f64> = OnceLock::new();
    *TOTAL.get_or_init(|| bump_integral(1.0))
}

/// Smooth cutoff: 1 on `z <= 1`, 0 on `z >= 2`, and
/// `1 − ∫_0^{z−1} b / ∫_0^1 b` in between, with `b(t) = e^{−1/(t(1−t))}`.
pub fn cutoff_phi(z: f64) -> f64 {
    if z <= 1.0 {
        1.0
    } else if z >= 2.0 {
        0.0
    } else {
        (1.0 - bump_integral(z - 1.0) / bump_total()).clamp(0.0, 1.0)
    }
}

/// `φ′(z) = −b(z − 1) / ∫_0^1 b`.
pub fn cutoff_phi_prime(z: f64) -> f64 {
    -bump(z - 1.0) / bump_total()
}

/// `φ_A(y) = φ(y/A)`.
pub fn cutoff_phi_a(y: f64, a: f64) -> f64 {
    cutoff_phi(y / a)
}

/// Wraps `x − center` into `[−L/2, L/2)`.
fn relative(x: f64, center: f64, length: f64) -> f64 {
    (x - center + 0.5 * length).rem_euclid(length) - 0.5 * length
}

/// `∫_{x > x0} u²(x + center) dx`, with positions taken modulo the box
/// and the partial cell at the cut interpolated linearly.
pub fn right_tail_mass(u: &Field, center: f64, x0: f64) -> f64 {
    let grid = u.grid();
    let h = grid.spacing();
    let len = grid.length;
    u.values()
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let z = relative(grid.x(j), center, len);
            let frac = ((z - x0) / h + 0.5).clamp(0.0, 1.0);
            frac * v * v
        })
        .sum::<f64>()
        * h
}

/// `I_{x0,t0}(t) = ∫u²(t, x) ψ(x − x(t0) + ½(t0 − t) − x0) dx`, with `x(·)`
/// interpolated linearly from the modulated centre series and positions
/// taken modulo the box.
pub fn monotonicity_i(
    points: &[TrajectoryPoint],
    mt: &ModulatedTrajectory,
    weights: &WeightConfig,
    t: f64,
    t0: f64,
) -> Result<f64, FunctionalError> {
    weights.validate()?;
    if t > t0 {
        return Err(FunctionalError::TimeOrder { t, t0 });
    }
    let (t_min, t_max) = match (mt.t.first(), mt.t.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(FunctionalError::Empty),
    };
    for &tt in &[t, t0] {
        if tt < t_min - 1e-12 || tt > t_max + 1e-12 {
            return Err(FunctionalError::TimeOutOfRange { t: tt, t_min, t_max });
        }
    }
    let x_t0 = interpolate(&mt.t, &mt.x, t0);
    let u = nearest_snapshot(points, t);
    let grid = u.grid();
    let len = grid.length;
    let shift = x_t0 - 0.5 * (t0 - t) + weights.x0;
    Ok(u.values()
        .iter()
        .enumerate()
        .map(|(j, v)| v * v * psi(relative(grid.x(j), shift, len), weights.m))
        .sum::<f64>()
        * grid.spacing())
}

fn nearest_snapshot(points: &[TrajectoryPoint], t: f64) -> &Field {
    let k = points
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.t - t).abs().total_cmp(&(b.1.t - t).abs()))
        .map_or(0, |(k, _)| k);
    &points[k].u
}

fn interpolate(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    match ts.iter().position(|&s| s >= t) {
        Some(0) | None if ts.len() == 1 => ys[0],
        Some(0) => ys[0],
        None => ys[ys.len() - 1],
        Some(i) => {
            let w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
            ys[i - 1] + w * (ys[i] - ys[i - 1])
        }
    }
}

/// `J_A = ∫ε F φ_A` on the `y`-grid, or `J = ∫ε F` for `a = None`.
pub fn virial_j(eps: &Field, gs: &GroundState, a: Option<f64>) -> Result<f64, FunctionalError> {
    eps.same_grid(&gs.f_primitive)?;
    let h = eps.grid().spacing();
    let f = gs.f_primitive.values();
    Ok(match a {
        None => dot(eps.values(), f) * h,
        Some(a) => {
            let grid = eps.grid();
            eps.values()
                .iter()
                .zip(f)
                .enumerate()
                .map(|(j, (e, f))| e * f * cutoff_phi_a(grid.x(j), a))
                .sum::<f64>()
                * h
        }
    })
}

/// `|J_A| / ((1 + A^{1/2}) ‖ε‖₂)`.
pub fn virial_bound_ratio(eps: &Field, gs: &GroundState, a: f64) -> Result<f64, FunctionalError> {
    let j = virial_j(eps, gs, Some(a))?;
    Ok(j.abs() / ((1.0 + a.sqrt()) * eps.norm_l2().max(1e-300)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSeries {
    pub label: String,
    pub s: Vec<f64>,
    pub values: Vec<f64>,
    /// Three-point derivative in `s`.
    pub slope: Vec<f64>,
}

impl FunctionalSeries {
    pub fn mean_slope(&self) -> Option<f64> {
        let n = self.s.len();
        (n >= 2).then(|| (self.values[n - 1] - self.values[0]) / (self.s[n - 1] - self.s[0]))
    }

    pub fn strictly_increasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] > w[0])
    }

    pub fn min_slope(&self) -> Option<f64> {
        self.slope.iter().copied().reduce(f64::min)
    }
}

/// `K_A(s) = λ^{1/2}(J_A − κ)` (or `K` for `a = None`) at every stored ε.
pub fn functional_k(
    mt: &ModulatedTrajectory,
    gs: &GroundState,
    a: Option<f64>,
) -> Result<FunctionalSeries, FunctionalError> {
    if mt.epsilons.is_empty() {
        return Err(FunctionalError::Empty);
    }
    let kappa = gs.kappa();
    let mut s = Vec::with_capacity(mt.epsilons.len());
    let mut values = Vec::with_capacity(mt.epsilons.len());
    for st in &mt.epsilons {
        let j = virial_j(&st.jet.eps, gs, a)?;
        s.push(mt.s[st.index]);
        values.push(mt.lambda[st.index].sqrt() * (j - kappa));
    }
    let slope = derivative_nonuniform(&s, &values);
    Ok(FunctionalSeries {
        label: match a {
            Some(a) => format!("K_A(A={a})"),
            None => "K".into(),
        },
        s,
        values,
        slope,
    })
}

/// `J` or `J_A` series at every stored ε.
pub fn functional_j(
    mt: &ModulatedTrajectory,
    gs: &GroundState,
    a: Option<f64>,
) -> Result<FunctionalSeries, FunctionalError> {
    let mut s = Vec::with_capacity(mt.epsilons.len());
    let mut values = Vec::with_capacity(mt.epsilons.len());
    for st in &mt.epsilons {
        s.push(mt.s[st.index]);
        values.push(virial_j(&st.jet.eps, gs, a)?);
    }
    let slope = derivative_nonuniform(&s, &values);
    Ok(FunctionalSeries {
        label: match a {
            Some(a) => format!("J_A(A={a})"),
            None => "J".into(),
        },
        s,
        values,
        slope,
    })
}

/// Smallest `A >= 2M` with `A^{1/2} e^{−A/(4M)} + A^{−1/2} <= (∫ε₀Q)^{1/2}`,
/// by bisection (the left side decreases on `[2M, ∞)`).
pub fn select_cutoff_scale(int_eps0_q: f64, m: f64) -> Result<f64, FunctionalError> {
    if !(int_eps0_q > 0.0) {
        return Err(FunctionalError::Weights(format!(
            "∫ε₀Q = {int_eps0_q} must be positive"
        )));
    }
    if !(m >= 4.0) {
        return Err(FunctionalError::Weights(format!("M = {m} < 4")));
    }
    let target = int_eps0_q.sqrt();
    let f = |a: f64| a.sqrt() * (-a / (4.0 * m)).exp() + 1.0 / a.sqrt();
    let mut lo = 2.0 * m;
    if f(lo) <= target {
        return Ok(lo);
    }
    let mut hi = lo;
    while f(hi) > target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(FunctionalError::Weights("no admissible A".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    Ok(hi)
}

fn require_critical(gs: &GroundState) -> Result<(), FunctionalError> {
    if gs.p != 5 || (gs.c - 1.0).abs() > 1e-15 {
        return Err(FunctionalError::UnsupportedGroundState);
    }
    Ok(())
}

/// `E[f] = ½∫f_y² − ∫f⁶/6`.
fn energy5(sp: &Spectral, f: &[f64]) -> f64 {
    let h = sp.grid().spacing();
    0.5 * sp.dirichlet_energy(f) - f.iter().map(|v| v.powi(6)).sum::<f64>() * h / 6.0
}

/// `|LHS − RHS|` for `E[Q+ε] + ∫Qε + ½∫ε² = ½(Lε,ε) − (20∫Q³ε³ + 15∫Q²ε⁴
/// + 6∫Qε⁵ + ∫ε⁶)/6`.
pub fn energy_linearization_check(eps: &Field, gs: &GroundState) -> Result<f64, FunctionalError> {
    require_critical(gs)?;
    eps.same_grid(&gs.q)?;
    let sp = Spectral::new(*gs.grid());
    let h = gs.grid().spacing();
    let q = gs.q.values();
    let e = eps.values();
    let v: Vec<f64> = q.iter().zip(e).map(|(a, b)| a + b).collect();
    let lhs = energy5(&sp, &v) + dot(q, e) * h + 0.5 * dot(e, e) * h;
    let op = LinearizedOperator::new(gs);
    let quad = op.quadratic_form(eps)?;
    let higher: f64 = q
        .iter()
        .zip(e)
        .map(|(q, e)| {
            let e2 = e * e;
            let e3 = e2 * e;
            20.0 * q * q * q * e3 + 15.0 * q * q * e2 * e2 + 6.0 * q * e3 * e2 + e3 * e3
        })
        .sum::<f64>()
        * h;
    let rhs = 0.5 * quad - higher / 6.0;
    Ok((lhs - rhs).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallnessReport {
    /// `M₀ = ∫(Q + ε₀)² − ∫Q²`.
    pub m0: f64,
    /// `E₀ = E[Q + ε₀]`.
    pub e0: f64,
    pub int_eps0_q: f64,
    pub eps0_l2_sq: f64,
    pub eps0_h1_sq: f64,
    /// `|M₀ − 2∫ε₀Q|`
    pub mass_gap: f64,
    /// `|E₀ + ∫ε₀Q|`
    pub energy_gap: f64,
    /// `|E₀ + ½M₀|`
    pub mixed_gap: f64,
    pub mass_ratio: f64,
    pub energy_ratio: f64,
    pub mixed_ratio: f64,
}

pub fn smallness_comparisons(eps0: &Field, gs: &GroundState) -> Result<SmallnessReport, FunctionalError> {
    require_critical(gs)?;
    eps0.same_grid(&gs.q)?;
    let sp = Spectral::new(*gs.grid());
    let h = gs.grid().spacing();
    let q = gs.q.values();
    let e = eps0.values();
    let v: Vec<f64> = q.iter().zip(e).map(|(a, b)| a + b).collect();
    // expanded form avoids cancelling ∫(Q+ε)² against ∫Q²
    let int_eps0_q = dot(q, e) * h;
    let eps0_l2_sq = dot(e, e) * h;
    let m0 = 2.0 * int_eps0_q + eps0_l2_sq;
    let e0 = energy5(&sp, &v);
    let eps0_h1_sq = sp.h1_norm_sq(e);
    let mass_gap = (m0 - 2.0 * int_eps0_q).abs();
    let energy_gap = (e0 + int_eps0_q).abs();
    let mixed_gap = (e0 + 0.5 * m0).abs();
    let d = eps0_h1_sq.max(1e-300);
    Ok(SmallnessReport {
        m0,
        e0,
        int_eps0_q,
        eps0_l2_sq,
        eps0_h1_sq,
        mass_gap,
        energy_gap,
        mixed_gap,
        mass_ratio: mass_gap / d,
        energy_ratio: energy_gap / d,
        mixed_ratio: mixed_gap / d,
    })
}

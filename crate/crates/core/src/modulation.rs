//! Decomposition of a solution near the soliton family as
//! `u(x) = λ^{-1/2} (Q + ε)((x − x₁)/λ)`, with `ε ⊥ Q³` and `ε ⊥ Q_y`.
//!
//! The dilated, translated field `λ^{1/2} u(λy + x₁)` is obtained by
//! band-limited resampling. Derivatives of `ε` are taken from derivatives of
//! the interpolant of `u`, never by differentiating `ε` on the `y`-grid:
//! for `λ ≠ 1` the resampled field is not periodic in `y`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolve::TrajectoryPoint;
use crate::exec::Execution;
use crate::grid::{dot, Field, GridError, GridSpec};
use crate::ground_state::GroundState;
use crate::resample::Resampler;
use crate::stats::{derivative_nonuniform, three_point};

/// Default numerical tube radius (H¹) inside which fits are attempted.
pub const ALPHA_BAR_NUM: f64 = 0.3;
pub const MAX_NEWTON_ITER: usize = 50;
pub const MAX_STEP_HALVINGS: usize = 5;
pub const LAMBDA_MIN: f64 = 0.2;
pub const LAMBDA_MAX: f64 = 5.0;
/// Target for `max(|(ε, Q³)|, |(ε, Q_y)|)`.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;
const ACCEPT_TOL: f64 = 1e-10;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulationError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("tube distance {alpha:.4} exceeds the numerical tube radius {alpha_bar}")]
    OutsideTube { alpha: f64, alpha_bar: f64 },
    #[error("Newton iteration stalled after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("dilation {lambda} left ({LAMBDA_MIN}, {LAMBDA_MAX})")]
    LambdaOutOfRange { lambda: f64 },
    #[error("singular Jacobian in the modulation system")]
    SingularJacobian,
    #[error("the ε equation is implemented for p = 5 only (got p = {0})")]
    UnsupportedPower(u32),
    #[error("stored-ε index {index} with step {step} needs neighbours inside 0..{len}")]
    IndexOutOfRange { index: usize, step: usize, len: usize },
    #[error("stored ε at index {0} carries no third derivative")]
    MissingJet(usize),
    #[error("empty trajectory")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TubeNorm {
    L2,
    H1,
}

/// `alpha = min_y ‖u − Q(· + y)‖`, attained at `y = y_star`. A soliton
/// centred at `x₀` has `y_star = −x₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeDistance {
    pub alpha: f64,
    pub y_star: f64,
}

#[derive(Debug, Clone)]
pub struct ModulationFit {
    pub lambda1: f64,
    pub x1: f64,
    pub epsilon: Field,
    /// `ε_y` from the derivative of the interpolant of `u`.
    pub epsilon_y: Vec<f64>,
    /// `((ε, Q³), (ε, Q_y))`.
    pub residuals: (f64, f64),
    pub iterations: usize,
}

impl ModulationFit {
    pub fn eps_l2(&self) -> f64 {
        self.epsilon.norm_l2()
    }

    pub fn eps_h1(&self) -> f64 {
        let h = self.epsilon.grid().spacing();
        (self.epsilon.norm_l2().powi(2) + dot(&self.epsilon_y, &self.epsilon_y) * h).sqrt()
    }
}

/// `ε`, `ε_y` and `ε_yyy` at one time.
#[derive(Debug, Clone)]
pub struct EpsilonJet {
    pub eps: Field,
    pub eps_y: Vec<f64>,
    pub eps_yyy: Option<Vec<f64>>,
}

/// Fits against one ground state. Construction precomputes the transforms
/// shared by every fit.
#[derive(Debug, Clone)]
pub struct Modulator {
    gs: GroundState,
    resampler: Resampler,
    q_hat: Vec<Complex64>,
    q3: Vec<f64>,
    q_sup: f64,
}

impl Modulator {
    pub fn new(gs: &GroundState) -> Self {
        let grid = *gs.grid();
        let resampler = Resampler::new(grid);
        let q_hat = resampler.spectrum(gs.q.values());
        Modulator {
            q3: gs.q_pow(3).into_values(),
            q_sup: gs.q.sup_norm(),
            gs: gs.clone(),
            resampler,
            q_hat,
        }
    }

    pub fn ground_state(&self) -> &GroundState {
        &self.gs
    }

    pub fn grid(&self) -> &GridSpec {
        self.gs.grid()
    }

    fn check(&self, u: &Field) -> Result<(), ModulationError> {
        if u.grid() != self.grid() {
            return Err(GridError::GridMismatch.into());
        }
        Ok(())
    }

    pub fn tube_distance(&self, u: &Field, norm: TubeNorm) -> Result<TubeDistance, ModulationError> {
        self.check(u)?;
        let u_hat = self.resampler.spectrum(u.values());
        Ok(self.tube_distance_hat(&u_hat, norm))
    }

    fn tube_distance_hat(&self, u_hat: &[Complex64], norm: TubeNorm) -> TubeDistance {
        let sp = self.resampler.spectral();
        let grid = *self.grid();
        let n = grid.n_points;
        let k = sp.wavenumbers();
        let weight = |m: usize| match norm {
            TubeNorm::L2 => 1.0,
            TubeNorm::H1 => 1.0 + k[m] * k[m],
        };
        let mut a: Vec<Complex64> = (0..n)
            .map(|m| {
                if m == n / 2 {
                    Complex64::default()
                } else {
                    u_hat[m] * self.q_hat[m].conj() * weight(m)
                }
            })
            .collect();
        let coeffs = a.clone();
        let mut scratch = vec![Complex64::default(); sp.scratch_len()];
        sp.forward_in_place(&mut a, &mut scratch);
        let j = (0..n)
            .max_by(|&i, &j| a[i].re.total_cmp(&a[j].re))
            .unwrap_or(0);
        let h = grid.spacing();
        let mut y = crate::spectral::signed_mode(j, n) as f64 * h;

        // Newton polish of the correlation maximum
        for _ in 0..30 {
            let (mut d1, mut d2) = (0.0, 0.0);
            for (c, &km) in coeffs.iter().zip(k) {
                let z = c * Complex64::from_polar(1.0, -km * y);
                d1 += km * z.im;
                d2 -= km * km * z.re;
            }
            if d2 >= 0.0 {
                break;
            }
            let dy = -d1 / d2;
            let dy = dy.clamp(-h, h);
            y += dy;
            if dy.abs() < 1e-14 {
                break;
            }
        }
        let len = grid.length;
        let y = (y + 0.5 * len).rem_euclid(len) - 0.5 * len;
        let w = len / (n as f64 * n as f64);
        let d2: f64 = (0..n)
            .map(|m| {
                let diff = u_hat[m] - self.q_hat[m] * Complex64::from_polar(1.0, k[m] * y);
                weight(m) * diff.norm_sqr()
            })
            .sum::<f64>()
            * w;
        TubeDistance {
            alpha: d2.max(0.0).sqrt(),
            y_star: y,
        }
    }

    /// `ε = λ^{1/2} u(λy + x) − Q` on the grid.
    fn epsilon(&self, u_hat: &[Complex64], lambda: f64, x: f64) -> Vec<f64> {
        let w = self.resampler.affine(u_hat, lambda, x, 0);
        let s = lambda.sqrt();
        w.iter()
            .zip(self.gs.q.values())
            .map(|(w, q)| s * w - q)
            .collect()
    }

    fn system(&self, u_hat: &[Complex64], lambda: f64, x: f64) -> [f64; 2] {
        let eps = self.epsilon(u_hat, lambda, x);
        let h = self.grid().spacing();
        [
            dot(&eps, &self.q3) * h,
            dot(&eps, self.gs.q_deriv.values()) * h,
        ]
    }

    /// Fit seeded from the tube-distance minimiser and the amplitude ratio.
    /// The tube radius is not checked here; [`modulated_trajectory`] ends the
    /// confined window once the distance exceeds it.
    pub fn modulate(&self, u: &Field) -> Result<ModulationFit, ModulationError> {
        self.check(u)?;
        let u_hat = self.resampler.spectrum(u.values());
        let tube = self.tube_distance_hat(&u_hat, TubeNorm::H1);
        self.fit_from_tube(u, &u_hat, tube)
    }

    fn fit_from_tube(
        &self,
        u: &Field,
        u_hat: &[Complex64],
        tube: TubeDistance,
    ) -> Result<ModulationFit, ModulationError> {
        let sup = u.sup_norm();
        let lambda0 = if sup > 0.0 {
            (self.q_sup / sup).powi(2).clamp(0.5, 2.0)
        } else {
            1.0
        };
        self.solve(u_hat, lambda0, -tube.y_star)
    }

    /// Fit from an explicit seed, without the tube-radius precondition.
    pub fn modulate_seeded(
        &self,
        u: &Field,
        lambda0: f64,
        x0: f64,
    ) -> Result<ModulationFit, ModulationError> {
        self.check(u)?;
        let u_hat = self.resampler.spectrum(u.values());
        self.solve(&u_hat, lambda0, x0)
    }

    fn solve(
        &self,
        u_hat: &[Complex64],
        lambda0: f64,
        x0: f64,
    ) -> Result<ModulationFit, ModulationError> {
        let (mut lam, mut x) = (lambda0, x0);
        let norm = |g: [f64; 2]| g[0].abs().max(g[1].abs());
        let mut g = self.system(u_hat, lam, x);
        let mut iterations = 0;
        while norm(g) > ORTHOGONALITY_TOL {
            if iterations == MAX_NEWTON_ITER {
                return Err(ModulationError::NoConvergence {
                    iterations,
                    residual: norm(g),
                });
            }
            iterations += 1;
            let hl = FD_STEP * lam;
            let gp = self.system(u_hat, lam + hl, x);
            let gm = self.system(u_hat, lam - hl, x);
            let gxp = self.system(u_hat, lam, x + FD_STEP);
            let gxm = self.system(u_hat, lam, x - FD_STEP);
            let j11 = (gp[0] - gm[0]) / (2.0 * hl);
            let j21 = (gp[1] - gm[1]) / (2.0 * hl);
            let j12 = (gxp[0] - gxm[0]) / (2.0 * FD_STEP);
            let j22 = (gxp[1] - gxm[1]) / (2.0 * FD_STEP);
            let det = j11 * j22 - j12 * j21;
            if !det.is_finite() || det.abs() < 1e-300 {
                return Err(ModulationError::SingularJacobian);
            }
            let dl = -(j22 * g[0] - j12 * g[1]) / det;
            let dx = -(-j21 * g[0] + j11 * g[1]) / det;

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_STEP_HALVINGS {
                let (lt, xt) = (lam + t * dl, x + t * dx);
                if lt > 0.0 {
                    let gt = self.system(u_hat, lt, xt);
                    if norm(gt) < norm(g) {
                        accepted = Some((lt, xt, gt));
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((lt, xt, gt)) => {
                    lam = lt;
                    x = xt;
                    g = gt;
                }
                // no decrease at roundoff level: accept the current point
                None if norm(g) <= ACCEPT_TOL => break,
                None => {
                    return Err(ModulationError::NoConvergence {
                        iterations,
                        residual: norm(g),
                    })
                }
            }
            if !(LAMBDA_MIN < lam && lam < LAMBDA_MAX) {
                return Err(ModulationError::LambdaOutOfRange { lambda: lam });
            }
        }
        if !(LAMBDA_MIN < lam && lam < LAMBDA_MAX) {
            return Err(ModulationError::LambdaOutOfRange { lambda: lam });
        }
        let jet = self.jet_hat(u_hat, lam, x, false);
        Ok(ModulationFit {
            lambda1: lam,
            x1: x,
            epsilon: jet.eps,
            epsilon_y: jet.eps_y,
            residuals: (g[0], g[1]),
            iterations,
        })
    }

    pub fn jet(&self, u: &Field, lambda: f64, x: f64, third: bool) -> Result<EpsilonJet, ModulationError> {
        self.check(u)?;
        let u_hat = self.resampler.spectrum(u.values());
        Ok(self.jet_hat(&u_hat, lambda, x, third))
    }

    fn jet_hat(&self, u_hat: &[Complex64], lambda: f64, x: f64, third: bool) -> EpsilonJet {
        let grid = *self.grid();
        let eps = Field::from_vec_unchecked(grid, self.epsilon(u_hat, lambda, x));
        let s = lambda.sqrt();
        let w1 = self.resampler.affine(u_hat, lambda, x, 1);
        let eps_y = w1
            .iter()
            .zip(self.gs.q_deriv.values())
            .map(|(w, qy)| s * lambda * w - qy)
            .collect();
        let eps_yyy = third.then(|| {
            let w3 = self.resampler.affine(u_hat, lambda, x, 3);
            let q3 = self.resampler.spectral().derivative(self.gs.q.values(), 3);
            let c = s * lambda.powi(3);
            w3.iter().zip(&q3).map(|(w, q)| c * w - q).collect()
        });
        EpsilonJet {
            eps,
            eps_y,
            eps_yyy,
        }
    }

    /// Inverse of the decomposition: `λ^{-1/2} (Q + ε)((x − x₁)/λ)`.
    pub fn reconstruct(&self, fit: &ModulationFit) -> Field {
        let grid = *self.grid();
        let v: Vec<f64> = fit
            .epsilon
            .values()
            .iter()
            .zip(self.gs.q.values())
            .map(|(e, q)| e + q)
            .collect();
        let w = self
            .resampler
            .affine_values(&v, 1.0 / fit.lambda1, -fit.x1 / fit.lambda1, 0);
        let s = fit.lambda1.sqrt();
        Field::from_vec_unchecked(grid, w.into_iter().map(|z| z / s).collect())
    }
}

pub fn tube_distance(u: &Field, gs: &GroundState) -> Result<TubeDistance, ModulationError> {
    Modulator::new(gs).tube_distance(u, TubeNorm::H1)
}

pub fn modulate(u: &Field, gs: &GroundState) -> Result<ModulationFit, ModulationError> {
    Modulator::new(gs).modulate(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationOptions {
    pub alpha_bar: f64,
    /// Keep `ε` for every `eps_stride`-th snapshot of the confined window.
    pub eps_stride: usize,
    /// Also keep `ε_yyy`, needed for the ε-equation residual.
    pub store_jets: bool,
}

impl Default for ModulationOptions {
    fn default() -> Self {
        ModulationOptions {
            alpha_bar: ALPHA_BAR_NUM,
            eps_stride: 1,
            store_jets: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoredEpsilon {
    /// Snapshot index inside the confined window.
    pub index: usize,
    pub jet: EpsilonJet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeExit {
    pub index: usize,
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ModulatedTrajectory {
    pub grid: GridSpec,
    pub p: u32,
    // confined window
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub x: Vec<f64>,
    pub eps_l2: Vec<f64>,
    pub eps_h1: Vec<f64>,
    pub lambda_s_over_lambda: Vec<f64>,
    pub x_s_over_lambda_minus_1: Vec<f64>,
    pub residual_q3: Vec<f64>,
    pub residual_qy: Vec<f64>,
    /// `2∫εQ + ∫ε²`, constant for the flow on the line.
    pub eps_mass: Vec<f64>,
    /// `E[Q + ε] / λ²`, constant for the flow on the line.
    pub rescaled_energy: Vec<f64>,
    pub epsilons: Vec<StoredEpsilon>,
    pub eps_stride: usize,
    // every snapshot
    pub tube_t: Vec<f64>,
    pub tube_h1: Vec<f64>,
    pub tube_l2: Vec<f64>,
    pub exit: Option<TubeExit>,
}

impl ModulatedTrajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `(|λ_s/λ| + |x_s/λ − 1|) / ‖ε‖₂` at every point of the window.
    pub fn parameter_control_ratio(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                (self.lambda_s_over_lambda[i].abs() + self.x_s_over_lambda_minus_1[i].abs())
                    / self.eps_l2[i].max(1e-300)
            })
            .collect()
    }

    /// First time the chosen tube distance exceeds `alpha0`.
    pub fn exit_time(&self, alpha0: f64, norm: TubeNorm) -> Option<f64> {
        let series = match norm {
            TubeNorm::L2 => &self.tube_l2,
            TubeNorm::H1 => &self.tube_h1,
        };
        series
            .iter()
            .zip(&self.tube_t)
            .find(|(a, _)| **a > alpha0)
            .map(|(_, t)| *t)
    }
}

struct SnapshotResult {
    tube_h1: f64,
    tube_l2: f64,
    fit: Result<(ModulationFit, Option<Vec<f64>>), ModulationError>,
}

pub fn modulated_trajectory(
    points: &[TrajectoryPoint],
    gs: &GroundState,
    opts: &ModulationOptions,
    exec: Execution,
) -> Result<ModulatedTrajectory, ModulationError> {
    if points.is_empty() {
        return Err(ModulationError::Empty);
    }
    let m = Modulator::new(gs);
    let grid = *gs.grid();
    let stride = opts.eps_stride.max(1);
    let results: Vec<SnapshotResult> = exec.map_range(points.len(), |i| {
        let u = &points[i].u;
        if u.grid() != &grid {
            return SnapshotResult {
                tube_h1: f64::NAN,
                tube_l2: f64::NAN,
                fit: Err(GridError::GridMismatch.into()),
            };
        }
        let u_hat = m.resampler.spectrum(u.values());
        let h1 = m.tube_distance_hat(&u_hat, TubeNorm::H1);
        let l2 = m.tube_distance_hat(&u_hat, TubeNorm::L2);
        let fit = if h1.alpha > opts.alpha_bar {
            Err(ModulationError::OutsideTube {
                alpha: h1.alpha,
                alpha_bar: opts.alpha_bar,
            })
        } else {
            m.fit_from_tube(u, &u_hat, h1)
        };
        let fit = fit.map(|fit| {
            let third = (opts.store_jets && i % stride == 0).then(|| {
                m.jet_hat(&u_hat, fit.lambda1, fit.x1, true)
                    .eps_yyy
                    .unwrap_or_default()
            });
            (fit, third)
        });
        SnapshotResult {
            tube_h1: h1.alpha,
            tube_l2: l2.alpha,
            fit,
        }
    });

    let mut out = ModulatedTrajectory {
        grid,
        p: gs.p,
        t: Vec::new(),
        s: Vec::new(),
        lambda: Vec::new(),
        x: Vec::new(),
        eps_l2: Vec::new(),
        eps_h1: Vec::new(),
        lambda_s_over_lambda: Vec::new(),
        x_s_over_lambda_minus_1: Vec::new(),
        residual_q3: Vec::new(),
        residual_qy: Vec::new(),
        eps_mass: Vec::new(),
        rescaled_energy: Vec::new(),
        epsilons: Vec::new(),
        eps_stride: stride,
        tube_t: points.iter().map(|p| p.t).collect(),
        tube_h1: results.iter().map(|r| r.tube_h1).collect(),
        tube_l2: results.iter().map(|r| r.tube_l2).collect(),
        exit: None,
    };

    let len = grid.length;
    let h = grid.spacing();
    let q = gs.q.values();
    let qy = gs.q_deriv.values();
    let p = gs.p as i32;
    for (i, r) in results.into_iter().enumerate() {
        let (fit, third) = match r.fit {
            Ok(v) => v,
            Err(e) => {
                out.exit = Some(TubeExit {
                    index: i,
                    t: points[i].t,
                    reason: e.to_string(),
                });
                break;
            }
        };
        let t = points[i].t;
        let x = match (out.x.last(), out.lambda.last(), out.t.last()) {
            (Some(&xp), Some(&lp), Some(&tp)) => {
                let predicted = xp + (t - tp) / (lp * lp);
                fit.x1 + len * ((predicted - fit.x1) / len).round()
            }
            _ => fit.x1,
        };
        let s = match (out.s.last(), out.lambda.last(), out.t.last()) {
            (Some(&sp), Some(&lp), Some(&tp)) => {
                sp + 0.5 * (t - tp) * (lp.powi(-3) + fit.lambda1.powi(-3))
            }
            _ => 0.0,
        };
        let eps = fit.epsilon.values();
        let mass = (2.0 * dot(eps, q) + dot(eps, eps)) * h;
        let energy = {
            let kin: f64 = fit
                .epsilon_y
                .iter()
                .zip(qy)
                .map(|(e, d)| (e + d) * (e + d))
                .sum();
            let pot: f64 = eps.iter().zip(q).map(|(e, q)| (e + q).powi(p + 1)).sum();
            (0.5 * kin - pot / (p as f64 + 1.0)) * h
        };
        out.t.push(t);
        out.s.push(s);
        out.lambda.push(fit.lambda1);
        out.x.push(x);
        out.eps_l2.push(fit.eps_l2());
        out.eps_h1.push(fit.eps_h1());
        out.residual_q3.push(fit.residuals.0);
        out.residual_qy.push(fit.residuals.1);
        out.eps_mass.push(mass);
        out.rescaled_energy.push(energy / (fit.lambda1 * fit.lambda1));
        if i % stride == 0 {
            out.epsilons.push(StoredEpsilon {
                index: i,
                jet: EpsilonJet {
                    eps: fit.epsilon,
                    eps_y: fit.epsilon_y,
                    eps_yyy: third,
                },
            });
        }
    }

    let log_lambda: Vec<f64> = out.lambda.iter().map(|l| l.ln()).collect();
    out.lambda_s_over_lambda = derivative_nonuniform(&out.s, &log_lambda);
    out.x_s_over_lambda_minus_1 = derivative_nonuniform(&out.s, &out.x)
        .iter()
        .zip(&out.lambda)
        .map(|(d, l)| d / l - 1.0)
        .collect();
    Ok(out)
}

/// Pieces of the right-hand side of the ε equation at one stored time.
struct EpsilonRhs {
    /// `(Lε)_y − R(ε)_y`
    base: Vec<f64>,
    /// `ΛQ + Λε`
    scale_dir: Vec<f64>,
    /// `Q_y + ε_y`
    shift_dir: Vec<f64>,
}

fn epsilon_rhs(gs: &GroundState, jet: &EpsilonJet, idx: usize) -> Result<EpsilonRhs, ModulationError> {
    let eps_yyy = jet.eps_yyy.as_ref().ok_or(ModulationError::MissingJet(idx))?;
    let grid = *gs.grid();
    let ys = grid.points();
    let q = gs.q.values();
    let qy = gs.q_deriv.values();
    let lq = gs.lambda_q.values();
    let e = jet.eps.values();
    let ey = &jet.eps_y;
    let c = gs.c;
    let n = grid.n_points;
    let mut base = Vec::with_capacity(n);
    let mut scale_dir = Vec::with_capacity(n);
    let mut shift_dir = Vec::with_capacity(n);
    for j in 0..n {
        let (q, qy, e, ey) = (q[j], qy[j], e[j], ey[j]);
        let q3 = q * q * q;
        let q4 = q3 * q;
        // (Lε)_y = −ε_yyy + cε_y − 5(Q⁴ε)_y
        let l_eps_y = -eps_yyy[j] + c * ey - 5.0 * (4.0 * q3 * qy * e + q4 * ey);
        // R(ε)_y with R = (Q+ε)⁵ − Q⁵ − 5Q⁴ε
        let v = q + e;
        let r_y = 5.0 * v.powi(4) * (qy + ey) - 5.0 * q4 * qy - 20.0 * q3 * qy * e - 5.0 * q4 * ey;
        base.push(l_eps_y - r_y);
        scale_dir.push(lq[j] + 0.5 * e + ys[j] * ey);
        shift_dir.push(qy + ey);
    }
    Ok(EpsilonRhs {
        base,
        scale_dir,
        shift_dir,
    })
}

fn neighbours(
    mt: &ModulatedTrajectory,
    k: usize,
    step: usize,
) -> Result<[&StoredEpsilon; 3], ModulationError> {
    let len = mt.epsilons.len();
    if step == 0 || k < step || k + step >= len {
        return Err(ModulationError::IndexOutOfRange {
            index: k,
            step,
            len,
        });
    }
    Ok([&mt.epsilons[k - step], &mt.epsilons[k], &mt.epsilons[k + step]])
}

/// Pointwise `(ε_s, RHS)` of the ε equation at stored entry `k`. `ε_s`,
/// `λ_s/λ` and `x_s/λ` are three-point differences over stored entries
/// `k ± step`.
pub fn epsilon_equation_terms(
    mt: &ModulatedTrajectory,
    gs: &GroundState,
    k: usize,
    step: usize,
) -> Result<(Vec<f64>, Vec<f64>), ModulationError> {
    if gs.p != 5 {
        return Err(ModulationError::UnsupportedPower(gs.p));
    }
    let [a, b, c] = neighbours(mt, k, step)?;
    let (ia, ib, ic) = (a.index, b.index, c.index);
    let (sa, sb, sc) = (mt.s[ia], mt.s[ib], mt.s[ic]);
    let lam_rate = three_point(
        sa,
        sb,
        sc,
        mt.lambda[ia].ln(),
        mt.lambda[ib].ln(),
        mt.lambda[ic].ln(),
    );
    let shift_rate = three_point(sa, sb, sc, mt.x[ia], mt.x[ib], mt.x[ic]) / mt.lambda[ib] - 1.0;
    let rhs = epsilon_rhs(gs, &b.jet, k)?;
    let (ea, eb, ec) = (a.jet.eps.values(), b.jet.eps.values(), c.jet.eps.values());
    let eps_s = (0..ea.len())
        .map(|j| three_point(sa, sb, sc, ea[j], eb[j], ec[j]))
        .collect();
    let r = (0..ea.len())
        .map(|j| rhs.base[j] + lam_rate * rhs.scale_dir[j] + shift_rate * rhs.shift_dir[j])
        .collect();
    Ok((eps_s, r))
}

/// Relative residual `‖ε_s − RHS‖₂ / max(‖ε_s‖₂, 1e-12)` of the ε equation
/// at stored entry `k`; see [`epsilon_equation_terms`].
pub fn epsilon_equation_residual(
    mt: &ModulatedTrajectory,
    gs: &GroundState,
    k: usize,
    step: usize,
) -> Result<f64, ModulationError> {
    let (eps_s, rhs) = epsilon_equation_terms(mt, gs, k, step)?;
    let num: f64 = eps_s.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = eps_s.iter().map(|a| a * a).sum();
    let h = mt.grid.spacing();
    Ok((num * h).sqrt() / (den * h).sqrt().max(1e-12))
}

/// Modulation-parameter rates from projecting the ε equation on `Q³` and
/// `Q_y` (the time derivative of both orthogonality conditions vanishes),
/// next to the finite-difference estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterCrossCheck {
    pub projected: (f64, f64),
    pub finite_difference: (f64, f64),
}

pub fn parameter_cross_check(
    mt: &ModulatedTrajectory,
    gs: &GroundState,
    k: usize,
) -> Result<ParameterCrossCheck, ModulationError> {
    if gs.p != 5 {
        return Err(ModulationError::UnsupportedPower(gs.p));
    }
    let stored = mt.epsilons.get(k).ok_or(ModulationError::IndexOutOfRange {
        index: k,
        step: 0,
        len: mt.epsilons.len(),
    })?;
    let rhs = epsilon_rhs(gs, &stored.jet, k)?;
    let q3 = gs.q_pow(3).into_values();
    let qy = gs.q_deriv.values();
    let mut a = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    for (row, phi) in [&q3[..], qy].into_iter().enumerate() {
        a[row][0] = dot(&rhs.scale_dir, phi);
        a[row][1] = dot(&rhs.shift_dir, phi);
        b[row] = -dot(&rhs.base, phi);
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-300 {
        return Err(ModulationError::SingularJacobian);
    }
    let ls = (b[0] * a[1][1] - a[0][1] * b[1]) / det;
    let xs = (a[0][0] * b[1] - a[1][0] * b[0]) / det;
    let i = stored.index;
    Ok(ParameterCrossCheck {
        projected: (ls, xs),
        finite_difference: (mt.lambda_s_over_lambda[i], mt.x_s_over_lambda_minus_1[i]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state::{ground_state, sech_profile};

    fn gs() -> GroundState {
        ground_state(5, 1.0, GridSpec::default()).unwrap()
    }

    #[test]
    fn tube_distance_of_q_and_translate() {
        let gs = gs();
        let m = Modulator::new(&gs);
        let d = m.tube_distance(&gs.q, TubeNorm::H1).unwrap();
        assert!(d.alpha < 1e-8 && d.y_star.abs() < 1e-8, "{d:?}");
        let shifted = Field::from_fn(*gs.grid(), |x| sech_profile(5, 1.0, x - 5.0)).unwrap();
        let d = m.tube_distance(&shifted, TubeNorm::H1).unwrap();
        assert!(d.alpha < 1e-8, "{d:?}");
        assert!((d.y_star + 5.0).abs() < 1e-8, "{d:?}");
    }

    #[test]
    fn tube_distance_of_multiple() {
        let gs = gs();
        let m = Modulator::new(&gs);
        let u = gs.q.scale(1.1);
        let d = m.tube_distance(&u, TubeNorm::H1).unwrap();
        let sp = crate::spectral::Spectral::new(*gs.grid());
        let expect = 0.1 * sp.h1_norm_sq(gs.q.values()).sqrt();
        assert!((d.alpha - expect).abs() < 1e-10);
        assert!(d.y_star.abs() < 1e-8);
        let d2 = m.tube_distance(&u, TubeNorm::L2).unwrap();
        assert!((d2.alpha - 0.1 * gs.q.norm_l2()).abs() < 1e-10);
    }

    #[test]
    fn modulate_fixed_point_and_dilation() {
        let gs = gs();
        let m = Modulator::new(&gs);
        let fit = m.modulate(&gs.q).unwrap();
        assert!((fit.lambda1 - 1.0).abs() < 1e-12 && fit.x1.abs() < 1e-10);
        assert!(fit.epsilon.sup_norm() < 1e-10);

        let (a, b) = (1.2f64, 3.0);
        let u = Field::from_fn(*gs.grid(), |x| a.sqrt() * sech_profile(5, 1.0, a * (x - b))).unwrap();
        let fit = m.modulate(&u).unwrap();
        assert!((fit.lambda1 - 1.0 / a).abs() < 1e-8, "{}", fit.lambda1);
        assert!((fit.x1 - b).abs() < 1e-8);
        assert!(fit.epsilon.sup_norm() < 1e-8);
        assert!(fit.residuals.0.abs() < 1e-10 && fit.residuals.1.abs() < 1e-10);
    }

    #[test]
    fn reconstruct_round_trip() {
        let gs = gs();
        let m = Modulator::new(&gs);
        let u = Field::from_fn(*gs.grid(), |x| {
            0.9f64.sqrt() * sech_profile(5, 1.0, 0.9 * (x + 2.0)) + 0.01 * (-(x + 1.0).powi(2)).exp()
        })
        .unwrap();
        let fit = m.modulate(&u).unwrap();
        let back = m.reconstruct(&fit);
        let refit = m.modulate(&back).unwrap();
        assert!((refit.lambda1 - fit.lambda1).abs() < 1e-8);
        assert!((refit.x1 - fit.x1).abs() < 1e-8);
        assert!(back.axpy(-1.0, &u).unwrap().sup_norm() < 1e-8);
    }

    #[test]
    fn collapsed_amplitude_is_rejected() {
        let gs = gs();
        let m = Modulator::new(&gs);
        assert!(m.modulate(&gs.q.scale(0.3)).is_err());
    }

    #[test]
    fn epsilon_of_perturbation_is_orthogonal() {
        let gs = gs();
        let m = Modulator::new(&gs);
        let r = -gs.integrals.int_q4 / gs.integrals.int_q6;
        let u = gs.q.zip_map(&gs.q_pow(3), |q, q3| q + 0.01 * (q + r * q3)).unwrap();
        let fit = m.modulate(&u).unwrap();
        assert!(fit.residuals.0.abs() <= 1e-10 && fit.residuals.1.abs() <= 1e-10);
        let alpha = m.tube_distance(&u, TubeNorm::H1).unwrap().alpha;
        let c1 = (fit.lambda1 - 1.0).abs() / alpha;
        assert!(c1.is_finite() && c1 < 10.0, "C1 = {c1}");
    }
}

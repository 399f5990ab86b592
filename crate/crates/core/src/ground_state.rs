//! The soliton profile `Q_c` solving `-c Q + Q'' + Q^p = 0`, with the
//! companions every other module needs: `Q_y`, the scaling direction
//! `ΛQ = Q/2 + y Q_y`, its primitive `F`, and the scalar integrals.
//!
//! For the critical power `p = 5` the profile is the closed form
//! `Q(x) = (3 sech²(2x))^{1/4}` dilated as `Q_c(x) = c^{1/4} Q(√c x)`. Other
//! powers are built with a Petviashvili fixed-point iteration on the
//! transform side and carry the dilation `Q_c(x) = c^{1/(p-1)} Q(√c x)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Field, GridError, GridSpec};
use crate::spectral::Spectral;

/// Supported nonlinearity powers.
pub const MIN_POWER: u32 = 2;
pub const MAX_POWER: u32 = 9;

/// Successive Petviashvili iterates must agree to this sup-norm distance.
pub const PETVIASHVILI_TOL: f64 = 1e-12;
pub const PETVIASHVILI_MAX_ITER: usize = 2000;

/// Largest admissible `|Q(edge)| / Q(0)` before the box is declared too short.
pub const EDGE_RATIO_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundStateError {
    #[error("power p = {0} outside the supported range {MIN_POWER}..={MAX_POWER}")]
    UnsupportedPower(u32),
    #[error("wave speed must be positive and finite, got {0}")]
    BadSpeed(f64),
    #[error("Petviashvili iteration stalled after {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("grid too short: |Q| at the box edge is {ratio:e} of Q(0)")]
    GridTooShort { ratio: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Scalar integrals of the profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundStateIntegrals {
    pub int_q: f64,
    pub int_q2: f64,
    pub int_q4: f64,
    pub int_q6: f64,
    pub int_qy2: f64,
    /// `E[Q] = ½∫Q_y² − ∫Q^{p+1}/(p+1)`.
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub p: u32,
    pub c: f64,
    pub q: Field,
    pub q_deriv: Field,
    pub lambda_q: Field,
    pub f_primitive: Field,
    pub integrals: GroundStateIntegrals,
    /// Petviashvili iterations used (0 for the closed form).
    pub iterations: usize,
}

/// Closed-form soliton of the power-`p` equation with speed `c`, centred at 0:
/// `c^{1/(p-1)} ((p+1)/2)^{1/(p-1)} sech^{2/(p-1)}((p-1)√c x / 2)`.
pub fn sech_profile(p: u32, c: f64, x: f64) -> f64 {
    let pm1 = (p - 1) as f64;
    let amp = (c * (p as f64 + 1.0) / 2.0).powf(1.0 / pm1);
    let arg = 0.5 * pm1 * c.sqrt() * x;
    // sech(a)^{2/(p-1)} = exp(-(2/(p-1)) ln cosh a), stable for large |a|
    let ln_cosh = arg.abs() + (-2.0 * arg.abs()).exp().ln_1p() - std::f64::consts::LN_2;
    amp * (-(2.0 / pm1) * ln_cosh).exp()
}

pub fn ground_state(p: u32, c: f64, grid: GridSpec) -> Result<GroundState, GroundStateError> {
    if !(MIN_POWER..=MAX_POWER).contains(&p) {
        return Err(GroundStateError::UnsupportedPower(p));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(GroundStateError::BadSpeed(c));
    }
    grid.validate()?;
    let sp = Spectral::new(grid);
    let (q, iterations) = if p == 5 {
        (Field::from_fn(grid, |x| sech_profile(5, c, x))?, 0)
    } else {
        petviashvili(p, c, &sp)?
    };
    check_edges(&q)?;
    Ok(assemble(p, c, q, &sp, iterations))
}

/// Builds a ground state by Petviashvili iteration for any supported `p`,
/// including `p = 5`. Used to cross-check the closed form.
pub fn ground_state_iterative(
    p: u32,
    c: f64,
    grid: GridSpec,
) -> Result<GroundState, GroundStateError> {
    if !(MIN_POWER..=MAX_POWER).contains(&p) {
        return Err(GroundStateError::UnsupportedPower(p));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(GroundStateError::BadSpeed(c));
    }
    grid.validate()?;
    let sp = Spectral::new(grid);
    let (q, iterations) = petviashvili(p, c, &sp)?;
    check_edges(&q)?;
    Ok(assemble(p, c, q, &sp, iterations))
}

fn petviashvili(p: u32, c: f64, sp: &Spectral) -> Result<(Field, usize), GroundStateError> {
    let grid = *sp.grid();
    let n = grid.n_points;
    let symbol: Vec<f64> = sp.wavenumbers().iter().map(|k| c + k * k).collect();
    let gamma = p as f64 / (p as f64 - 1.0);

    let amp = c.powf(1.0 / (p as f64 - 1.0));
    let mut q: Vec<f64> = grid
        .points()
        .iter()
        .map(|&x| amp * (-(c.sqrt() * x).powi(2) / 2.0).exp())
        .collect();

    let mut change = f64::INFINITY;
    for it in 1..=PETVIASHVILI_MAX_ITER {
        let q_hat = sp.forward(&q);
        let nl: Vec<f64> = q.iter().map(|v| v.powi(p as i32)).collect();
        let nl_hat = sp.forward(&nl);
        let num: f64 = q_hat
            .iter()
            .zip(&symbol)
            .map(|(z, s)| s * z.norm_sqr())
            .sum();
        let den: f64 = q_hat
            .iter()
            .zip(&nl_hat)
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        if !(den > 0.0) {
            return Err(GroundStateError::NoConvergence {
                iterations: it,
                change,
            });
        }
        let stab = (num / den).powf(gamma);
        let next_hat: Vec<Complex64> = nl_hat
            .iter()
            .zip(&symbol)
            .map(|(z, s)| z * (stab / s))
            .collect();
        let mut next = sp.inverse_real(next_hat);
        // restore exact evenness about x = 0 when the grid allows it
        if let Some(refl) = grid.reflection() {
            let sym: Vec<f64> = (0..n).map(|j| 0.5 * (next[j] + next[refl(j)])).collect();
            next = sym;
        }
        change = next
            .iter()
            .zip(&q)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        q = next;
        if !change.is_finite() {
            break;
        }
        if change < PETVIASHVILI_TOL {
            return Ok((Field::new(grid, q)?, it));
        }
    }
    Err(GroundStateError::NoConvergence {
        iterations: PETVIASHVILI_MAX_ITER,
        change,
    })
}

fn check_edges(q: &Field) -> Result<(), GroundStateError> {
    let v = q.values();
    let peak = q.sup_norm();
    let ratio = v[0].abs().max(v[v.len() - 1].abs()) / peak;
    if ratio > EDGE_RATIO_TOL {
        return Err(GroundStateError::GridTooShort { ratio });
    }
    Ok(())
}

fn assemble(p: u32, c: f64, q: Field, sp: &Spectral, iterations: usize) -> GroundState {
    let grid = *q.grid();
    let q_deriv = sp.derivative_field(&q, 1);
    let lambda_q = scaling_generator_of(&q, &q_deriv);
    let f_primitive = Field::from_vec_unchecked(grid, sp.antiderivative(lambda_q.values()));
    let h = grid.spacing();
    let sum_pow = |k: i32| q.values().iter().map(|v| v.powi(k)).sum::<f64>() * h;
    let int_qy2 = q_deriv.values().iter().map(|v| v * v).sum::<f64>() * h;
    let integrals = GroundStateIntegrals {
        int_q: sum_pow(1),
        int_q2: sum_pow(2),
        int_q4: sum_pow(4),
        int_q6: sum_pow(6),
        int_qy2,
        energy: 0.5 * int_qy2 - sum_pow(p as i32 + 1) / (p as f64 + 1.0),
    };
    GroundState {
        p,
        c,
        q,
        q_deriv,
        lambda_q,
        f_primitive,
        integrals,
        iterations,
    }
}

/// `Λf = ½f + y f_y`, with `y` the grid coordinate.
pub fn scaling_generator_of(f: &Field, f_y: &Field) -> Field {
    let grid = *f.grid();
    Field::from_vec_unchecked(
        grid,
        f.values()
            .iter()
            .zip(f_y.values())
            .enumerate()
            .map(|(j, (v, d))| 0.5 * v + grid.x(j) * d)
            .collect(),
    )
}

/// `ΛQ` for the given state.
pub fn scaling_generator(gs: &GroundState) -> Field {
    gs.lambda_q.clone()
}

/// `F(y) = ∫_{left}^{y} ΛQ`.
pub fn primitive_f(gs: &GroundState) -> Field {
    gs.f_primitive.clone()
}

impl GroundState {
    pub fn grid(&self) -> &GridSpec {
        self.q.grid()
    }

    /// `Q^k` sampled on the grid.
    pub fn q_pow(&self, k: i32) -> Field {
        self.q.map(|v| v.powi(k))
    }

    /// Sup norm of `-cQ + Q'' + Q^p`.
    pub fn ode_residual(&self) -> f64 {
        let sp = Spectral::new(*self.grid());
        let qxx = sp.derivative(self.q.values(), 2);
        self.q
            .values()
            .iter()
            .zip(&qxx)
            .map(|(q, d)| (-self.c * q + d + q.powi(self.p as i32)).abs())
            .fold(0.0, f64::max)
    }

    /// `sup |Q(x)| e^{√c |x|}` over samples at least `margin` from the box
    /// edges; finite by exponential decay of the profile.
    pub fn decay_constant(&self, margin: f64) -> f64 {
        let grid = self.grid();
        let rate = self.c.sqrt();
        let (lo, hi) = (grid.left() + margin, grid.left() + grid.length - margin);
        self.q
            .values()
            .iter()
            .enumerate()
            .filter(|(j, _)| (lo..=hi).contains(&grid.x(*j)))
            .map(|(j, v)| v.abs() * (rate * grid.x(j).abs()).exp())
            .fold(0.0, f64::max)
    }

    /// `κ = ¼(∫Q)²`.
    pub fn kappa(&self) -> f64 {
        0.25 * self.integrals.int_q.powi(2)
    }

    pub fn f_sup_norm(&self) -> f64 {
        self.f_primitive.sup_norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn default_gs() -> GroundState {
        ground_state(5, 1.0, GridSpec::default()).unwrap()
    }

    #[test]
    fn closed_form_peak_values() {
        let gs = default_gs();
        let (k, x) = gs.q.argmax();
        assert_eq!(x, 0.0);
        assert!((gs.q.values()[k] - 3f64.powf(0.25)).abs() < 1e-15);
        let gs4 = ground_state(5, 4.0, GridSpec::default()).unwrap();
        let peak = gs4.q.sup_norm();
        assert!((peak - 4f64.powf(0.25) * 3f64.powf(0.25)).abs() < 1e-14);
        assert!((peak - 1.86121).abs() < 1e-5);
    }

    #[test]
    fn scaling_generator_at_center_is_half_q() {
        let gs = default_gs();
        let (k, _) = gs.q.argmax();
        assert!((gs.lambda_q.values()[k] - 0.5 * gs.q.values()[k]).abs() < 1e-14);
    }

    #[test]
    fn lambda_q_orthogonal_to_q_and_mean() {
        let gs = default_gs();
        assert!(gs.lambda_q.inner(&gs.q).unwrap().abs() < 1e-8);
        let expect = -0.5 * gs.integrals.int_q;
        assert!((gs.lambda_q.integral() - expect).abs() < 1e-10);
        // quoted to five decimals: -1.72541
        assert!((gs.lambda_q.integral() + 1.72540).abs() < 2e-5);
    }

    #[test]
    fn primitive_edges() {
        let gs = default_gs();
        let f = gs.f_primitive.values();
        assert_eq!(f[0], 0.0);
        assert!((f[f.len() - 1] + 0.5 * gs.integrals.int_q).abs() < 1e-10);
    }

    #[test]
    fn primitive_left_tail_decays_exponentially() {
        // Least-squares slope of log|F| on y in [-15, -5].
        let gs = default_gs();
        let grid = gs.grid();
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..grid.n_points)
            .filter(|&j| (-15.0..=-5.0).contains(&grid.x(j)))
            .map(|j| (grid.x(j), gs.f_primitive.values()[j].abs().ln()))
            .unzip();
        let slope = crate::stats::linear_fit(&xs, &ys).slope;
        assert!(slope >= 0.5, "slope {slope}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = GridSpec::default();
        assert_eq!(
            ground_state(1, 1.0, g).unwrap_err(),
            GroundStateError::UnsupportedPower(1)
        );
        assert_eq!(
            ground_state(10, 1.0, g).unwrap_err(),
            GroundStateError::UnsupportedPower(10)
        );
        assert!(matches!(
            ground_state(5, -1.0, g),
            Err(GroundStateError::BadSpeed(_))
        ));
        let short = GridSpec::centered(20.0, 1024).unwrap();
        assert!(matches!(
            ground_state(5, 1.0, short),
            Err(GroundStateError::GridTooShort { .. })
        ));
    }

    #[test]
    fn petviashvili_matches_closed_form() {
        let g = GridSpec::centered(60.0, 2048).unwrap();
        for p in [2, 3, 4, 5, 7] {
            let gs = ground_state_iterative(p, 1.0, g).unwrap();
            let err = gs
                .q
                .values()
                .iter()
                .zip(g.points())
                .map(|(v, x)| (v - sech_profile(p, 1.0, x)).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "p={p} err={err}");
            assert!(gs.ode_residual() < 1e-8, "p={p}");
        }
    }

    #[test]
    fn p5_integrals_table() {
        let i = default_gs().integrals;
        let s3 = 3f64.sqrt();
        assert!((i.int_q2 / (s3 * PI / 2.0) - 1.0).abs() < 1e-8);
        assert!((i.int_q4 / 3.0 - 1.0).abs() < 1e-8);
        assert!((i.int_q6 / (3.0 * s3 * PI / 4.0) - 1.0).abs() < 1e-8);
        assert!((i.int_qy2 / (s3 * PI / 4.0) - 1.0).abs() < 1e-8);
        assert!(i.energy.abs() < 1e-10);
    }

    #[test]
    fn decay_constant_is_finite() {
        let gs = default_gs();
        let c = gs.decay_constant(5.0);
        // Q(x) e^{|x|} → 3^{1/4} √2 for large |x|
        assert!(c.is_finite() && c < 1.9, "{c}");
    }
}

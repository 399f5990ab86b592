//! Transform-side calculus on a periodic grid: derivatives, antiderivatives,
//! Sobolev norms and the two-thirds de-aliasing mask.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{Field, GridSpec};

/// Cached FFT plans and wavenumbers for one grid. Cheap to clone.
#[derive(Clone)]
pub struct Spectral {
    grid: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Signed wavenumber of every FFT slot; the Nyquist slot carries `+π/h`.
    k: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.n_points;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let dk = grid.dk();
        let k = (0..n).map(|m| signed_mode(m, n) as f64 * dk).collect();
        Spectral { grid, fwd, inv, k }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.n_points
    }

    /// Wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    /// Wavenumber used for odd-order derivatives: the Nyquist slot is zeroed so
    /// that real fields stay real.
    #[inline]
    pub fn k_odd(&self, m: usize) -> f64 {
        if m == self.n() / 2 {
            0.0
        } else {
            self.k[m]
        }
    }

    pub fn forward(&self, v: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.fwd.process_with_scratch(buf, scratch);
    }

    /// Inverse transform including the `1/N` normalisation, in place.
    pub fn inverse_in_place(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inv.process_with_scratch(buf, scratch);
        let s = 1.0 / self.n() as f64;
        for c in buf.iter_mut() {
            *c *= s;
        }
    }

    pub fn scratch_len(&self) -> usize {
        self.fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len())
    }

    pub fn inverse_real(&self, mut c: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut c);
        let s = 1.0 / self.n() as f64;
        c.into_iter().map(|z| z.re * s).collect()
    }

    /// `order`-th derivative. Even orders keep the Nyquist mode, odd orders drop it.
    pub fn derivative(&self, v: &[f64], order: u32) -> Vec<f64> {
        if order == 0 {
            return v.to_vec();
        }
        let mut c = self.forward(v);
        self.apply_derivative(&mut c, order);
        self.inverse_real(c)
    }

    pub fn apply_derivative(&self, c: &mut [Complex64], order: u32) {
        let odd = order % 2 == 1;
        for (m, z) in c.iter_mut().enumerate() {
            let k = if odd { self.k_odd(m) } else { self.k[m] };
            *z *= ik_pow(k, order);
        }
    }

    pub fn derivative_field(&self, f: &Field, order: u32) -> Field {
        Field::from_vec_unchecked(self.grid, self.derivative(f.values(), order))
    }

    /// Antiderivative vanishing at the left edge of the box: the mean is
    /// integrated as a linear ramp and the oscillatory part spectrally.
    pub fn antiderivative(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut c = self.forward(v);
        let mean = c[0].re / n as f64;
        c[0] = Complex64::new(0.0, 0.0);
        c[n / 2] = Complex64::new(0.0, 0.0);
        for (m, z) in c.iter_mut().enumerate().skip(1) {
            let k = self.k_odd(m);
            if k != 0.0 {
                *z /= Complex64::new(0.0, k);
            }
        }
        let periodic = self.inverse_real(c);
        let base = periodic[0];
        let h = self.grid.spacing();
        periodic
            .iter()
            .enumerate()
            .map(|(j, g)| mean * j as f64 * h + g - base)
            .collect()
    }

    /// `‖f‖²_{H¹} = ∫ f² + f_x²` by Parseval.
    pub fn h1_norm_sq(&self, v: &[f64]) -> f64 {
        let c = self.forward(v);
        self.h1_norm_sq_hat(&c)
    }

    pub fn h1_norm_sq_hat(&self, c: &[Complex64]) -> f64 {
        let n = self.n() as f64;
        let w = self.grid.length / (n * n);
        c.iter()
            .zip(&self.k)
            .map(|(z, k)| (1.0 + k * k) * z.norm_sqr())
            .sum::<f64>()
            * w
    }

    /// ∫ f_x².
    pub fn dirichlet_energy(&self, v: &[f64]) -> f64 {
        let c = self.forward(v);
        let n = self.n() as f64;
        let w = self.grid.length / (n * n);
        c.iter()
            .zip(&self.k)
            .map(|(z, k)| k * k * z.norm_sqr())
            .sum::<f64>()
            * w
    }

    /// Two-thirds rule: keeps `|m| <= N/3`.
    pub fn dealias_mask(&self) -> Vec<f64> {
        let n = self.n();
        let cutoff = n / 3;
        (0..n)
            .map(|m| {
                if signed_mode(m, n).unsigned_abs() as usize <= cutoff && m != n / 2 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Largest wavenumber kept by [`Self::dealias_mask`].
    pub fn k_max_dealiased(&self) -> f64 {
        (self.n() / 3) as f64 * self.grid.dk()
    }
}

/// FFT slot `m` of an `n`-point transform as a signed mode number; the
/// Nyquist slot maps to `+n/2`.
#[inline]
pub fn signed_mode(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

#[inline]
fn ik_pow(k: f64, order: u32) -> Complex64 {
    let mag = k.powi(order as i32);
    match order % 4 {
        0 => Complex64::new(mag, 0.0),
        1 => Complex64::new(0.0, mag),
        2 => Complex64::new(-mag, 0.0),
        _ => Complex64::new(0.0, -mag),
    }
}

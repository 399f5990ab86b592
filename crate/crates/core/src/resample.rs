//! Band-limited evaluation of a periodic field at the affinely mapped grid
//! `α·x_j + β`.
//!
//! The trigonometric interpolant is summed at the new points with a chirp-z
//! transform (Bluestein's convolution), so one resampling costs three FFTs of
//! length `2N` instead of an `N²` direct sum.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::GridSpec;
use crate::spectral::Spectral;

#[derive(Clone)]
pub struct Resampler {
    spectral: Spectral,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Resampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resampler")
            .field("grid", self.spectral.grid())
            .finish()
    }
}

impl Resampler {
    pub fn new(grid: GridSpec) -> Self {
        let spectral = Spectral::new(grid);
        let mut planner = FftPlanner::new();
        let p = 2 * grid.n_points;
        Resampler {
            spectral,
            fwd: planner.plan_fft_forward(p),
            inv: planner.plan_fft_inverse(p),
        }
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn grid(&self) -> &GridSpec {
        self.spectral.grid()
    }

    /// Forward transform of the samples, the input of [`Self::affine`].
    pub fn spectrum(&self, v: &[f64]) -> Vec<Complex64> {
        self.spectral.forward(v)
    }

    /// Evaluates `∂^order f(α·x_j + β)` on every grid point `x_j`, where `f`
    /// is the trigonometric interpolant with transform `coeffs`.
    pub fn affine(&self, coeffs: &[Complex64], alpha: f64, beta: f64, order: u32) -> Vec<f64> {
        let grid = *self.grid();
        let n = grid.n_points;
        let half = n / 2;
        let p = 2 * n;
        let a = grid.left();
        let shift = alpha * a + beta - a;
        let dk = grid.dk();

        // Modes m = -N/2 ..= N/2 stored at index t = m + N/2; the Nyquist
        // coefficient is split evenly between ±N/2.
        let mut g = vec![Complex64::new(0.0, 0.0); p];
        for (t, slot) in g.iter_mut().enumerate().take(n + 1) {
            let m = t as i64 - half as i64;
            let c = if m.unsigned_abs() as usize == half {
                coeffs[half] * 0.5
            } else {
                coeffs[m.rem_euclid(n as i64) as usize]
            };
            let k = m as f64 * dk;
            let mut d = c * Complex64::from_polar(1.0, k * shift);
            if order > 0 {
                d *= ik_pow(k, order);
            }
            *slot = d * chirp(alpha, t as f64, n);
        }

        let mut h = vec![Complex64::new(0.0, 0.0); p];
        for lag in -(n as i64)..(n as i64) {
            let slot = lag.rem_euclid(p as i64) as usize;
            h[slot] = chirp(alpha, lag as f64, n).conj();
        }

        self.fwd.process(&mut g);
        self.fwd.process(&mut h);
        for (x, y) in g.iter_mut().zip(&h) {
            *x *= y;
        }
        self.inv.process(&mut g);

        let norm = 1.0 / (p as f64 * n as f64);
        (0..n)
            .map(|j| {
                let jf = j as f64;
                let pre = chirp(alpha, jf, n) * Complex64::from_polar(1.0, -PI * alpha * jf);
                (pre * g[j]).re * norm
            })
            .collect()
    }

    /// Convenience wrapper over [`Self::affine`] taking samples.
    pub fn affine_values(&self, v: &[f64], alpha: f64, beta: f64, order: u32) -> Vec<f64> {
        let c = self.spectrum(v);
        self.affine(&c, alpha, beta, order)
    }

    /// Evaluates the interpolant (or its derivative) at a single point by a
    /// direct sum. `O(N)`; meant for sparse probes.
    pub fn point(&self, coeffs: &[Complex64], x: f64, order: u32) -> f64 {
        let grid = self.grid();
        let n = grid.n_points;
        let half = n / 2;
        let dx = x - grid.left();
        let dk = grid.dk();
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, c) in coeffs.iter().enumerate() {
            if m == half {
                let k = half as f64 * dk;
                for kk in [k, -k] {
                    acc += c * 0.5 * ik_pow(kk, order) * Complex64::from_polar(1.0, kk * dx);
                }
                continue;
            }
            let k = crate::spectral::signed_mode(m, n) as f64 * dk;
            acc += c * ik_pow(k, order) * Complex64::from_polar(1.0, k * dx);
        }
        acc.re / n as f64
    }
}

#[inline]
fn chirp(alpha: f64, t: f64, n: usize) -> Complex64 {
    Complex64::from_polar(1.0, PI * alpha * t * t / n as f64)
}

#[inline]
fn ik_pow(k: f64, order: u32) -> Complex64 {
    Complex64::new(0.0, k).powu(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(x: f64) -> f64 {
        (-(x - 0.3) * (x - 0.3)).exp()
    }

    #[test]
    fn identity_map_reproduces_samples() {
        let g = GridSpec::centered(30.0, 256).unwrap();
        let r = Resampler::new(g);
        let v: Vec<f64> = g.points().into_iter().map(gaussian).collect();
        let w = r.affine_values(&v, 1.0, 0.0, 0);
        for (a, b) in v.iter().zip(&w) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn dilation_and_shift_match_closed_form() {
        let g = GridSpec::centered(30.0, 256).unwrap();
        let r = Resampler::new(g);
        let v: Vec<f64> = g.points().into_iter().map(gaussian).collect();
        let (alpha, beta) = (0.83, 1.7);
        let w = r.affine_values(&v, alpha, beta, 0);
        let dw = r.affine_values(&v, alpha, beta, 1);
        for (j, x) in g.points().into_iter().enumerate() {
            let z = alpha * x + beta;
            assert!((w[j] - gaussian(z)).abs() < 1e-12, "j={j}");
            let exact = -2.0 * (z - 0.3) * gaussian(z);
            assert!((dw[j] - exact).abs() < 1e-11, "j={j}");
        }
    }

    #[test]
    fn points_outside_box_wrap_periodically() {
        let g = GridSpec::centered(30.0, 256).unwrap();
        let r = Resampler::new(g);
        let v: Vec<f64> = g.points().into_iter().map(gaussian).collect();
        let w = r.affine_values(&v, 1.4, 30.0, 0);
        for (j, x) in g.points().into_iter().enumerate() {
            let z = 1.4 * x;
            let wrapped = (z + 15.0).rem_euclid(30.0) - 15.0;
            assert!((w[j] - gaussian(wrapped)).abs() < 1e-11);
        }
    }

    #[test]
    fn point_probe_agrees_with_affine() {
        let g = GridSpec::centered(30.0, 128).unwrap();
        let r = Resampler::new(g);
        let v: Vec<f64> = g.points().into_iter().map(gaussian).collect();
        let c = r.spectrum(&v);
        for x in [-3.3, 0.0, 0.71, 4.2] {
            assert!((r.point(&c, x, 0) - gaussian(x)).abs() < 1e-12);
        }
    }
}

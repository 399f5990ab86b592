//! Periodic one-dimensional grids and the sampled fields that live on them.
//!
//! A [`GridSpec`] is a periodic box standing in for the real line. Every
//! profile in the crate (the soliton, perturbations, eigenfunctions, the
//! evolving solution) is a [`Field`] on some grid, and all integrals are
//! trapezoid sums, which are spectrally accurate for smooth periodic or
//! rapidly decaying integrands.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid length must be positive and finite, got {0}")]
    BadLength(f64),
    #[error("n_points must be a power of two >= 8, got {0}")]
    BadResolution(usize),
    #[error("origin offset must be finite, got {0}")]
    BadOffset(f64),
    #[error("field has {got} samples but the grid has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field sample {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Periodic computational domain `[origin_offset - length/2, origin_offset + length/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length: f64,
    pub n_points: usize,
    #[serde(default)]
    pub origin_offset: f64,
}

impl GridSpec {
    pub fn new(length: f64, n_points: usize, origin_offset: f64) -> Result<Self, GridError> {
        let grid = GridSpec {
            length,
            n_points,
            origin_offset,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Centered grid with no offset.
    pub fn centered(length: f64, n_points: usize) -> Result<Self, GridError> {
        Self::new(length, n_points, 0.0)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(GridError::BadLength(self.length));
        }
        if self.n_points < 8 || !self.n_points.is_power_of_two() {
            return Err(GridError::BadResolution(self.n_points));
        }
        if !self.origin_offset.is_finite() {
            return Err(GridError::BadOffset(self.origin_offset));
        }
        Ok(())
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.length / self.n_points as f64
    }

    /// Position of the first sample (the left edge of the box).
    #[inline]
    pub fn left(&self) -> f64 {
        self.origin_offset - 0.5 * self.length
    }

    #[inline]
    pub fn x(&self, k: usize) -> f64 {
        self.left() + k as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.x(k)).collect()
    }

    /// Fundamental wavenumber `2π / length`.
    #[inline]
    pub fn dk(&self) -> f64 {
        std::f64::consts::TAU / self.length
    }

    /// Largest resolved wavenumber `π / spacing`.
    #[inline]
    pub fn k_nyquist(&self) -> f64 {
        std::f64::consts::PI / self.spacing()
    }

    /// Index map of the reflection `x -> -x`, when the grid is symmetric about
    /// the origin (zero offset); `None` otherwise.
    pub fn reflection(&self) -> Option<impl Fn(usize) -> usize> {
        let n = self.n_points;
        (self.origin_offset == 0.0).then_some(move |k: usize| (n - k) % n)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            length: 100.0,
            n_points: 4096,
            origin_offset: 0.0,
        }
    }
}

/// Real samples of a function on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n_points {
            return Err(GridError::LengthMismatch {
                expected: grid.n_points,
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(Field { grid, values })
    }

    /// Builds a field without the finiteness scan. Used on hot paths whose
    /// inputs are already known to be finite.
    pub(crate) fn from_vec_unchecked(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_points);
        Field { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.n_points],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        Self::new(grid, grid.points().into_iter().map(f).collect())
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &Field) -> Result<(), GridError> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(GridError::GridMismatch)
        }
    }

    /// Pointwise map, keeping the grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field, GridError> {
        self.same_grid(other)?;
        Ok(Field::from_vec_unchecked(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, a: f64) -> Field {
        self.map(|v| a * v)
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &Field) -> Result<Field, GridError> {
        self.zip_map(other, |x, y| x + a * y)
    }

    /// Trapezoid quadrature of the samples over one period.
    pub fn integral(&self) -> f64 {
        self.grid.spacing() * self.values.iter().sum::<f64>()
    }

    /// L² inner product.
    pub fn inner(&self, other: &Field) -> Result<f64, GridError> {
        self.same_grid(other)?;
        Ok(dot(&self.values, &other.values) * self.grid.spacing())
    }

    pub fn norm_l2(&self) -> f64 {
        (dot(&self.values, &self.values) * self.grid.spacing()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Sample nearest to position `x`, wrapping periodically.
    pub fn nearest_index(&self, x: f64) -> usize {
        let n = self.grid.n_points as f64;
        let k = ((x - self.grid.left()) / self.grid.spacing()).round();
        (k.rem_euclid(n)) as usize
    }

    /// Index and position of the largest sample.
    pub fn argmax(&self) -> (usize, f64) {
        let (k, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bk, bv), (k, &v)| {
                if v > bv {
                    (k, v)
                } else {
                    (bk, bv)
                }
            });
        (k, self.grid.x(k))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry() {
        let g = GridSpec::new(10.0, 16, 2.0).unwrap();
        assert_eq!(g.spacing(), 0.625);
        assert_eq!(g.x(0), -3.0);
        assert_eq!(g.x(8), 2.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(GridSpec::centered(0.0, 16), Err(GridError::BadLength(_))));
        assert!(matches!(GridSpec::centered(10.0, 100), Err(GridError::BadResolution(100))));
        assert!(GridSpec::new(10.0, 16, f64::NAN).is_err());
    }

    #[test]
    fn field_invariants() {
        let g = GridSpec::centered(10.0, 16).unwrap();
        assert!(matches!(
            Field::new(g, vec![0.0; 15]),
            Err(GridError::LengthMismatch { .. })
        ));
        let mut v = vec![0.0; 16];
        v[3] = f64::INFINITY;
        assert!(matches!(Field::new(g, v), Err(GridError::NonFinite { index: 3, .. })));
    }

    #[test]
    fn gaussian_quadrature_is_spectral() {
        let g = GridSpec::centered(40.0, 256).unwrap();
        let f = Field::from_fn(g, |x| (-x * x).exp()).unwrap();
        assert!((f.integral() - std::f64::consts::PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn reflection_maps_to_negated_position() {
        let g = GridSpec::centered(10.0, 32).unwrap();
        let r = g.reflection().unwrap();
        for k in 1..32 {
            assert!((g.x(r(k)) + g.x(k)).abs() < 1e-12);
        }
        assert!(GridSpec::new(10.0, 32, 1.0).unwrap().reflection().is_none());
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = Field::zeros(GridSpec::centered(10.0, 16).unwrap());
        let b = Field::zeros(GridSpec::centered(12.0, 16).unwrap());
        assert_eq!(a.inner(&b), Err(GridError::GridMismatch));
    }
}

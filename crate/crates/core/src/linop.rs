//! The linearized operator `L = -∂_xx + c - p Q^{p-1}` around the ground
//! state (for the critical soliton, `L = -∂_xx + 1 - 5Q⁴`).
//!
//! `L` is applied matrix-free through the FFT, and assembled as a dense
//! symmetric matrix (transform-based second-difference matrix plus the
//! diagonal potential) for eigenvalue work. On grids symmetric about the
//! origin the matrix commutes with the reflection `x -> -x`, so the
//! eigenproblem splits into independent even and odd blocks of half size.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::{dot, Field, GridError, GridSpec};
use crate::ground_state::GroundState;
use crate::spectral::Spectral;

/// Largest grid accepted by the dense eigensolver.
pub const MAX_DENSE_POINTS: usize = 4096;
/// Largest number of eigenpairs returned.
pub const MAX_EIGENPAIRS: usize = 10;
/// Gram matrices with condition number above this are rejected.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinopError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("dense eigensolve limited to {MAX_DENSE_POINTS} points, grid has {0}")]
    TooLarge(usize),
    #[error("at most {MAX_EIGENPAIRS} eigenpairs can be requested, asked for {0}")]
    TooManyEigenpairs(usize),
    #[error("symmetric eigensolver did not converge")]
    Eigensolver,
    #[error("zero field")]
    ZeroField,
    #[error("basis is numerically degenerate (Gram condition {0:e})")]
    DegenerateBasis(f64),
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub eigenvalue: f64,
    /// Unit L² norm; sign fixed so the largest-magnitude sample is positive.
    pub eigenfunction: Field,
}

#[derive(Debug, Clone)]
pub struct LinearizedOperator<'a> {
    gs: &'a GroundState,
    potential: Vec<f64>,
    spectral: Spectral,
}

impl<'a> LinearizedOperator<'a> {
    pub fn new(gs: &'a GroundState) -> Self {
        let p = gs.p as i32;
        let pf = gs.p as f64;
        let potential = gs
            .q
            .values()
            .iter()
            .map(|q| gs.c - pf * q.powi(p - 1))
            .collect();
        LinearizedOperator {
            gs,
            potential,
            spectral: Spectral::new(*gs.grid()),
        }
    }

    pub fn ground_state(&self) -> &GroundState {
        self.gs
    }

    pub fn grid(&self) -> &GridSpec {
        self.spectral.grid()
    }

    /// Multiplicative part `c - p Q^{p-1}`.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn apply(&self, f: &Field) -> Result<Field, LinopError> {
        if f.grid() != self.grid() {
            return Err(GridError::GridMismatch.into());
        }
        let fxx = self.spectral.derivative(f.values(), 2);
        Ok(Field::from_vec_unchecked(
            *self.grid(),
            f.values()
                .iter()
                .zip(&fxx)
                .zip(&self.potential)
                .map(|((v, d), w)| -d + w * v)
                .collect(),
        ))
    }

    /// `(Lf, f)`.
    pub fn quadratic_form(&self, f: &Field) -> Result<f64, LinopError> {
        Ok(self.apply(f)?.inner(f)?)
    }

    /// First column of the circulant matrix of `-∂_xx`.
    fn neg_laplacian_column(&self) -> Vec<f64> {
        let n = self.grid().n_points;
        let mut e0 = vec![0.0; n];
        e0[0] = 1.0;
        self.spectral
            .derivative(&e0, 2)
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    /// Dense matrix of `L` on the grid.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let n = self.grid().n_points;
        let col = self.neg_laplacian_column();
        DMatrix::from_fn(n, n, |i, j| {
            let d = (i + n - j) % n;
            col[d] + if i == j { self.potential[i] } else { 0.0 }
        })
    }

    /// The `k` lowest eigenpairs, ascending.
    pub fn spectrum(&self, k: usize) -> Result<Vec<EigenPair>, LinopError> {
        let n = self.grid().n_points;
        if n > MAX_DENSE_POINTS {
            return Err(LinopError::TooLarge(n));
        }
        if k > MAX_EIGENPAIRS {
            return Err(LinopError::TooManyEigenpairs(k));
        }
        let mut pairs = if self.is_reflection_symmetric() {
            self.spectrum_by_parity()?
        } else {
            let eig = self
                .dense_matrix()
                .try_symmetric_eigen(1e-14, 0)
                .ok_or(LinopError::Eigensolver)?;
            eig.eigenvalues
                .iter()
                .zip(eig.eigenvectors.column_iter())
                .map(|(&l, v)| (l, v.iter().copied().collect::<Vec<_>>()))
                .collect()
        };
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.truncate(k);
        let grid = *self.grid();
        Ok(pairs
            .into_iter()
            .map(|(eigenvalue, v)| EigenPair {
                eigenvalue,
                eigenfunction: normalize_sign(grid, v),
            })
            .collect())
    }

    fn is_reflection_symmetric(&self) -> bool {
        let Some(refl) = self.grid().reflection() else {
            return false;
        };
        let scale = self.potential.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (0..self.potential.len())
            .all(|j| (self.potential[j] - self.potential[refl(j)]).abs() <= 1e-13 * scale)
    }

    /// Eigenpairs from the even and odd invariant subspaces.
    fn spectrum_by_parity(&self) -> Result<Vec<(f64, Vec<f64>)>, LinopError> {
        let n = self.grid().n_points;
        let half = n / 2;
        let col = self.neg_laplacian_column();
        let c = |d: usize| col[d % n];
        let v = &self.potential;
        let r2 = std::f64::consts::SQRT_2;

        // even basis: e_0, e_{N/2}, then (e_j + e_{N-j})/√2 for j = 1..N/2-1
        let even_idx: Vec<usize> = [0, half].into_iter().chain(1..half).collect();
        let single = |j: usize| j == 0 || j == half;
        let ne = even_idx.len();
        let even = DMatrix::from_fn(ne, ne, |a, b| {
            let (j, l) = (even_idx[a], even_idx[b]);
            let off = match (single(j), single(l)) {
                (true, true) => c(j + n - l),
                (false, false) => c(j + n - l) + c(j + l),
                _ => r2 * c(j + n - l),
            };
            off + if a == b { v[j] } else { 0.0 }
        });
        let no = half - 1;
        let odd = DMatrix::from_fn(no, no, |a, b| {
            let (j, l) = (a + 1, b + 1);
            c(j + n - l) - c(j + l) + if a == b { v[j] } else { 0.0 }
        });

        let mut out = Vec::with_capacity(n);
        let eig = even
            .try_symmetric_eigen(1e-14, 0)
            .ok_or(LinopError::Eigensolver)?;
        for (lam, y) in eig.eigenvalues.iter().zip(eig.eigenvectors.column_iter()) {
            let mut w = vec![0.0; n];
            for (a, &j) in even_idx.iter().enumerate() {
                if single(j) {
                    w[j] = y[a];
                } else {
                    w[j] = y[a] / r2;
                    w[n - j] = y[a] / r2;
                }
            }
            out.push((*lam, w));
        }
        let eig = odd
            .try_symmetric_eigen(1e-14, 0)
            .ok_or(LinopError::Eigensolver)?;
        for (lam, y) in eig.eigenvalues.iter().zip(eig.eigenvectors.column_iter()) {
            let mut w = vec![0.0; n];
            for a in 0..no {
                let j = a + 1;
                w[j] = y[a] / r2;
                w[n - j] = -y[a] / r2;
            }
            out.push((*lam, w));
        }
        Ok(out)
    }

    /// Rayleigh quotient `(Lf, f) / ‖f‖²`.
    pub fn coercivity_ratio(&self, f: &Field) -> Result<f64, LinopError> {
        let norm_sq = f.norm_l2().powi(2);
        if norm_sq == 0.0 {
            return Err(LinopError::ZeroField);
        }
        Ok(self.quadratic_form(f)? / norm_sq)
    }

    /// The two directions removed by the orthogonality conditions: `Q³`
    /// (more generally `Q^{(p+1)/2}`) and `Q_x`.
    pub fn constraint_basis(&self) -> [Field; 2] {
        let exponent = (self.gs.p as i32 + 1) / 2;
        [self.gs.q_pow(exponent), self.gs.q_deriv.clone()]
    }
}

/// `L` for a ground state, free-function form.
pub fn apply_l(op: &LinearizedOperator<'_>, f: &Field) -> Result<Field, LinopError> {
    op.apply(f)
}

pub fn spectrum_of_l(op: &LinearizedOperator<'_>, k: usize) -> Result<Vec<EigenPair>, LinopError> {
    op.spectrum(k)
}

pub fn coercivity_ratio(op: &LinearizedOperator<'_>, f: &Field) -> Result<f64, LinopError> {
    op.coercivity_ratio(f)
}

fn normalize_sign(grid: GridSpec, mut v: Vec<f64>) -> Field {
    let norm = (dot(&v, &v) * grid.spacing()).sqrt();
    let (_, big) = v
        .iter()
        .fold((0.0_f64, 0.0), |(m, s), &x| if x.abs() > m { (x.abs(), x) } else { (m, s) });
    let s = big.signum() / norm;
    for x in v.iter_mut() {
        *x *= s;
    }
    Field::from_vec_unchecked(grid, v)
}

/// Projection of `f` onto the L²-orthogonal complement of `basis`.
pub fn project_orthogonal(f: &Field, basis: &[Field]) -> Result<Field, LinopError> {
    if basis.is_empty() {
        return Ok(f.clone());
    }
    for b in basis {
        f.same_grid(b)?;
        if b.norm_l2() == 0.0 {
            return Err(LinopError::ZeroField);
        }
    }
    let m = basis.len();
    let gram = DMatrix::from_fn(m, m, |i, j| {
        basis[i].inner(&basis[j]).expect("grids checked")
    });
    let ev = gram.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = ev
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_GRAM_CONDITION {
        return Err(LinopError::DegenerateBasis(cond));
    }

    // Solve G a = (b_i, f) twice: the second pass removes what round-off left.
    let h = f.grid().spacing();
    let chol = gram.cholesky().ok_or(LinopError::DegenerateBasis(cond))?;
    let mut out = f.values().to_vec();
    for _ in 0..2 {
        let rhs = DVector::from_iterator(m, basis.iter().map(|b| dot(b.values(), &out) * h));
        let a = chol.solve(&rhs);
        for (b, coef) in basis.iter().zip(a.iter()) {
            for (o, bv) in out.iter_mut().zip(b.values()) {
                *o -= coef * bv;
            }
        }
    }
    Ok(Field::from_vec_unchecked(*f.grid(), out))
}

/// Band-limited Gaussian noise: independent normal Fourier amplitudes on the
/// modes with `|k| <= fraction · k_nyquist`, all higher modes zero.
pub fn random_band_limited<R: Rng + ?Sized>(grid: GridSpec, fraction: f64, rng: &mut R) -> Field {
    let sp = Spectral::new(grid);
    let kcut = fraction * grid.k_nyquist();
    let n = grid.n_points;
    let mut c = vec![num_complex::Complex64::new(0.0, 0.0); n];
    for m in 1..n / 2 {
        if sp.wavenumbers()[m].abs() <= kcut {
            let z = num_complex::Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            c[m] = z;
            c[n - m] = z.conj();
        }
    }
    c[0] = num_complex::Complex64::new(rng.sample(StandardNormal), 0.0);
    let v = sp.inverse_real(c);
    let f = Field::from_vec_unchecked(grid, v);
    let norm = f.norm_l2();
    f.scale(1.0 / norm)
}

/// Default band: the top third of the modes removed.
pub const NOISE_BAND: f64 = 2.0 / 3.0;

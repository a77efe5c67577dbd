//! Dense linear-algebra helpers: Kronecker products, column-stacking
//! vectorization, the SVD-based Moore–Penrose inverse and the projection
//! matrix of a contrast.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, which is column-major, so the
//! column-stacking `vec` is simply the storage slice.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Tolerance for `H·1 = 0` and for the projection invariants.
pub const CONTRAST_TOL: f64 = 1e-10;

/// Builds a matrix from row-major data, rejecting NaN and infinities.
pub fn matrix_from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / cols.max(1),
            col: pos % cols.max(1),
        });
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}

/// Standard Kronecker product `a ⊗ b`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    Matrix::from_fn(ra * rb, ca * cb, |i, j| {
        a[(i / rb, j / cb)] * b[(i % rb, j % cb)]
    })
}

/// Column-stacking vectorization: column 1 first.
pub fn vec(a: &Matrix) -> Vector {
    Vector::from_column_slice(a.as_slice())
}

/// Singular values below `max(r, c) · ε · σ_max` are treated as zero.
fn svd_cutoff(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Thin SVD `a = u · diag(s) · vᵀ`, unordered.
struct Svd {
    u: Matrix,
    s: Vec<f64>,
    v: Matrix,
    sweeps: usize,
}

impl Svd {
    fn cutoff(&self) -> f64 {
        let sigma_max = self.s.iter().cloned().fold(0.0, f64::max);
        svd_cutoff(self.u.nrows(), self.v.nrows(), sigma_max)
    }

    fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        let cutoff = self.cutoff();
        (0..self.s.len()).filter(move |&k| self.s[k] > cutoff && self.s[k] > 0.0)
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD. nalgebra's bidiagonal SVD can return an inaccurate
/// decomposition when a singular value is exactly zero, which is the normal
/// case for contrast matrices, so we orthogonalize columns directly.
fn svd(a: &Matrix) -> Svd {
    if a.nrows() < a.ncols() {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
            sweeps: t.sweeps,
        };
    }
    let n = a.ncols();
    // rounding in the dot product alone is of order m·ε·‖u_p‖·‖u_q‖
    let tol = a.nrows() as f64 * f64::EPSILON;
    // a column this small ends below the rank cutoff; rotating it only churns
    // subnormal noise
    let negligible = f64::EPSILON * a.norm();
    let mut u = a.clone();
    let mut v = Matrix::identity(n, n);
    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (np, nq) = (u.column(p).norm(), u.column(q).norm());
                if np <= negligible || nq <= negligible {
                    continue;
                }
                let (alpha, beta) = (np * np, nq * nq);
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= tol * np * nq {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut u, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = (0..n).map(|k| u.column(k).norm()).collect();
    for (k, &sk) in s.iter().enumerate() {
        if sk > 0.0 {
            u.column_mut(k).unscale_mut(sk);
        }
    }
    Svd { u, s, v, sweeps }
}

/// Moore–Penrose pseudoinverse via the singular value decomposition.
pub fn moore_penrose(a: &Matrix) -> Matrix {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Matrix::zeros(c, r);
    }
    let d = svd(a);
    let mut out = Matrix::zeros(c, r);
    for k in d.kept() {
        // out += v_k u_kᵀ / s
        out += (d.v.column(k) * d.u.column(k).transpose()) / d.s[k];
    }
    out
}

/// Numerical rank with the same cutoff as [`moore_penrose`].
pub fn rank(a: &Matrix) -> usize {
    if a.is_empty() {
        return 0;
    }
    svd(a).kept().count()
}

pub fn ones(k: usize) -> Vector {
    Vector::from_element(k, 1.0)
}

/// `J_k = 1 1ᵀ`.
pub fn ones_matrix(k: usize) -> Matrix {
    Matrix::from_element(k, k, 1.0)
}

/// Centering matrix `P_k = I_k − J_k / k`.
pub fn centering(k: usize) -> Matrix {
    Matrix::identity(k, k) - ones_matrix(k) / k as f64
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// A hypothesis matrix together with its projection `T = Hᵀ(HHᵀ)⁺H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSpec {
    pub hypothesis: Matrix,
    pub projection: Matrix,
    pub rank: usize,
}

impl ContrastSpec {
    /// Number of groups the contrast acts on.
    pub fn groups(&self) -> usize {
        self.projection.ncols()
    }
}

/// Computes the projection matrix of a contrast matrix `h` (r×k).
pub fn projection_matrix(h: &Matrix) -> Result<ContrastSpec> {
    let k = h.ncols();
    if let Some((row, col)) = first_non_finite(h) {
        return Err(Error::NonFinite { row, col });
    }
    let row_sums = h * ones(k);
    let max_row_sum = row_sums.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max_row_sum > CONTRAST_TOL * max_abs(h).max(1.0) {
        return Err(Error::NotAContrast { max_row_sum });
    }
    // Hᵀ(HHᵀ)⁺H is the projector onto the row space of H, i.e. V_r V_rᵀ
    // from H's own SVD; this avoids squaring its condition number.
    let mut t = Matrix::zeros(k, k);
    let mut rank = 0;
    if !h.is_empty() {
        let d = svd(h);
        for j in d.kept() {
            t += d.v.column(j) * d.v.column(j).transpose();
            rank += 1;
        }
    }
    // symmetrize away rounding noise
    t = (&t + t.transpose()) * 0.5;
    Ok(ContrastSpec {
        hypothesis: h.clone(),
        projection: t,
        rank,
    })
}

fn first_non_finite(a: &Matrix) -> Option<(usize, usize)> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

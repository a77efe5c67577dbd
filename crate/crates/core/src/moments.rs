//! Per-group moment estimation and the delta-method variance of the
//! multivariate coefficient of variation (MCV).
//!
//! For a group with mean `μ` and covariance `Σ` the MCV is
//! `C = (μᵀΣ⁻¹μ)^{-1/2}` and the standardized mean is `B = 1/C`.
//! Their asymptotic variances come from a first-order expansion of
//! `(μ, vec Σ)` in the raw first and second moments `(x, vec xxᵀ)`:
//!
//! ```text
//! σ²_C = n (μᵀΣ⁻¹μ)⁻³ / (4 nᵢ) · A · [Σ Ψ₃ᵀ; Ψ₃ Ψ₄] · Aᵀ
//! σ²_B = (μᵀΣ⁻¹μ)² σ²_C
//! ```
//!
//! All `d²`-indexed objects use the row index `(a, r) ↦ a·d + r`
//! (zero-based), the column-stacking order of a symmetric matrix.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kronecker, Matrix, Vector};

/// Threshold below which `σ̂²_C` is reported as degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;
/// Relative threshold for the zero-mean check.
pub const ZERO_MEAN_TOL: f64 = 1e-12;
/// A Cholesky pivot whose squared value falls below this fraction of the
/// matching diagonal entry marks the covariance as singular.
const PIVOT_REL_TOL: f64 = 1e-12;

/// Observations of one design cell, stored row-major (`n × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    label: usize,
    dim: usize,
    data: Vec<f64>,
}

impl GroupSample {
    /// `data` holds `n` observations of dimension `dim`, one after another.
    pub fn new(label: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch(
                "dimension must be positive".into(),
            ));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of length {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { label, dim, data })
    }

    pub fn from_rows(label: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged observation rows".into()));
        }
        Self::new(label, dim, rows.concat())
    }

    /// Skips the finiteness check; used for permuted copies of validated data.
    pub(crate) fn from_trusted(label: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % dim, 0);
        Self { label, dim, data }
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn require(&self, required: usize) -> Result<()> {
        if self.len() < required {
            return Err(Error::TooFewObservations {
                group: self.label,
                n: self.len(),
                d: self.dim,
                required,
            });
        }
        Ok(())
    }
}

/// Sample mean, covariance (divisor `nᵢ`) and the quadratic form `μ̂ᵀΣ̂⁻¹μ̂`.
#[derive(Debug, Clone)]
pub struct GroupMoments {
    pub mean: Vector,
    pub cov: Matrix,
    /// `Σ̂⁻¹μ̂`, obtained from a Cholesky solve.
    pub solved_mean: Vector,
    pub quad_form: f64,
}

/// Estimates mean and covariance of one group.
///
/// Needs at least `d + 1` observations for a nonsingular covariance; the
/// variance estimators further down require `d + 2`.
pub fn estimate_moments(sample: &GroupSample) -> Result<GroupMoments> {
    let d = sample.dim();
    let n = sample.len();
    sample.require(d + 1)?;
    let group = sample.label();
    let nf = n as f64;

    let mut mean = Vector::zeros(d);
    for row in sample.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean /= nf;

    let scale = sample
        .as_slice()
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || mean.norm() < ZERO_MEAN_TOL * scale {
        return Err(Error::ZeroMean { group });
    }

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in sample.rows() {
        for (c, (x, m)) in centered.iter_mut().zip(row.iter().zip(mean.iter())) {
            *c = x - m;
        }
        for a in 0..d {
            for b in 0..=a {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / nf;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let chol = spd_factor(&cov, scale).ok_or(Error::SingularCovariance { group })?;
    let solved_mean = chol.solve(&mean);
    let quad_form = mean.dot(&solved_mean);
    if !(quad_form > 0.0) || !quad_form.is_finite() {
        return Err(Error::SingularCovariance { group });
    }
    Ok(GroupMoments {
        mean,
        cov,
        solved_mean,
        quad_form,
    })
}

/// Cholesky factor, or `None` when the matrix is not safely positive definite.
fn spd_factor(cov: &Matrix, scale: f64) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let d = cov.nrows();
    for i in 0..d {
        if !(cov[(i, i)] > 1e-20 * scale * scale) {
            return None;
        }
    }
    let chol = cov.clone().cholesky()?;
    let l = chol.l_dirty();
    for i in 0..d {
        if l[(i, i)] * l[(i, i)] <= PIVOT_REL_TOL * cov[(i, i)] {
            return None;
        }
    }
    Some(chol)
}

/// `(Ĉ, B̂) = ((μ̂ᵀΣ̂⁻¹μ̂)^{-1/2}, (μ̂ᵀΣ̂⁻¹μ̂)^{1/2})`.
pub fn mcv_and_std_mean(moments: &GroupMoments) -> (f64, f64) {
    let b = moments.quad_form.sqrt();
    (1.0 / b, b)
}

/// Jacobian of `(x, y) ↦ y − x xᵀ` with respect to `x`, shape `d² × d`.
///
/// Entry at row `(a, r)` and column `s` is
/// `−x_r·[s=a≠r] − 2x_s·[s=r=a] − x_a·[r=s≠a]`.
pub fn dtilde(x: &[f64]) -> Matrix {
    let d = x.len();
    let mut out = Matrix::zeros(d * d, d);
    for a in 0..d {
        for r in 0..d {
            let row = a * d + r;
            for s in 0..d {
                let mut v = 0.0;
                if s == a && a != r {
                    v -= x[r];
                }
                if s == r && r == a {
                    v -= 2.0 * x[s];
                }
                if r == s && s != a {
                    v -= x[a];
                }
                out[(row, s)] = v;
            }
        }
    }
    out
}

/// The row vector `A(μ, Σ)` of length `d + d²`, given `w = Σ⁻¹μ`.
pub fn a_row(mean: &Vector, solved_mean: &Vector) -> Matrix {
    let d = mean.len();
    let w_t = Matrix::from_row_slice(1, d, solved_mean.as_slice());
    let ww = kronecker(&w_t, &w_t);
    let first = w_t * 2.0 - &ww * dtilde(mean.as_slice());
    let mut out = Matrix::zeros(1, d + d * d);
    out.view_mut((0, 0), (1, d)).copy_from(&first);
    out.view_mut((0, d), (1, d * d)).copy_from(&(-ww));
    out
}

/// Third- and fourth-order moment blocks of one group.
#[derive(Debug, Clone)]
pub struct MomentMatrices {
    /// `Ψ̂₃`, `d² × d`.
    pub psi3: Matrix,
    /// `Ψ̂₄`, `d² × d²`.
    pub psi4: Matrix,
    pub dtilde: Matrix,
    /// `A(μ̂, Σ̂)`, `1 × (d + d²)`.
    pub a_row: Matrix,
}

impl MomentMatrices {
    /// The `(d + d²)`-square block `[Σ Ψ₃ᵀ; Ψ₃ Ψ₄]`.
    pub fn block(&self, cov: &Matrix) -> Matrix {
        stack_block(cov, &self.psi3, &self.psi4)
    }
}

pub(crate) fn stack_block(cov: &Matrix, psi3: &Matrix, psi4: &Matrix) -> Matrix {
    let d = cov.nrows();
    let m = d + d * d;
    let mut out = Matrix::zeros(m, m);
    out.view_mut((0, 0), (d, d)).copy_from(cov);
    out.view_mut((d, 0), (d * d, d)).copy_from(psi3);
    out.view_mut((0, d), (d, d * d))
        .copy_from(&psi3.transpose());
    out.view_mut((d, d), (d * d, d * d)).copy_from(psi4);
    out
}

/// Empirical `Ψ̂₃`, `Ψ̂₄`, `D̃(μ̂)` and `A(μ̂, Σ̂)`.
///
/// `Ψ̂₃[(a,r), s]` is the mean of `X_a X_r X_s` minus the product of the
/// means of `X_a X_r` and `X_s`; `Ψ̂₄` is the analogous fourth-order
/// block. Both are evaluated in centered (two-pass) form.
pub fn moment_matrices(sample: &GroupSample, moments: &GroupMoments) -> Result<MomentMatrices> {
    let d = sample.dim();
    sample.require(d + 2)?;
    let n = sample.len() as f64;
    let d2 = d * d;

    let mut prod_mean = vec![0.0; d2];
    for row in sample.rows() {
        for a in 0..d {
            for r in 0..d {
                prod_mean[a * d + r] += row[a] * row[r];
            }
        }
    }
    prod_mean.iter_mut().for_each(|v| *v /= n);

    let mut psi3 = Matrix::zeros(d2, d);
    let mut psi4 = Matrix::zeros(d2, d2);
    let mut z = vec![0.0; d2];
    let mut xc = vec![0.0; d];
    for row in sample.rows() {
        for a in 0..d {
            xc[a] = row[a] - moments.mean[a];
            for r in 0..d {
                z[a * d + r] = row[a] * row[r] - prod_mean[a * d + r];
            }
        }
        for p in 0..d2 {
            for s in 0..d {
                psi3[(p, s)] += z[p] * xc[s];
            }
            for q in 0..=p {
                psi4[(p, q)] += z[p] * z[q];
            }
        }
    }
    psi3 /= n;
    for p in 0..d2 {
        for q in 0..=p {
            let v = psi4[(p, q)] / n;
            psi4[(p, q)] = v;
            psi4[(q, p)] = v;
        }
    }

    Ok(MomentMatrices {
        psi3,
        psi4,
        dtilde: dtilde(moments.mean.as_slice()),
        a_row: a_row(&moments.mean, &moments.solved_mean),
    })
}

/// Population (or plug-in) moments of a single group.
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    pub mean: Vector,
    pub cov: Matrix,
    pub psi3: Matrix,
    pub psi4: Matrix,
}

impl PopulationMoments {
    pub fn quad_form(&self) -> Option<f64> {
        let chol = self.cov.clone().cholesky()?;
        Some(self.mean.dot(&chol.solve(&self.mean)))
    }

    /// `σ²_C` for group fraction `kappa = nᵢ/n`, by the explicit sandwich
    /// `A · block · Aᵀ`.
    pub fn mcv_variance(&self, kappa: f64) -> Option<f64> {
        let chol = self.cov.clone().cholesky()?;
        let w = chol.solve(&self.mean);
        let q = self.mean.dot(&w);
        let a = a_row(&self.mean, &w);
        let block = stack_block(&self.cov, &self.psi3, &self.psi4);
        let sandwich = (&a * block * a.transpose())[(0, 0)];
        Some(sandwich / (4.0 * kappa * q.powi(3)))
    }
}

/// Everything the Wald statistic needs from one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimates {
    pub group: usize,
    pub n: usize,
    /// `Ĉᵢ`
    pub mcv: f64,
    /// `B̂ᵢ`
    pub std_mean: f64,
    /// `σ̂²_{i,C}`
    pub var_mcv: f64,
    /// `σ̂²_{i,B}`
    pub var_std_mean: f64,
    /// `nᵢ / n`
    pub weight: f64,
    pub quad_form: f64,
}

/// Estimates `Ĉᵢ`, `B̂ᵢ` and their asymptotic variances for one group of a
/// design with `total_n` observations in all.
///
/// The sandwich `A·[Σ̂ Ψ̂₃ᵀ; Ψ̂₃ Ψ̂₄]·Aᵀ` equals the empirical variance of
/// the scalar scores `A·(xⱼ, vec xⱼxⱼᵀ)`, which is what is computed here;
/// [`moment_matrices`] builds the blocks explicitly.
pub fn asymptotic_variances(sample: &GroupSample, total_n: usize) -> Result<GroupEstimates> {
    let d = sample.dim();
    let n = sample.len();
    sample.require(d + 2)?;
    if total_n < n {
        return Err(Error::DimensionMismatch(format!(
            "total sample size {total_n} smaller than group size {n}"
        )));
    }
    let moments = estimate_moments(sample)?;
    let a = a_row(&moments.mean, &moments.solved_mean);
    let score_var = score_variance(sample, a.as_slice());

    let q = moments.quad_form;
    let var_mcv = total_n as f64 / (4.0 * n as f64) * score_var / q.powi(3);
    if !(var_mcv > DEGENERATE_VARIANCE) {
        return Err(Error::DegenerateVariance {
            group: sample.label(),
            variance: var_mcv,
        });
    }
    let (mcv, std_mean) = mcv_and_std_mean(&moments);
    Ok(GroupEstimates {
        group: sample.label(),
        n,
        mcv,
        std_mean,
        var_mcv,
        var_std_mean: q * q * var_mcv,
        weight: n as f64 / total_n as f64,
        quad_form: q,
    })
}

/// Empirical variance (divisor `n`) of `A·(x, vec xxᵀ)` over the sample.
/// `a` is stored column-major as a `1 × (d + d²)` matrix, so its slice is
/// the row itself.
fn score_variance(sample: &GroupSample, a: &[f64]) -> f64 {
    let d = sample.dim();
    let (lin, quad) = a.split_at(d);
    let scores: Vec<f64> = sample
        .rows()
        .map(|x| {
            let mut s = 0.0;
            for a_i in 0..d {
                s += lin[a_i] * x[a_i];
                let base = a_i * d;
                for r in 0..d {
                    s += quad[base + r] * x[a_i] * x[r];
                }
            }
            s
        })
        .collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n
}

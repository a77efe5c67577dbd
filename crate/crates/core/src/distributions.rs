//! Chi-square distribution function and the simulation populations:
//! multivariate normal, power exponential `PE_β` and Student `t_ν`.
//!
//! Every population is parameterized by its actual mean and covariance;
//! the elliptical scale matrix is rescaled internally.

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::moments::GroupSample;

fn check_chi2_args(x: f64, df: usize) -> Result<()> {
    if df == 0 {
        return Err(Error::DomainError("chi-square needs df >= 1".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::DomainError(format!("chi-square argument {x} < 0")));
    }
    Ok(())
}

/// `P(χ²_df ≤ x)`.
pub fn chi2_cdf(x: f64, df: usize) -> Result<f64> {
    check_chi2_args(x, df)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma_lr(df as f64 / 2.0, x / 2.0))
}

/// Upper tail `P(χ²_df > x)`, accurate far into the tail.
pub fn chi2_sf(x: f64, df: usize) -> Result<f64> {
    check_chi2_args(x, df)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_ur(df as f64 / 2.0, x / 2.0))
}

/// Inverse of [`chi2_cdf`] by bracketing and bisection.
pub fn chi2_quantile(p: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::DomainError("chi-square needs df >= 1".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(format!("probability {p} not in (0, 1)")));
    }
    let mut lo = 0.0;
    let mut hi = df as f64 + 10.0;
    while chi2_cdf(hi, df)? < p {
        lo = hi;
        hi *= 2.0;
    }
    // absolute tolerance 1e-10, or 1e-15 relative for large quantiles
    while hi - lo > 1e-10_f64.max(1e-15 * hi) {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, df)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Normal,
    PowerExponential { beta: f64 },
    StudentT { nu: f64 },
}

impl Family {
    /// Short label used in reports, e.g. `N`, `PE2`, `t5`.
    pub fn label(&self) -> String {
        match self {
            Family::Normal => "N".into(),
            Family::PowerExponential { beta } => format!("PE{beta}"),
            Family::StudentT { nu } => format!("t{nu}"),
        }
    }
}

/// A population with given mean and covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    #[serde(flatten)]
    pub family: Family,
    pub mean: Vec<f64>,
    /// Row-major covariance; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
}

impl PopulationSpec {
    pub fn identity_cov(family: Family, mean: Vec<f64>) -> Self {
        Self {
            family,
            mean,
            cov: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> Result<Matrix> {
        let d = self.dim();
        match &self.cov {
            None => Ok(Matrix::identity(d, d)),
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance must be {d}x{d}"
                    )));
                }
                crate::linalg::matrix_from_rows(d, d, &rows.concat())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() {
            return Err(Error::InvalidConfig("population mean is empty".into()));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("population mean is not finite".into()));
        }
        match self.family {
            Family::PowerExponential { beta } if !(beta > 0.0) => {
                return Err(Error::InvalidConfig(format!(
                    "power exponential beta {beta} <= 0"
                )))
            }
            Family::StudentT { nu } if !(nu > 4.0) => {
                return Err(Error::InvalidConfig(format!(
                    "Student t needs nu > 4 for finite fourth moments, got {nu}"
                )))
            }
            _ => {}
        }
        let cov = self.cov_matrix()?;
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) || cov.cholesky().is_none()
        {
            return Err(Error::InvalidConfig(
                "covariance is not symmetric positive definite".into(),
            ));
        }
        Ok(())
    }

    /// A reusable sampler with the covariance factor precomputed.
    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        let d = self.dim();
        let chol: Cholesky<f64, nalgebra::Dyn> = self
            .cov_matrix()?
            .cholesky()
            .ok_or_else(|| Error::InvalidConfig("covariance is not positive definite".into()))?;
        let family = match self.family {
            Family::Normal => SamplerFamily::Normal,
            Family::StudentT { nu } => SamplerFamily::StudentT {
                chi2: ChiSquared::new(nu).expect("nu > 4"),
                nu,
                scale: ((nu - 2.0) / nu).sqrt(),
            },
            Family::PowerExponential { beta } => {
                let shape = d as f64 / (2.0 * beta);
                SamplerFamily::PowerExponential {
                    gamma: Gamma::new(shape, 1.0).expect("positive shape"),
                    beta,
                    scale: (1.0 / pe_cov_factor(d, beta)).sqrt(),
                }
            }
        };
        Ok(Sampler {
            mean: Vector::from_column_slice(&self.mean),
            factor: chol.l(),
            family,
        })
    }
}

/// `Cov(X) = factor · V` for the power exponential with scatter `V`:
/// `2^{1/β} Γ((d+2)/(2β)) / (d Γ(d/(2β)))`.
pub fn pe_cov_factor(d: usize, beta: f64) -> f64 {
    let df = d as f64;
    (std::f64::consts::LN_2 / beta + ln_gamma((df + 2.0) / (2.0 * beta))
        - ln_gamma(df / (2.0 * beta)))
    .exp()
        / df
}

#[derive(Debug, Clone)]
enum SamplerFamily {
    Normal,
    StudentT {
        chi2: ChiSquared<f64>,
        nu: f64,
        scale: f64,
    },
    PowerExponential {
        gamma: Gamma<f64>,
        beta: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Sampler {
    mean: Vector,
    factor: Matrix,
    family: SamplerFamily,
}

impl Sampler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// One draw with mean `mean` and covariance `cov`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let d = self.dim();
        let z = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let standardized = match &self.family {
            SamplerFamily::Normal => z,
            SamplerFamily::StudentT { chi2, nu, scale } => {
                let w: f64 = chi2.sample(rng);
                z * (scale / (w / nu).sqrt())
            }
            SamplerFamily::PowerExponential { gamma, beta, scale } => {
                let norm = z.norm();
                let u = if norm > 0.0 { z / norm } else { unit(d) };
                let g: f64 = gamma.sample(rng);
                let radius = (2.0 * g).powf(1.0 / (2.0 * beta));
                u * (radius * scale)
            }
        };
        &self.mean + &self.factor * standardized
    }

    pub fn sample<R: Rng + ?Sized>(&self, label: usize, n: usize, rng: &mut R) -> GroupSample {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(self.draw(rng).as_slice());
        }
        GroupSample::from_trusted(label, d, data)
    }
}

fn unit(d: usize) -> Vector {
    let mut e = Vector::zeros(d);
    e[0] = 1.0;
    e
}

/// `n` i.i.d. draws from `spec`.
pub fn sample_population<R: Rng + ?Sized>(
    spec: &PopulationSpec,
    label: usize,
    n: usize,
    rng: &mut R,
) -> Result<GroupSample> {
    Ok(spec.sampler()?.sample(label, n, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanChoice {
    /// `(1/C) e₁`
    Mu1,
    /// `(1/C) 1_d / √n`
    Mu2,
}

/// Mean vectors of the simulation scenarios, taken literally.
pub fn scenario_mean_vector(which: MeanChoice, c: f64, d: usize, n: usize) -> Result<Vec<f64>> {
    if !(c > 0.0) || d == 0 {
        return Err(Error::DomainError(format!(
            "need C > 0 and d >= 1, got C={c}, d={d}"
        )));
    }
    Ok(match which {
        MeanChoice::Mu1 => {
            let mut v = vec![0.0; d];
            v[0] = 1.0 / c;
            v
        }
        MeanChoice::Mu2 => {
            if n == 0 {
                return Err(Error::DomainError("n must be positive".into()));
            }
            vec![1.0 / (c * (n as f64).sqrt()); d]
        }
    })
}

//! Wald-type statistics for `H₀: T·C = 0` and `H₀: T·B = 0`.

use serde::{Deserialize, Serialize};

use crate::distributions::chi2_sf;
use crate::error::{Error, Result};
use crate::linalg::{moore_penrose, ContrastSpec, Matrix, Vector};
use crate::moments::{asymptotic_variances, GroupEstimates, GroupSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestTarget {
    /// Multivariate coefficient of variation `C`.
    Mcv,
    /// Standardized mean `B = 1/C`.
    StdMean,
}

impl TestTarget {
    pub const BOTH: [TestTarget; 2] = [TestTarget::Mcv, TestTarget::StdMean];

    pub fn symbol(self) -> &'static str {
        match self {
            TestTarget::Mcv => "C",
            TestTarget::StdMean => "B",
        }
    }

    fn parameter(self, e: &GroupEstimates) -> f64 {
        match self {
            TestTarget::Mcv => e.mcv,
            TestTarget::StdMean => e.std_mean,
        }
    }

    fn variance(self, e: &GroupEstimates) -> f64 {
        match self {
            TestTarget::Mcv => e.var_mcv,
            TestTarget::StdMean => e.var_std_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub target: TestTarget,
    pub statistic: f64,
    pub df: usize,
    pub p_asymptotic: f64,
    pub p_permutation: Option<f64>,
    pub permutations_used: Option<usize>,
    pub permutations_failed: Option<usize>,
    pub estimates: Vec<GroupEstimates>,
}

impl TestResult {
    pub fn rejects_asymptotic(&self, alpha: f64) -> bool {
        self.p_asymptotic <= alpha
    }

    pub fn rejects_permutation(&self, alpha: f64) -> Option<bool> {
        self.p_permutation.map(|p| p <= alpha)
    }
}

/// `S_n = n (T θ̂)ᵀ (T Σ̂ Tᵀ)⁺ (T θ̂)` with `Σ̂ = diag(σ̂²₁, …, σ̂²_k)`.
pub fn wald_statistic(
    estimates: &[GroupEstimates],
    contrast: &ContrastSpec,
    target: TestTarget,
    total_n: usize,
) -> Result<f64> {
    let k = estimates.len();
    if contrast.groups() != k {
        return Err(Error::DimensionMismatch(format!(
            "contrast acts on {} groups, {k} estimates given",
            contrast.groups()
        )));
    }
    let theta = Vector::from_iterator(k, estimates.iter().map(|e| target.parameter(e)));
    let mut variances = Vec::with_capacity(k);
    for e in estimates {
        let v = target.variance(e);
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::DegenerateVariance {
                group: e.group,
                variance: v,
            });
        }
        variances.push(v);
    }
    Ok(quadratic_form(
        &contrast.projection,
        &theta,
        &variances,
        total_n as f64,
    ))
}

pub(crate) fn quadratic_form(t: &Matrix, theta: &Vector, variances: &[f64], n: f64) -> f64 {
    let t_theta = t * theta;
    // T Σ Tᵀ with diagonal Σ: scale the columns of T
    let mut t_sigma = t.clone();
    for (j, v) in variances.iter().enumerate() {
        t_sigma.column_mut(j).scale_mut(*v);
    }
    let middle = moore_penrose(&(t_sigma * t.transpose()));
    let s = n * t_theta.dot(&(middle * &t_theta));
    s.max(0.0)
}

/// Upper-tail chi-square p-value with `df` degrees of freedom.
pub fn asymptotic_test(statistic: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::BadDegrees);
    }
    chi2_sf(statistic.max(0.0), df)
}

/// Estimates every group of a design.
pub fn estimate_groups(data: &[GroupSample]) -> Result<Vec<GroupEstimates>> {
    let total_n = data.iter().map(GroupSample::len).sum();
    data.iter()
        .map(|g| asymptotic_variances(g, total_n))
        .collect()
}

/// Asymptotic Wald-type test on the original data.
pub fn wald_test(
    data: &[GroupSample],
    contrast: &ContrastSpec,
    target: TestTarget,
) -> Result<TestResult> {
    let estimates = estimate_groups(data)?;
    result_from_estimates(
        estimates,
        contrast,
        target,
        data.iter().map(GroupSample::len).sum(),
    )
}

pub(crate) fn result_from_estimates(
    estimates: Vec<GroupEstimates>,
    contrast: &ContrastSpec,
    target: TestTarget,
    total_n: usize,
) -> Result<TestResult> {
    let statistic = wald_statistic(&estimates, contrast, target, total_n)?;
    let p_asymptotic = asymptotic_test(statistic, contrast.rank)?;
    Ok(TestResult {
        target,
        statistic,
        df: contrast.rank,
        p_asymptotic,
        p_permutation: None,
        permutations_used: None,
        permutations_failed: None,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::one_way_contrast;

    fn est(group: usize, c: f64, v: f64) -> GroupEstimates {
        let q = 1.0 / (c * c);
        GroupEstimates {
            group,
            n: 10,
            mcv: c,
            std_mean: 1.0 / c,
            var_mcv: v,
            var_std_mean: q * q * v,
            weight: 0.5,
            quad_form: q,
        }
    }

    #[test]
    fn equal_estimates_give_zero() {
        let t = one_way_contrast(2).unwrap();
        let s = wald_statistic(
            &[est(0, 0.4, 0.2), est(1, 0.4, 0.5)],
            &t,
            TestTarget::Mcv,
            20,
        )
        .unwrap();
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn two_sample_closed_form() {
        let t = one_way_contrast(2).unwrap();
        let (c1, c2, v1, v2) = (0.3, 0.55, 0.12, 0.31);
        let s = wald_statistic(&[est(0, c1, v1), est(1, c2, v2)], &t, TestTarget::Mcv, 40).unwrap();
        let expected = 40.0 * (c1 - c2) * (c1 - c2) / (v1 + v2);
        assert!((s - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn scaling_variances_divides_statistic() {
        let t = one_way_contrast(3).unwrap();
        let base = [est(0, 0.3, 0.1), est(1, 0.5, 0.2), est(2, 0.2, 0.05)];
        let s1 = wald_statistic(&base, &t, TestTarget::Mcv, 30).unwrap();
        let scaled: Vec<_> = base
            .iter()
            .map(|e| GroupEstimates {
                var_mcv: e.var_mcv * 2.5,
                ..e.clone()
            })
            .collect();
        let s2 = wald_statistic(&scaled, &t, TestTarget::Mcv, 30).unwrap();
        assert!((s1 / 2.5 - s2).abs() < 1e-12 * s1);
    }

    #[test]
    fn zero_variance_is_rejected() {
        let t = one_way_contrast(2).unwrap();
        let r = wald_statistic(
            &[est(0, 0.3, 0.0), est(1, 0.5, 0.1)],
            &t,
            TestTarget::Mcv,
            20,
        );
        assert!(matches!(r, Err(Error::DegenerateVariance { group: 0, .. })));
        let r = wald_statistic(&[est(0, 0.3, 0.1)], &t, TestTarget::Mcv, 20);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn asymptotic_p_values() {
        assert!((asymptotic_test(3.8415, 1).unwrap() - 0.05).abs() < 5e-5);
        assert_eq!(asymptotic_test(0.0, 3).unwrap(), 1.0);
        assert!((asymptotic_test(7.8147, 3).unwrap() - 0.05).abs() < 5e-5);
        assert_eq!(asymptotic_test(1.0, 0), Err(Error::BadDegrees));
    }

    #[test]
    fn root_form_matches_sandwich() {
        use crate::design::two_way_contrast;
        use crate::design::Effect;
        let spec = two_way_contrast(2, 3, Effect::Interaction).unwrap();
        let c = [0.3, 0.45, 0.2, 0.5, 0.35, 0.6];
        let v = [0.1, 0.3, 0.07, 0.22, 0.5, 0.15];
        let ests: Vec<_> = (0..6).map(|i| est(i, c[i], v[i])).collect();
        let s = wald_statistic(&ests, &spec, TestTarget::Mcv, 60).unwrap();

        let t = &spec.projection;
        let mut t_root = t.clone();
        for j in 0..6 {
            t_root.column_mut(j).scale_mut(v[j].sqrt());
        }
        let y = moore_penrose(&t_root) * (t * Vector::from_column_slice(&c));
        let root = 60.0 * y.norm_squared();
        assert!((s - root).abs() < 1e-9 * s);
    }

    #[test]
    fn relabeling_invariance() {
        let spec = one_way_contrast(3).unwrap();
        let ests = [est(0, 0.3, 0.1), est(1, 0.5, 0.2), est(2, 0.2, 0.05)];
        let s = wald_statistic(&ests, &spec, TestTarget::StdMean, 30).unwrap();
        let order = [2, 0, 1];
        let permuted: Vec<_> = order.iter().map(|&i| ests[i].clone()).collect();
        let t = &spec.projection;
        let tp = Matrix::from_fn(3, 3, |i, j| t[(order[i], order[j])]);
        let spec_p = ContrastSpec {
            hypothesis: tp.clone(),
            projection: tp,
            rank: spec.rank,
        };
        let sp = wald_statistic(&permuted, &spec_p, TestTarget::StdMean, 30).unwrap();
        assert!((s - sp).abs() < 1e-10 * s);
    }

    /// Upper tail by Simpson integration of the density, independent of the
    /// incomplete gamma routine.
    fn chi2_tail_by_quadrature(x: f64, df: usize) -> f64 {
        let k = df as f64 / 2.0;
        let log_norm = -(k * std::f64::consts::LN_2) - statrs::function::gamma::ln_gamma(k);
        // substitute u = t^(1/2) to remove the t^(-1/2) singularity at df=1
        let f = |u: f64| {
            let t = u * u;
            if t == 0.0 {
                return if df == 1 { 2.0 * log_norm.exp() } else { 0.0 };
            }
            2.0 * u * (log_norm + (k - 1.0) * t.ln() - t / 2.0).exp()
        };
        let (a, b, m) = (0.0, x.sqrt(), 200_000);
        let h = (b - a) / m as f64;
        let mut sum = f(a) + f(b);
        for i in 1..m {
            sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - sum * h / 3.0
    }

    #[test]
    fn p_values_match_quadrature() {
        for (x, df) in [(3.8415, 1), (7.8147, 3), (0.7, 2), (12.0, 5)] {
            let oracle = chi2_tail_by_quadrature(x, df);
            assert!(
                (asymptotic_test(x, df).unwrap() - oracle).abs() < 1e-9,
                "x={x} df={df}"
            );
        }
        assert!((chi2_tail_by_quadrature(3.8415, 1) - 0.05).abs() < 5e-5);
    }
}

//! Permutation counterparts of the Wald-type tests.
//!
//! Group memberships are reassigned by drawing without replacement from the
//! pooled sample; every estimator is recomputed on each permuted sample.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ContrastSpec;
use crate::moments::{GroupSample, ZERO_MEAN_TOL};
use crate::rng::stream;
use crate::wald::{estimate_groups, result_from_estimates, wald_statistic, TestResult, TestTarget};

/// Hard limit on the number of evaluations in exhaustive mode.
pub const EXHAUSTIVE_LIMIT: usize = 1_000_000;

/// Permuted statistics within this relative distance of the observed one
/// count as ties (and therefore as `≥`).
pub const TIE_TOL: f64 = 1e-10;

/// Share of failed permutation replications above which the test errors.
pub const MAX_FAILED_SHARE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct PooledStats {
    pub pooled_mean: Vec<f64>,
    pub pooled_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationMode {
    MonteCarlo,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueRule {
    /// `(1 + #{Sᵖ ≥ S}) / (B + 1)`
    AddOne,
    /// `#{Sᵖ ≥ S} / B`
    RawProportion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: PermutationMode,
    #[serde(default = "default_rule")]
    pub p_value_rule: PValueRule,
}

fn default_mode() -> PermutationMode {
    PermutationMode::MonteCarlo
}

fn default_rule() -> PValueRule {
    PValueRule::AddOne
}

impl PermutationPlan {
    pub fn monte_carlo(replications: usize, seed: u64) -> Self {
        Self {
            replications,
            seed,
            mode: PermutationMode::MonteCarlo,
            p_value_rule: PValueRule::AddOne,
        }
    }

    pub fn exhaustive() -> Self {
        Self {
            replications: 0,
            seed: 0,
            mode: PermutationMode::Exhaustive,
            p_value_rule: PValueRule::RawProportion,
        }
    }
}

/// Mean of all observations pooled over the groups.
pub fn pooled_stats(data: &[GroupSample]) -> Result<PooledStats> {
    let d = check_dims(data)?;
    let n: usize = data.iter().map(GroupSample::len).sum();
    let mut mean = vec![0.0; d];
    let mut scale = 0.0_f64;
    for row in data.iter().flat_map(GroupSample::rows) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
            scale = scale.max(x.abs());
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
    if n == 0 || !(norm > ZERO_MEAN_TOL * scale) {
        return Err(Error::ZeroPooledMean);
    }
    Ok(PooledStats {
        pooled_mean: mean,
        pooled_size: n,
    })
}

fn check_dims(data: &[GroupSample]) -> Result<usize> {
    let d = data.first().map(GroupSample::dim).unwrap_or(0);
    if let Some(g) = data.iter().find(|g| g.dim() != d) {
        return Err(Error::DimensionMismatch(format!(
            "group {} has dimension {}, expected {d}",
            g.label(),
            g.dim()
        )));
    }
    Ok(d)
}

/// Concatenates the groups into one sample (label 0).
pub fn pool(data: &[GroupSample]) -> Result<GroupSample> {
    let d = check_dims(data)?;
    let rows: Vec<f64> = data
        .iter()
        .flat_map(|g| g.as_slice().iter().copied())
        .collect();
    Ok(GroupSample::from_trusted(0, d, rows))
}

/// A uniformly random partition of `pooled` into groups of the given sizes.
pub fn permute_sample<R: Rng + ?Sized>(
    pooled: &GroupSample,
    sizes: &[usize],
    rng: &mut R,
) -> Result<Vec<GroupSample>> {
    let total: usize = sizes.iter().sum();
    if total != pooled.len() {
        return Err(Error::SizeMismatch {
            expected: pooled.len(),
            actual: total,
        });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    Ok(split(pooled, sizes, &order))
}

fn split(pooled: &GroupSample, sizes: &[usize], order: &[usize]) -> Vec<GroupSample> {
    let d = pooled.dim();
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for (g, &n) in sizes.iter().enumerate() {
        let mut rows = Vec::with_capacity(n * d);
        for &j in &order[start..start + n] {
            rows.extend_from_slice(pooled.row(j));
        }
        out.push(GroupSample::from_trusted(g, d, rows));
        start += n;
    }
    out
}

/// Partition with observation `j` placed in group `labels[j]`, keeping
/// pooled order within each group.
fn split_by_labels(pooled: &GroupSample, sizes: &[usize], labels: &[usize]) -> Vec<GroupSample> {
    let d = pooled.dim();
    let mut rows: Vec<Vec<f64>> = sizes.iter().map(|n| Vec::with_capacity(n * d)).collect();
    for (j, &g) in labels.iter().enumerate() {
        rows[g].extend_from_slice(pooled.row(j));
    }
    rows.into_iter()
        .enumerate()
        .map(|(g, r)| GroupSample::from_trusted(g, d, r))
        .collect()
}

/// Number of ordered partitions `n! / (n₁! ⋯ n_k!)`, or `None` on overflow.
pub fn multinomial(sizes: &[usize]) -> Option<u128> {
    let mut acc: u128 = 1;
    let mut seen: u128 = 0;
    for &n in sizes {
        for i in 1..=n as u128 {
            seen += 1;
            // acc · seen / i stays integral: it is a product of binomials
            acc = acc.checked_mul(seen)? / i;
        }
    }
    Some(acc)
}

/// The `index`-th multiset permutation of group labels in lexicographic order.
fn unrank_labels(mut index: u128, sizes: &[usize]) -> Vec<usize> {
    let mut remaining = sizes.to_vec();
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        for g in 0..remaining.len() {
            if remaining[g] == 0 {
                continue;
            }
            remaining[g] -= 1;
            let block = multinomial(&remaining).expect("bounded by the exhaustive limit");
            if index < block {
                out.push(g);
                break;
            }
            index -= block;
            remaining[g] += 1;
        }
    }
    out
}

/// Permutation statistics for several targets, failures excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationDistribution {
    pub targets: Vec<TestTarget>,
    /// Valid statistics per target, in replication order.
    pub statistics: Vec<Vec<f64>>,
    /// Failed replications per target.
    pub failed: Vec<usize>,
    /// Replications attempted.
    pub attempted: usize,
}

fn statistics_for(
    groups: &[GroupSample],
    contrast: &ContrastSpec,
    targets: &[TestTarget],
    total_n: usize,
) -> Vec<Option<f64>> {
    match estimate_groups(groups) {
        Ok(est) => targets
            .iter()
            .map(|&t| wald_statistic(&est, contrast, t, total_n).ok())
            .collect(),
        Err(_) => vec![None; targets.len()],
    }
}

/// Evaluates the permutation distribution of the Wald-type statistics.
pub fn permutation_distribution(
    data: &[GroupSample],
    contrast: &ContrastSpec,
    targets: &[TestTarget],
    plan: &PermutationPlan,
) -> Result<PermutationDistribution> {
    let pooled = pool(data)?;
    let sizes: Vec<usize> = data.iter().map(GroupSample::len).collect();
    let total_n = pooled.len();

    let per_replication: Vec<Vec<Option<f64>>> = match plan.mode {
        PermutationMode::MonteCarlo => {
            if plan.replications == 0 {
                return Err(Error::InvalidConfig("need at least one permutation".into()));
            }
            (0..plan.replications)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream(plan.seed, b as u64);
                    let groups = permute_sample(&pooled, &sizes, &mut rng)
                        .expect("sizes sum to the pooled size");
                    statistics_for(&groups, contrast, targets, total_n)
                })
                .collect()
        }
        PermutationMode::Exhaustive => {
            let count = multinomial(&sizes)
                .filter(|&c| c <= EXHAUSTIVE_LIMIT as u128)
                .ok_or_else(|| Error::TooManyPartitions {
                    count: log_multinomial(&sizes).exp(),
                    limit: EXHAUSTIVE_LIMIT,
                })?;
            (0..count as usize)
                .into_par_iter()
                .map(|i| {
                    let labels = unrank_labels(i as u128, &sizes);
                    let groups = split_by_labels(&pooled, &sizes, &labels);
                    statistics_for(&groups, contrast, targets, total_n)
                })
                .collect()
        }
    };

    let attempted = per_replication.len();
    let mut statistics = vec![Vec::with_capacity(attempted); targets.len()];
    let mut failed = vec![0; targets.len()];
    for row in &per_replication {
        for (t, s) in row.iter().enumerate() {
            match s {
                Some(v) => statistics[t].push(*v),
                None => failed[t] += 1,
            }
        }
    }
    Ok(PermutationDistribution {
        targets: targets.to_vec(),
        statistics,
        failed,
        attempted,
    })
}

fn log_multinomial(sizes: &[usize]) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let n: usize = sizes.iter().sum();
    ln_gamma(n as f64 + 1.0) - sizes.iter().map(|&m| ln_gamma(m as f64 + 1.0)).sum::<f64>()
}

/// Permutation p-value of `observed` under the given rule; ties count as `≥`.
pub fn permutation_p_value(observed: f64, stats: &[f64], rule: PValueRule) -> f64 {
    let threshold = observed - TIE_TOL * observed.abs();
    let exceed = stats.iter().filter(|&&s| s >= threshold).count() as f64;
    let b = stats.len() as f64;
    match rule {
        PValueRule::AddOne => (1.0 + exceed) / (b + 1.0),
        PValueRule::RawProportion => exceed / b,
    }
}

/// Asymptotic and permutation tests for each target on the same permutations.
pub fn permutation_tests(
    data: &[GroupSample],
    contrast: &ContrastSpec,
    targets: &[TestTarget],
    plan: &PermutationPlan,
) -> Result<Vec<TestResult>> {
    pooled_stats(data)?;
    let total_n: usize = data.iter().map(GroupSample::len).sum();
    let estimates = estimate_groups(data)?;
    let observed: Vec<TestResult> = targets
        .iter()
        .map(|&t| result_from_estimates(estimates.clone(), contrast, t, total_n))
        .collect::<Result<_>>()?;

    let dist = permutation_distribution(data, contrast, targets, plan)?;
    // the exhaustive enumeration contains the identity, so no add-one there
    let rule = match plan.mode {
        PermutationMode::MonteCarlo => plan.p_value_rule,
        PermutationMode::Exhaustive => PValueRule::RawProportion,
    };
    observed
        .into_iter()
        .enumerate()
        .map(|(t, mut result)| {
            let failed = dist.failed[t];
            if failed as f64 > MAX_FAILED_SHARE * dist.attempted as f64 {
                return Err(Error::TooFewValidReplications {
                    failed,
                    total: dist.attempted,
                });
            }
            let stats = &dist.statistics[t];
            result.p_permutation = Some(permutation_p_value(result.statistic, stats, rule));
            result.permutations_used = Some(stats.len());
            result.permutations_failed = Some(failed);
            Ok(result)
        })
        .collect()
}

/// Permutation test for a single target.
pub fn permutation_test(
    data: &[GroupSample],
    contrast: &ContrastSpec,
    target: TestTarget,
    plan: &PermutationPlan,
) -> Result<TestResult> {
    Ok(permutation_tests(data, contrast, &[target], plan)?.remove(0))
}

/// Empirical `(1 − α)`-quantile: the smallest value whose empirical CDF is
/// at least `1 − α`.
pub fn permutation_quantile(stats: &[f64], alpha: f64) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!("alpha {alpha} not in (0, 1)")));
    }
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    // guard (1 − α)·m against rounding just above an integer
    let k = ((1.0 - alpha) * m - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[k.min(sorted.len()) - 1])
}

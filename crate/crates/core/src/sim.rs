//! Monte Carlo size and power experiments and the preset scenario grids.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{validate_contrast, DesignSpec, Effect};
use crate::distributions::{scenario_mean_vector, Family, MeanChoice, PopulationSpec, Sampler};
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, ContrastSpec};
use crate::moments::GroupSample;
use crate::permutation::{permutation_tests, PermutationPlan};
use crate::rng::{derive_seed, stream};
use crate::wald::{estimate_groups, result_from_estimates, TestResult, TestTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Asymptotic,
    Permutation,
}

impl Method {
    pub const BOTH: [Method; 2] = [Method::Asymptotic, Method::Permutation];

    pub fn short(self) -> &'static str {
        match self {
            Method::Asymptotic => "Asy",
            Method::Permutation => "Per",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContrastChoice {
    Design(DesignSpec),
    Custom { hypothesis: Vec<Vec<f64>> },
}

impl ContrastChoice {
    pub fn resolve(&self, groups: usize) -> Result<ContrastSpec> {
        match self {
            ContrastChoice::Design(design) => {
                if design.groups() != groups {
                    return Err(Error::InvalidConfig(format!(
                        "design has {} cells but {groups} populations are given",
                        design.groups()
                    )));
                }
                design.contrast()
            }
            ContrastChoice::Custom { hypothesis } => {
                let rows = hypothesis.len();
                if rows == 0 || hypothesis.iter().any(|r| r.len() != groups) {
                    return Err(Error::InvalidConfig(format!(
                        "custom contrast must have {groups} columns"
                    )));
                }
                let h = matrix_from_rows(rows, groups, &hypothesis.concat())?;
                validate_contrast(&h, groups)
            }
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_targets() -> Vec<TestTarget> {
    TestTarget::BOTH.to_vec()
}

fn default_methods() -> Vec<Method> {
    Method::BOTH.to_vec()
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub populations: Vec<PopulationSpec>,
    pub sizes: Vec<usize>,
    pub contrast: ContrastChoice,
    #[serde(default = "default_targets")]
    pub targets: Vec<TestTarget>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub mc_replications: usize,
    pub permutation_plan: PermutationPlan,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<ContrastSpec> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("{}: {msg}", self.id)));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} not in (0, 1)", self.alpha));
        }
        if self.mc_replications == 0 {
            return bad("mc_replications must be at least 1".into());
        }
        if self.populations.len() != self.sizes.len() {
            return bad(format!(
                "{} populations but {} sample sizes",
                self.populations.len(),
                self.sizes.len()
            ));
        }
        if self.targets.is_empty() || self.methods.is_empty() {
            return bad("need at least one target and one method".into());
        }
        let d = self
            .populations
            .first()
            .map(PopulationSpec::dim)
            .unwrap_or(0);
        for (i, p) in self.populations.iter().enumerate() {
            if p.dim() != d {
                return bad(format!(
                    "population {i} has dimension {}, expected {d}",
                    p.dim()
                ));
            }
            p.validate()?;
            if self.sizes[i] < d + 2 {
                return bad(format!("group {i} needs at least {} observations", d + 2));
            }
        }
        if self.methods.contains(&Method::Permutation)
            && self.permutation_plan.mode == crate::permutation::PermutationMode::MonteCarlo
            && self.permutation_plan.replications == 0
        {
            return bad("permutation replications must be at least 1".into());
        }
        self.contrast.resolve(self.populations.len())
    }

    /// Same scenario under another master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// `alpha ± 1.96·√(alpha(1−alpha)/reps)`, clipped to `[0, 1]`.
pub fn binomial_band(alpha: f64, reps: usize) -> (f64, f64) {
    let half = 1.96 * (alpha * (1.0 - alpha) / reps.max(1) as f64).sqrt();
    ((alpha - half).max(0.0), (alpha + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub scenario_id: String,
    pub method: Method,
    pub target: TestTarget,
    #[serde(rename = "rate")]
    pub rejection_rate: f64,
    pub band: (f64, f64),
    pub in_binomial_band: bool,
    pub n_valid: usize,
    pub failed: usize,
    pub seed: u64,
}

fn draw_groups(samplers: &[Sampler], sizes: &[usize], seed: u64, r: usize) -> Vec<GroupSample> {
    let mut rng = stream(seed, r as u64);
    samplers
        .iter()
        .zip(sizes)
        .enumerate()
        .map(|(g, (s, &n))| s.sample(g, n, &mut rng))
        .collect()
}

/// Rejection decisions of one replication, `None` where the test failed.
/// Layout: methods outer, targets inner.
fn replicate(
    config: &ScenarioConfig,
    contrast: &ContrastSpec,
    samplers: &[Sampler],
    r: usize,
) -> Vec<Option<bool>> {
    let slots = config.methods.len() * config.targets.len();
    let data = draw_groups(samplers, &config.sizes, config.seed, r);
    let total_n: usize = config.sizes.iter().sum();

    let permuted: Option<Result<Vec<TestResult>>> =
        config.methods.contains(&Method::Permutation).then(|| {
            let plan = PermutationPlan {
                seed: derive_seed(config.seed, r as u64),
                ..config.permutation_plan
            };
            permutation_tests(&data, contrast, &config.targets, &plan)
        });
    let asymptotic: Result<Vec<TestResult>> = match &permuted {
        Some(Ok(results)) => Ok(results.clone()),
        _ => estimate_groups(&data).and_then(|est| {
            config
                .targets
                .iter()
                .map(|&t| result_from_estimates(est.clone(), contrast, t, total_n))
                .collect()
        }),
    };

    let mut out = Vec::with_capacity(slots);
    for method in &config.methods {
        let results = match method {
            Method::Asymptotic => asymptotic.as_ref().ok(),
            Method::Permutation => permuted.as_ref().and_then(|p| p.as_ref().ok()),
        };
        for t in 0..config.targets.len() {
            out.push(results.map(|res| match method {
                Method::Asymptotic => res[t].p_asymptotic <= config.alpha,
                Method::Permutation => {
                    res[t].p_permutation.expect("permutation p-value") <= config.alpha
                }
            }));
        }
    }
    out
}

/// Runs all replications of a scenario; one report per (method, target).
pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<RateReport>> {
    let contrast = config.validate()?;
    let samplers: Vec<Sampler> = config
        .populations
        .iter()
        .map(PopulationSpec::sampler)
        .collect::<Result<_>>()?;

    let decisions: Vec<Vec<Option<bool>>> = (0..config.mc_replications)
        .into_par_iter()
        .map(|r| replicate(config, &contrast, &samplers, r))
        .collect();

    let mut reports = Vec::new();
    let mut slot = 0;
    for &method in &config.methods {
        for &target in &config.targets {
            let column = decisions.iter().map(|row| row[slot]);
            let failed = column.clone().filter(Option::is_none).count();
            let rejected = column.filter(|d| *d == Some(true)).count();
            if failed as f64 > 0.01 * config.mc_replications as f64 {
                return Err(Error::TooManyFailedReplications {
                    failed,
                    total: config.mc_replications,
                });
            }
            let n_valid = config.mc_replications - failed;
            let rate = rejected as f64 / n_valid as f64;
            let band = binomial_band(config.alpha, n_valid);
            reports.push(RateReport {
                scenario_id: config.id.clone(),
                method,
                target,
                rejection_rate: rate,
                band,
                in_binomial_band: band.0 <= rate && rate <= band.1,
                n_valid,
                failed,
                seed: config.seed,
            });
            slot += 1;
        }
    }
    Ok(reports)
}

/// Runs several scenarios in parallel, reports in input order.
pub fn run_scenarios(configs: &[ScenarioConfig]) -> Result<Vec<RateReport>> {
    let per: Vec<Vec<RateReport>> = configs
        .par_iter()
        .map(run_scenario)
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Aligned human-readable table, rates in percent.
pub fn render_table(reports: &[RateReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.scenario_id.len())
        .max()
        .unwrap_or(8)
        .max(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<6} {:<6} {:>7}  {:>15}  {:>6} {:>6}",
        "scenario", "method", "target", "rate%", "band%", "valid", "failed"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:<6} {:<6} {:>7.1}  [{:>5.1}, {:>5.1}]  {:>6} {:>6}",
            r.scenario_id,
            r.method.short(),
            r.target.symbol(),
            100.0 * r.rejection_rate,
            100.0 * r.band.0,
            100.0 * r.band.1,
            r.n_valid,
            r.failed
        );
    }
    out
}

/// The four families used by the preset grids.
pub fn simulation_families() -> [Family; 4] {
    [
        Family::PowerExponential { beta: 2.0 },
        Family::Normal,
        Family::PowerExponential { beta: 0.5 },
        Family::StudentT { nu: 5.0 },
    ]
}

/// MCVs of the univariate `2 × 4` layouts, row `i_A` outer, `i_B` inner.
/// Index 0: only main effect A present; 1: only main effect B; 2: all effects.
pub const TWO_WAY_A1: [[f64; 8]; 3] = [
    [0.237, 0.237, 0.237, 0.237, 0.300, 0.300, 0.300, 0.300],
    [0.237, 0.300, 0.300, 0.300, 0.237, 0.300, 0.300, 0.300],
    [0.167, 0.249, 0.237, 0.249, 0.277, 0.300, 0.320, 0.300],
];

pub const TWO_WAY_A2: [[f64; 8]; 3] = [
    [0.346, 0.346, 0.346, 0.346, 0.300, 0.300, 0.300, 0.300],
    [0.346, 0.300, 0.300, 0.300, 0.346, 0.300, 0.300, 0.300],
    [0.500, 0.373, 0.346, 0.373, 0.305, 0.300, 0.320, 0.300],
];

const TWO_WAY_SCENARIOS: [&str; 3] = ["A-false", "B-false", "all-false"];

/// Per-cell sample size of the two-way presets; not reported with the
/// two-way results, chosen so the normal-theory power is in their range.
pub const TWO_WAY_CELL_SIZE: usize = 40;

/// Preset names accepted by [`table_preset`].
pub const PRESETS: [&str; 5] = ["table2", "table3", "table4", "table5", "table6"];

fn scaled(scale: f64) -> (usize, usize) {
    let reps = ((1000.0 * scale).round() as usize).max(200);
    let perms = ((1000.0 * scale).round() as usize).max(199);
    (reps, perms)
}

struct Builder {
    reps: usize,
    perms: usize,
    configs: Vec<ScenarioConfig>,
}

impl Builder {
    fn push(
        &mut self,
        id: String,
        populations: Vec<PopulationSpec>,
        sizes: Vec<usize>,
        contrast: ContrastChoice,
    ) {
        let seed = derive_seed(0, self.configs.len() as u64);
        self.configs.push(ScenarioConfig {
            id,
            populations,
            sizes,
            contrast,
            targets: default_targets(),
            methods: default_methods(),
            alpha: 0.05,
            mc_replications: self.reps,
            permutation_plan: PermutationPlan::monte_carlo(self.perms, 0),
            seed,
        });
    }
}

fn identity_population(
    family: Family,
    which: MeanChoice,
    c: f64,
    d: usize,
    n: usize,
) -> Result<PopulationSpec> {
    Ok(PopulationSpec::identity_cov(
        family,
        scenario_mean_vector(which, c, d, n)?,
    ))
}

/// The scenario grids of the simulation tables, with Monte Carlo and
/// permutation counts scaled by `scale ∈ (0, 1]` (floors 200 and 199).
///
/// Scenario seeds are `derive_seed(0, index)`; use
/// [`ScenarioConfig::with_seed`] to rebase them.
pub fn table_preset(name: &str, scale: f64) -> Result<Vec<ScenarioConfig>> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidConfig(format!("scale {scale} not in (0, 1]")));
    }
    let (reps, perms) = scaled(scale);
    let mut b = Builder {
        reps,
        perms,
        configs: Vec::new(),
    };
    let one_way = |k| ContrastChoice::Design(DesignSpec::one_way(k));
    match name {
        "table2" => {
            for family in simulation_families() {
                for c0 in [0.1, 0.5, 2.0] {
                    for n0 in [20, 35, 50] {
                        let pop = identity_population(family, MeanChoice::Mu1, c0, 5, n0)?;
                        b.push(
                            format!("table2/{}/C0={c0}/n0={n0}", family.label()),
                            vec![pop.clone(), pop],
                            vec![n0, n0],
                            one_way(2),
                        );
                    }
                }
            }
        }
        "table3" => {
            for family in simulation_families() {
                for c2 in [0.5, 1.0, 1.5] {
                    let p1 = identity_population(family, MeanChoice::Mu1, 1.0, 5, 50)?;
                    let p2 = identity_population(family, MeanChoice::Mu1, c2, 5, 50)?;
                    b.push(
                        format!("table3/{}/C2={c2}", family.label()),
                        vec![p1, p2],
                        vec![50, 50],
                        one_way(2),
                    );
                }
            }
        }
        "table4" | "table5" => {
            let families = [
                Family::PowerExponential { beta: 2.0 },
                Family::PowerExponential { beta: 0.5 },
                Family::StudentT { nu: 5.0 },
            ];
            let settings: Vec<(f64, f64)> = if name == "table4" {
                [0.1, 0.5, 1.0, 1.5, 2.0].iter().map(|&c| (c, c)).collect()
            } else {
                vec![(0.07, 0.1), (0.13, 0.1), (0.5, 1.0), (1.5, 1.0)]
            };
            for family in families {
                for k in [2, 4] {
                    let sizes = [35, 45, 40, 50][..k].to_vec();
                    let total: usize = sizes.iter().sum();
                    for d in [5, 10] {
                        for &(c1, c_rest) in &settings {
                            let mut pops =
                                vec![identity_population(family, MeanChoice::Mu2, c1, d, total)?];
                            for _ in 1..k {
                                pops.push(identity_population(
                                    family,
                                    MeanChoice::Mu2,
                                    c_rest,
                                    d,
                                    total,
                                )?);
                            }
                            let label = if name == "table4" {
                                format!("C0={c1}")
                            } else {
                                format!("C1={c1},C2={c_rest}")
                            };
                            b.push(
                                format!("{name}/{}/k={k}/d={d}/{label}", family.label()),
                                pops,
                                sizes.clone(),
                                one_way(k),
                            );
                        }
                    }
                }
            }
        }
        "table6" => {
            for family in simulation_families() {
                for (s, scenario) in TWO_WAY_SCENARIOS.iter().enumerate() {
                    for (setting, cs) in [("A1", &TWO_WAY_A1[s]), ("A2", &TWO_WAY_A2[s])] {
                        let pops = cs
                            .iter()
                            .map(|&c| {
                                identity_population(
                                    family,
                                    MeanChoice::Mu1,
                                    c,
                                    1,
                                    TWO_WAY_CELL_SIZE,
                                )
                            })
                            .collect::<Result<Vec<_>>>()?;
                        for (hyp, effect) in [
                            ("A", Effect::MainA),
                            ("B", Effect::MainB),
                            ("AB", Effect::Interaction),
                        ] {
                            b.push(
                                format!("table6/{}/{scenario}/{setting}/H0-{hyp}", family.label()),
                                pops.clone(),
                                vec![TWO_WAY_CELL_SIZE; 8],
                                ContrastChoice::Design(DesignSpec::two_way(2, 4, effect)),
                            );
                        }
                    }
                }
            }
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    }
    Ok(b.configs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_examples() {
        let (lo, hi) = binomial_band(0.05, 1000);
        assert!((lo - 0.0365).abs() < 5e-5 && (hi - 0.0635).abs() < 5e-5);
        assert_eq!(format!("{:.1}-{:.1}", 100.0 * lo, 100.0 * hi), "3.6-6.4");
        let (lo, hi) = binomial_band(0.05, 2000);
        assert!((lo - 0.0404).abs() < 5e-5 && (hi - 0.0596).abs() < 5e-5);
        let (lo, hi) = binomial_band(0.5, 4);
        assert!((lo - 0.01).abs() < 1e-12 && (hi - 0.99).abs() < 1e-12);
    }

    #[test]
    fn preset_grids() {
        let t2 = table_preset("table2", 0.1).unwrap();
        assert_eq!(t2.len(), 4 * 3 * 3);
        assert!(t2
            .iter()
            .all(|c| c.mc_replications == 200 && c.permutation_plan.replications == 199));
        let t4 = table_preset("table4", 1.0).unwrap();
        assert!(t4.iter().any(|c| c.sizes == vec![35, 45, 40, 50]));
        assert!(t4.iter().all(|c| c.mc_replications == 1000));
        let t6 = table_preset("table6", 0.2).unwrap();
        assert_eq!(t6.len(), 4 * 6 * 3);
        assert!(matches!(
            table_preset("table9", 0.5),
            Err(Error::UnknownPreset(_))
        ));
        assert!(table_preset("table2", 0.0).is_err());
        for cfg in t2.iter().chain(&t4).chain(&t6) {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn table6_embeds_layout() {
        let t6 = table_preset("table6", 0.2).unwrap();
        let cfg = t6
            .iter()
            .find(|c| c.id == "table6/N/A-false/A1/H0-B")
            .unwrap();
        let mcv: Vec<f64> = cfg.populations.iter().map(|p| 1.0 / p.mean[0]).collect();
        let expected = [0.237, 0.237, 0.237, 0.237, 0.300, 0.300, 0.300, 0.300];
        for (a, b) in mcv.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = table_preset("table3", 0.2).unwrap().remove(0);
        cfg.alpha = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn single_replication_is_degenerate() {
        let mut cfg = table_preset("table3", 0.2).unwrap().remove(0);
        cfg.mc_replications = 1;
        cfg.methods = vec![Method::Asymptotic];
        let reports = run_scenario(&cfg).unwrap();
        for r in reports {
            assert!(r.rejection_rate == 0.0 || r.rejection_rate == 1.0);
            assert_eq!(r.n_valid, 1);
        }
    }
}

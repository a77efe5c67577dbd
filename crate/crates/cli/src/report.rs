//! Running a test on a loaded dataset and rendering the result.

use std::fmt::Write as _;

use mcv_core::permutation::permutation_tests;
use mcv_core::wald::{estimate_groups, wald_test};
use mcv_core::{
    ContrastSpec, DesignSpec, Effect, Error, GroupEstimates, PermutationPlan, TestResult,
    TestTarget,
};
use serde::{Deserialize, Serialize};

use crate::ingest::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Asymptotic,
    Permutation,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub index: usize,
    pub levels: Vec<String>,
    pub n: usize,
    pub mcv: f64,
    pub std_mean: f64,
    pub var_mcv: f64,
    pub var_std_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultReport {
    pub target: TestTarget,
    pub statistic: f64,
    pub df: usize,
    pub p_asymptotic: Option<f64>,
    pub p_permutation: Option<f64>,
    pub permutations_used: Option<usize>,
    pub permutations_failed: Option<usize>,
    pub reject_asymptotic: Option<bool>,
    pub reject_permutation: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub factors: Vec<String>,
    pub effect: String,
    pub dim: usize,
    pub n: usize,
    pub alpha: f64,
    pub method: MethodChoice,
    pub permutations: Option<usize>,
    pub seed: Option<u64>,
    pub cells: Vec<CellReport>,
    pub results: Vec<ResultReport>,
}

/// Effect selected on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectChoice {
    Group,
    A,
    B,
    AB,
    Custom(Vec<Vec<f64>>),
}

impl EffectChoice {
    pub fn name(&self) -> &'static str {
        match self {
            EffectChoice::Group => "group",
            EffectChoice::A => "A",
            EffectChoice::B => "B",
            EffectChoice::AB => "AB",
            EffectChoice::Custom(_) => "custom",
        }
    }
}

/// Contrast for the dataset's layout. `group` on a two-way layout compares
/// all cells as one-way groups.
pub fn resolve_contrast(data: &Dataset, effect: &EffectChoice) -> Result<ContrastSpec, Error> {
    let k = data.cells.len();
    let two_way = data.levels.len() == 2;
    let design = |e| {
        if !two_way {
            return Err(Error::BadDesign(format!(
                "effect {} needs two factor columns",
                effect.name()
            )));
        }
        DesignSpec::two_way(data.levels[0].len(), data.levels[1].len(), e).contrast()
    };
    match effect {
        EffectChoice::Group => DesignSpec::one_way(k).contrast(),
        EffectChoice::A => design(Effect::MainA),
        EffectChoice::B => design(Effect::MainB),
        EffectChoice::AB => design(Effect::Interaction),
        EffectChoice::Custom(rows) => {
            let r = rows.len();
            if rows.iter().any(|row| row.len() != k) {
                return Err(Error::DimensionMismatch(format!(
                    "contrast rows must have {k} entries, one per cell"
                )));
            }
            let h = mcv_core::linalg::matrix_from_rows(r, k, &rows.concat())?;
            mcv_core::design::validate_contrast(&h, k)
        }
    }
}

pub struct TestRequest<'a> {
    pub data: &'a Dataset,
    pub effect: EffectChoice,
    pub targets: Vec<TestTarget>,
    pub method: MethodChoice,
    pub plan: PermutationPlan,
    pub alpha: f64,
}

pub fn run_test(req: &TestRequest) -> Result<TestReport, Error> {
    let contrast = resolve_contrast(req.data, &req.effect)?;
    let groups = &req.data.groups;
    let results: Vec<TestResult> = match req.method {
        MethodChoice::Asymptotic => req
            .targets
            .iter()
            .map(|&t| wald_test(groups, &contrast, t))
            .collect::<Result<_, _>>()?,
        _ => permutation_tests(groups, &contrast, &req.targets, &req.plan)?,
    };
    let estimates: Vec<GroupEstimates> = match results.first() {
        Some(r) => r.estimates.clone(),
        None => estimate_groups(groups)?,
    };
    let show_asy = req.method != MethodChoice::Permutation;
    let show_perm = req.method != MethodChoice::Asymptotic;
    let cells = req
        .data
        .cells
        .iter()
        .zip(&estimates)
        .map(|(c, e)| CellReport {
            index: c.index,
            levels: c.levels.clone(),
            n: c.n,
            mcv: e.mcv,
            std_mean: e.std_mean,
            var_mcv: e.var_mcv,
            var_std_mean: e.var_std_mean,
        })
        .collect();
    let results = results
        .into_iter()
        .map(|r| ResultReport {
            target: r.target,
            statistic: r.statistic,
            df: r.df,
            p_asymptotic: show_asy.then_some(r.p_asymptotic),
            p_permutation: if show_perm { r.p_permutation } else { None },
            permutations_used: if show_perm { r.permutations_used } else { None },
            permutations_failed: if show_perm {
                r.permutations_failed
            } else {
                None
            },
            reject_asymptotic: show_asy.then_some(r.p_asymptotic <= req.alpha),
            reject_permutation: if show_perm {
                r.p_permutation.map(|p| p <= req.alpha)
            } else {
                None
            },
        })
        .collect();
    Ok(TestReport {
        factors: req.data.factors.clone(),
        effect: req.effect.name().to_string(),
        dim: req.data.dim(),
        n: req.data.total(),
        alpha: req.alpha,
        method: req.method,
        permutations: show_perm.then_some(req.plan.replications),
        seed: show_perm.then_some(req.plan.seed),
        cells,
        results,
    })
}

fn pct(p: Option<f64>) -> String {
    p.map(|v| format!("{:.2}", 100.0 * v))
        .unwrap_or_else(|| "-".into())
}

/// Human-readable report; MCVs and p-values in percent.
pub fn render_text(report: &TestReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "factors: {}   effect: {}   d = {}   n = {}",
        report.factors.join(" x "),
        report.effect,
        report.dim,
        report.n
    );
    let label_width = report
        .cells
        .iter()
        .map(|c| c.levels.join(":").len())
        .max()
        .unwrap_or(4)
        .max(4);
    let _ = writeln!(
        out,
        "\n{:>5}  {:<label_width$}  {:>6}  {:>9}  {:>10}  {:>10}",
        "cell", "levels", "n", "C (%)", "C", "B"
    );
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{:>5}  {:<label_width$}  {:>6}  {:>9.2}  {:>10.6}  {:>10.4}",
            c.index,
            c.levels.join(":"),
            c.n,
            100.0 * c.mcv,
            c.mcv,
            c.std_mean
        );
    }
    let _ = writeln!(
        out,
        "\n{:<7} {:>12} {:>4} {:>12} {:>12} {:>14}",
        "target", "statistic", "df", "p asy (%)", "p perm (%)", "perms (failed)"
    );
    for r in &report.results {
        let perms = match (r.permutations_used, r.permutations_failed) {
            (Some(u), Some(f)) => format!("{u} ({f})"),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<7} {:>12.4} {:>4} {:>12} {:>12} {:>14}",
            r.target.symbol(),
            r.statistic,
            r.df,
            pct(r.p_asymptotic),
            pct(r.p_permutation),
            perms
        );
    }
    let _ = writeln!(out, "\nalpha = {}", report.alpha);
    out
}

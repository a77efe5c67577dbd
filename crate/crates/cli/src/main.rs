use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mcv_cli::ingest::{load_dataset, read_contrast, IngestError, IngestSpec};
use mcv_cli::report::{render_text, run_test, EffectChoice, MethodChoice, TestRequest};
use mcv_core::permutation::{PValueRule, PermutationMode, PermutationPlan};
use mcv_core::rng::derive_seed;
use mcv_core::sim::{render_table, run_scenarios, table_preset, ScenarioConfig, PRESETS};
use mcv_core::TestTarget;

#[derive(Parser)]
#[command(
    name = "mcvtest",
    version,
    about = "Wald-type and permutation tests for multivariate coefficients of variation"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MCVTEST_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test for equal MCVs or standardized means across groups or effects.
    Test(TestArgs),
    /// Run simulation scenarios and report empirical sizes and powers.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EffectArg {
    Group,
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    #[value(name = "AB", alias = "ab")]
    Ab,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Mcv,
    Stdmean,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Asymptotic,
    Permutation,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    AddOne,
    Raw,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(clap::Args)]
struct TestArgs {
    /// CSV file with one observation per row.
    #[arg(long)]
    data: PathBuf,
    /// Response columns, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// One or two factor columns, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    factors: Vec<String>,
    /// Level order for a factor, e.g. `--levels drug=Yes,No`. Repeatable.
    #[arg(long)]
    levels: Vec<String>,
    #[arg(long, value_enum, default_value = "group")]
    effect: EffectArg,
    /// Hypothesis matrix for `--effect custom`, one row per line.
    #[arg(long)]
    contrast: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    target: TargetArg,
    #[arg(long, value_enum, default_value = "both")]
    method: MethodArg,
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    /// Enumerate all partitions instead of sampling (small samples only).
    #[arg(long)]
    exhaustive: bool,
    #[arg(long, value_enum, default_value = "add-one")]
    p_value: RuleArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// The file has no header row; columns are then 1-based numbers.
    #[arg(long)]
    no_header: bool,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// One of table2 .. table6.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// JSON file with one scenario or a list of scenarios.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fraction of the full 1000 replications x 1000 permutations.
    #[arg(long, default_value_t = 0.2)]
    scale: f64,
    /// Master seed; scenario i runs with a seed derived from (seed, i).
    #[arg(long)]
    seed: Option<u64>,
    /// Only run scenarios whose id contains this text.
    #[arg(long)]
    only: Option<String>,
    /// Write the JSON records here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Engine(#[from] mcv_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Engine(e) if e.is_estimation_error() => 2,
            _ => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_levels(specs: &[String]) -> Result<HashMap<String, Vec<String>>, CliError> {
    let mut out = HashMap::new();
    for spec in specs {
        let (name, levels) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--levels expects FACTOR=l1,l2,..., got '{spec}'")))?;
        let levels: Vec<String> = levels.split(',').map(|s| s.trim().to_string()).collect();
        out.insert(name.trim().to_string(), levels);
    }
    Ok(out)
}

fn cmd_test(args: TestArgs) -> Result<(), CliError> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(usage(format!("--alpha {} not in (0, 1)", args.alpha)));
    }
    if !args.delimiter.is_ascii() {
        return Err(usage("--delimiter must be a single ASCII character"));
    }
    let mut spec = IngestSpec::new(&args.data, &[], &[]);
    spec.value_columns = args.values;
    spec.factor_columns = args.factors;
    spec.header = !args.no_header;
    spec.delimiter = args.delimiter as u8;
    spec.levels = parse_levels(&args.levels)?;
    let data = load_dataset(&spec)?;

    let effect = match (args.effect, &args.contrast) {
        (EffectArg::Custom, Some(path)) => EffectChoice::Custom(read_contrast(path)?),
        (EffectArg::Custom, None) => return Err(usage("--effect custom needs --contrast FILE")),
        (_, Some(_)) => return Err(usage("--contrast is only used with --effect custom")),
        (EffectArg::Group, None) => EffectChoice::Group,
        (EffectArg::A, None) => EffectChoice::A,
        (EffectArg::B, None) => EffectChoice::B,
        (EffectArg::Ab, None) => EffectChoice::AB,
    };
    let targets = match args.target {
        TargetArg::Mcv => vec![TestTarget::Mcv],
        TargetArg::Stdmean => vec![TestTarget::StdMean],
        TargetArg::Both => TestTarget::BOTH.to_vec(),
    };
    let method = match args.method {
        MethodArg::Asymptotic => MethodChoice::Asymptotic,
        MethodArg::Permutation => MethodChoice::Permutation,
        MethodArg::Both => MethodChoice::Both,
    };
    if method != MethodChoice::Asymptotic && !args.exhaustive && args.permutations == 0 {
        return Err(usage("--permutations must be at least 1"));
    }
    let plan = PermutationPlan {
        replications: args.permutations,
        seed: args.seed,
        mode: if args.exhaustive {
            PermutationMode::Exhaustive
        } else {
            PermutationMode::MonteCarlo
        },
        p_value_rule: match args.p_value {
            RuleArg::AddOne => PValueRule::AddOne,
            RuleArg::Raw => PValueRule::RawProportion,
        },
    };
    let report = run_test(&TestRequest {
        data: &data,
        effect,
        targets,
        method,
        plan,
        alpha: args.alpha,
    })?;
    match args.format {
        Format::Text => print!("{}", render_text(&report)),
        Format::Json => println!("{}", to_json(&report)),
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

fn read_configs(path: &PathBuf) -> Result<Vec<ScenarioConfig>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: invalid JSON: {e}", path.display())))?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|c| vec![c])
    };
    parsed.map_err(|e| usage(format!("{}: invalid scenario: {e}", path.display())))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut configs = match (&args.preset, &args.config) {
        (Some(name), None) => {
            if !PRESETS.contains(&name.as_str()) {
                return Err(mcv_core::Error::UnknownPreset(name.clone()).into());
            }
            let base = table_preset(name, args.scale)?;
            let seed = args.seed.unwrap_or(1);
            base.into_iter()
                .enumerate()
                .map(|(i, c)| c.with_seed(derive_seed(seed, i as u64)))
                .collect::<Vec<_>>()
        }
        (None, Some(path)) => {
            let configs = read_configs(path)?;
            match args.seed {
                Some(seed) => configs
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| c.with_seed(derive_seed(seed, i as u64)))
                    .collect(),
                None => configs,
            }
        }
        _ => return Err(usage("give exactly one of --preset and --config")),
    };
    if let Some(filter) = &args.only {
        configs.retain(|c| c.id.contains(filter.as_str()));
        if configs.is_empty() {
            return Err(usage(format!("no scenario id contains '{filter}'")));
        }
    }
    for c in &configs {
        c.validate()?;
    }
    let reports = run_scenarios(&configs)?;
    let json = to_json(&reports);
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{json}\n"))
            .map_err(|e| usage(format!("cannot write {}: {e}", out.display())))?;
    }
    match args.format {
        Format::Text => print!("{}", render_table(&reports)),
        Format::Json => println!("{json}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

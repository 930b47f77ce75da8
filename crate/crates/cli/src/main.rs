//! `gweat`: run grounded embedding association tests from the command line.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 internal
//! consistency error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use gweat::significance::PermutationMode;
use gweat::spec_file::write_spec;
use gweat::synthetic::{generate, micro_fixture, PlantedBiasParams};
use gweat::{
    parse_spec, read_store, render_report, run_suite, validate_balance, write_store, Error,
    Execution, Experiment, Granularity, PermutationPlan, ReportFormat, RunConfig,
    StdDevConvention,
};

const USAGE_ERROR: u8 = 1;

#[derive(Parser)]
#[command(name = "gweat", version, about = "Grounded embedding association tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every spec x experiment x granularity cell and write a report.
    Run(RunArgs),
    /// Check specs, dataset balance and store coverage without evaluating.
    Validate(ValidateArgs),
    /// Write a synthetic spec and store.
    Synth(SynthArgs),
    /// Print store metadata.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct StoreArgs {
    /// Store of word embeddings.
    #[arg(long = "store-w")]
    w: Option<PathBuf>,
    /// Store of sentence embeddings.
    #[arg(long = "store-s")]
    s: Option<PathBuf>,
    /// Store of contextualized word embeddings.
    #[arg(long = "store-c")]
    c: Option<PathBuf>,
}

impl StoreArgs {
    fn paths(&self) -> BTreeMap<Granularity, PathBuf> {
        [
            (Granularity::W, &self.w),
            (Granularity::S, &self.s),
            (Granularity::C, &self.c),
        ]
        .into_iter()
        .filter_map(|(g, p)| p.clone().map(|p| (g, p)))
        .collect()
    }
}

/// `exact`, `auto`, or a Monte-Carlo sample count.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Permutations {
    Auto,
    Exact,
    Samples(u64),
}

impl FromStr for Permutations {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Permutations::Auto),
            "exact" => Ok(Permutations::Exact),
            n => match n.parse::<u64>() {
                Ok(0) | Err(_) => Err(format!("expected exact, auto or a positive count, got {n:?}")),
                Ok(k) => Ok(Permutations::Samples(k)),
            },
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Bias-test spec file; repeat for several tests.
    #[arg(long, required = true)]
    spec: Vec<PathBuf>,
    #[command(flatten)]
    stores: StoreArgs,
    /// Comma-separated subset of E1,E2,E3,UNGROUNDED.
    #[arg(long, value_delimiter = ',', default_values = ["E1", "E2", "E3"])]
    experiments: Vec<Experiment>,
    #[arg(long, default_value = "auto")]
    permutations: Permutations,
    /// Seed for Monte-Carlo sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// table, csv or json.
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    /// Report file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate unbalanced tests, flagging them in the report.
    #[arg(long)]
    allow_unbalanced: bool,
    #[arg(long, default_value = "sample")]
    stddev: StdDevConvention,
    /// Significance threshold; results with p strictly below it are marked.
    #[arg(long, default_value_t = gweat::model::DEFAULT_ALPHA)]
    threshold: f64,
    /// Evaluate on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, required = true)]
    spec: Vec<PathBuf>,
    #[command(flatten)]
    stores: StoreArgs,
    /// Report imbalance without failing.
    #[arg(long)]
    allow_unbalanced: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving spec.json and store.gweb.
    #[arg(long)]
    out_dir: PathBuf,
    /// Write the two-target micro-dataset instead of a planted-bias instance.
    #[arg(long)]
    micro: bool,
    #[arg(long, default_value_t = 16)]
    dimension: usize,
    /// Target concepts per set.
    #[arg(long, default_value_t = 6)]
    targets: usize,
    /// Attribute stimuli per image group.
    #[arg(long, default_value_t = 6)]
    attributes: usize,
    #[arg(long, default_value_t = 2)]
    images_per_target: usize,
    /// Association strength.
    #[arg(long, default_value_t = 0.0)]
    strength: f64,
    /// Vision effect.
    #[arg(long, default_value_t = 0.0)]
    vision: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    store: PathBuf,
    /// Also list every key.
    #[arg(long)]
    keys: bool,
}

fn plan(args: &RunArgs) -> PermutationPlan {
    let mut plan = match args.permutations {
        Permutations::Auto => PermutationPlan::default(),
        Permutations::Exact => PermutationPlan::exact(),
        Permutations::Samples(n) => PermutationPlan {
            mode: PermutationMode::MonteCarlo,
            n_samples: n,
            ..Default::default()
        },
    };
    plan.seed = args.seed;
    if args.sequential {
        plan.execution = Execution::Sequential;
    }
    plan
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| Error::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

fn run(args: RunArgs) -> Result<u8, Error> {
    if matches!(args.permutations, Permutations::Samples(_)) && args.seed.is_none() {
        return Err(Error::InvalidPlan("Monte-Carlo sampling requires --seed".into()));
    }
    let config = RunConfig {
        specs: args.spec.clone(),
        stores: args.stores.paths(),
        experiments: args.experiments.clone(),
        plan: plan(&args),
        format: args.format,
        alpha: args.threshold,
        allow_unbalanced: args.allow_unbalanced,
        stddev: args.stddev,
    };
    let outcome = run_suite(&config)?;
    emit(&render_report(&outcome, config.format), args.out.as_deref())?;
    for e in &outcome.errors {
        eprintln!("error: {}: {}", e.test, e.message);
    }
    Ok(outcome.exit_code() as u8)
}

fn validate(args: ValidateArgs) -> Result<u8, Error> {
    let mut status = 0u8;
    let mut fail = |code: u8| status = status.max(code);
    let mut stores = Vec::new();
    for (g, path) in args.stores.paths() {
        match read_store(&path) {
            Ok(store) => {
                println!("store {g} {}: {} keys, dimension {}", path.display(), store.len(), store.dimension());
                stores.push((g, store));
            }
            Err(e) => {
                eprintln!("error: store {g} {}: {e}", path.display());
                fail(e.exit_code() as u8);
            }
        }
    }
    for path in &args.spec {
        let spec = match parse_spec(path) {
            Ok(spec) => spec,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                fail(e.exit_code() as u8);
                continue;
            }
        };
        let name = spec.test().name();
        let balance = validate_balance(&spec);
        if balance.is_balanced() {
            println!("spec {name:?}: balanced");
        } else if args.allow_unbalanced {
            println!("spec {name:?}: warning: unbalanced: {}", balance.summary());
        } else {
            eprintln!("error: spec {name:?}: unbalanced: {}", balance.summary());
            fail(2);
        }
        let required = spec.required_keys();
        for (g, store) in &stores {
            let missing: Vec<String> = required
                .iter()
                .filter(|k| !store.contains(k))
                .map(|k| k.to_string())
                .collect();
            if missing.is_empty() {
                println!("spec {name:?}: store {g} covers all {} required keys", required.len());
            } else {
                eprintln!(
                    "error: spec {name:?}: store {g} lacks {} of {} keys: {}",
                    missing.len(),
                    required.len(),
                    missing.join(", ")
                );
                fail(2);
            }
        }
    }
    Ok(status)
}

fn synth(args: SynthArgs) -> Result<u8, Error> {
    let (spec, store) = if args.micro {
        micro_fixture()
    } else {
        generate(&PlantedBiasParams {
            dimension: args.dimension,
            n_targets_per_set: args.targets,
            n_attrs_per_group: args.attributes,
            images_per_target: args.images_per_target,
            association_strength: args.strength,
            vision_effect: args.vision,
            seed: args.seed,
        })?
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    let spec_path = args.out_dir.join("spec.json");
    let store_path = args.out_dir.join("store.gweb");
    write_spec(&spec, &spec_path)?;
    write_store(&store, &store_path)?;
    println!("wrote {} and {} ({} keys)", spec_path.display(), store_path.display(), store.len());
    Ok(0)
}

fn inspect(args: InspectArgs) -> Result<u8, Error> {
    let store = read_store(&args.store)?;
    let mut out = format!(
        "path: {}\nformat: GWEB v{}\ndimension: {}\nentries: {}\n",
        args.store.display(),
        gweat::store::FORMAT_VERSION,
        store.dimension(),
        store.len()
    );
    for line in store.metadata().lines() {
        out.push_str(&format!("metadata: {line}\n"));
    }
    if args.keys {
        for k in store.keys() {
            out.push_str(k);
            out.push('\n');
        }
    }
    emit(&out, None)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE_ERROR } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate(args) => validate(args),
        Command::Synth(args) => synth(args),
        Command::Inspect(args) => inspect(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e @ (Error::InvalidConfig(_) | Error::InvalidPlan(_) | Error::InvalidParams(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(USAGE_ERROR)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

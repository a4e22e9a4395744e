//! Command-line front end: run, zero-shot, evaluate, report, synth.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use mlpilot_core::bench::{
    build_tables, collect_runs, compare_methods, evaluate_on_test, generate_synthetic, run_parallel,
    write_report, zero_shot_run, SyntheticKind, SyntheticSpec,
};
use mlpilot_core::gateway::{ChatBackend, CostTable, Gateway, HttpBackend, ScriptedBackend, ScriptedFixture};
use mlpilot_core::ledger::Ledger;
use mlpilot_core::model::{Backend, DatasetManifest, Outcome, RunConfig, RunRecord};
use mlpilot_core::pipeline::{run_pipeline, PipelineEnv};
use mlpilot_core::sandbox::factory_for;

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "mlpilot", version, about = "Run and benchmark LLM-driven ML experiments")]
struct Cli {
    /// Directory holding run records.
    #[arg(long, global = true, default_value = "ledger")]
    ledger: PathBuf,

    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Where agent tool calls execute.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,

    /// Model id sent to the chat-completions endpoint.
    #[arg(long, global = true)]
    model: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Base run configuration (JSON); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Replay model turns from a scripted fixture instead of calling an API.
    #[arg(long, global = true)]
    fixture: Option<PathBuf>,

    /// Per-model token prices (JSON).
    #[arg(long, global = true)]
    cost_table: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Container,
    PlainProcess,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the iterative agent pipeline.
    Run(RunArgs),
    /// Run the single-completion baseline.
    ZeroShot(RunArgs),
    /// Score finalized runs on the held-out test split.
    Evaluate {
        run_ids: Vec<String>,
        /// Evaluate every successful run that has no test metric yet.
        #[arg(long)]
        all: bool,
    },
    /// Summarize the ledger as method-by-dataset tables.
    Report {
        /// Add Welch p-values and a paired comparison between two methods.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        compare: Option<Vec<String>>,
        /// Also write each table as .txt and .csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Independent runs to launch concurrently, with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long)]
    budget_usd: Option<f64>,
    /// Row label in reports.
    #[arg(long)]
    method: Option<String>,
    /// Evaluate successful runs on the test split right away.
    #[arg(long)]
    evaluate: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "planted-motif")]
    kind: KindArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long, default_value_t = 100)]
    seq_len: usize,
    #[arg(long, default_value = "TATAAT")]
    motif: String,
    #[arg(long, default_value_t = 0.5)]
    class_balance: f64,
    /// Probe length range for paired sequences.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    len_range: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    PlantedMotif,
    PairedSequence,
}

/// A failure with its exit code.
struct Exit(u8, String);

impl<E: std::fmt::Display> From<E> for Exit {
    fn from(e: E) -> Self {
        Exit(EXIT_RUN_FAILURE, e.to_string())
    }
}

fn config_error(e: impl std::fmt::Display) -> Exit {
    Exit(EXIT_CONFIG, e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, message)) => {
            error!("{message}");
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, Exit> {
    let ledger = Ledger::new(&cli.ledger);
    match &cli.command {
        Command::Run(args) => run_command(cli, &ledger, args, false),
        Command::ZeroShot(args) => run_command(cli, &ledger, args, true),
        Command::Evaluate { run_ids, all } => evaluate_command(&ledger, run_ids, *all),
        Command::Report { compare, out } => report_command(&ledger, compare.as_deref(), out.as_deref()),
        Command::Synth(args) => synth_command(cli, args),
    }
}

fn run_config(cli: &Cli, args: &RunArgs) -> Result<RunConfig, Exit> {
    let mut config = match &cli.config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            serde_json::from_slice(&bytes).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(backend) = cli.backend {
        config.backend = match backend {
            BackendArg::Container => Backend::Container,
            BackendArg::PlainProcess => Backend::PlainProcess,
        };
    }
    if let Some(model) = &cli.model {
        config.model_id = model.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = args.max_iterations {
        config.max_iterations = n;
    }
    if let Some(b) = args.budget_usd {
        config.budget_usd = b;
    }
    if let Some(m) = &args.method {
        config.method_label = Some(m.clone());
    }
    config.validate().map_err(config_error)?;
    Ok(config)
}

fn load_manifest(cli: &Cli) -> Result<DatasetManifest, Exit> {
    let path = cli
        .manifest
        .as_deref()
        .ok_or_else(|| config_error("--manifest is required"))?;
    let manifest = DatasetManifest::load(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    manifest.validate_with_data().map_err(config_error)?;
    Ok(manifest)
}

fn chat_backend(cli: &Cli) -> Result<Arc<dyn ChatBackend>, Exit> {
    Ok(match &cli.fixture {
        Some(path) => {
            let fixture = ScriptedFixture::load(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            Arc::new(ScriptedBackend::new(fixture))
        }
        None => Arc::new(HttpBackend::from_env()),
    })
}

fn run_command(cli: &Cli, ledger: &Ledger, args: &RunArgs, zero_shot: bool) -> Result<u8, Exit> {
    let manifest = load_manifest(cli)?;
    let base = run_config(cli, args)?;
    if args.parallel == 0 {
        return Err(config_error("--parallel must be at least 1"));
    }
    let costs = match &cli.cost_table {
        Some(path) => CostTable::load(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?,
        None => CostTable::default(),
    };
    // Scripted backends keep a cursor, so every run gets its own.
    let gateways = (0..args.parallel)
        .map(|_| chat_backend(cli).map(|b| Gateway::new(b, costs.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let factory = factory_for(&base);

    let results = run_parallel(args.parallel, |i| {
        let mut config = base.clone();
        config.seed = base.seed + i as u64;
        let env = PipelineEnv {
            gateway: &gateways[i],
            sandboxes: factory.as_ref(),
            ledger,
        };
        if zero_shot {
            zero_shot_run(&manifest, &config, env)
        } else {
            run_pipeline(&manifest, &config, env)
        }
    });

    let mut code = 0;
    for result in results {
        let record = result?;
        print_run(&record);
        if record.outcome != Some(Outcome::Success) {
            code = EXIT_RUN_FAILURE;
            continue;
        }
        if args.evaluate {
            let metrics = evaluate_on_test(ledger, &record.run_id, factory.as_ref())?;
            print_test(&metrics);
            if metrics.value.is_none() {
                code = EXIT_RUN_FAILURE;
            }
        }
    }
    Ok(code)
}

fn print_run(record: &RunRecord) {
    let outcome = match record.outcome {
        Some(Outcome::Success) => "success",
        Some(Outcome::Failure) => "failure",
        None => "unfinished",
    };
    let metric = record.manifest.metric.name();
    let validation = record
        .best
        .and_then(|b| record.iterations[b].metrics.as_ref())
        .and_then(|m| m.validation_value(metric));
    let mut line = format!(
        "{} {outcome} iterations={} best={}",
        record.run_id,
        record.iterations.len(),
        record.best.map_or("none".to_string(), |b| b.to_string())
    );
    if let Some(v) = validation {
        line.push_str(&format!(" validation_{metric}={v:.4}"));
    }
    if let Some(reason) = &record.failure_reason {
        line.push_str(&format!(" reason={reason:?}"));
    }
    println!("{line}");
}

fn print_test(metrics: &mlpilot_core::ledger::TestMetrics) {
    match (metrics.value, &metrics.error) {
        (Some(v), _) => println!("{} test_{}={v:.4} rows={}", metrics.run_id, metrics.metric, metrics.n_rows),
        (None, error) => println!(
            "{} evaluation_failed error={:?}",
            metrics.run_id,
            error.as_deref().unwrap_or("unknown")
        ),
    }
}

fn evaluate_command(ledger: &Ledger, run_ids: &[String], all: bool) -> Result<u8, Exit> {
    let ids: Vec<String> = if all {
        let mut ids = Vec::new();
        for id in ledger.list_runs()? {
            let done = ledger.load_test_metrics(&id)?.is_some();
            let ok = ledger.load_best(&id)?.is_some_and(|b| b.outcome == Outcome::Success);
            if ok && !done {
                ids.push(id);
            }
        }
        ids
    } else if run_ids.is_empty() {
        return Err(config_error("name at least one run id, or pass --all"));
    } else {
        run_ids.to_vec()
    };
    let mut code = 0;
    for id in ids {
        let run = ledger.load_run(&id).map_err(config_error)?;
        let factory = factory_for(&run.config);
        let metrics = match evaluate_on_test(ledger, &id, factory.as_ref()) {
            Ok(m) => m,
            Err(e @ mlpilot_core::Error::Precondition(_)) => return Err(config_error(e)),
            Err(e) => return Err(e.into()),
        };
        print_test(&metrics);
        if metrics.value.is_none() {
            code = EXIT_RUN_FAILURE;
        }
    }
    Ok(code)
}

fn report_command(ledger: &Ledger, compare: Option<&[String]>, out: Option<&Path>) -> Result<u8, Exit> {
    let runs = collect_runs(ledger)?;
    if runs.is_empty() {
        return Err(config_error(format!(
            "no finalized runs under `{}`",
            ledger.root().display()
        )));
    }
    let pair = compare.map(|p| (p[0].as_str(), p[1].as_str()));
    let tables = build_tables(&runs, pair);
    for table in &tables {
        println!("{}", table.to_text());
    }
    if let Some((a, b)) = pair {
        match compare_methods(&runs, a, b) {
            Ok(c) => println!(
                "paired {a} vs {b}: pairs={} win_fraction={:.3} mean_relative_improvement={:.3} per_dataset_relative_improvement={:.3}",
                c.pairs, c.win_fraction, c.mean_relative_improvement, c.per_dataset_relative_improvement
            ),
            Err(e) => println!("paired {a} vs {b}: N/A ({e})"),
        }
    }
    if let Some(dir) = out {
        for path in write_report(&tables, dir)? {
            log::info!("wrote {}", path.display());
        }
    }
    Ok(0)
}

fn synth_command(cli: &Cli, args: &SynthArgs) -> Result<u8, Exit> {
    let kind = match args.kind {
        KindArg::PlantedMotif => SyntheticKind::PlantedMotif,
        KindArg::PairedSequence => SyntheticKind::PairedSequence,
    };
    let default_name = match kind {
        SyntheticKind::PlantedMotif => "planted_motif",
        SyntheticKind::PairedSequence => "paired_sequence",
    };
    let spec = SyntheticSpec {
        name: args.name.clone().unwrap_or_else(|| default_name.to_string()),
        kind,
        n_train: args.n_train,
        n_test: args.n_test,
        seq_len: args.seq_len,
        len_range: args.len_range.as_ref().map(|r| (r[0], r[1])),
        motif: args.motif.clone(),
        class_balance: args.class_balance,
        seed: cli.seed.unwrap_or(0),
        metric: None,
    };
    let out = generate_synthetic(&spec, &args.out).map_err(|e| match e {
        mlpilot_core::bench::SynthError::Io(_) => Exit(EXIT_RUN_FAILURE, e.to_string()),
        other => config_error(other),
    })?;
    println!("{}", out.manifest_path.display());
    Ok(0)
}

//! `mci` — profile databases, answer one-off questions, and run
//! Text-to-SQL benchmarks from the command line.
//!
//! Model access needs an OpenAI-compatible endpoint (set in the config
//! file) and an API key in `MCI_API_KEY`. Every live subcommand accepts
//! `--cache-dir` to record responses; `mci replay` reruns `ask` or
//! `bench` strictly from such a cache, with no network and no key.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mci_core::config::Config;
use mci_core::dbcore::{open_database, ExecutionOutcome};
use mci_core::gateway::{
    CachingProvider, ChatProvider, LiveProvider, ReplayCache,
};
use mci_core::generation::{load_few_shot_store, FewShotCase};
use mci_core::harness::{
    load_dataset, render_summary, run_benchmark, RunOptions,
};
use mci_core::pipeline::{answer_question_with_schedule, QuestionResult};
use mci_core::profiler::{
    default_artifact_path, find_database_file, load_or_build, ContextMode,
};
use mci_core::selection::candidate_schedule;

#[derive(Parser)]
#[command(
    name = "mci",
    version,
    about = "Metadata-complete Text-to-SQL: profiling, question answering, benchmarks"
)]
struct Cli {
    /// Configuration file (TOML); `./mci.toml` is picked up when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build metadata artifacts for a database directory (or a
    /// directory of database directories).
    Profile(ProfileArgs),
    /// Answer one natural-language question against a database.
    Ask(AskArgs),
    /// Run a benchmark dataset and report execution accuracy.
    Bench(BenchArgs),
    /// Re-run `ask` or `bench` strictly from a recorded response cache.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ProfileArgs {
    /// A database directory, or a parent directory holding one
    /// subdirectory per database.
    db_dir: PathBuf,
    /// Rebuild even when the stored artifact matches the database.
    #[arg(long)]
    force: bool,
    /// Add model-written table summaries (needs endpoint + API key).
    #[arg(long)]
    describe: bool,
}

#[derive(Args, Clone)]
struct AskArgs {
    /// SQLite database file.
    #[arg(long)]
    db: PathBuf,
    /// The natural-language question.
    #[arg(long)]
    question: String,
    /// External knowledge accompanying the question, if any.
    #[arg(long)]
    evidence: Option<String>,
    /// Force one metadata granularity for every candidate.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Single-SQL schedule (one candidate) instead of the voting one.
    #[arg(long)]
    single: bool,
    /// Record model responses into this cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Print the full per-candidate result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone)]
struct BenchArgs {
    /// Benchmark directory: questions file + databases subdirectory.
    #[arg(long)]
    dataset: PathBuf,
    /// Corrections file replacing gold SQL/question/evidence by id.
    #[arg(long)]
    gold_override: Option<PathBuf>,
    /// `default`, `single`, or a path to a schedule JSON file.
    #[arg(long)]
    schedule: Option<String>,
    /// Worker threads running samples concurrently.
    #[arg(long)]
    workers: Option<usize>,
    /// Run directory: per-sample records, `report.json`, resume state.
    #[arg(long, default_value = "mci-run")]
    run_dir: PathBuf,
    /// Build missing metadata artifacts instead of failing the sample.
    #[arg(long)]
    profile_on_demand: bool,
    /// Record model responses into this cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Cache directory written by an earlier `--cache-dir` run.
    #[arg(long)]
    cache_dir: PathBuf,
    #[command(subcommand)]
    command: ReplayCommand,
}

#[derive(Subcommand)]
enum ReplayCommand {
    /// Replay a recorded `ask`.
    Ask(AskArgs),
    /// Replay a recorded `bench`.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Complete,
    Partial,
}

impl From<ModeArg> for ContextMode {
    fn from(value: ModeArg) -> Self {
        match value {
            ModeArg::Complete => ContextMode::Complete,
            ModeArg::Partial => ContextMode::Partial,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Profile(args) => profile(&config, &args),
        Command::Ask(args) => {
            let provider = live_provider(&config, args.cache_dir.as_deref())?;
            ask(provider.as_ref(), &config, &args)
        }
        Command::Bench(args) => {
            let provider = live_provider(&config, args.cache_dir.as_deref())?;
            bench(provider.as_ref(), &config, &args, false)
        }
        Command::Replay(args) => {
            let provider = replay_provider(&config, &args.cache_dir)?;
            match args.command {
                ReplayCommand::Ask(ask_args) => {
                    ask(&provider, &config, &ask_args)
                }
                ReplayCommand::Bench(bench_args) => {
                    bench(&provider, &config, &bench_args, true)
                }
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => {
            Config::load(p).with_context(|| format!("loading {}", p.display()))
        }
        None => {
            let implicit = Path::new("mci.toml");
            if implicit.is_file() {
                Config::load(implicit).context("loading ./mci.toml")
            } else {
                Ok(Config::default())
            }
        }
    }
}

/// Live provider, wrapped in a recording cache when requested.
fn live_provider(
    config: &Config,
    cache_dir: Option<&Path>,
) -> Result<Box<dyn ChatProvider>> {
    let live = LiveProvider::from_env(
        &config.model.endpoint,
        &config.model.name,
        Some(&config.model.api_key_var),
    )
    .context("configuring the model provider")?;
    match cache_dir {
        Some(dir) => {
            let cache = ReplayCache::open(dir)
                .with_context(|| format!("opening cache {}", dir.display()))?;
            Ok(Box::new(CachingProvider::recording(cache, Box::new(live))))
        }
        None => Ok(Box::new(live)),
    }
}

/// Cache-only provider keyed to match recordings made through
/// [`live_provider`].
fn replay_provider(
    config: &Config,
    cache_dir: &Path,
) -> Result<CachingProvider> {
    let cache = ReplayCache::open(cache_dir)
        .with_context(|| format!("opening cache {}", cache_dir.display()))?;
    Ok(CachingProvider::replay_only(cache, "live", &config.model.name))
}

fn profile(config: &Config, args: &ProfileArgs) -> Result<()> {
    let provider: Option<Box<dyn ChatProvider>> = if args.describe {
        Some(live_provider(config, None)?)
    } else {
        None
    };
    let targets = profile_targets(&args.db_dir)?;
    for db_file in targets {
        let db = open_database(&db_file)
            .with_context(|| format!("opening {}", db_file.display()))?;
        let artifact = default_artifact_path(&db_file);
        if args.force && artifact.exists() {
            std::fs::remove_file(&artifact).with_context(|| {
                format!("removing stale {}", artifact.display())
            })?;
        }
        let (profile, rebuilt) =
            load_or_build(&db, provider.as_deref(), &config.profiling)
                .with_context(|| format!("profiling {}", db_file.display()))?;
        println!(
            "{}: {} tables, {} -> {}",
            db_file.display(),
            profile.tables.len(),
            if rebuilt { "profiled" } else { "up to date" },
            artifact.display()
        );
    }
    Ok(())
}

/// The database files under a profile target: the directory's own
/// database if it has one, otherwise one per subdirectory.
fn profile_targets(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    if let Some(file) = find_database_file(dir) {
        return Ok(vec![file]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let targets: Vec<PathBuf> =
        subdirs.iter().filter_map(|d| find_database_file(d)).collect();
    if targets.is_empty() {
        bail!("no database files under {}", dir.display());
    }
    Ok(targets)
}

fn ask(
    provider: &dyn ChatProvider,
    config: &Config,
    args: &AskArgs,
) -> Result<()> {
    let db = open_database(&args.db)
        .with_context(|| format!("opening {}", args.db.display()))?;
    // A one-off question profiles on demand; `bench` is stricter.
    let (profile, _) = load_or_build(&db, None, &config.profiling)
        .with_context(|| format!("profiling {}", args.db.display()))?;
    let store = few_shot_store(config)?;

    let mut selection = config.selection.clone();
    if args.single {
        selection.schedule = "single".to_string();
    }
    let mut schedule = candidate_schedule(&selection)?;
    if let Some(mode) = args.mode {
        for entry in &mut schedule {
            entry.0 = mode.into();
        }
    }

    let result = answer_question_with_schedule(
        provider,
        &db,
        &profile,
        &args.question,
        args.evidence.as_deref(),
        &store,
        config,
        schedule,
    )?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        print_answer(&result);
    }
    Ok(())
}

fn print_answer(result: &QuestionResult) {
    println!("{}", result.final_sql);
    println!();
    print_outcome(&result.final_outcome);
    println!(
        "\ncandidates: {} (winner #{}), interactions: {}, output tokens: {}",
        result.candidates.len(),
        result.winning_ordinal,
        result.interaction_count,
        result.total_output_tokens()
    );
}

const PRINT_ROW_CAP: usize = 20;

fn print_outcome(outcome: &ExecutionOutcome) {
    match &outcome.result {
        Some(set) => {
            println!("-- state: {}", outcome.state);
            println!("{}", set.columns.join(" | "));
            for row in set.rows.iter().take(PRINT_ROW_CAP) {
                let cells: Vec<String> =
                    row.iter().map(|v| v.render()).collect();
                println!("{}", cells.join(" | "));
            }
            if set.total_row_count as usize > PRINT_ROW_CAP {
                println!(
                    "... ({} of {} rows shown)",
                    PRINT_ROW_CAP.min(set.rows.len()),
                    set.total_row_count
                );
            }
        }
        None => {
            println!(
                "-- state: {} ({})",
                outcome.state,
                outcome.error_message.as_deref().unwrap_or("no result")
            );
        }
    }
}

fn bench(
    provider: &dyn ChatProvider,
    config: &Config,
    args: &BenchArgs,
    replaying: bool,
) -> Result<()> {
    let mut config = config.clone();
    if let Some(schedule) = &args.schedule {
        config.selection.schedule = schedule.clone();
    }
    if let Some(workers) = args.workers {
        config.run.workers = workers.max(1);
    }

    let dataset = load_dataset(&args.dataset, args.gold_override.as_deref())
        .with_context(|| format!("loading {}", args.dataset.display()))?;
    let options = RunOptions {
        run_dir: args.run_dir.clone(),
        profile_on_demand: args.profile_on_demand,
        // Replay runs zero wall-clock fields so the reports of two
        // identical runs are byte-identical.
        deterministic_timing: replaying,
    };
    let report = run_benchmark(provider, &dataset, &config, &options)?;
    print!("{}", render_summary(&report));
    println!("\nreport: {}", options.run_dir.join("report.json").display());
    Ok(())
}

fn few_shot_store(config: &Config) -> Result<Vec<FewShotCase>> {
    match &config.run.few_shot_store {
        Some(path) => load_few_shot_store(path)
            .with_context(|| format!("loading {}", path.display())),
        None => Ok(Vec::new()),
    }
}

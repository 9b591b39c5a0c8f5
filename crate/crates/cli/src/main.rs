use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hypmix_core::backend::{BackendError, ResponseCache};
use hypmix_core::config::{BackendKind, Bundle, ConfigError};
use hypmix_core::experiment::{
    aggregate, evaluate_hypotheses, read_records, trend_test, write_records, CalibrationReport, ExperimentError,
    ExperimentPlan, Runner,
};
use hypmix_core::hypothesis::TestResult;
use hypmix_core::LearnerModel;

const EXIT_LOST: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "hypmix", version, about = "Author, run and check marginal distributional hypotheses")]
struct Cli {
    /// Bundle config file.
    #[arg(short, long, global = true, default_value = "hypmix.toml")]
    config: PathBuf,
    /// Overrides the plan seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides every class's significance level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Comma-separated labeling ids, e.g. `A,C`.
    #[arg(long, global = true, value_delimiter = ',')]
    labelings: Option<Vec<String>>,
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Response cache directory; beats HYPMIX_CACHE_DIR and the config.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Skip the response cache.
    #[arg(long, global = true)]
    no_cache: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check every file of the bundle and print all problems.
    Validate,
    /// Run the plan against a model and write run records.
    Run {
        #[arg(long)]
        model: Option<String>,
    },
    /// Evaluate the hypotheses of a model, from existing records or a fresh run.
    Evaluate {
        #[arg(long)]
        model: Option<String>,
        /// Run-record file to evaluate instead of running.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Run every edge of the edit graph and write the calibration report.
    EditGraph,
    /// Render a saved calibration report.
    Report {
        /// Report JSON written by `edit-graph`; defaults to <out>/report.json.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Inspect or clear the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand, Debug)]
enum CacheAction {
    Stats,
    Clear,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

/// Error carrying the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(ExperimentError::BackendUnavailable { .. }) = cause.downcast_ref::<ExperimentError>() {
            return EXIT_BACKEND;
        }
        if cause.downcast_ref::<BackendError>().is_some() {
            return EXIT_BACKEND;
        }
    }
    EXIT_CONFIG
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self {
            code: exit_code(&error),
            error,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

struct Ctx {
    bundle: Bundle,
    plan: ExperimentPlan,
    out: PathBuf,
}

fn load(cli: &Cli) -> Result<Ctx> {
    let bundle = Bundle::load(&cli.config)?;
    let mut plan = bundle.plan.clone();
    if let Some(s) = cli.seed {
        plan.seed = s;
    }
    if cli.alpha.is_some() {
        plan.eval.alpha = cli.alpha;
    }
    if let Some(l) = &cli.labelings {
        plan.labelings = l.clone();
    }
    let out = cli.out.clone().unwrap_or_else(|| bundle.out_dir());
    Ok(Ctx { bundle, plan, out })
}

/// Loads the bundle and refuses to continue on any validation problem.
fn load_valid(cli: &Cli) -> Result<Ctx> {
    let ctx = load(cli)?;
    let problems = ctx.bundle.validate();
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("invalid: {p}");
        }
        bail!("{} configuration problem(s)", problems.len());
    }
    Ok(ctx)
}

fn open_cache(cli: &Cli, bundle: &Bundle) -> Result<Option<ResponseCache>> {
    if cli.no_cache {
        return Ok(None);
    }
    let cache = match &cli.cache_dir {
        Some(d) => ResponseCache::open(d.clone())?,
        None => ResponseCache::open_default(bundle.cache_dir())?,
    };
    Ok(Some(cache))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn pick_model<'b>(bundle: &'b Bundle, model: &Option<String>) -> Result<&'b LearnerModel> {
    let id = model
        .as_deref()
        .or(bundle.config.default_model.as_deref())
        .context("no model given (use --model or set default_model)")?;
    Ok(bundle.model(id)?)
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Validate => validate(cli),
        Command::Run { model } => run(cli, model),
        Command::Evaluate { model, records } => evaluate(cli, model, records.as_deref()),
        Command::EditGraph => edit_graph(cli),
        Command::Report { input, format } => report(cli, input.as_deref(), *format),
        Command::Cache { action } => cache(cli, action),
    }
    .map_err(Failure::from)
}

fn validate(cli: &Cli) -> Result<u8> {
    let ctx = match load(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e:#}");
            return Ok(EXIT_CONFIG);
        }
    };
    let problems = ctx.bundle.validate();
    for p in &problems {
        println!("{p}");
    }
    if problems.is_empty() {
        println!(
            "ok: {} model(s), {} hypotheses, {} labeling(s)",
            ctx.bundle.models.len(),
            ctx.bundle.catalog.hypotheses.len(),
            ctx.bundle.labelings.len()
        );
        Ok(0)
    } else {
        Ok(EXIT_CONFIG)
    }
}

fn with_runner<T>(cli: &Cli, ctx: &Ctx, f: impl FnOnce(&Runner<'_>) -> Result<T>) -> Result<T> {
    let composer = ctx.bundle.composer();
    let backend = ctx.bundle.backend(cli.backend)?;
    let cache = open_cache(cli, &ctx.bundle)?;
    let runner = Runner::new(
        &composer,
        backend.as_ref(),
        cache.as_ref(),
        ctx.bundle.labelings.clone(),
        ctx.plan.parallelism,
    )?
    .with_domain(ctx.bundle.environment.domain);
    let before = cache.as_ref().map(ResponseCache::stats);
    let result = f(&runner);
    if let (Some(c), Some(b)) = (&cache, before) {
        let s = c.stats();
        println!("backend calls: {} (cache hits: {})", s.misses - b.misses, s.hits - b.hits);
    }
    result
}

fn flush_partial(out: &Path, e: &anyhow::Error) {
    if let Some(ExperimentError::BackendUnavailable { partial, .. }) = e.downcast_ref::<ExperimentError>() {
        let path = out.join("records.partial.jsonl");
        if ensure_dir(out).is_ok() && write_records(&path, partial).is_ok() {
            eprintln!("wrote {} partial record(s) to {}", partial.len(), path.display());
        }
    }
}

fn run(cli: &Cli, model: &Option<String>) -> Result<u8> {
    let ctx = load_valid(cli)?;
    let m = pick_model(&ctx.bundle, model)?;
    let records = with_runner(cli, &ctx, |r| r.run(&ctx.plan, m).map_err(anyhow::Error::from)).inspect_err(|e| flush_partial(&ctx.out, e))?;
    ensure_dir(&ctx.out)?;
    let path = ctx.out.join("records.jsonl");
    write_records(&path, &records)?;
    println!("wrote {} records to {}", records.len(), path.display());
    print!("{}", aggregate(&records).summary());
    Ok(0)
}

fn print_results(results: &[TestResult]) {
    for r in results {
        let flag = if r.flagged_levels.is_empty() {
            String::new()
        } else {
            format!("  flagged levels {:?}", r.flagged_levels)
        };
        println!(
            "{:<10} {:<3} {:<12} stat={:<10.4} p={:<10.3e} {}{}",
            r.hypothesis,
            r.labeling,
            r.criterion.test_name(),
            r.statistic,
            r.p_value,
            if r.satisfied { "satisfied" } else { "not satisfied" },
            flag
        );
    }
}

fn evaluate(cli: &Cli, model: &Option<String>, records: Option<&Path>) -> Result<u8> {
    let ctx = load_valid(cli)?;
    let m = pick_model(&ctx.bundle, model)?;
    let records = match records {
        Some(p) => read_records(p)?,
        None => with_runner(cli, &ctx, |r| r.run(&ctx.plan, m).map_err(anyhow::Error::from)).inspect_err(|e| flush_partial(&ctx.out, e))?,
    };
    let table = aggregate(&records);
    let hyps: Vec<_> = m.hypotheses().collect();
    let results = evaluate_hypotheses(&ctx.bundle.catalog.classes, &hyps, &table, &ctx.plan.labelings, &ctx.plan.eval)?;
    print_results(&results);
    let trends: Vec<TestResult> = hyps
        .iter()
        .flat_map(|h| ctx.plan.labelings.iter().filter_map(|l| trend_test(h, &records, l)))
        .collect();
    if !trends.is_empty() {
        println!("secondary trend checks:");
        print_results(&trends);
    }
    Ok(0)
}

fn edit_graph(cli: &Cli) -> Result<u8> {
    let ctx = load_valid(cli)?;
    let graph = ctx.bundle.edit_graph()?;
    let run = with_runner(cli, &ctx, |r| r.run_graph(&ctx.plan, &graph).map_err(anyhow::Error::from))
        .inspect_err(|e| flush_partial(&ctx.out, e))?;
    let report = CalibrationReport::build(&graph, &run.edges, &ctx.bundle.config.report)?;
    ensure_dir(&ctx.out)?;
    fs::write(ctx.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(ctx.out.join("report.csv"), report.to_csv())?;
    fs::write(ctx.out.join("report.txt"), report.to_text())?;
    let annotations = graph.annotate(&run.results_by_node());
    fs::write(ctx.out.join("nodes.json"), serde_json::to_string_pretty(&annotations)?)?;
    print!("{}", report.to_text());
    for (node, hyps) in &annotations {
        let marks: Vec<String> = hyps.iter().map(|(h, s)| format!("{h}{}", s.marker())).collect();
        println!("{node}: {}", marks.join(", "));
    }
    Ok(if report.any_lost() { EXIT_LOST } else { 0 })
}

fn report(cli: &Cli, input: Option<&Path>, format: Format) -> Result<u8> {
    let path = match input {
        Some(p) => p.to_path_buf(),
        None => {
            let out = match &cli.out {
                Some(o) => o.clone(),
                None => Bundle::load(&cli.config)?.out_dir(),
            };
            out.join("report.json")
        }
    };
    let text = fs::read_to_string(&path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let report: CalibrationReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match format {
        Format::Text => print!("{}", report.to_text()),
        Format::Csv => print!("{}", report.to_csv()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(0)
}

fn cache(cli: &Cli, action: &CacheAction) -> Result<u8> {
    let dir = match &cli.cache_dir {
        Some(d) => d.clone(),
        None => match std::env::var_os(hypmix_core::backend::CACHE_DIR_ENV) {
            Some(d) => PathBuf::from(d),
            None => Bundle::load(&cli.config)?.cache_dir(),
        },
    };
    let cache = ResponseCache::open(dir.clone())?;
    match action {
        CacheAction::Stats => println!("{}: {} entries", dir.display(), cache.stats().entries),
        CacheAction::Clear => {
            let n = cache.stats().entries;
            cache.clear()?;
            println!("{}: removed {n} entries", dir.display());
        }
    }
    Ok(0)
}

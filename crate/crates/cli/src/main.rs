use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use tkgc_core::config::{RunConfig, Strategy};
use tkgc_core::graph::{SnapshotSequence, TimeStep};
use tkgc_core::ingest::{generate_synthetic, ingest_dir, BinSource, DatasetFormat, DiscretizeOptions};
use tkgc_core::metrics::write_metrics_csv;
use tkgc_core::model::ParameterStore;
use tkgc_core::trainer::{self, RunLayout};
use tkgc_core::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_MISSING_INPUT: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_VERSION: u8 = 4;

#[derive(Parser)]
#[command(name = "tkgc", version, about = "Incremental temporal knowledge-graph completion")]
struct Cli {
    /// Worker threads (default: number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a snapshot cache from interval files or the synthetic generator.
    Ingest(IngestArgs),
    /// Train base models on the first time steps.
    Pretrain(RunArgs),
    /// Incremental training over the remaining steps.
    Train(RunArgs),
    /// Evaluate a checkpoint on incremental steps.
    Eval(EvalArgs),
    /// Rebuild summary tables of a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of interval-annotated fact files.
    #[arg(long, conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Generate from the `[dataset.synthetic]` config section (defaults if absent).
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value = "synthetic")]
    format: String,
    /// Bin boundaries file; volume-balanced bins are derived when absent.
    #[arg(long)]
    bins: Option<PathBuf>,
    /// Number of derived bins (default depends on the format).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cache file to write; defaults to `$TKGC_CACHE_DIR/<run name>.tkgs`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Snapshot cache, overriding `dataset.cache`.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_seeds: Option<u32>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Filter other true answers when ranking.
    #[arg(long)]
    filtered: bool,
    /// Average over every earlier step for A.
    #[arg(long = "exact-A")]
    exact_a: bool,
    /// Average over a strided subset of earlier steps for A.
    #[arg(long = "sampled-A", conflicts_with = "exact_a")]
    sampled_a: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    o: Overrides,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Starting checkpoint: a params file, or a run directory holding
    /// `seed_<s>/pretrain/params.bin`.
    #[arg(long)]
    base: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    o: Overrides,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Step to evaluate; all incremental steps when absent.
    #[arg(long)]
    step: Option<u32>,
    /// Metrics CSV to write; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory (`<out>/<name>`).
    run: PathBuf,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_INPUT,
            Error::Empty(_) => EXIT_MISSING_INPUT,
            Error::Config(_) | Error::Binning(_) => EXIT_CONFIG,
            Error::Version { .. } => EXIT_VERSION,
            _ => EXIT_OTHER,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn missing(msg: String) -> Failure {
    Failure {
        code: EXIT_MISSING_INPUT,
        msg,
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("TKGC_CACHE_DIR").map(PathBuf::from)
}

/// Relative cache paths are looked up under `TKGC_CACHE_DIR` when it is set
/// and the path does not exist as given.
fn resolve_cache(p: &Path) -> PathBuf {
    if p.is_relative() && !p.exists() {
        if let Some(d) = cache_dir() {
            return d.join(p);
        }
    }
    p.to_path_buf()
}

fn load_config(o: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) if !p.exists() => return Err(missing(format!("config file {} not found", p.display()))),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = &o.cache {
        cfg.dataset.cache = Some(c.clone());
    }
    if let Some(s) = o.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = o.num_seeds {
        cfg.run.num_seeds = n;
    }
    if let Some(s) = o.strategy {
        cfg.run.strategy = s;
    }
    if o.filtered {
        cfg.eval.filtered = true;
    }
    if o.exact_a {
        cfg.eval.exact_a = true;
    }
    if o.sampled_a {
        cfg.eval.exact_a = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> CliResult<SnapshotSequence> {
    if let Some(p) = &cfg.dataset.cache {
        let p = resolve_cache(p);
        if !p.exists() {
            return Err(missing(format!("snapshot cache {} not found", p.display())));
        }
        info!("loading snapshot cache {}", p.display());
        return Ok(SnapshotSequence::load(&p)?);
    }
    if let Some(s) = &cfg.dataset.synthetic {
        return Ok(generate_synthetic(s)?);
    }
    Err(missing("no dataset: set dataset.cache, dataset.synthetic or --cache".into()))
}

fn cmd_ingest(a: &IngestArgs) -> CliResult<()> {
    let o = Overrides {
        config: a.config.clone(),
        cache: None,
        seed: a.seed,
        num_seeds: None,
        strategy: None,
        filtered: false,
        exact_a: false,
        sampled_a: false,
    };
    let cfg = load_config(&o)?;
    let format: DatasetFormat = a.format.parse().map_err(|msg| Failure { code: EXIT_CONFIG, msg })?;
    let seq = match (&a.input, a.synthetic || format == DatasetFormat::Synthetic) {
        (Some(dir), _) => {
            if !dir.is_dir() {
                return Err(missing(format!("input directory {} not found", dir.display())));
            }
            let bins = match &a.bins {
                Some(p) if !p.exists() => return Err(missing(format!("bins file {} not found", p.display()))),
                Some(p) => BinSource::File(p.clone()),
                None => BinSource::Auto(a.steps.unwrap_or(format.default_steps())),
            };
            let opts = DiscretizeOptions {
                seed: cfg.run.seed,
                ..Default::default()
            };
            let (seq, _, stats) = ingest_dir(dir, &bins, &opts)?;
            info!("ingested {} facts: {stats:?}", stats.facts_in);
            seq
        }
        (None, true) => {
            let mut s = cfg.dataset.synthetic.clone().unwrap_or_default();
            if let Some(seed) = a.seed {
                s.seed = seed;
            }
            if let Some(n) = a.steps {
                s.steps = n;
            }
            generate_synthetic(&s)?
        }
        (None, false) => return Err(missing("ingest needs --input <dir> or --synthetic".into())),
    };
    let out = match &a.out {
        Some(p) => p.clone(),
        None => cache_dir()
            .unwrap_or_else(|| PathBuf::from("."))
            .join(format!("{}.tkgs", cfg.run.name)),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Error::from)?;
    }
    seq.save(&out)?;
    println!(
        "wrote {} ({} entities, {} relations, {} steps, {} quadruples)",
        out.display(),
        seq.num_entities(),
        seq.num_relations(),
        seq.num_steps(),
        seq.total_quadruples()
    );
    Ok(())
}

fn cmd_pretrain(a: &RunArgs) -> CliResult<()> {
    let cfg = load_config(&a.o)?;
    let seq = load_dataset(&cfg)?;
    let layout = RunLayout::new(&a.out, &cfg.run.name);
    layout.prepare(&cfg)?;
    for seed in cfg.seeds() {
        let fit = trainer::pretrain(&seq, &cfg, seed)?;
        let dir = layout.phase_dir(seed, "pretrain");
        layout.write_fit(&dir, &fit)?;
        println!(
            "seed {seed}: {} epochs, best {} (valid hits@10 {}), {}",
            fit.epochs,
            fit.best_epoch,
            fit.best_valid.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
            dir.join("params.bin").display()
        );
    }
    Ok(())
}

fn load_checkpoint(p: &Path) -> CliResult<ParameterStore> {
    if !p.is_file() {
        return Err(missing(format!("checkpoint {} not found", p.display())));
    }
    Ok(ParameterStore::load(p)?)
}

fn cmd_train(a: &RunArgs) -> CliResult<()> {
    let cfg = load_config(&a.o)?;
    let seq = load_dataset(&cfg)?;
    let layout = RunLayout::new(&a.out, &cfg.run.name);
    if let Some(b) = &a.base {
        if !b.exists() {
            return Err(missing(format!("base checkpoint {} not found", b.display())));
        }
    }
    let base = |seed: u64| -> tkgc_core::Result<Option<ParameterStore>> {
        match &a.base {
            None => Ok(None),
            Some(b) if b.is_dir() => {
                let p = RunLayout::at(b).phase_dir(seed, "pretrain").join("params.bin");
                ParameterStore::load(&p).map(Some)
            }
            Some(b) => ParameterStore::load(b).map(Some),
        }
    };
    let (_, summary) = trainer::run(&seq, &cfg, base, Some(&layout))?;
    println!("{} ({}) over {} seed(s), steps {:?}", summary.name, summary.strategy, summary.seeds.len(), summary.steps);
    for key in ["c_hits10", "a_hits10", "df10", "rrd", "data_size_total", "epoch_seconds"] {
        if let Some(s) = summary.metrics.get(key) {
            println!("  {key:<16} {:>12.4} ± {:.4}", s.mean, s.std);
        }
    }
    println!("results in {}", layout.root().display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let cfg = load_config(&a.o)?;
    let seq = load_dataset(&cfg)?;
    let store = load_checkpoint(&a.checkpoint)?;
    let total = seq.num_steps();
    let steps: Vec<u32> = match a.step {
        Some(t) => vec![t],
        None => ((cfg.pretrain_steps(total) + 1)..=total).collect(),
    };
    let mut rows = Vec::new();
    for t in steps {
        let (r, _) = trainer::evaluate_step(&store, &seq, TimeStep(t), &cfg)?;
        rows.extend(r);
    }
    match &a.out {
        Some(p) => {
            write_metrics_csv(p, &rows)?;
            println!("wrote {}", p.display());
        }
        None => {
            println!("step,metric,direction,value");
            for r in &rows {
                println!("{},{},{},{}", r.step, r.metric, r.direction, r.value);
            }
        }
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> CliResult<()> {
    if !a.run.is_dir() {
        return Err(missing(format!("run directory {} not found", a.run.display())));
    }
    let summary = trainer::report(&a.run)?;
    println!("metric,mean,std,n");
    for (k, s) in &summary.metrics {
        println!("{k},{},{},{}", s.mean, s.std, s.n);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_OTHER);
        }
    }
    let res = match &cli.cmd {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

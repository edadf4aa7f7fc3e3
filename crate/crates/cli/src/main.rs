use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use relfeed_core::corpus::{load_collection, strip_headers, Corpus, CorpusSettings};
use relfeed_sim::experiment::{pivot, read_csv, write_plotdata, Metric};
use relfeed_sim::{load_dataset, run_experiment, write_csv, DatasetSettings, ExperimentOptions, SimConfig, SynthConfig};
use relfeed_sim::{Scenario, SimModel};
use relfeed_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "relfeed", version, about = "Relevance feedback search with drift-aware user modelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulated-user experiments and write per-step curves as CSV.
    Simulate(SimulateArgs),
    /// Pivot a results CSV into one column per model/scenario curve.
    Plotdata(PlotArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write the synthetic newsgroup collection as a directory tree.
    SynthCorpus(SynthArgs),
}

#[derive(Parser)]
struct SimulateArgs {
    /// Newsgroups directory; the synthetic collection is used when absent.
    #[arg(long, env = "RELFEED_NEWSGROUPS")]
    dataset_path: Option<PathBuf>,
    /// A, B, C, D or all.
    #[arg(long, default_value = "all")]
    scenario: String,
    /// ard, lg, oracle or all.
    #[arg(long, default_value = "all")]
    model: String,
    #[arg(long, default_value_t = 50)]
    sessions: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 50)]
    list_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    groups: usize,
    #[arg(long, default_value_t = 100)]
    per_group: usize,
    /// Let the seed documents be highlighted like any other feedback.
    #[arg(long)]
    no_exempt_seeds: bool,
    /// Run sessions one at a time, for runtime measurements.
    #[arg(long)]
    runtime_serial: bool,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    F1,
    Stderr,
    Seconds,
}

#[derive(Parser)]
struct PlotArgs {
    #[arg(long, default_value = "results.csv")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "f1")]
    metric: MetricArg,
    #[arg(long, default_value = "plotdata.csv")]
    out: PathBuf,
}

#[derive(Parser)]
struct ServeArgs {
    /// JSON settings file; RELFEED_* variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus snapshot reused across restarts.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Parser)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    groups: usize,
    #[arg(long, default_value_t = 100)]
    per_group: usize,
    #[arg(long, default_value_t = 20)]
    seed: u64,
}

fn parse_all<T: std::str::FromStr<Err = relfeed_core::Error> + Copy>(arg: &str, all: &[T]) -> Result<Vec<T>> {
    if arg.eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    arg.split(',').map(|s| Ok(s.trim().parse()?)).collect()
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let models = parse_all(&args.model, &SimModel::ALL)?;
    let scenarios = parse_all(&args.scenario, &Scenario::ALL)?;
    let settings = DatasetSettings {
        groups: args.groups,
        per_group: args.per_group,
        ..DatasetSettings::default()
    };
    let started = Instant::now();
    let data = load_dataset(args.dataset_path.as_deref(), &settings).context("loading dataset")?;
    match &args.dataset_path {
        Some(p) => println!("dataset {}: {} documents, {} terms", p.display(), data.corpus.docs.len(), data.dim()),
        None => println!("synthetic dataset: {} documents, {} terms", data.corpus.docs.len(), data.dim()),
    }
    let base = SimConfig {
        list_size: args.list_size,
        steps: args.steps,
        sessions: args.sessions,
        rng_seed: args.seed,
        exempt_seeds: !args.no_exempt_seeds,
        ..SimConfig::default()
    };
    let options = ExperimentOptions {
        base,
        grid: models
            .iter()
            .flat_map(|m| scenarios.iter().map(move |s| (*m, *s)))
            .collect(),
        serial: args.runtime_serial,
    };
    let cells = run_experiment(&data, &options)?;
    println!("{:<8} {:<9} {:>9} {:>8} {:>12} {:>9}", "model", "scenario", "final F1", "stderr", "last fit s", "failures");
    for c in &cells {
        println!(
            "{:<8} {:<9} {:>9.4} {:>8.4} {:>12.4} {:>9}",
            c.model.to_string(),
            c.scenario.to_string(),
            c.final_f1(),
            c.stderr_f1.last().copied().unwrap_or(0.0),
            c.mean_step_seconds.last().copied().unwrap_or(0.0),
            c.failures.len()
        );
        for (session, reason) in &c.failures {
            eprintln!("  session {session} failed: {reason}");
        }
    }
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_csv(BufWriter::new(file), &cells)?;
    println!("wrote {} in {:.1}s", args.out.display(), started.elapsed().as_secs_f64());
    Ok(())
}

fn plotdata(args: PlotArgs) -> Result<()> {
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let rows = read_csv(BufReader::new(file))?;
    let metric = match args.metric {
        MetricArg::F1 => Metric::MeanF1,
        MetricArg::Stderr => Metric::StderrF1,
        MetricArg::Seconds => Metric::StepSeconds,
    };
    let data = pivot(&rows, metric);
    let out = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_plotdata(BufWriter::new(out), &data)?;
    println!("wrote {} curves x {} steps to {}", data.curves.len(), data.steps.len(), args.out.display());
    Ok(())
}

fn serve_corpus(config: &ServiceConfig, cache: Option<&PathBuf>) -> Result<Corpus> {
    let raw = match &config.corpus_path {
        Some(p) => load_collection(p).with_context(|| format!("reading corpus {}", p.display()))?,
        None => {
            tracing::warn!("no corpus configured; serving the synthetic demo collection");
            SynthConfig::default()
                .generate()?
                .into_iter()
                .map(|mut d| {
                    d.text = strip_headers(&d.text).to_string();
                    d
                })
                .collect()
        }
    };
    let settings = CorpusSettings::SIMULATION;
    Ok(match cache {
        Some(c) => Corpus::load_or_build(raw, settings, c)?,
        None => Corpus::build(raw, settings)?,
    })
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = ServiceConfig::load(args.config.as_deref())?;
    let corpus = serve_corpus(&config, args.cache.as_ref())?;
    tracing::info!(documents = corpus.docs.len(), terms = corpus.vocab.len(), "corpus ready");
    let app = AppState::new(corpus, config)?;
    tokio::runtime::Runtime::new()?.block_on(relfeed_service::serve(app))?;
    Ok(())
}

fn synth_corpus(args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        groups: args.groups,
        per_group: args.per_group,
        seed: args.seed,
        ..SynthConfig::default()
    };
    config.write_tree(&args.out)?;
    println!("wrote {} messages to {}", args.groups * args.per_group, args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Plotdata(a) => plotdata(a),
        Command::Serve(a) => serve(a),
        Command::SynthCorpus(a) => synth_corpus(a),
    }
}

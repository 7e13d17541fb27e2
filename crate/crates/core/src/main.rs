use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fimforge::config::{BackendKind, GoldenPolicy, PipelineConfig};
use fimforge::dataset::CurriculumKey;
use fimforge::dpo;
use fimforge::jsonl;
use fimforge::pipeline::{self, Stage, Workspace};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fimforge", version, about = "Build test-verified FIM preference pairs for code DPO")]
struct Cli {
    /// Pipeline config (.toml or .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Settings that take precedence over the config file.
#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Probability of the FIM training format.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Worker threads for generation and execution.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    corpus_root: Option<PathBuf>,
    #[arg(long, global = true)]
    limit: Option<usize>,
    #[arg(long, global = true)]
    formatter_cmd: Option<String>,
    #[arg(long, global = true, value_enum)]
    golden: Option<GoldenPolicy>,
    #[arg(long, global = true)]
    max_blocks_per_solution: Option<usize>,
    /// Mask one random line span per solution instead of AST blocks.
    #[arg(long, global = true)]
    random_span_seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    curriculum_key: Option<CurriculumKey>,
    /// Runner command line, split on whitespace.
    #[arg(long, global = true)]
    runner: Option<String>,
    #[arg(long, global = true)]
    timeout_s: Option<f64>,
    /// Output directory for checkpoints and the dataset.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.alpha {
            cfg.dataset.alpha = v;
        }
        if let Some(v) = self.backend {
            cfg.backend.kind = v;
        }
        if let Some(v) = self.base_url {
            cfg.backend.base_url = Some(v);
        }
        if let Some(v) = self.workers {
            cfg.backend.workers = v;
            cfg.exec.workers = v;
        }
        if let Some(v) = self.corpus_root {
            cfg.corpus.root = v;
        }
        if let Some(v) = self.limit {
            cfg.corpus.limit = Some(v);
        }
        if let Some(v) = self.formatter_cmd {
            cfg.corpus.formatter_cmd = Some(v);
        }
        if let Some(v) = self.golden {
            cfg.corpus.golden = v;
        }
        if let Some(v) = self.max_blocks_per_solution {
            cfg.segment.max_blocks_per_solution = Some(v);
        }
        if let Some(v) = self.random_span_seed {
            cfg.segment.random_span_seed = Some(v);
        }
        if let Some(v) = self.curriculum_key {
            cfg.dataset.curriculum_key = v;
        }
        if let Some(v) = self.runner {
            cfg.exec.runner = v.split_whitespace().map(String::from).collect();
        }
        if let Some(v) = self.timeout_s {
            cfg.exec.timeout_s = v;
        }
        if let Some(v) = self.out {
            cfg.output.dir = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and normalize the corpus, pick golden solutions.
    Ingest,
    /// Split golden solutions into (prefix, middle, suffix).
    Segment,
    /// Sample candidate middles.
    Gen,
    /// Execute candidates against the task tests.
    Judge,
    /// Build preference pairs from judged candidates.
    Pair,
    /// Render, order and emit the dataset.
    Assemble,
    /// Score DPO log-probability files.
    Analyze(AnalyzeArgs),
    /// Recompute corpus statistics from checkpoints.
    Stats,
    /// Run every stage, optionally resuming from a later one.
    RunAll {
        #[arg(long, value_enum, default_value_t = Stage::Ingest)]
        from: Stage,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, default_value_t = dpo::DEFAULT_BETA)]
    beta: f64,
    /// Chosen and rejected score files, line-aligned.
    #[arg(long, num_args = 2, value_names = ["CHOSEN", "REJECTED"])]
    scores: Vec<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Per-token reward export for both files.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let chosen = dpo::read_scores(&args.scores[0])?;
    let rejected = dpo::read_scores(&args.scores[1])?;
    let report = dpo::analyze(&chosen, &rejected, args.beta)?;
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    jsonl::write_atomic(&args.report, &bytes)?;
    if let Some(path) = &args.heatmap {
        let mut maps = dpo::heatmaps(&chosen, args.beta)?;
        maps.extend(dpo::heatmaps(&rejected, args.beta)?);
        jsonl::write(path, &maps)?;
    }
    println!(
        "beta={} pairs={} mean_loss={:.6} accuracy={:.4}",
        report.beta, report.n_pairs, report.mean_loss, report.accuracy
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Command::Analyze(args) = cli.command {
        return analyze(args);
    }

    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_path(path)?,
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    let ws = Workspace::new(cfg.output.dir.clone());

    match cli.command {
        Command::Ingest => print(&pipeline::ingest(&cfg, &ws, &pipeline::build_runner(&cfg))?),
        Command::Segment => print(&pipeline::segment_stage(&cfg, &ws)?),
        Command::Gen => {
            let backend = pipeline::build_backend(&cfg)?;
            print(&pipeline::gen_stage(&cfg, &ws, backend.as_ref())?)
        }
        Command::Judge => print(&pipeline::judge_stage(&cfg, &ws, &pipeline::build_runner(&cfg))?),
        Command::Pair => print(&pipeline::pair_stage(&ws)?),
        Command::Assemble => print(&pipeline::assemble_stage(&cfg, &ws)?),
        Command::Stats => print(&pipeline::stats_stage(&ws)?),
        Command::RunAll { from } => {
            let backend = pipeline::build_backend(&cfg)?;
            let runner = pipeline::build_runner(&cfg);
            let manifest = pipeline::run_all(&cfg, &ws, backend.as_ref(), &runner, from)
                .with_context(|| format!("pipeline failed; checkpoints kept in {}", ws.dir().display()))?;
            print(&manifest)
        }
        Command::Config => print(&cfg),
        Command::Analyze(_) => unreachable!("handled above"),
    }
}

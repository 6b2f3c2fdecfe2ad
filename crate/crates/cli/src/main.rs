use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use coref_core::agent::write_audit;
use coref_core::corpus::synthetic::{generate, SyntheticConfig};
use coref_core::corpus::{parse_conll, read_predictions, write_conll, write_predictions, Document};
use coref_core::pipeline::{
    ablate, evaluate, make_client, run_predict, train, AgentSetup, CorefModel, LlmBackend, PipelineConfig, Sweep,
};

#[derive(Parser)]
#[command(name = "coref", version, about = "Coreference resolution with an LLM checker/splitter stage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on `data.train` and save it to `data.checkpoint`.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Also write the per-epoch training report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Overrides `data.checkpoint` from the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Resolve coreference in a CoNLL file and write JSONL predictions.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Skip the LLM checker/splitter stages.
        #[arg(long)]
        no_agent: bool,
        /// Overrides `llm.backend` from the config.
        #[arg(long)]
        llm: Option<LlmChoice>,
        /// Write every LLM exchange to this JSONL file.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Overrides `data.checkpoint` from the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score JSONL predictions against a gold CoNLL file.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        drop_singletons: bool,
    },
    /// Evaluate one setting swept over a fixed grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// One of eta, lmax, rho, bridging.
        #[arg(long)]
        sweep: Sweep,
        /// Also write the rows as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides `data.checkpoint` from the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a synthetic CoNLL corpus.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 50)]
        docs: usize,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        min_sentences: usize,
        #[arg(long, default_value_t = 7)]
        max_sentences: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LlmChoice {
    #[value(name = "mock:gold")]
    MockGold,
    #[value(name = "mock:yes")]
    MockYes,
    #[value(name = "mock:no")]
    MockNo,
    #[value(name = "mock:scripted")]
    MockScripted,
    Api,
}

impl From<LlmChoice> for LlmBackend {
    fn from(c: LlmChoice) -> Self {
        match c {
            LlmChoice::MockGold => LlmBackend::MockGold,
            LlmChoice::MockYes => LlmBackend::MockYes,
            LlmChoice::MockNo => LlmBackend::MockNo,
            LlmChoice::MockScripted => LlmBackend::MockScripted,
            LlmChoice::Api => LlmBackend::Api,
        }
    }
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn read_docs(path: Option<&Path>, what: &str) -> Result<Vec<Document>> {
    match path {
        Some(p) => parse_conll(p).with_context(|| format!("reading {what} corpus {}", p.display())),
        None => Ok(Vec::new()),
    }
}

fn checkpoint_path(cfg: &PipelineConfig, explicit: Option<PathBuf>) -> Result<PathBuf> {
    explicit
        .or_else(|| cfg.data.checkpoint.clone())
        .context("no checkpoint path: set data.checkpoint or pass --checkpoint")
}

fn load_model(cfg: &PipelineConfig, path: &Path) -> Result<CorefModel> {
    let mut model = CorefModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    model.hymr = cfg.hymr;
    model.cluster_threshold = cfg.clusterer.threshold;
    Ok(model)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run_train(config: &Path, report_path: Option<&Path>, checkpoint: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let checkpoint = checkpoint_path(&cfg, checkpoint)?;
    let train_docs = read_docs(cfg.data.train.as_deref(), "training")?;
    if train_docs.is_empty() {
        bail!("data.train is missing or empty");
    }
    let val_docs = read_docs(cfg.data.validation.as_deref(), "validation")?;
    let (model, report) = train(&cfg, &train_docs, &val_docs)?;
    model.save(&checkpoint)?;
    println!(
        "stopped after {} epochs ({:?}); best epoch {}",
        report.epochs_run, report.stop, report.best_epoch
    );
    print!("{}", report.best.table());
    println!("checkpoint written to {}", checkpoint.display());
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    Ok(())
}

struct PredictArgs {
    config: PathBuf,
    input: PathBuf,
    output: PathBuf,
    no_agent: bool,
    llm: Option<LlmChoice>,
    audit: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
}

fn run_predict_cmd(a: PredictArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(choice) = a.llm {
        cfg.llm.backend = choice.into();
    }
    let model = load_model(&cfg, &checkpoint_path(&cfg, a.checkpoint)?)?;
    let docs = read_docs(Some(&a.input), "input")?;
    let client = if a.no_agent { None } else { Some(make_client(&cfg.llm, &docs)?) };
    let setup = client.as_deref().map(|client| AgentSetup {
        client,
        filters: &cfg.filters,
        context_sentences: cfg.llm.context_sentences,
        max_parallel: cfg.llm.api.max_parallel,
    });
    let out = run_predict(&model, &docs, setup)?;
    write_predictions(&out.predictions, &a.output)?;
    if let Some(p) = &a.audit {
        write_audit(p, &out.audit)?;
    }
    let s = out.stats;
    eprintln!(
        "{} documents; {} LLM requests, {} failed, {} mentions removed, {} clusters split",
        docs.len(),
        s.requests,
        s.failures,
        s.mentions_removed,
        s.clusters_split
    );
    Ok(())
}

fn run_evaluate(gold: &Path, pred: &Path, drop_singletons: bool) -> Result<()> {
    let docs = read_docs(Some(gold), "gold")?;
    let preds = read_predictions(pred).with_context(|| format!("reading predictions {}", pred.display()))?;
    let report = evaluate(&docs, &preds, drop_singletons)?;
    print!("{}", report.table());
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn run_ablate(config: &Path, sweep: Sweep, output: Option<&Path>, checkpoint: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let train_docs = read_docs(cfg.data.train.as_deref(), "training")?;
    let eval_path = cfg.data.test.as_deref().or(cfg.data.validation.as_deref()).or(cfg.data.train.as_deref());
    let eval_docs = read_docs(eval_path, "evaluation")?;
    if eval_docs.is_empty() {
        bail!("no evaluation documents: set data.test, data.validation or data.train");
    }
    let model = match sweep {
        Sweep::Bridging => None,
        _ => Some(load_model(&cfg, &checkpoint_path(&cfg, checkpoint)?)?),
    };
    let rows = ablate(&cfg, sweep, model, &train_docs, &eval_docs)?;
    println!("{:<20} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8}", "setting", "MUC", "B3", "CEAF", "Avg.F1", "mention", "requests");
    for r in &rows {
        let p = &r.report;
        println!(
            "{:<20} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>8.2} {:>8}",
            r.setting,
            100.0 * p.muc.f1,
            100.0 * p.b_cubed.f1,
            100.0 * p.ceaf_phi4.f1,
            100.0 * p.avg_f1,
            100.0 * p.mentions.f1,
            r.agent.requests
        );
    }
    if let Some(p) = output {
        write_json(p, &rows)?;
    }
    Ok(())
}

fn run_synth(output: &Path, cfg: SyntheticConfig) -> Result<()> {
    let docs = generate(&cfg)?;
    std::fs::write(output, write_conll(&docs)).with_context(|| format!("writing {}", output.display()))?;
    eprintln!("{} documents written to {}", docs.len(), output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, report, checkpoint } => run_train(&config, report.as_deref(), checkpoint),
        Command::Predict { config, input, output, no_agent, llm, audit, checkpoint } => {
            run_predict_cmd(PredictArgs { config, input, output, no_agent, llm, audit, checkpoint })
        }
        Command::Evaluate { gold, pred, drop_singletons } => run_evaluate(&gold, &pred, drop_singletons),
        Command::Ablate { config, sweep, output, checkpoint } => {
            run_ablate(&config, sweep, output.as_deref(), checkpoint)
        }
        Command::Synth { output, docs, seed, min_sentences, max_sentences } => {
            run_synth(&output, SyntheticConfig { docs, min_sentences, max_sentences, seed })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

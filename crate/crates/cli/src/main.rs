use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use syngen::bound::{empirical_error, epsilon_net_estimate, generalization_bound, BoundInputs, BoundReport};
use syngen::data::{load_annotations, load_corpus, load_dictionary, save_annotations};
use syngen::evaluation::{evaluate, few_shot_sweep, lipschitz_probe, sweep_csv, synonym_distance_probe};
use syngen::inference::predict_corpus;
use syngen::io::{to_jsonl, write_atomic};
use syngen::scorer::loss_bound;
use syngen::synthetic::{generate, synthetic_run_config, SyntheticConfig};
use syngen::training::train_with_frozen;
use syngen::{Dictionary, FrozenEncoder, RunConfig, ScorerModel};

#[derive(Parser)]
#[command(name = "syngen", version, about = "Dictionary-only named entity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine negatives, train a scorer and write a checkpoint.
    Train(TrainArgs),
    /// Extract entity spans from a corpus.
    Predict(PredictArgs),
    /// Exact-match precision, recall and F1 as JSON.
    Eval(EvalArgs),
    /// Evaluate the synonym generalization bound.
    Bound(BoundArgs),
    /// Train and evaluate on subsampled dictionaries.
    Sweep(SweepArgs),
    /// Report the synonym distance and Lipschitz probes of a checkpoint.
    Probe(ProbeArgs),
    /// Write the synthetic benchmark and its run configuration.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dictionary TSV: concept_id<TAB>surface.
    #[arg(long)]
    dict: PathBuf,
    /// Corpus JSONL used for negative mining.
    #[arg(long)]
    corpus: PathBuf,
    /// Run configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Negative pool path [default: <out>.pool.jsonl].
    #[arg(long)]
    pool_out: Option<PathBuf>,
    /// Per-epoch loss log [default: <out>.log.jsonl].
    #[arg(long)]
    log_out: Option<PathBuf>,
    /// JSONL of {"text", "vector"} replacing the built-in frozen encoder.
    #[arg(long)]
    frozen_vectors: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus JSONL.
    #[arg(long)]
    input: PathBuf,
    /// Predictions JSONL.
    #[arg(long)]
    output: PathBuf,
    #[arg(long = "t_p", alias = "t-p", value_parser = open_unit)]
    t_p: Option<f64>,
    #[arg(long = "m_s", alias = "m-s", value_parser = clap::value_parser!(u64).range(1..))]
    m_s: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    kappa: Option<f64>,
    #[arg(long, required_unless_present = "model")]
    epsilon: Option<f64>,
    #[arg(long, required_unless_present = "model")]
    b: Option<f64>,
    #[arg(long, required_unless_present = "model")]
    s_total: Option<u64>,
    #[arg(long, required_unless_present = "model")]
    s_dict: Option<u64>,
    #[arg(long, value_parser = open_unit, default_value_t = 0.05)]
    delta: f64,
    /// Checkpoint for estimator mode.
    #[arg(long, requires_all = ["dict", "heldout"])]
    model: Option<PathBuf>,
    /// Training dictionary TSV.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// TSV of surfaces outside the dictionary.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Comma-separated ratios in (0, 1], ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    ratios: Vec<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds; the config seed when omitted.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dictionary TSV supplying synonym pairs and probe texts.
    #[arg(long)]
    dict: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 256)]
    draws: usize,
    /// Noise scale; the checkpoint's when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SyntheticConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = SyntheticConfig::default().concepts)]
    concepts: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().documents)]
    documents: usize,
}

fn open_unit(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let s = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_json(&s).with_context(|| format!("config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Ok(seed) = std::env::var("SYNGEN_SEED") {
        cfg.seed = seed
            .trim()
            .parse()
            .with_context(|| format!("SYNGEN_SEED={seed:?} is not an unsigned integer"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let dict = load_dictionary(&a.dict, cfg.lowercase)?;
    let corpus = load_corpus(&a.corpus)?;
    let mut frozen = FrozenEncoder::from_config(&cfg)?;
    if let Some(p) = &a.frozen_vectors {
        frozen = frozen.with_external_file(p)?;
    }
    let run = train_with_frozen(&dict, &corpus, &cfg, &frozen)?;
    run.model.save(&a.out)?;
    let pool_path = a.pool_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".pool.jsonl"));
    run.pool.save(&pool_path)?;
    let log_path = a.log_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.jsonl"));
    write_atomic(&log_path, to_jsonl(&run.log)?.as_bytes())?;
    log::info!(
        "wrote {} ({} negatives, t_d {})",
        a.out.display(),
        run.pool.len(),
        run.pool.t_d_used
    );
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = ScorerModel::load(&a.model)?;
    let corpus = load_corpus(&a.input)?;
    let t_p = a.t_p.unwrap_or(model.config.t_p);
    let m_s = a.m_s.map_or(model.config.m_s, |m| m as usize);
    let preds = predict_corpus(&model, &corpus, t_p, m_s)?;
    save_annotations(&a.output, &preds)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let preds = load_annotations(&a.pred)?;
    let gold = load_annotations(&a.gold)?;
    print_json(&evaluate(&preds, &gold)?)
}

#[derive(Serialize)]
struct EstimatedBound {
    #[serde(flatten)]
    report: BoundReport,
    empirical_error: f64,
    kappa_estimate: f64,
    epsilon_estimate: f64,
}

fn cmd_bound(a: &BoundArgs) -> Result<()> {
    let Some(model_path) = &a.model else {
        let inputs = BoundInputs {
            kappa: a.kappa.expect("required by clap"),
            epsilon: a.epsilon.expect("required by clap"),
            b: a.b.expect("required by clap"),
            s_total: a.s_total.expect("required by clap"),
            s_dict: a.s_dict.expect("required by clap"),
            delta: a.delta,
        };
        return print_json(&generalization_bound(inputs)?);
    };
    let model = ScorerModel::load(model_path)?;
    let lower = model.config.lowercase;
    let dict = load_dictionary(a.dict.as_deref().expect("required by clap"), lower)?;
    let heldout = load_dictionary(a.heldout.as_deref().expect("required by clap"), lower)?;
    let encode = |d: &Dictionary| -> Result<Vec<_>> {
        Ok(d.surfaces().map(|s| model.encoder.encode(s)).collect::<syngen::Result<_>>()?)
    };
    let epsilon = epsilon_net_estimate(&encode(&dict)?, &encode(&heldout)?)?;
    let texts: Vec<&str> = dict.surfaces().chain(heldout.surfaces()).collect();
    let kappa = lipschitz_probe(&model, &texts, a.draws, model.config.noise_sigma, a.seed)?;
    let mut all: Vec<&str> = texts.clone();
    all.sort_unstable();
    all.dedup();
    let report = generalization_bound(BoundInputs {
        kappa,
        epsilon,
        b: loss_bound(),
        s_total: all.len() as u64,
        s_dict: dict.len() as u64,
        delta: a.delta,
    })?;
    print_json(&EstimatedBound {
        report,
        empirical_error: empirical_error(&model, &dict)?,
        kappa_estimate: kappa,
        epsilon_estimate: epsilon,
    })
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let dict = load_dictionary(&a.dict, cfg.lowercase)?;
    let corpus = load_corpus(&a.corpus)?;
    let gold = load_annotations(&a.gold)?;
    let seeds = if a.seeds.is_empty() { vec![cfg.seed] } else { a.seeds.clone() };
    let mut points = Vec::new();
    for seed in seeds {
        let c = RunConfig { seed, ..cfg.clone() };
        points.extend(few_shot_sweep(&dict, &corpus, &gold, &a.ratios, &c)?);
    }
    write_atomic(&a.out, sweep_csv(&points).as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport {
    synonym_distance: f64,
    lipschitz: f64,
    pairs: usize,
    draws: usize,
    sigma: f64,
    seed: u64,
}

fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let model = ScorerModel::load(&a.model)?;
    let dict = load_dictionary(&a.dict, model.config.lowercase)?;
    let sigma = a.sigma.unwrap_or(model.config.noise_sigma);
    let texts: Vec<&str> = dict.surfaces().collect();
    print_json(&ProbeReport {
        synonym_distance: synonym_distance_probe(&model, &dict, a.pairs, a.seed)?,
        lipschitz: lipschitz_probe(&model, &texts, a.draws, sigma, a.seed)?,
        pairs: a.pairs,
        draws: a.draws,
        sigma,
        seed: a.seed,
    })
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.concepts == 0 {
        bail!("--concepts must be positive");
    }
    let ds = generate(&SyntheticConfig {
        concepts: a.concepts,
        documents: a.documents,
        seed: a.seed,
        ..SyntheticConfig::default()
    })?;
    ds.write_to(&a.out)?;
    let cfg = serde_json::to_string_pretty(&synthetic_run_config())?;
    write_atomic(&a.out.join("config.json"), cfg.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ltlground::automata::{equivalent, Automaton};
use ltlground::dataset::io::{parse_dataset, write_dataset};
use ltlground::dataset::{generate, reduced_config, Dataset, DatasetError, GenConfig, Split};
use ltlground::eval::{evaluate_model, random_baseline, EvalError, MetricsReport};
use ltlground::ltl::{join_tokens, Formula, LtlError};
use ltlground::model::checkpoint::Checkpoint;
use ltlground::model::{beam_decode, ModelError};
use ltlground::planner::{PolicyConfig, ProductPlanner, RolloutMode};
use ltlground::trainer::{supervised_train, train, Method, TrainConfig, TrainError};
use ltlground::world::{trace_of, EnvJson, Environment};

#[derive(Parser)]
#[command(
    name = "ltlground",
    version,
    about = "Ground commands into LTL_f formulas from demonstrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a machine dataset as JSONL.
    Gen(GenArgs),
    /// Train a parser from demonstrations.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Decode one sentence with beam search.
    Parse(ParseArgs),
    /// Plan for a formula in an environment.
    Run(RunArgs),
    /// Decide language equivalence of two postorder formulas.
    Equiv { f1: String, f2: String },
    /// Reference baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
}

#[derive(Args)]
struct GenArgs {
    /// Number of examples (1000, or 300 with --reduced).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Demonstrations per sentence.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Three predicates, formulas of at most 7 tokens, 200/50/50 split.
    #[arg(long)]
    reduced: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving `checkpoint.json` and `metrics.jsonl`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    k_samples: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long, value_enum, default_value = "on")]
    generator: OnOff,
    #[command(flatten)]
    opts: TrainOpts,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file or training output directory.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 10)]
    width: usize,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    sentence: String,
    #[arg(long, default_value_t = 10)]
    width: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
}

#[derive(Args)]
struct RunArgs {
    /// Postorder formula, e.g. "CLOSER_APPLE APPLE UNTIL EVENTUALLY".
    #[arg(long)]
    formula: String,
    /// Environment JSON file.
    #[arg(long)]
    env: PathBuf,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Uniformly sampled valid formulas of at most 9 tokens.
    Random {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Teacher-forced training on ground-truth formulas.
    Supervised {
        #[command(flatten)]
        opts: TrainOpts,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Failure classes with distinct exit codes.
enum Failure {
    Schema(anyhow::Error),
    Eval(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Schema(_) => 2,
            Failure::Eval(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Schema(e) | Failure::Eval(e) | Failure::Other(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Schema { .. } => Failure::Schema(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<LtlError> for Failure {
    fn from(e: LtlError) -> Self {
        Failure::Schema(e.into())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Checkpoint(_) => Failure::Schema(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::Eval(e.into())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Eval(e) => e.into(),
            TrainError::Model(e) => e.into(),
            TrainError::MissingGroundTruth(_) => Failure::Schema(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

fn read_data(path: &Path) -> Result<Dataset, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_dataset(&text)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let file = if path.is_dir() {
        path.join("checkpoint.json")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok(Checkpoint::from_json(&text)?)
}

fn parse_split(s: &str) -> Result<Split, Failure> {
    Split::parse(s).ok_or_else(|| Failure::Other(anyhow::anyhow!("unknown split `{s}`")))
}

fn write_report(report: &MetricsReport, path: Option<&Path>) -> Result<(), Failure> {
    let json = report.to_json();
    match path {
        Some(p) => fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn train_config(method: Method, generator: bool, o: &TrainOpts) -> TrainConfig {
    let mut cfg = TrainConfig {
        method,
        use_generator: generator,
        seed: o.seed,
        ..TrainConfig::default()
    };
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.rounds {
        cfg.iml_rounds = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.lr {
        cfg.model.lr = v;
    }
    if let Some(v) = o.k_samples {
        cfg.k_samples = v;
    }
    if let Some(v) = o.hidden {
        cfg.model.hidden = v;
    }
    cfg
}

fn run_training(ds: &Dataset, cfg: &TrainConfig, out: &Path) -> Result<Checkpoint, Failure> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut log = Vec::new();
    let outcome = if cfg.method == Method::Supervised {
        supervised_train(ds, cfg, Some(&mut log))?
    } else {
        train(ds, cfg, Some(&mut log))?
    };
    fs::write(out.join("metrics.jsonl"), log).context("writing metrics log")?;
    outcome.checkpoint.save(&out.join("checkpoint.json"))?;
    log::info!("selected epoch {}", outcome.best_epoch);
    Ok(outcome.checkpoint)
}

fn evaluate_split(ck: &Checkpoint, ds: &Dataset, split: Split, width: usize) -> Result<MetricsReport, Failure> {
    let examples = ds.split(split);
    Ok(evaluate_model(
        &ck.model,
        &ck.lexicon,
        &examples,
        ck.max_len,
        width,
        &PolicyConfig::default(),
    )?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen(a) => {
            let mut cfg = if a.reduced {
                reduced_config(a.seed)
            } else {
                GenConfig {
                    seed: a.seed,
                    ..GenConfig::default()
                }
            };
            cfg.k = a.k;
            if let Some(n) = a.n {
                cfg.n = n;
            }
            let ds = generate(&cfg);
            write_dataset(&a.out, &ds)?;
            println!("wrote {} examples to {}", ds.examples.len(), a.out.display());
        }
        Command::Train(a) => {
            let ds = read_data(&a.opts.data)?;
            let cfg = train_config(a.method, matches!(a.generator, OnOff::On), &a.opts);
            run_training(&ds, &cfg, &a.opts.out)?;
            println!("wrote {}", a.opts.out.join("checkpoint.json").display());
        }
        Command::Eval(a) => {
            let ck = load_checkpoint(&a.ckpt)?;
            let ds = read_data(&a.data)?;
            let report = evaluate_split(&ck, &ds, parse_split(&a.split)?, a.width)?;
            write_report(&report, a.report.as_deref())?;
        }
        Command::Parse(a) => {
            let ck = load_checkpoint(&a.ckpt)?;
            let words = ltlground::dataset::grammar::tokenize(&a.sentence);
            let enc = ck.model.encode(&ck.lexicon.encode(&words))?;
            for (tokens, lp) in beam_decode(&ck.model, &enc, a.width, ck.max_len) {
                let f = ltlground::ltl::decode_postorder(&tokens)?;
                println!("{lp:.4}\t{}\t{}", join_tokens(&tokens), f.to_infix());
            }
        }
        Command::Run(a) => {
            let f = Formula::parse_postorder(&a.formula)?;
            let text = fs::read_to_string(&a.env).with_context(|| format!("reading {}", a.env.display()))?;
            let json: EnvJson = serde_json::from_str(&text).map_err(|e| Failure::Schema(e.into()))?;
            let env = Environment::from_json(&json).map_err(|e| Failure::Schema(e.into()))?;
            let aut = Automaton::compile(&f);
            let planner = ProductPlanner::new(&aut, &env);
            let mode = match a.mode {
                Mode::Greedy => RolloutMode::Greedy,
                Mode::Sample => RolloutMode::Sample,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let r = planner.rollout(&PolicyConfig::default(), mode, &mut rng);
            let accepted = !r.actions.is_empty() && aut.accepts(&trace_of(&env, &r.actions)).unwrap_or(false);
            let names: Vec<&str> = r.actions.iter().map(|a| a.name()).collect();
            println!("formula: {}", f.to_infix());
            println!("actions: {}", names.join(" "));
            println!("accepted: {accepted}");
        }
        Command::Equiv { f1, f2 } => {
            let a = Formula::parse_postorder(&f1)?;
            let b = Formula::parse_postorder(&f2)?;
            let eq = equivalent(&a, &b).map_err(|e| Failure::Eval(e.into()))?;
            println!("{eq}");
        }
        Command::Baseline(BaselineCommand::Random {
            data,
            seed,
            split,
            report,
        }) => {
            let ds = read_data(&data)?;
            let examples = ds.split(parse_split(&split)?);
            let r = random_baseline(&examples, seed, &PolicyConfig::default())?;
            write_report(&r, report.as_deref())?;
        }
        Command::Baseline(BaselineCommand::Supervised { opts, report }) => {
            let ds = read_data(&opts.data)?;
            let cfg = train_config(Method::Supervised, false, &opts);
            let ck = run_training(&ds, &cfg, &opts.out)?;
            let r = evaluate_split(&ck, &ds, Split::Test, cfg.beam_width)?;
            write_report(&r, report.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

//! The `semqg` command-line tool.
//!
//! Settings resolve as flag > `--config` file > built-in default. The config
//! file is a JSON object with an optional top-level `seed` and one optional
//! section per command, e.g. `{"train-qg": {"train": {"batch_size": 16}}}`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use semqg_core::augment::{
    build_semi_dataset, filter, filter_report, generate_from_existing, generate_from_new,
    qap_score_all, sweep, FilterConfig, SyntheticExample, EPSILON_GRID,
};
use semqg_core::decode::DecodeConfig;
use semqg_core::eval::{
    evaluate_qa, evaluate_qg, qa_based_qg_eval, qa_config_digest, score_predictions, Prediction,
    QAEvalReport,
};
use semqg_core::model::check::block_grad_checks;
use semqg_core::model::{QgConfig, QgModel};
use semqg_core::nn::GradCheckOptions;
use semqg_core::reward::{
    train_qa, train_qpc, QaConfig, QaEpoch, QaInstance, QaModel, QaTrainData, QpcConfig, QpcModel,
    QpcTrainReport, Reward, RewardKind,
};
use semqg_core::text::{
    make_paraphrase_pairs, make_toy_corpus, token_texts, tokenize, tokenize_all,
    vocab_from_examples, LexiconTagger, QAExample, QuestionPair, ToyLanguageSpec, Vocabulary,
};
use semqg_core::trainer::{
    audit_mixing, cycle_kind, train_rl, train_teacher_forcing, LogRecord, MixingAudit, RewardMix,
    RlReport, TfReport, TrainConfig,
};

use crate::checkpoint::{self, sha256_hex};
use crate::embeddings::{apply_embeddings, load_embeddings};
use crate::error::{CliError, CliResult};
use crate::jsonl::{load_examples, load_jsonl, read_json, save_jsonl, write_json};
use crate::manifest::{manifest_path, RunManifest};
use crate::toyconf::{load_toy_spec, render_toy_spec};

#[derive(Debug, Parser)]
#[command(
    name = "semqg",
    version,
    about = "Question generation, reward models and semi-supervised QA"
)]
pub struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true, env = "SEMQG_SEED")]
    pub seed: Option<u64>,
    /// Worker cap. All commands currently run on one thread.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// JSON settings file (see the module docs for its layout).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Toy-language spec whose lexicon drives the tagger; the built-in
    /// language is used when absent.
    #[arg(long, global = true)]
    pub toy_spec: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a toy corpus and paraphrase pairs.
    MakeToyData(MakeToyData),
    /// Train a question generator (teacher forcing, then optional RL).
    TrainQg(TrainQg),
    /// Train the question-paraphrase classifier.
    TrainQpc(TrainQpc),
    /// Train a QA model on ground-truth data.
    TrainQa(TrainQa),
    /// Train a QA model on ground truth mixed half and half with synthetic data.
    TrainQaSemi(TrainQaSemi),
    /// Generate synthetic questions with a trained generator.
    Generate(Generate),
    /// Filter synthetic data by QAP score.
    Filter(Filter),
    /// BLEU4 / ROUGE-L / Q-BLEU1 / QPP / QAP report for a generator.
    EvalQg(EvalQg),
    /// EM / F1 of a QA model or of a predictions file.
    EvalQa(EvalQa),
    /// Label unlabeled contexts with a generator, train QA on them, report dev EM / F1.
    QaBasedEval(QaBasedEval),
    /// Finite-difference gradient checks of every model block.
    GradCheck(GradCheck),
}

#[derive(Debug, Args)]
pub struct MakeToyData {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub dev: Option<usize>,
    #[arg(long)]
    pub unlabeled: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum RewardArg {
    #[value(name = "none")]
    #[serde(rename = "none")]
    None,
    #[value(name = "bleu4")]
    #[serde(rename = "bleu4")]
    Bleu4,
    #[value(name = "rougeL")]
    #[serde(rename = "rougeL")]
    RougeL,
    #[value(name = "qpp")]
    #[serde(rename = "qpp")]
    Qpp,
    #[value(name = "qap")]
    #[serde(rename = "qap")]
    Qap,
    #[value(name = "qpp+qap")]
    #[serde(rename = "qpp+qap")]
    QppQap,
    /// 1 when the question's wh-word matches the answer type.
    #[value(name = "wh")]
    #[serde(rename = "wh")]
    Wh,
}

#[derive(Debug, Args)]
pub struct TrainQg {
    #[arg(long)]
    pub train: PathBuf,
    /// Early stopping and RL checkpoint selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub reward: Option<RewardArg>,
    /// Start from this checkpoint; teacher forcing is skipped when an RL
    /// reward is given.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub qpc: Option<PathBuf>,
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub gamma_qpp: Option<f64>,
    #[arg(long)]
    pub gamma_qap: Option<f64>,
    /// Mixing weight for the bleu4, rougeL and wh rewards.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// QPP:QAP batch alternation, e.g. `3:1`.
    #[arg(long, value_parser = parse_alt_rate)]
    pub alt_rate: Option<(usize, usize)>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub rl_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_rl: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Per-epoch JSONL training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainQpc {
    /// JSONL of `{"a", "b", "label"}` question pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Held-out pairs; without it the last `dev_fraction` of `--pairs` is used.
    #[arg(long)]
    pub dev_pairs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainQa {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainQaSemi {
    #[arg(long)]
    pub train: PathBuf,
    /// Synthetic examples as written by `generate` / `filter`.
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceArg {
    Existing,
    New,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub beam: Option<usize>,
    /// Diverse beam search with this sibling-rank penalty (0.5 when given
    /// without a value).
    #[arg(long, num_args = 0..=1, default_missing_value = "0.5")]
    pub diverse: Option<f64>,
    /// Block repeated n-grams of this order (0, 2 or 3).
    #[arg(long)]
    pub block_ngram: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Generate {
    #[arg(long)]
    pub qg: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub source: SourceArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Questions kept per new context.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Attach QAP scores from this QA model.
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct Filter {
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSONL, or a directory with `--sweep`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Filter at every threshold of the default grid.
    #[arg(long)]
    pub sweep: bool,
    /// Keep duplicates and copies of the gold question.
    #[arg(long)]
    pub no_dedup: bool,
    /// Score unscored examples with this QA model first.
    #[arg(long)]
    pub qa: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalQg {
    #[arg(long)]
    pub qg: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub qpc: Option<PathBuf>,
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct EvalQa {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(
        long,
        required_unless_present = "predictions",
        conflicts_with = "predictions"
    )]
    pub qa: Option<PathBuf>,
    /// JSONL of `{"id", "prediction"}` records to score instead of a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QaBasedEval {
    #[arg(long)]
    pub qg: PathBuf,
    #[arg(long)]
    pub unlabeled: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct GradCheck {
    /// Number of random seeds (each checks every block at a fresh shape).
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_alt_rate(s: &str) -> Result<(usize, usize), String> {
    let (n, m) = s
        .split_once(':')
        .ok_or_else(|| format!("expected n:m, got {s:?}"))?;
    let n: usize = n.trim().parse().map_err(|_| format!("bad n in {s:?}"))?;
    let m: usize = m.trim().parse().map_err(|_| format!("bad m in {s:?}"))?;
    if n + m == 0 {
        return Err("n + m must be at least 1".into());
    }
    Ok((n, m))
}

// Settings per command; every field may come from the config file.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDataSettings {
    pub train: usize,
    pub dev: usize,
    pub unlabeled: usize,
    pub pairs: usize,
}

impl Default for ToyDataSettings {
    fn default() -> Self {
        Self {
            train: 200,
            dev: 200,
            unlabeled: 400,
            pairs: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainQgSettings {
    pub reward: RewardArg,
    pub model: QgConfig,
    /// Teacher forcing uses `max_epochs`/`patience`; RL the two fields below.
    pub train: TrainConfig,
    pub rl_epochs: usize,
    pub rl_patience: usize,
    pub gamma: f64,
    pub min_count: usize,
}

impl Default for TrainQgSettings {
    fn default() -> Self {
        Self {
            reward: RewardArg::None,
            model: QgConfig::default(),
            train: TrainConfig::default(),
            rl_epochs: 20,
            rl_patience: 10,
            gamma: 0.99,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QpcSettings {
    pub model: QpcConfig,
    pub dev_fraction: f64,
    pub min_count: usize,
}

impl Default for QpcSettings {
    fn default() -> Self {
        Self {
            model: QpcConfig::default(),
            dev_fraction: 0.2,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QaSettings {
    pub model: QaConfig,
    pub min_count: usize,
}

impl Default for QaSettings {
    fn default() -> Self {
        Self {
            model: QaConfig::default(),
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSettings {
    pub decode: DecodeConfig,
    pub top_k: usize,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self {
            decode: DecodeConfig::default(),
            top_k: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    pub epsilon: f64,
    pub dedup: bool,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct QaBasedSettings {
    pub decode: DecodeConfig,
    pub qa: QaConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckSettings {
    pub seeds: usize,
    pub options: GradCheckOptions,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            seeds: 10,
            options: GradCheckOptions::default(),
        }
    }
}

/// Shared state of one invocation.
struct Ctx {
    seed_flag: Option<u64>,
    config: Value,
    toy: ToyLanguageSpec,
    toy_path: Option<PathBuf>,
    tagger: LexiconTagger,
}

impl Ctx {
    fn new(cli: &Cli) -> CliResult<Self> {
        if cli.threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        let config = match &cli.config {
            Some(p) => {
                let v: Value = read_json(p)?;
                if !v.is_object() {
                    return Err(CliError::Usage(format!(
                        "{}: config must be a JSON object",
                        p.display()
                    )));
                }
                v
            }
            None => Value::Object(Default::default()),
        };
        let toy = match &cli.toy_spec {
            Some(p) => load_toy_spec(p)?,
            None => ToyLanguageSpec::default(),
        };
        let tagger = toy.tagger();
        Ok(Self {
            seed_flag: cli.seed,
            config,
            toy,
            toy_path: cli.toy_spec.clone(),
            tagger,
        })
    }

    fn seed_or(&self, default: u64) -> CliResult<u64> {
        if let Some(s) = self.seed_flag {
            return Ok(s);
        }
        match self.config.get("seed") {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| {
                CliError::Usage("config seed must be a non-negative integer".into())
            }),
        }
    }

    fn seed(&self) -> CliResult<u64> {
        self.seed_or(0)
    }

    fn settings<T: DeserializeOwned + Default>(&self, section: &str) -> CliResult<T> {
        match self.config.get(section) {
            None => Ok(T::default()),
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| CliError::Usage(format!("config section {section}: {e}"))),
        }
    }

    fn manifest<T: Serialize>(
        &self,
        command: &str,
        settings: &T,
        seed: u64,
    ) -> CliResult<RunManifest> {
        let config = serde_json::to_value(settings).map_err(|e| CliError::Data(e.to_string()))?;
        let mut m = RunManifest::new(command, config, seed);
        if let Some(p) = &self.toy_path {
            m.input(p)?;
        }
        Ok(m)
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn apply_decode(cfg: &mut DecodeConfig, args: &DecodeArgs) {
    set(&mut cfg.beam, args.beam);
    set(&mut cfg.diversity, args.diverse);
    set(&mut cfg.block_ngram, args.block_ngram);
    set(&mut cfg.max_len, args.max_len);
}

/// Parses args, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "usage",
                CliError::Data(_) => "data",
                CliError::Numeric(_) => "numeric",
            };
            let msg = match &e {
                CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m.clone(),
            };
            eprintln!("{}", serde_json::json!({ "error": kind, "message": msg }));
            e.exit_code()
        }
    }
}

/// Parses `args` (program name first) and runs the command in-process.
pub fn run_from<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(&cli)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let ctx = Ctx::new(cli)?;
    match &cli.command {
        Command::MakeToyData(a) => make_toy_data(&ctx, a),
        Command::TrainQg(a) => train_qg(&ctx, a),
        Command::TrainQpc(a) => train_qpc_cmd(&ctx, a),
        Command::TrainQa(a) => train_qa_cmd(&ctx, a),
        Command::TrainQaSemi(a) => train_qa_semi(&ctx, a),
        Command::Generate(a) => generate(&ctx, a),
        Command::Filter(a) => filter_cmd(&ctx, a),
        Command::EvalQg(a) => eval_qg(&ctx, a),
        Command::EvalQa(a) => eval_qa(&ctx, a),
        Command::QaBasedEval(a) => qa_based_eval(&ctx, a),
        Command::GradCheck(a) => grad_check(&ctx, a),
    }
}

fn make_toy_data(ctx: &Ctx, a: &MakeToyData) -> CliResult<()> {
    let mut s: ToyDataSettings = ctx.settings("make-toy-data")?;
    set(&mut s.train, a.train);
    set(&mut s.dev, a.dev);
    set(&mut s.unlabeled, a.unlabeled);
    set(&mut s.pairs, a.pairs);
    let seed = ctx.seed_or(ctx.toy.seed)?;
    let spec = ToyLanguageSpec {
        seed,
        ..ctx.toy.clone()
    };
    let corpus = make_toy_corpus(&spec, s.train, s.dev, s.unlabeled)?;
    let pairs = make_paraphrase_pairs(&spec, s.pairs, seed)?;
    let mut m = ctx.manifest("make-toy-data", &s, seed)?;
    let files = [
        ("train.jsonl", &corpus.train),
        ("dev.jsonl", &corpus.dev),
        ("unlabeled.jsonl", &corpus.unlabeled),
    ];
    for (name, data) in files {
        let p = a.out.join(name);
        save_jsonl(&p, data)?;
        m.output(&p)?;
    }
    let p = a.out.join("pairs.jsonl");
    save_jsonl(&p, &pairs)?;
    m.output(&p)?;
    let p = a.out.join("gold_tags.json");
    write_json(&p, &corpus.gold_tags)?;
    m.output(&p)?;
    let p = a.out.join("toy.spec");
    crate::jsonl::write_file(&p, render_toy_spec(&spec).as_bytes())?;
    m.output(&p)?;
    m.write(&manifest_path(&a.out, true))?;
    println!(
        "wrote {} train, {} dev, {} unlabeled examples and {} pairs to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.unlabeled.len(),
        pairs.len(),
        a.out.display()
    );
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// The reward cycle `train-qg` would run, as `(kind, run length)`.
pub fn reward_cycle(reward: RewardArg, alt_rate: (usize, usize)) -> Vec<(RewardKind, usize)> {
    match reward {
        RewardArg::None => Vec::new(),
        RewardArg::Bleu4 => vec![(RewardKind::Bleu4, 1)],
        RewardArg::RougeL => vec![(RewardKind::RougeL, 1)],
        RewardArg::Qpp => vec![(RewardKind::Qpp, 1)],
        RewardArg::Qap => vec![(RewardKind::Qap, 1)],
        RewardArg::Wh => vec![(RewardKind::WhMatch, 1)],
        RewardArg::QppQap => vec![(RewardKind::Qpp, alt_rate.0), (RewardKind::Qap, alt_rate.1)],
    }
}

#[derive(Debug, Serialize)]
struct TrainQgReport {
    vocab_size: usize,
    embedding_hits: Option<usize>,
    teacher_forcing: Option<TfReport>,
    rl: Option<RlReport>,
    /// Reward kind of the first two cycles of RL batches.
    schedule: Vec<String>,
}

fn train_qg(ctx: &Ctx, a: &TrainQg) -> CliResult<()> {
    let mut s: TrainQgSettings = ctx.settings("train-qg")?;
    set(&mut s.reward, a.reward);
    set(&mut s.train.gamma_qpp, a.gamma_qpp);
    set(&mut s.train.gamma_qap, a.gamma_qap);
    set(&mut s.gamma, a.gamma);
    set(&mut s.train.alt_rate, a.alt_rate);
    set(&mut s.train.max_epochs, a.epochs);
    set(&mut s.rl_epochs, a.rl_epochs);
    set(&mut s.train.patience, a.patience);
    set(&mut s.train.batch_size, a.batch_size);
    set(&mut s.train.lr_tf, a.lr);
    set(&mut s.train.lr_rl, a.lr_rl);
    set(&mut s.model.hidden, a.hidden);
    set(&mut s.model.word_dim, a.word_dim);
    set(&mut s.model.dropout, a.dropout);
    let seed = ctx.seed()?;
    s.train.seed = seed;
    s.train.validate()?;
    if !(0.0..=1.0).contains(&s.gamma) {
        return Err(CliError::Usage(format!("gamma {} outside [0, 1]", s.gamma)));
    }
    let mut m = ctx.manifest("train-qg", &s, seed)?;

    let train_raw = load_examples(&a.train)?;
    m.input(&a.train)?;
    let dev_raw = match &a.dev {
        Some(p) => {
            m.input(p)?;
            load_examples(p)?
        }
        None => Vec::new(),
    };
    let mut model = match &a.init {
        Some(p) => {
            m.input(p)?;
            checkpoint::load::<QgModel>(p)?
        }
        None => QgModel::new(
            s.model.clone(),
            vocab_from_examples(&train_raw, s.min_count),
            seed,
        )?,
    };
    let embedding_hits = match &a.embeddings {
        Some(p) => {
            m.input(p)?;
            let table = load_embeddings(p)?;
            Some(apply_embeddings(
                &mut model.params,
                "embed.word",
                &model.vocab,
                &table,
            )?)
        }
        None => None,
    };
    let train = tokenize_all(&train_raw, &model.vocab, &ctx.tagger)?;
    let dev = tokenize_all(&dev_raw, &model.vocab, &ctx.tagger)?;
    let mut records: Vec<LogRecord> = Vec::new();
    let mut log = |r: &LogRecord| {
        log::info!("{} epoch {} loss {:.4}", r.phase, r.epoch, r.train_loss);
        records.push(r.clone());
    };

    let teacher_forcing = if a.init.is_none() || s.reward == RewardArg::None {
        Some(train_teacher_forcing(
            &mut model, &train, &dev, &s.train, &mut log,
        )?)
    } else {
        None
    };

    let cycle = reward_cycle(s.reward, s.train.alt_rate);
    let period: usize = cycle.iter().map(|c| c.1).sum();
    let schedule = (0..2 * period)
        .map(|i| cycle_kind(&cycle, i).map(|k| k.as_str().to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let rl = if s.reward == RewardArg::None {
        None
    } else {
        if dev.is_empty() {
            return Err(CliError::Usage(
                "RL fine-tuning needs --dev for checkpoint selection".into(),
            ));
        }
        let qpc = match &a.qpc {
            Some(p) => {
                m.input(p)?;
                Some(checkpoint::load::<QpcModel>(p)?)
            }
            None => None,
        };
        let qa = match &a.qa {
            Some(p) => {
                m.input(p)?;
                Some(checkpoint::load::<QaModel>(p)?)
            }
            None => None,
        };
        let need = |what: &str, flag: &str| CliError::Usage(format!("reward {what} needs {flag}"));
        let mut mixes = Vec::new();
        for &(kind, run) in &cycle {
            let (reward, gamma) = match kind {
                RewardKind::Qpp => (
                    Reward::Qpp(qpc.as_ref().ok_or_else(|| need("qpp", "--qpc"))?),
                    s.train.gamma_qpp,
                ),
                RewardKind::Qap => (
                    Reward::Qap(qa.as_ref().ok_or_else(|| need("qap", "--qa"))?),
                    s.train.gamma_qap,
                ),
                RewardKind::WhMatch => (Reward::WhMatch, s.gamma),
                k => (Reward::Metric(k), s.gamma),
            };
            mixes.push(RewardMix { reward, gamma, run });
        }
        let rl_cfg = TrainConfig {
            max_epochs: s.rl_epochs,
            patience: s.rl_patience,
            ..s.train.clone()
        };
        Some(train_rl(
            &mut model, &train, &dev, &mixes, &rl_cfg, &mut log,
        )?)
    };

    checkpoint::save(&a.out, &model)?;
    m.output(&a.out)?;
    if let Some(p) = &a.log {
        save_jsonl(p, &records)?;
        m.output(p)?;
    }
    s.model = model.config.clone();
    m.config = serde_json::to_value(&s).map_err(|e| CliError::Data(e.to_string()))?;
    let report = TrainQgReport {
        vocab_size: model.vocab.len(),
        embedding_hits,
        teacher_forcing,
        rl,
        schedule,
    };
    let rp = sibling(&a.out, ".report.json");
    write_json(&rp, &report)?;
    m.output(&rp)?;
    m.write(&manifest_path(&a.out, false))?;
    if let Some(t) = &report.teacher_forcing {
        println!(
            "teacher forcing: {} epochs, best loss {:.4}",
            t.epochs_run, t.best_loss
        );
    }
    if let Some(r) = &report.rl {
        println!(
            "rl: dev reward {:.4} -> {:.4}",
            r.initial_dev_reward, r.best_dev_reward
        );
    }
    Ok(())
}

fn question_tokens(q: &str) -> Vec<String> {
    token_texts(&tokenize(q))
}

fn train_qpc_cmd(ctx: &Ctx, a: &TrainQpc) -> CliResult<()> {
    let mut s: QpcSettings = ctx.settings("train-qpc")?;
    set(&mut s.model.max_epochs, a.epochs);
    if !(0.0..1.0).contains(&s.dev_fraction) {
        return Err(CliError::Usage("dev_fraction must be in [0, 1)".into()));
    }
    let seed = ctx.seed()?;
    let mut m = ctx.manifest("train-qpc", &s, seed)?;
    let mut pairs: Vec<QuestionPair> = load_jsonl(&a.pairs)?;
    m.input(&a.pairs)?;
    let dev_pairs = match &a.dev_pairs {
        Some(p) => {
            m.input(p)?;
            load_jsonl(p)?
        }
        None => {
            let n_dev = (pairs.len() as f64 * s.dev_fraction).round() as usize;
            pairs.split_off(pairs.len() - n_dev)
        }
    };
    if let Some(p) = pairs.iter().chain(&dev_pairs).find(|p| p.label > 1) {
        return Err(CliError::Data(format!(
            "pair label {} is not 0 or 1",
            p.label
        )));
    }
    let tok = |p: &QuestionPair| (question_tokens(&p.a), question_tokens(&p.b), p.label == 1);
    let train_t: Vec<_> = pairs.iter().map(tok).collect();
    let dev_t: Vec<_> = dev_pairs.iter().map(tok).collect();
    let words: Vec<&str> = train_t
        .iter()
        .flat_map(|(x, y, _)| x.iter().chain(y))
        .map(String::as_str)
        .collect();
    let vocab = Vocabulary::build(words, s.min_count);
    let mut model = QpcModel::new(s.model.clone(), vocab, seed)?;
    if let Some(p) = &a.embeddings {
        m.input(p)?;
        apply_embeddings(
            &mut model.params,
            "qpc.embed.word",
            &model.vocab,
            &load_embeddings(p)?,
        )?;
    }
    let inst = |v: &[(Vec<String>, Vec<String>, bool)]| {
        v.iter()
            .map(|(x, y, l)| model.instance(x, y, *l))
            .collect::<Vec<_>>()
    };
    let (train_i, dev_i) = (inst(&train_t), inst(&dev_t));
    let report: QpcTrainReport = train_qpc(&mut model, &train_i, &dev_i, seed)?;
    checkpoint::save(&a.out, &model)?;
    m.output(&a.out)?;
    let rp = sibling(&a.out, ".report.json");
    write_json(&rp, &report)?;
    m.output(&rp)?;
    m.write(&manifest_path(&a.out, false))?;
    println!(
        "qpc: best dev accuracy {:.4} at epoch {}",
        report.best_dev_accuracy, report.best_epoch
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct QaTrainSummary {
    best_epoch: usize,
    best_dev_em: f64,
    history: Vec<QaEpoch>,
    mixing: MixingAudit,
    ground_truth: usize,
    synthetic: usize,
    dev: QAEvalReport,
}

fn qa_instances(
    qa: &QaModel,
    data: &[QAExample],
    tagger: &LexiconTagger,
) -> CliResult<Vec<QaInstance>> {
    let tok = tokenize_all(data, &qa.vocab, tagger)?;
    Ok(tok
        .iter()
        .map(|t| qa.instance(t))
        .collect::<Result<Vec<_>, _>>()?)
}

#[allow(clippy::too_many_arguments)]
fn run_qa_training(
    ctx: &Ctx,
    command: &str,
    a_train: &Path,
    synthetic: Option<&Path>,
    a_dev: &Path,
    out: &Path,
    epochs: Option<usize>,
    embeddings: Option<&Path>,
) -> CliResult<()> {
    let mut s: QaSettings = ctx.settings(command)?;
    set(&mut s.model.max_epochs, epochs);
    let seed = ctx.seed()?;
    let mut m = ctx.manifest(command, &s, seed)?;
    let gt = load_examples(a_train)?;
    m.input(a_train)?;
    let syn: Vec<SyntheticExample> = match synthetic {
        Some(p) => {
            m.input(p)?;
            let v: Vec<SyntheticExample> = load_jsonl(p)?;
            for x in &v {
                x.example.validate()?;
                if x.example.question.is_none() {
                    return Err(CliError::Data(format!(
                        "synthetic example {} has no question",
                        x.example.id
                    )));
                }
            }
            v
        }
        None => Vec::new(),
    };
    let dev = load_examples(a_dev)?;
    m.input(a_dev)?;
    let semi = build_semi_dataset(gt, syn)?;
    let syn_raw: Vec<QAExample> = semi.synthetic.iter().map(|x| x.example.clone()).collect();
    let all: Vec<QAExample> = semi.ground_truth.iter().chain(&syn_raw).cloned().collect();
    let mut qa = QaModel::new(
        s.model.clone(),
        vocab_from_examples(&all, s.min_count),
        seed,
    )?;
    if let Some(p) = embeddings {
        m.input(p)?;
        apply_embeddings(
            &mut qa.params,
            "qa.embed.word",
            &qa.vocab,
            &load_embeddings(p)?,
        )?;
    }
    let gt_i = qa_instances(&qa, &semi.ground_truth, &ctx.tagger)?;
    let syn_i = qa_instances(&qa, &syn_raw, &ctx.tagger)?;
    let dev_i = qa_instances(&qa, &dev, &ctx.tagger)?;
    let r = train_qa(
        &mut qa,
        QaTrainData {
            ground_truth: &gt_i,
            synthetic: &syn_i,
        },
        &dev_i,
        seed,
    )?;
    let mixing = audit_mixing(&r.batches, gt_i.len(), syn_i.len(), s.model.batch_size);
    let mut dev_report = evaluate_qa(&qa, &dev, &ctx.tagger)?;
    dev_report.predictions.clear();
    checkpoint::save(out, &qa)?;
    m.output(out)?;
    let summary = QaTrainSummary {
        best_epoch: r.best_epoch,
        best_dev_em: r.best_dev_em,
        history: r.history,
        mixing,
        ground_truth: gt_i.len(),
        synthetic: syn_i.len(),
        dev: dev_report,
    };
    let rp = sibling(out, ".report.json");
    write_json(&rp, &summary)?;
    m.output(&rp)?;
    m.write(&manifest_path(out, false))?;
    println!(
        "qa: dev EM {:.2} F1 {:.2} (best epoch {}, mixing audit {})",
        summary.dev.em,
        summary.dev.f1,
        summary.best_epoch,
        if summary.mixing.passed() {
            "ok"
        } else {
            "FAILED"
        }
    );
    Ok(())
}

fn train_qa_cmd(ctx: &Ctx, a: &TrainQa) -> CliResult<()> {
    run_qa_training(
        ctx,
        "train-qa",
        &a.train,
        None,
        &a.dev,
        &a.out,
        a.epochs,
        a.embeddings.as_deref(),
    )
}

fn train_qa_semi(ctx: &Ctx, a: &TrainQaSemi) -> CliResult<()> {
    run_qa_training(
        ctx,
        "train-qa-semi",
        &a.train,
        Some(&a.synthetic),
        &a.dev,
        &a.out,
        a.epochs,
        a.embeddings.as_deref(),
    )
}

fn generate(ctx: &Ctx, a: &Generate) -> CliResult<()> {
    let mut s: GenerateSettings = ctx.settings("generate")?;
    apply_decode(&mut s.decode, &a.decode);
    set(&mut s.top_k, a.top_k);
    s.decode.validate()?;
    let seed = ctx.seed()?;
    let mut m = ctx.manifest("generate", &(&s, a.source), seed)?;
    let bytes = std::fs::read(&a.qg).map_err(|e| CliError::io(&a.qg, e))?;
    let qg: QgModel = checkpoint::from_bytes(&bytes)?;
    m.input(&a.qg)?;
    let generator_id = format!("qg-{}", &sha256_hex(&bytes)[..12]);
    let raw = load_examples(&a.input)?;
    m.input(&a.input)?;
    let tok = tokenize_all(&raw, &qg.vocab, &ctx.tagger)?;
    let mut out = match a.source {
        SourceArg::Existing => generate_from_existing(&qg, &raw, &tok, &s.decode, &generator_id)?,
        SourceArg::New => generate_from_new(&qg, &raw, &tok, &s.decode, s.top_k, &generator_id)?,
    };
    if let Some(p) = &a.qa {
        m.input(p)?;
        let qa: QaModel = checkpoint::load(p)?;
        out = qap_score_all(&out, &qa, &ctx.tagger)?;
    }
    save_jsonl(&a.out, &out)?;
    m.output(&a.out)?;
    m.write(&manifest_path(&a.out, false))?;
    println!("generated {} questions for {} inputs", out.len(), raw.len());
    Ok(())
}

fn filter_cmd(ctx: &Ctx, a: &Filter) -> CliResult<()> {
    let mut s: FilterSettings = ctx.settings("filter")?;
    set(&mut s.epsilon, a.epsilon);
    if a.no_dedup {
        s.dedup = false;
    }
    let seed = ctx.seed()?;
    let mut m = ctx.manifest("filter", &(&s, a.sweep), seed)?;
    let mut input: Vec<SyntheticExample> = load_jsonl(&a.input)?;
    m.input(&a.input)?;
    if let Some(p) = &a.qa {
        m.input(p)?;
        let qa: QaModel = checkpoint::load(p)?;
        let (scored, unscored): (Vec<_>, Vec<_>) = input
            .into_iter()
            .enumerate()
            .partition(|(_, x)| x.qap_score.is_some());
        let idx: Vec<usize> = unscored.iter().map(|(i, _)| *i).collect();
        let fresh = qap_score_all(
            &unscored.into_iter().map(|(_, x)| x).collect::<Vec<_>>(),
            &qa,
            &ctx.tagger,
        )?;
        let mut all: Vec<(usize, SyntheticExample)> = scored
            .into_iter()
            .chain(idx.into_iter().zip(fresh))
            .collect();
        all.sort_by_key(|(i, _)| *i);
        input = all.into_iter().map(|(_, x)| x).collect();
    }
    if a.sweep {
        let reports = sweep(&input, &EPSILON_GRID, s.dedup)?;
        for &eps in &EPSILON_GRID {
            let kept = filter(
                &input,
                &FilterConfig {
                    epsilon: eps,
                    dedup: s.dedup,
                },
            )?;
            let p = a.out.join(format!("eps_{eps:.1}.jsonl"));
            save_jsonl(&p, &kept)?;
            m.output(&p)?;
        }
        let p = a.out.join("sweep.json");
        write_json(&p, &reports)?;
        m.output(&p)?;
        m.write(&manifest_path(&a.out, true))?;
        for r in &reports {
            println!(
                "epsilon {:.1}: kept {} dropped {} mean qap {:.4}",
                r.epsilon, r.kept, r.dropped, r.mean_qap
            );
        }
    } else {
        let cfg = FilterConfig {
            epsilon: s.epsilon,
            dedup: s.dedup,
        };
        cfg.validate()?;
        let kept = filter(&input, &cfg)?;
        save_jsonl(&a.out, &kept)?;
        m.output(&a.out)?;
        m.write(&manifest_path(&a.out, false))?;
        let r = filter_report(&input, &kept, s.epsilon);
        println!(
            "epsilon {:.2}: kept {} dropped {}",
            r.epsilon, r.kept, r.dropped
        );
    }
    Ok(())
}

fn eval_qg(ctx: &Ctx, a: &EvalQg) -> CliResult<()> {
    let mut s: GenerateSettings = ctx.settings("eval-qg")?;
    apply_decode(&mut s.decode, &a.decode);
    s.decode.validate()?;
    let seed = ctx.seed()?;
    let mut m = ctx.manifest("eval-qg", &s.decode, seed)?;
    let qg: QgModel = checkpoint::load(&a.qg)?;
    m.input(&a.qg)?;
    let data = load_examples(&a.data)?;
    m.input(&a.data)?;
    let qpc = match &a.qpc {
        Some(p) => {
            m.input(p)?;
            Some(checkpoint::load::<QpcModel>(p)?)
        }
        None => None,
    };
    let qa = match &a.qa {
        Some(p) => {
            m.input(p)?;
            Some(checkpoint::load::<QaModel>(p)?)
        }
        None => None,
    };
    let r = evaluate_qg(
        &qg,
        &data,
        &s.decode,
        qpc.as_ref(),
        qa.as_ref(),
        &ctx.tagger,
    )?;
    write_json(&a.out, &r)?;
    m.output(&a.out)?;
    m.write(&manifest_path(&a.out, false))?;
    print!(
        "BLEU4 {:.2} ROUGE-L {:.2} Q-BLEU1 {:.4}",
        r.bleu4, r.rouge_l, r.q_bleu1
    );
    if let Some(v) = r.qpp {
        print!(" QPP {v:.4}");
    }
    if let Some(v) = r.qap {
        print!(" QAP {v:.4}");
    }
    println!();
    Ok(())
}

fn eval_qa(ctx: &Ctx, a: &EvalQa) -> CliResult<()> {
    let seed = ctx.seed()?;
    let mut m = ctx.manifest("eval-qa", &Value::Null, seed)?;
    let data = load_examples(&a.data)?;
    m.input(&a.data)?;
    let r = match (&a.qa, &a.predictions) {
        (Some(p), _) => {
            m.input(p)?;
            let qa: QaModel = checkpoint::load(p)?;
            evaluate_qa(&qa, &data, &ctx.tagger)?
        }
        (None, Some(p)) => {
            m.input(p)?;
            let preds: Vec<Prediction> = load_jsonl(p)?;
            score_predictions(&preds, &data, "predictions file")?
        }
        (None, None) => {
            return Err(CliError::Usage(
                "eval-qa needs --qa or --predictions".into(),
            ))
        }
    };
    write_json(&a.out, &r)?;
    m.output(&a.out)?;
    m.write(&manifest_path(&a.out, false))?;
    println!("EM {:.2} F1 {:.2} on {} examples", r.em, r.f1, data.len());
    Ok(())
}

fn qa_based_eval(ctx: &Ctx, a: &QaBasedEval) -> CliResult<()> {
    let mut s: QaBasedSettings = ctx.settings("qa-based-eval")?;
    apply_decode(&mut s.decode, &a.decode);
    s.decode.validate()?;
    let seed = ctx.seed()?;
    let mut m = ctx.manifest("qa-based-eval", &s, seed)?;
    let qg: QgModel = checkpoint::load(&a.qg)?;
    m.input(&a.qg)?;
    let mut unlabeled = load_examples(&a.unlabeled)?;
    m.input(&a.unlabeled)?;
    for e in &mut unlabeled {
        e.question = None;
    }
    let dev = load_examples(&a.dev)?;
    m.input(&a.dev)?;
    let mut r = qa_based_qg_eval(&qg, &unlabeled, &dev, &s.decode, &s.qa, &ctx.tagger, seed)?;
    r.config = format!("{}; {}", qa_config_digest(&s.qa), r.config);
    write_json(&a.out, &r)?;
    m.output(&a.out)?;
    m.write(&manifest_path(&a.out, false))?;
    println!(
        "QA trained on generated questions: dev EM {:.2} F1 {:.2}",
        r.em, r.f1
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct GradCheckLine {
    seed: u64,
    block: String,
    shape: String,
    max_rel_error: f64,
    passed: bool,
}

fn grad_check(ctx: &Ctx, a: &GradCheck) -> CliResult<()> {
    let mut s: GradCheckSettings = ctx.settings("grad-check")?;
    set(&mut s.seeds, a.seeds);
    if s.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let base = ctx.seed()?;
    let mut lines = Vec::new();
    for k in 0..s.seeds as u64 {
        for b in block_grad_checks(base + k, &s.options)? {
            lines.push(GradCheckLine {
                seed: base + k,
                passed: b.report.passed(),
                max_rel_error: b.report.max_rel_error(),
                block: b.block,
                shape: b.shape,
            });
        }
    }
    let worst = lines.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    let failed = lines.iter().filter(|l| !l.passed).count();
    if let Some(p) = &a.out {
        let mut m = ctx.manifest("grad-check", &s, base)?;
        save_jsonl(p, &lines)?;
        m.output(p)?;
        m.write(&manifest_path(p, false))?;
    }
    println!(
        "{} checks, {} failed, worst relative error {:.3e}",
        lines.len(),
        failed,
        worst
    );
    if failed > 0 {
        return Err(CliError::Numeric(format!(
            "{failed} gradient checks exceed tolerance {:e}",
            s.options.tolerance
        )));
    }
    Ok(())
}

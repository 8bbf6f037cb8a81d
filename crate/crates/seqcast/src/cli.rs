//! Command-line entry point: generate / train / eval / forecast, wired
//! through a declarative run configuration. Flags override config-file
//! values; the effective configuration is echoed into every report so a
//! run can be reproduced bit-for-bit from its own output.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    self, available_profiles, builtin_profile, load_jsonl, save_jsonl, ActivityGrammar, Split,
    VideoRecord,
};
use crate::losses::{LossVariant, OtParams};
use crate::metrics::{
    bleu, mean_ap, mean_per_class_frame_accuracy, seq_item_accuracy, EvalReport, VideoClassScores,
};
use crate::models::{
    augment_sequences, build_checkpoint, load_checkpoint, save_checkpoint, ActionVocabulary,
    Checkpoint, ModelKind, ModelVariant, TrainExample, TrainSettings,
};
use crate::nn::Adam;
use crate::rng::{baseline_stream, forcing_stream, init_stream, order_stream};
use crate::{Error, Result};

/// Effective settings of one run. Every field has a default; a TOML config
/// file overrides defaults and command-line flags override the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Built-in grammar profile name.
    pub grammar: String,
    /// Optional grammar TOML file; takes precedence over `grammar`.
    pub grammar_file: Option<PathBuf>,
    /// Directory holding train.jsonl / test.jsonl.
    pub corpus: PathBuf,
    /// Corpus sizes; profile defaults when unset.
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    /// Feature dimension override for generation.
    pub feature_dim: Option<usize>,
    pub model: String,
    pub loss: String,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub ot_iters: usize,
    pub ot_tol: f64,
    pub tf_prob: f64,
    pub lr: f64,
    pub epochs: usize,
    pub hidden_dim: usize,
    /// p:q percentage pairs for the frame-forecasting modes.
    pub protocol: Option<String>,
    /// "renormalized" (convex frame mixtures) or "raw" attention weights.
    pub frame_scores: String,
    /// "max" or "mean" pooling of decoder-step scores for mAP.
    pub map_pooling: String,
    pub checkpoint: PathBuf,
    /// Report stem; .json / .txt / .classes.csv are appended.
    pub report: PathBuf,
    /// Training-log CSV path; defaults next to the checkpoint.
    pub train_log: Option<PathBuf>,
    pub workers: usize,
    /// Continue training from the existing checkpoint.
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 7,
            grammar: "deterministic-kitchen".into(),
            grammar_file: None,
            corpus: PathBuf::from("corpus"),
            n_train: None,
            n_test: None,
            feature_dim: None,
            model: "seqforecast".into(),
            loss: "ce".into(),
            beta: 0.001,
            gamma: 2.0,
            epsilon: 0.05,
            ot_iters: 200,
            ot_tol: 1e-6,
            tf_prob: 0.5,
            lr: 1e-3,
            epochs: 10,
            hidden_dim: 64,
            protocol: None,
            frame_scores: "renormalized".into(),
            map_pooling: "max".into(),
            checkpoint: PathBuf::from("model.ckpt"),
            report: PathBuf::from("report"),
            train_log: None,
            workers: 1,
            resume: false,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical TOML echo of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_variant(&self) -> Result<ModelVariant> {
        ModelVariant::parse(&self.model).ok_or_else(|| {
            Error::Config(format!(
                "unknown model '{}'; expected one of seqforecast, weak, supervised, mlp, lstm, random",
                self.model
            ))
        })
    }

    pub fn loss_variant(&self) -> Result<LossVariant> {
        LossVariant::parse(&self.loss).ok_or_else(|| {
            let names: Vec<&str> = LossVariant::all().iter().map(|v| v.name()).collect();
            Error::Config(format!(
                "unknown loss '{}'; expected one of {}",
                self.loss,
                names.join(", ")
            ))
        })
    }

    pub fn ot_params(&self) -> OtParams {
        OtParams {
            epsilon: self.epsilon,
            max_iters: self.ot_iters,
            tol: self.ot_tol,
            beta: self.beta,
            debiased: true,
        }
    }

    pub fn train_settings(&self) -> Result<TrainSettings> {
        Ok(TrainSettings {
            loss: self.loss_variant()?,
            ot: self.ot_params(),
            tf_prob: self.tf_prob,
            gamma: self.gamma,
            lr: self.lr,
        })
    }

    /// Parsed protocol cells, or the 20:20 default for frame modes.
    pub fn protocol_pairs(&self) -> Result<Vec<(u32, u32)>> {
        let Some(spec) = &self.protocol else {
            return Ok(vec![(20, 20)]);
        };
        let mut pairs = Vec::new();
        for cell in spec.split(',') {
            let Some((p, q)) = cell.split_once(':') else {
                return Err(Error::Config(format!(
                    "protocol cell '{cell}' is not of the form p:q"
                )));
            };
            let p: u32 = p
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad protocol percentage '{p}'")))?;
            let q: u32 = q
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad protocol percentage '{q}'")))?;
            const ALLOWED: [u32; 4] = [10, 20, 30, 50];
            if !ALLOWED.contains(&p) || !ALLOWED.contains(&q) {
                return Err(Error::Config(format!(
                    "protocol percentages must be in {{10, 20, 30, 50}}, got {p}:{q}"
                )));
            }
            if p + q > 100 {
                return Err(Error::Config(format!("protocol {p}:{q} exceeds 100%")));
            }
            pairs.push((p, q));
        }
        if pairs.is_empty() {
            return Err(Error::Config("empty protocol list".into()));
        }
        Ok(pairs)
    }

    fn train_corpus_path(&self) -> PathBuf {
        self.corpus.join("train.jsonl")
    }

    fn test_corpus_path(&self) -> PathBuf {
        self.corpus.join("test.jsonl")
    }

    fn train_log_path(&self) -> PathBuf {
        self.train_log
            .clone()
            .unwrap_or_else(|| self.checkpoint.with_extension("log.csv"))
    }

    /// Reject option combinations that silently change meaning.
    fn check_consistency(&self) -> Result<()> {
        let variant = self.model_variant()?;
        self.loss_variant()?;
        if !variant.uses_protocol() && self.protocol.is_some() {
            return Err(Error::Config(format!(
                "model '{}' runs the action-sequence protocol; the p:q protocol only \
                 applies to the weak and supervised frame-forecasting models",
                self.model
            )));
        }
        if variant.uses_protocol() {
            self.protocol_pairs()?;
        }
        match self.frame_scores.as_str() {
            "renormalized" | "raw" => {}
            other => {
                return Err(Error::Config(format!(
                    "frame_scores must be 'renormalized' or 'raw', got '{other}'"
                )))
            }
        }
        match self.map_pooling.as_str() {
            "max" | "mean" => {}
            other => {
                return Err(Error::Config(format!(
                    "map_pooling must be 'max' or 'mean', got '{other}'"
                )))
            }
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Parser)]
#[command(
    name = "seqcast",
    about = "Forecast future action sequences from observed feature sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate train/test corpora from a grammar profile.
    Generate(ConfigArgs),
    /// Train a model and write a checkpoint plus a loss log.
    Train(ConfigArgs),
    /// Evaluate a checkpoint and write report files.
    Eval(ConfigArgs),
    /// Forecast one video from a corpus id or a JSONL file.
    Forecast(ForecastArgs),
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus directory (train.jsonl / test.jsonl).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub grammar: Option<String>,
    #[arg(long)]
    pub grammar_file: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub ot_iters: Option<usize>,
    #[arg(long)]
    pub ot_tol: Option<f64>,
    #[arg(long)]
    pub tf_prob: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// p:q[,p:q...] percentages for frame-forecasting modes.
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub frame_scores: Option<String>,
    #[arg(long)]
    pub map_pooling: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub train_log: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Continue training from the checkpoint instead of reinitializing.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Video id looked up in the test corpus.
    #[arg(long)]
    pub video: Option<String>,
    /// JSONL file holding the observed video.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

impl ConfigArgs {
    /// Defaults <- config file <- flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            };
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        take!(corpus);
        if let Some(v) = &self.grammar {
            cfg.grammar = v.clone();
        }
        if self.grammar_file.is_some() {
            cfg.grammar_file = self.grammar_file.clone();
        }
        if self.n_train.is_some() {
            cfg.n_train = self.n_train;
        }
        if self.n_test.is_some() {
            cfg.n_test = self.n_test;
        }
        if self.feature_dim.is_some() {
            cfg.feature_dim = self.feature_dim;
        }
        if let Some(v) = &self.model {
            cfg.model = v.clone();
        }
        if let Some(v) = &self.loss {
            cfg.loss = v.clone();
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.ot_iters {
            cfg.ot_iters = v;
        }
        if let Some(v) = self.ot_tol {
            cfg.ot_tol = v;
        }
        if let Some(v) = self.tf_prob {
            cfg.tf_prob = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.hidden_dim {
            cfg.hidden_dim = v;
        }
        if self.protocol.is_some() {
            cfg.protocol = self.protocol.clone();
        }
        if let Some(v) = &self.frame_scores {
            cfg.frame_scores = v.clone();
        }
        if let Some(v) = &self.map_pooling {
            cfg.map_pooling = v.clone();
        }
        take!(checkpoint);
        take!(report);
        if self.train_log.is_some() {
            cfg.train_log = self.train_log.clone();
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if self.resume {
            cfg.resume = true;
        }
        Ok(cfg)
    }
}

fn load_grammar(cfg: &RunConfig) -> Result<ActivityGrammar> {
    let mut profile = match &cfg.grammar_file {
        Some(path) => return data::load_grammar_file(path),
        None => builtin_profile(&cfg.grammar).ok_or_else(|| {
            Error::Config(format!(
                "unknown grammar profile '{}'; available: {}",
                cfg.grammar,
                available_profiles().join(", ")
            ))
        })?,
    };
    if let Some(d) = cfg.feature_dim {
        profile.feature_dim = d;
    }
    ActivityGrammar::new(profile)
}

/// Generate both corpus splits from the configured grammar and seed.
pub fn cmd_generate(cfg: &RunConfig) -> Result<(usize, usize)> {
    let grammar = load_grammar(cfg)?;
    let n_train = cfg.n_train.unwrap_or(grammar.profile.n_train);
    let n_test = cfg.n_test.unwrap_or(grammar.profile.n_test);
    fs::create_dir_all(&cfg.corpus)?;
    let train = grammar.generate_corpus(n_train, cfg.seed, Split::Train);
    let test = grammar.generate_corpus(n_test, cfg.seed, Split::Test);
    save_jsonl(&train, &cfg.train_corpus_path())?;
    save_jsonl(&test, &cfg.test_corpus_path())?;
    Ok((train.len(), test.len()))
}

fn build_vocab(records: &[VideoRecord]) -> Result<ActionVocabulary> {
    let mut labels = BTreeSet::new();
    for r in records {
        for a in &r.actions {
            labels.insert(a.label.as_str());
        }
    }
    ActionVocabulary::from_labels(labels)
}

/// Training examples for a variant. Frame modes emit one example per
/// (video, protocol cell); sequence modes one per augmentation split.
fn build_examples(
    records: &[VideoRecord],
    vocab: &ActionVocabulary,
    variant: ModelVariant,
    pairs: &[(u32, u32)],
) -> Result<(Vec<TrainExample>, usize)> {
    let mut examples = Vec::new();
    let mut skipped = 0usize;
    if variant.uses_protocol() {
        for record in records {
            for &(p, q) in pairs {
                match data::split_protocol(record, p, q)? {
                    None => skipped += 1,
                    Some(ex) => {
                        if ex.observed_coarse.is_empty() || ex.future_coarse.is_empty() {
                            skipped += 1;
                            continue;
                        }
                        examples.push(TrainExample {
                            observed_actions: vocab.indices(&ex.observed_coarse)?,
                            future_actions: vocab.indices(&ex.future_coarse)?,
                            observed_frame_labels: Some(
                                vocab.indices(&ex.observed_frame_labels)?,
                            ),
                            future_frame_labels: Some(vocab.indices(&ex.target_frame_labels)?),
                            observed: ex.observed,
                            z: ex.z,
                        });
                    }
                }
            }
        }
    } else {
        for record in records {
            let mut split = augment_sequences(record, vocab)?;
            if split.is_empty() {
                skipped += 1;
            }
            examples.append(&mut split);
        }
    }
    if examples.is_empty() {
        return Err(Error::Validation(
            "no usable training examples in the corpus".into(),
        ));
    }
    Ok((examples, skipped))
}

fn max_future_len(examples: &[TrainExample]) -> usize {
    examples
        .iter()
        .map(|e| e.future_actions.len())
        .max()
        .unwrap_or(1)
}

pub struct TrainOutcome {
    pub epoch_losses: Vec<f64>,
    pub ot_warnings: usize,
    pub checkpoint: Checkpoint,
}

/// Train the configured variant and write checkpoint plus loss log.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.check_consistency()?;
    let variant = cfg.model_variant()?;
    let settings = cfg.train_settings()?;
    let records = load_jsonl(&cfg.train_corpus_path())?;
    let vocab = build_vocab(&records)?;
    let feature_dim = records
        .first()
        .map(VideoRecord::feature_dim)
        .ok_or_else(|| Error::Validation("empty training corpus".into()))?;
    let pairs = cfg.protocol_pairs()?;
    let (examples, _skipped) = build_examples(&records, &vocab, variant, &pairs)?;
    let max_decode_len = (2 * max_future_len(&examples)).max(2);

    let (model, mut opt, start_epoch) = if cfg.resume {
        let ckpt = load_checkpoint(&cfg.checkpoint)?;
        let model = ModelKind::from_checkpoint(&ckpt)?;
        if model.variant() != variant {
            return Err(Error::Config(format!(
                "resume: checkpoint holds a '{}' model but the config says '{}'",
                ckpt.header.model, cfg.model
            )));
        }
        let mut opt = Adam::new(settings.lr, &model.params());
        ckpt.load_optimizer(&model.named_params(), &mut opt)?;
        (model, opt, ckpt.header.epoch)
    } else {
        let mut rng = init_stream(cfg.seed);
        let model = ModelKind::initialize(
            variant,
            &mut rng,
            vocab.clone(),
            feature_dim,
            cfg.hidden_dim,
            max_decode_len,
        )?;
        let opt = Adam::new(settings.lr, &model.params());
        (model, opt, 0)
    };

    let mut log = String::from("epoch,mean_loss\n");
    let mut epoch_losses = Vec::new();
    let mut ot_warnings = 0usize;
    for epoch in start_epoch..cfg.epochs.max(start_epoch) {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut order_stream(cfg.seed, epoch));
        let mut forcing = forcing_stream(cfg.seed, epoch);
        let mut total = 0.0;
        for &idx in &order {
            let ex = &examples[idx];
            let out = match &model {
                ModelKind::Seq(m) => m.train_step(ex, &settings, &mut opt, &mut forcing)?,
                ModelKind::Weak(m) => m.train_step(ex, &settings, &mut opt, &mut forcing)?,
                ModelKind::Mlp(m) => m.train_step(ex, &mut opt)?,
                ModelKind::Lstm(m) => m.train_step(ex, &mut opt)?,
                ModelKind::Random(_) => crate::models::TrainStepOutcome {
                    loss: 0.0,
                    ot_warning: false,
                },
            };
            total += out.loss;
            ot_warnings += out.ot_warning as usize;
        }
        let mean = total / examples.len() as f64;
        log.push_str(&format!("{},{}\n", epoch, mean));
        epoch_losses.push(mean);
    }

    let final_epoch = cfg.epochs.max(start_epoch);
    let ckpt = build_checkpoint(
        variant.name(),
        feature_dim,
        cfg.hidden_dim,
        vocab.classes().to_vec(),
        max_decode_len,
        final_epoch,
        &model.named_params(),
        Some(&opt),
    );
    if let Some(dir) = cfg.checkpoint.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    save_checkpoint(&ckpt, &cfg.checkpoint)?;
    fs::write(cfg.train_log_path(), log)?;
    Ok(TrainOutcome {
        epoch_losses,
        ot_warnings,
        checkpoint: ckpt,
    })
}

/// Evaluation work items are plain data so worker threads can own them.
enum EvalTask {
    Sequence {
        observed: Vec<Vec<f64>>,
        reference: Vec<String>,
    },
    NextAction {
        observed: Vec<Vec<f64>>,
        target: String,
    },
    Frames {
        cell: (u32, u32),
        video_id: String,
        observed: Vec<Vec<f64>>,
        truth: Vec<String>,
        z: usize,
    },
}

enum EvalResult {
    Sequence {
        candidate: Vec<String>,
        reference: Vec<String>,
        class_scores: Vec<f64>,
    },
    NextAction {
        correct: bool,
        scores: Vec<f64>,
        target_class: usize,
    },
    Frames {
        cell: (u32, u32),
        video_id: String,
        predicted: Vec<String>,
        truth: Vec<String>,
        flagged: bool,
    },
}

fn pool_scores(rows: &[Vec<f64>], n_classes: usize, pooling: &str) -> Vec<f64> {
    let mut out = vec![0.0; n_classes];
    if rows.is_empty() {
        return out;
    }
    match pooling {
        "mean" => {
            for row in rows {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o /= rows.len() as f64;
            }
        }
        _ => {
            for o in out.iter_mut() {
                *o = f64::NEG_INFINITY;
            }
            for row in rows {
                for (o, v) in out.iter_mut().zip(row) {
                    *o = o.max(*v);
                }
            }
        }
    }
    out
}

fn eval_task(model: &ModelKind, task: &EvalTask, cfg: &RunConfig) -> Result<EvalResult> {
    match (model, task) {
        (ModelKind::Seq(m), EvalTask::Sequence { observed, reference }) => {
            let fc = m.forecast(observed)?;
            let candidate = m.vocab.names(&fc.symbols)?;
            let class_rows: Vec<Vec<f64>> = fc
                .step_probs
                .iter()
                .map(|p| p[..m.vocab.n_classes()].to_vec())
                .collect();
            Ok(EvalResult::Sequence {
                candidate,
                reference: reference.clone(),
                class_scores: pool_scores(&class_rows, m.vocab.n_classes(), &cfg.map_pooling),
            })
        }
        (ModelKind::Mlp(m), EvalTask::NextAction { observed, target }) => {
            let (pred, scores) = m.predict(observed)?;
            let target_class = m.vocab.index_of(target)?;
            Ok(EvalResult::NextAction {
                correct: pred == target_class,
                scores,
                target_class,
            })
        }
        (ModelKind::Lstm(m), EvalTask::NextAction { observed, target }) => {
            let (pred, scores) = m.predict(observed)?;
            let target_class = m.vocab.index_of(target)?;
            Ok(EvalResult::NextAction {
                correct: pred == target_class,
                scores,
                target_class,
            })
        }
        (
            ModelKind::Weak(m),
            EvalTask::Frames {
                cell,
                video_id,
                observed,
                truth,
                z,
            },
        ) => {
            let fc = if m.supervised {
                m.forecast_frames_supervised(observed, *z)?
            } else {
                m.forecast_frames_weak(observed, *z)?
            };
            Ok(EvalResult::Frames {
                cell: *cell,
                video_id: video_id.clone(),
                predicted: m.vocab.names(&fc.frame_labels)?,
                truth: truth.clone(),
                flagged: fc.flagged,
            })
        }
        _ => Err(Error::Contract(
            "evaluation task does not match the loaded model".into(),
        )),
    }
}

/// Evaluate a checkpoint on the test corpus and write report files.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.check_consistency()?;
    let ckpt = load_checkpoint(&cfg.checkpoint)?;
    let model = ModelKind::from_checkpoint(&ckpt)?;
    let variant = model.variant();
    let declared = cfg.model_variant()?;
    if declared != variant {
        return Err(Error::Config(format!(
            "config model '{}' does not match checkpoint model '{}'",
            cfg.model,
            variant.name()
        )));
    }
    let records = load_jsonl(&cfg.test_corpus_path())?;
    let vocab = model.vocab().clone();
    let pairs = cfg.protocol_pairs()?;

    let mut tasks = Vec::new();
    let mut skipped = 0usize;
    match variant {
        ModelVariant::SeqForecast | ModelVariant::Random => {
            for record in &records {
                let splits = augment_sequences(record, &vocab)?;
                if splits.is_empty() {
                    skipped += 1;
                }
                for ex in splits {
                    tasks.push(EvalTask::Sequence {
                        reference: vocab.names(&ex.future_actions)?,
                        observed: ex.observed,
                    });
                }
            }
        }
        ModelVariant::Mlp | ModelVariant::Lstm => {
            for record in &records {
                let splits = augment_sequences(record, &vocab)?;
                if splits.is_empty() {
                    skipped += 1;
                }
                for ex in splits {
                    tasks.push(EvalTask::NextAction {
                        target: vocab.name(ex.future_actions[0])?.to_string(),
                        observed: ex.observed,
                    });
                }
            }
        }
        ModelVariant::Weak | ModelVariant::Supervised => {
            for record in &records {
                for &(p, q) in &pairs {
                    match data::split_protocol(record, p, q)? {
                        None => skipped += 1,
                        Some(ex) => tasks.push(EvalTask::Frames {
                            cell: (p, q),
                            video_id: record.id.clone(),
                            observed: ex.observed,
                            truth: ex.target_frame_labels,
                            z: ex.z,
                        }),
                    }
                }
            }
        }
    }
    if tasks.is_empty() {
        return Err(Error::Validation("no evaluable examples in corpus".into()));
    }

    let results: Vec<EvalResult> = if let ModelKind::Random(m) = &model {
        // The random baseline consumes one sequential stream; its eval is
        // cheap and stays serial regardless of the worker count.
        let mut rng = baseline_stream(cfg.seed);
        let mut out = Vec::with_capacity(tasks.len());
        for task in &tasks {
            let EvalTask::Sequence { reference, .. } = task else {
                return Err(Error::Contract("random baseline expects sequence tasks".into()));
            };
            let (symbols, scores) = m.forecast(&mut rng);
            out.push(EvalResult::Sequence {
                candidate: m.vocab.names(&symbols)?,
                reference: reference.clone(),
                class_scores: pool_scores(&scores, m.vocab.n_classes(), &cfg.map_pooling),
            });
        }
        out
    } else if cfg.workers <= 1 {
        let mut out = Vec::with_capacity(tasks.len());
        for task in &tasks {
            out.push(eval_task(&model, task, cfg)?);
        }
        out
    } else {
        run_parallel(&ckpt, &tasks, cfg)?
    };

    let mut report = EvalReport::new(variant.name(), &protocol_label(cfg, variant), cfg.to_toml());
    report.skipped = skipped;
    report.evaluated = results.len();
    match variant {
        ModelVariant::SeqForecast | ModelVariant::Random => {
            let mut candidates = Vec::new();
            let mut references = Vec::new();
            let mut videos = Vec::new();
            let mut acc_sum = 0.0;
            for r in &results {
                let EvalResult::Sequence {
                    candidate,
                    reference,
                    class_scores,
                } = r
                else {
                    unreachable!()
                };
                acc_sum += seq_item_accuracy(candidate, reference)?;
                let mut positives = vec![false; vocab.n_classes()];
                for label in reference {
                    positives[vocab.index_of(label)?] = true;
                }
                videos.push(VideoClassScores {
                    scores: class_scores.clone(),
                    positives,
                });
                candidates.push(candidate.clone());
                references.push(reference.clone());
            }
            report
                .metrics
                .insert("bleu1".into(), bleu(&candidates, &references, 1)?);
            report
                .metrics
                .insert("bleu2".into(), bleu(&candidates, &references, 2)?);
            report.metrics.insert(
                "seq_item_accuracy".into(),
                acc_sum / results.len() as f64,
            );
            let ap = mean_ap(&videos)?;
            report.metrics.insert("map".into(), ap.mean);
            report.ap = Some(ap);
        }
        ModelVariant::Mlp | ModelVariant::Lstm => {
            let mut correct = 0usize;
            let mut videos = Vec::new();
            for r in &results {
                let EvalResult::NextAction {
                    correct: c,
                    scores,
                    target_class,
                } = r
                else {
                    unreachable!()
                };
                correct += *c as usize;
                let mut positives = vec![false; vocab.n_classes()];
                positives[*target_class] = true;
                videos.push(VideoClassScores {
                    scores: scores.clone(),
                    positives,
                });
            }
            report.metrics.insert(
                "next_action_accuracy".into(),
                correct as f64 / results.len() as f64,
            );
            let ap = mean_ap(&videos)?;
            report.metrics.insert("map".into(), ap.mean);
            report.ap = Some(ap);
        }
        ModelVariant::Weak | ModelVariant::Supervised => {
            for &(p, q) in &pairs {
                let cell_results: Vec<(Vec<String>, Vec<String>)> = results
                    .iter()
                    .filter_map(|r| match r {
                        EvalResult::Frames {
                            cell,
                            predicted,
                            truth,
                            ..
                        } if *cell == (p, q) => Some((predicted.clone(), truth.clone())),
                        _ => None,
                    })
                    .collect();
                if cell_results.is_empty() {
                    continue;
                }
                let acc = mean_per_class_frame_accuracy(&cell_results)?;
                report
                    .metrics
                    .insert(format!("frame_accuracy_{p}_{q}"), acc.mean);
                report.frame_accuracy.insert(format!("{p}:{q}"), acc);
            }
            for r in &results {
                if let EvalResult::Frames {
                    flagged: true,
                    video_id,
                    ..
                } = r
                {
                    report.flagged_videos.push(video_id.clone());
                }
            }
        }
    }
    write_report(cfg, &report)?;
    Ok(report)
}

fn protocol_label(cfg: &RunConfig, variant: ModelVariant) -> String {
    if variant.uses_protocol() {
        cfg.protocol.clone().unwrap_or_else(|| "20:20".into())
    } else {
        "sequence-forecast".into()
    }
}

fn run_parallel(ckpt: &Checkpoint, tasks: &[EvalTask], cfg: &RunConfig) -> Result<Vec<EvalResult>> {
    let workers = cfg.workers.min(tasks.len()).max(1);
    let chunk = tasks.len().div_ceil(workers);
    let mut slots: Vec<Option<Result<Vec<EvalResult>>>> = Vec::new();
    slots.resize_with(workers, || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, slot) in slots.iter_mut().enumerate() {
            let start = w * chunk;
            let end = ((w + 1) * chunk).min(tasks.len());
            if start >= end {
                *slot = Some(Ok(Vec::new()));
                continue;
            }
            let tasks = &tasks[start..end];
            handles.push(scope.spawn(move || {
                let model = match ModelKind::from_checkpoint(ckpt) {
                    Ok(m) => m,
                    Err(e) => {
                        *slot = Some(Err(e));
                        return;
                    }
                };
                let mut out = Vec::with_capacity(tasks.len());
                for task in tasks {
                    match eval_task(&model, task, cfg) {
                        Ok(r) => out.push(r),
                        Err(e) => {
                            *slot = Some(Err(e));
                            return;
                        }
                    }
                }
                *slot = Some(Ok(out));
            }));
        }
        for h in handles {
            h.join().expect("eval worker panicked");
        }
    });
    let mut results = Vec::with_capacity(tasks.len());
    for slot in slots {
        results.extend(slot.expect("worker wrote its slot")?);
    }
    Ok(results)
}

fn write_report(cfg: &RunConfig, report: &EvalReport) -> Result<()> {
    if let Some(dir) = cfg.report.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(cfg.report.with_extension("json"), json)?;
    fs::write(cfg.report.with_extension("txt"), report.to_flat_text())?;
    fs::write(
        cfg.report.with_extension("classes.csv"),
        report.to_class_csv(),
    )?;
    Ok(())
}

/// Forecast one video; returns the printable output.
pub fn cmd_forecast(cfg: &RunConfig, video: Option<&str>, input: Option<&Path>) -> Result<String> {
    cfg.check_consistency()?;
    let ckpt = load_checkpoint(&cfg.checkpoint)?;
    let model = ModelKind::from_checkpoint(&ckpt)?;
    let record = match (video, input) {
        (Some(id), None) => {
            let records = load_jsonl(&cfg.test_corpus_path())?;
            records
                .into_iter()
                .find(|r| r.id == id)
                .ok_or_else(|| Error::Lookup(format!("video id '{id}' not in test corpus")))?
        }
        (None, Some(path)) => {
            let records = load_jsonl(path)?;
            records
                .into_iter()
                .next()
                .ok_or_else(|| Error::Validation(format!("{}: empty input", path.display())))?
        }
        _ => {
            return Err(Error::Config(
                "forecast needs exactly one of --video or --input".into(),
            ))
        }
    };
    match &model {
        ModelKind::Seq(m) => {
            let fc = m.forecast(&record.features)?;
            let names = m.vocab.names(&fc.symbols)?;
            Ok(format!("forecast: {}\n", names.join(" ")))
        }
        ModelKind::Weak(m) => {
            let (p, q) = cfg.protocol_pairs()?[0];
            let ex = data::split_protocol(&record, p, q)?.ok_or_else(|| {
                Error::Validation(format!(
                    "video {} is too short for protocol {p}:{q}",
                    record.id
                ))
            })?;
            let fc = if m.supervised {
                m.forecast_frames_supervised(&ex.observed, ex.z)?
            } else {
                m.forecast_frames_weak(&ex.observed, ex.z)?
            };
            let mut out = String::new();
            let seq = m.vocab.names(&fc.future_symbols)?;
            out.push_str(&format!("sequence: {}\n", seq.join(" ")));
            for (t, (&label, scores)) in fc.frame_labels.iter().zip(&fc.frame_scores).enumerate() {
                out.push_str(&format!(
                    "frame {t}: {} ({:.6})\n",
                    m.vocab.name(label)?,
                    scores[label]
                ));
            }
            if fc.flagged {
                out.push_str("warning: future decode was empty; EOS-step scores used\n");
            }
            Ok(out)
        }
        ModelKind::Mlp(m) => {
            let (pred, _) = m.predict(&record.features)?;
            Ok(format!("next action: {}\n", m.vocab.name(pred)?))
        }
        ModelKind::Lstm(m) => {
            let (pred, _) = m.predict(&record.features)?;
            Ok(format!("next action: {}\n", m.vocab.name(pred)?))
        }
        ModelKind::Random(m) => {
            let mut rng = baseline_stream(cfg.seed);
            let (symbols, _) = m.forecast(&mut rng);
            let names = m.vocab.names(&symbols)?;
            Ok(format!("forecast: {}\n", names.join(" ")))
        }
    }
}

/// Dispatch a parsed command; returns printable output for stdout.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve()?;
            let (n_train, n_test) = cmd_generate(&cfg)?;
            Ok(format!(
                "wrote {} train and {} test videos under {}\n",
                n_train,
                n_test,
                cfg.corpus.display()
            ))
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = cmd_train(&cfg)?;
            let last = out
                .epoch_losses
                .last()
                .map(|l| format!("{l:.6}"))
                .unwrap_or_else(|| "n/a".into());
            Ok(format!(
                "trained {} epochs (final mean loss {last}); checkpoint at {}\n",
                out.epoch_losses.len(),
                cfg.checkpoint.display()
            ))
        }
        Command::Eval(args) => {
            let cfg = args.resolve()?;
            let report = cmd_eval(&cfg)?;
            Ok(report.to_flat_text())
        }
        Command::Forecast(args) => {
            let cfg = args.config.resolve()?;
            cmd_forecast(&cfg, args.video.as_deref(), args.input.as_deref())
        }
    }
}

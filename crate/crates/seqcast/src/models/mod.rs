//! Forecasting models: the action-sequence forecaster, the weakly
//! supervised and fully supervised frame forecasters, and the MLP / LSTM /
//! random baselines, plus sequence augmentation and checkpointing.

mod baselines;
mod checkpoint;
mod forecaster;
mod weak;

pub use baselines::{LstmBaseline, MlpBaseline, RandomBaseline};
pub use checkpoint::{
    build_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, NamedArray,
};
pub use forecaster::{Forecast, SeqForecaster};
pub use weak::{WeakForecast, WeakForecaster};

use rand_chacha::ChaCha8Rng;

use crate::data::VideoRecord;
use crate::losses::{LossVariant, OtParams};
use crate::nn::{Attention, GruCell, Linear};
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};

/// Output of one attention-decoder step.
pub struct AttnStep {
    pub state: Tensor,
    pub scores: Tensor,
    pub context: Tensor,
    pub weights: Tensor,
}

/// Action names plus the reserved start / end symbols. Real classes get
/// dense indices 0..n; SOS and EOS follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionVocabulary {
    classes: Vec<String>,
}

impl ActionVocabulary {
    /// Dedupe and sort labels for stable indexing.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<ActionVocabulary> {
        let mut classes: Vec<String> = labels.into_iter().map(str::to_string).collect();
        classes.sort();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::Contract("vocabulary needs at least one action".into()));
        }
        Ok(ActionVocabulary { classes })
    }

    pub fn from_classes(classes: Vec<String>) -> Result<ActionVocabulary> {
        if classes.is_empty() {
            return Err(Error::Contract("vocabulary needs at least one action".into()));
        }
        Ok(ActionVocabulary { classes })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn sos(&self) -> usize {
        self.classes.len()
    }

    pub fn eos(&self) -> usize {
        self.classes.len() + 1
    }

    /// Score-vector width: real classes plus SOS and EOS.
    pub fn total(&self) -> usize {
        self.classes.len() + 2
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::Lookup(format!("unknown action label '{label}'")))
    }

    pub fn name(&self, index: usize) -> Result<&str> {
        self.classes
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| Error::Lookup(format!("class index {index} has no name")))
    }

    pub fn names(&self, indices: &[usize]) -> Result<Vec<String>> {
        indices
            .iter()
            .map(|&i| self.name(i).map(str::to_string))
            .collect()
    }

    pub fn indices(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.index_of(l)).collect()
    }

    pub fn onehot(&self, index: usize) -> Tensor {
        let mut v = vec![0.0; self.total()];
        v[index] = 1.0;
        Tensor::row(v)
    }
}

/// One training example: observed frames, coarse observed / future action
/// sequences, and (only where the mode uses them) per-frame labels.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub observed: Vec<Vec<f64>>,
    pub observed_actions: Vec<usize>,
    pub future_actions: Vec<usize>,
    pub observed_frame_labels: Option<Vec<usize>>,
    pub future_frame_labels: Option<Vec<usize>>,
    /// Future frame count for the frame-forecasting modes.
    pub z: usize,
}

/// Split one labeled video into M-1 examples, cutting after each action
/// boundary: split t observes actions 1..t and predicts t+1..M.
pub fn augment_sequences(
    video: &VideoRecord,
    vocab: &ActionVocabulary,
) -> Result<Vec<TrainExample>> {
    let labels = video.coarse_sequence();
    let indices = vocab.indices(&labels)?;
    let m = indices.len();
    if m < 2 {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(m - 1);
    for t in 1..m {
        let cut = video.actions[t - 1].end;
        out.push(TrainExample {
            observed: video.features[..cut].to_vec(),
            observed_actions: indices[..t].to_vec(),
            future_actions: indices[t..].to_vec(),
            observed_frame_labels: None,
            future_frame_labels: None,
            z: 0,
        });
    }
    Ok(out)
}

/// Hyperparameters shared by the training loops.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub loss: LossVariant,
    pub ot: OtParams,
    pub tf_prob: f64,
    pub gamma: f64,
    pub lr: f64,
}

impl Default for TrainSettings {
    fn default() -> TrainSettings {
        TrainSettings {
            loss: LossVariant::CrossEntropy,
            ot: OtParams::default(),
            tf_prob: 0.5,
            gamma: 2.0,
            lr: 1e-3,
        }
    }
}

pub struct TrainStepOutcome {
    pub loss: f64,
    pub ot_warning: bool,
}

/// Feature rows as 1 x d tensors.
pub(crate) fn frame_tensors(frames: &[Vec<f64>]) -> Vec<Tensor> {
    frames.iter().map(|f| Tensor::row(f.clone())).collect()
}

/// Argmax with ties broken by the lowest index; `skip` masks an index out.
pub(crate) fn argmax_skipping(values: &[f64], skip: Option<usize>) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

/// One decoder step output captured during an unroll.
pub(crate) struct StepRecord {
    pub scores: Tensor,
    pub weights: Tensor,
    /// The feedback vector that produced this step (instrumentation).
    pub feedback: Tensor,
}

/// Teacher-forced unroll for training: step q consumes the previous
/// context and either the one-hot ground truth (probability `tf_prob`) or
/// the softmax of the model's own previous scores.
pub(crate) fn unroll_teacher(
    g: &Graph,
    dec: &AttnDecoder,
    states: &Tensor,
    init_state: &Tensor,
    targets: &[usize],
    vocab: &ActionVocabulary,
    tf_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StepRecord>> {
    use rand::Rng;
    let mut state = init_state.clone();
    let mut context = Tensor::zeros(&[1, dec.hidden_dim()]);
    let mut feedback = vocab.onehot(vocab.sos());
    let mut steps = Vec::with_capacity(targets.len());
    for (q, &target) in targets.iter().enumerate() {
        let out = dec.step(g, states, &state, &context, &feedback)?;
        state = out.state;
        context = out.context;
        let next_feedback = if q + 1 < targets.len() {
            if rng.gen::<f64>() < tf_prob {
                vocab.onehot(target)
            } else {
                let v = out.scores.numel();
                g.reshape(&g.softmax(&out.scores)?, &[1, v])?
            }
        } else {
            feedback.clone() // unused; placeholder keeps the record aligned
        };
        steps.push(StepRecord {
            scores: out.scores,
            weights: out.weights,
            feedback: feedback.clone(),
        });
        feedback = next_feedback;
    }
    Ok(steps)
}

pub(crate) struct GreedyDecode {
    /// Real symbols emitted before EOS (or the length cap).
    pub symbols: Vec<usize>,
    /// Scores per executed step, including the EOS step when one ran.
    pub step_scores: Vec<Vec<f64>>,
    /// Attention weights per executed step.
    pub step_weights: Vec<Vec<f64>>,
    pub hit_eos: bool,
}

/// Greedy decoding from SOS until EOS or the length cap. SOS is never a
/// legal output symbol, so the argmax runs over classes plus EOS.
pub(crate) fn greedy_decode(
    g: &Graph,
    dec: &AttnDecoder,
    states: &Tensor,
    init_state: &Tensor,
    vocab: &ActionVocabulary,
    max_len: usize,
) -> Result<GreedyDecode> {
    let mut state = init_state.clone();
    let mut context = Tensor::zeros(&[1, dec.hidden_dim()]);
    let mut feedback = vocab.onehot(vocab.sos());
    let mut out = GreedyDecode {
        symbols: Vec::new(),
        step_scores: Vec::new(),
        step_weights: Vec::new(),
        hit_eos: false,
    };
    for _ in 0..max_len {
        let step = dec.step(g, states, &state, &context, &feedback)?;
        state = step.state;
        context = step.context;
        let scores = step.scores.values();
        out.step_scores.push(scores.clone());
        out.step_weights.push(step.weights.values());
        let symbol = argmax_skipping(&scores, Some(vocab.sos()));
        if symbol == vocab.eos() {
            out.hit_eos = true;
            break;
        }
        out.symbols.push(symbol);
        let v = step.scores.numel();
        feedback = g.reshape(&g.softmax(&step.scores)?, &[1, v])?;
    }
    Ok(out)
}

/// The model families the CLI can train and evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    SeqForecast,
    Weak,
    Supervised,
    Mlp,
    Lstm,
    Random,
}

impl ModelVariant {
    pub fn parse(s: &str) -> Option<ModelVariant> {
        Some(match s {
            "seqforecast" => ModelVariant::SeqForecast,
            "weak" => ModelVariant::Weak,
            "supervised" => ModelVariant::Supervised,
            "mlp" => ModelVariant::Mlp,
            "lstm" => ModelVariant::Lstm,
            "random" => ModelVariant::Random,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::SeqForecast => "seqforecast",
            ModelVariant::Weak => "weak",
            ModelVariant::Supervised => "supervised",
            ModelVariant::Mlp => "mlp",
            ModelVariant::Lstm => "lstm",
            ModelVariant::Random => "random",
        }
    }

    /// Frame-forecasting modes consume the p/q protocol.
    pub fn uses_protocol(&self) -> bool {
        matches!(self, ModelVariant::Weak | ModelVariant::Supervised)
    }
}

/// A loaded model of any variant.
pub enum ModelKind {
    Seq(SeqForecaster),
    Weak(WeakForecaster),
    Mlp(MlpBaseline),
    Lstm(LstmBaseline),
    Random(RandomBaseline),
}

impl ModelKind {
    pub fn variant(&self) -> ModelVariant {
        match self {
            ModelKind::Seq(_) => ModelVariant::SeqForecast,
            ModelKind::Weak(w) if w.supervised => ModelVariant::Supervised,
            ModelKind::Weak(_) => ModelVariant::Weak,
            ModelKind::Mlp(_) => ModelVariant::Mlp,
            ModelKind::Lstm(_) => ModelVariant::Lstm,
            ModelKind::Random(_) => ModelVariant::Random,
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        match self {
            ModelKind::Seq(m) => m.named_params(),
            ModelKind::Weak(m) => m.named_params(),
            ModelKind::Mlp(m) => m.named_params(),
            ModelKind::Lstm(m) => m.named_params(),
            ModelKind::Random(_) => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn vocab(&self) -> &ActionVocabulary {
        match self {
            ModelKind::Seq(m) => &m.vocab,
            ModelKind::Weak(m) => &m.vocab,
            ModelKind::Mlp(m) => &m.vocab,
            ModelKind::Lstm(m) => &m.vocab,
            ModelKind::Random(m) => &m.vocab,
        }
    }

    /// Build a fresh model of `variant` with seeded initialization.
    pub fn initialize(
        variant: ModelVariant,
        rng: &mut ChaCha8Rng,
        vocab: ActionVocabulary,
        feature_dim: usize,
        hidden_dim: usize,
        max_decode_len: usize,
    ) -> Result<ModelKind> {
        Ok(match variant {
            ModelVariant::SeqForecast => ModelKind::Seq(SeqForecaster::new(
                rng,
                vocab,
                feature_dim,
                hidden_dim,
                max_decode_len,
            )),
            ModelVariant::Weak => ModelKind::Weak(WeakForecaster::new(
                rng,
                vocab,
                feature_dim,
                hidden_dim,
                max_decode_len,
                false,
            )?),
            ModelVariant::Supervised => ModelKind::Weak(WeakForecaster::new(
                rng,
                vocab,
                feature_dim,
                hidden_dim,
                max_decode_len,
                true,
            )?),
            ModelVariant::Mlp => {
                ModelKind::Mlp(MlpBaseline::new(rng, vocab, feature_dim, hidden_dim))
            }
            ModelVariant::Lstm => {
                ModelKind::Lstm(LstmBaseline::new(rng, vocab, feature_dim, hidden_dim))
            }
            ModelVariant::Random => ModelKind::Random(RandomBaseline::new(vocab, max_decode_len)),
        })
    }

    /// Rebuild a model from a checkpoint, overwriting every parameter.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<ModelKind> {
        let variant = ModelVariant::parse(&ckpt.header.model).ok_or_else(|| {
            Error::Validation(format!("checkpoint has unknown model '{}'", ckpt.header.model))
        })?;
        let vocab = ActionVocabulary::from_classes(ckpt.header.classes.clone())?;
        let mut rng = crate::rng::init_stream(0);
        let model = ModelKind::initialize(
            variant,
            &mut rng,
            vocab,
            ckpt.header.feature_dim,
            ckpt.header.hidden_dim,
            ckpt.header.max_decode_len,
        )?;
        ckpt.load_params(&model.named_params())?;
        Ok(model)
    }
}

/// Decoder block shared by every attention-decoding model: GRU cell over
/// [context; feedback], output projection, and attention over a state
/// matrix.
pub struct AttnDecoder {
    pub cell: GruCell,
    pub attention: Attention,
    pub out_proj: Linear,
}

impl AttnDecoder {
    pub fn new(rng: &mut ChaCha8Rng, hidden_dim: usize, vocab_total: usize) -> AttnDecoder {
        AttnDecoder {
            cell: GruCell::new(rng, hidden_dim + vocab_total, hidden_dim),
            attention: Attention::new(rng, hidden_dim),
            out_proj: Linear::new(rng, hidden_dim, vocab_total, true),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.cell.hidden_dim
    }

    pub fn step(
        &self,
        g: &Graph,
        states: &Tensor,
        state: &Tensor,
        context: &Tensor,
        feedback: &Tensor,
    ) -> crate::tensor::Result<AttnStep> {
        let input = g.concat(context, feedback, 1)?;
        let new_state = self.cell.step(g, &input, state)?;
        let scores = self.out_proj.forward(g, &new_state)?;
        let (new_context, weights) = self.attention.attend(g, states, &new_state)?;
        Ok(AttnStep {
            state: new_state,
            scores,
            context: new_context,
            weights,
        })
    }

    pub(crate) fn collect_params(&self, name: &str, out: &mut Vec<(String, Tensor)>) {
        self.cell.collect_params(&format!("{name}.cell"), out);
        self.attention
            .collect_params(&format!("{name}.attention"), out);
        self.out_proj.collect_params(&format!("{name}.out"), out);
    }
}

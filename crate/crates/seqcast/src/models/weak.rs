//! Weakly supervised frame forecasting: one encoder and three decoders.
//! An attention decoder reads the observed states into the observed action
//! sequence, a plain self-feeding GRU unrolls future "sudo states" from
//! the last observed state, and a second attention decoder reads those
//! sudo states into the future action sequence. Frame labels come from the
//! future decoder's attention weights. The fully supervised variant uses
//! the same architecture with per-frame targets and no EOS.

use rand_chacha::ChaCha8Rng;

use crate::losses::{combined_loss, weak_joint_loss, SequenceLossInput, UncertaintyParams};
use crate::nn::{Adam, BiEncoder, GruCell, Linear};
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};

use super::{
    argmax_skipping, frame_tensors, greedy_decode, unroll_teacher, ActionVocabulary, AttnDecoder,
    TrainExample, TrainSettings, TrainStepOutcome,
};

pub struct WeakForecaster {
    pub vocab: ActionVocabulary,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub encoder: BiEncoder,
    pub dec_obs: AttnDecoder,
    pub state_cell: GruCell,
    pub state_proj: Linear,
    pub dec_future: AttnDecoder,
    pub max_decode_len: usize,
    /// Trained on per-frame targets without EOS.
    pub supervised: bool,
    /// Renormalize per-frame attention over decoder steps so frame scores
    /// are convex combinations; the raw form follows Eq.-style weighting.
    pub renormalize_frame_scores: bool,
}

pub struct WeakForecast {
    pub future_symbols: Vec<usize>,
    pub frame_labels: Vec<usize>,
    pub frame_scores: Vec<Vec<f64>>,
    /// Score vectors of the decoder steps that entered the frame mixtures.
    pub mixed_step_scores: Vec<Vec<f64>>,
    /// Set when the future decode emitted EOS before any symbol; the
    /// EOS-step scores label every frame in that case.
    pub flagged: bool,
}

impl WeakForecaster {
    pub fn new(
        rng: &mut ChaCha8Rng,
        vocab: ActionVocabulary,
        feature_dim: usize,
        hidden_dim: usize,
        max_decode_len: usize,
        supervised: bool,
    ) -> Result<WeakForecaster> {
        if feature_dim != hidden_dim {
            return Err(Error::Config(format!(
                "weak forecaster requires feature_dim == hidden_dim, got {feature_dim} != {hidden_dim}"
            )));
        }
        Ok(WeakForecaster {
            encoder: BiEncoder::new(rng, feature_dim, hidden_dim),
            dec_obs: AttnDecoder::new(rng, hidden_dim, vocab.total()),
            state_cell: GruCell::new(rng, hidden_dim, hidden_dim),
            state_proj: Linear::new(rng, hidden_dim, hidden_dim, true),
            dec_future: AttnDecoder::new(rng, hidden_dim, vocab.total()),
            vocab,
            feature_dim,
            hidden_dim,
            max_decode_len,
            supervised,
            renormalize_frame_scores: true,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.encoder.collect_params("encoder", &mut out);
        self.dec_obs.collect_params("dec_obs", &mut out);
        self.state_cell.collect_params("state_cell", &mut out);
        self.state_proj.collect_params("state_proj", &mut out);
        self.dec_future.collect_params("dec_future", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// Z sudo states unrolled from the last observed state; each step feeds
    /// on a learned projection of its own previous hidden state.
    fn sudo_states(&self, g: &Graph, last: &Tensor, z: usize) -> Result<Tensor> {
        let mut state = last.clone();
        let mut rows = Vec::with_capacity(z);
        for _ in 0..z {
            let input = self.state_proj.forward(g, &state)?;
            state = self.state_cell.step(g, &input, &state)?;
            rows.push(state.clone());
        }
        Ok(g.stack_rows(&rows)?)
    }

    fn branch_loss(
        &self,
        g: &Graph,
        dec: &AttnDecoder,
        states: &Tensor,
        init: &Tensor,
        targets: &[usize],
        observed_count: usize,
        ot_steps: usize,
        settings: &TrainSettings,
        tf_prob: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, bool)> {
        let steps = unroll_teacher(g, dec, states, init, targets, &self.vocab, tf_prob, rng)?;
        let rows: Vec<Tensor> = steps.iter().map(|s| s.scores.clone()).collect();
        let input = SequenceLossInput {
            step_scores: &rows,
            targets,
            ot_steps,
        };
        let un = UncertaintyParams::new(observed_count.max(1), targets.len());
        let out = combined_loss(g, &input, &un, &settings.ot, settings.loss)?;
        Ok((out.loss, out.ot_converged == Some(false)))
    }

    fn targets_for(&self, ex: &TrainExample) -> Result<(Vec<usize>, Vec<usize>)> {
        if self.supervised {
            let obs = ex.observed_frame_labels.clone().ok_or_else(|| {
                Error::Contract("supervised training needs observed frame labels".into())
            })?;
            let fut = ex.future_frame_labels.clone().ok_or_else(|| {
                Error::Contract("supervised training needs future frame labels".into())
            })?;
            if fut.len() != ex.z {
                return Err(Error::Contract(format!(
                    "supervised training: {} future frame labels but Z={}",
                    fut.len(),
                    ex.z
                )));
            }
            Ok((obs, fut))
        } else {
            if ex.observed_actions.is_empty() || ex.future_actions.is_empty() {
                return Err(Error::Contract(
                    "weak training needs observed and future coarse sequences".into(),
                ));
            }
            let mut obs = ex.observed_actions.clone();
            obs.push(self.vocab.eos());
            let mut fut = ex.future_actions.clone();
            fut.push(self.vocab.eos());
            Ok((obs, fut))
        }
    }

    fn joint_loss(
        &self,
        g: &Graph,
        ex: &TrainExample,
        settings: &TrainSettings,
        tf_prob: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, bool)> {
        if ex.z == 0 {
            return Err(Error::Contract("weak training needs Z >= 1".into()));
        }
        let (obs_targets, fut_targets) = self.targets_for(ex)?;
        let frames = frame_tensors(&ex.observed);
        let encoded = self.encoder.encode(g, &frames)?;
        let last = encoded.last();
        let obs_ot_steps = if self.supervised {
            obs_targets.len()
        } else {
            obs_targets.len() - 1
        };
        let (obs_loss, obs_warn) = self.branch_loss(
            g,
            &self.dec_obs,
            &encoded.matrix,
            &last,
            &obs_targets,
            ex.observed_actions.len().max(1),
            obs_ot_steps,
            settings,
            tf_prob,
            rng,
        )?;
        let sudo = self.sudo_states(g, &last, ex.z)?;
        let sudo_last = g.take_row(&sudo, ex.z - 1)?;
        let fut_ot_steps = if self.supervised {
            fut_targets.len()
        } else {
            fut_targets.len() - 1
        };
        let (fut_loss, fut_warn) = self.branch_loss(
            g,
            &self.dec_future,
            &sudo,
            &sudo_last,
            &fut_targets,
            ex.observed_actions.len().max(1),
            fut_ot_steps,
            settings,
            tf_prob,
            rng,
        )?;
        let loss = weak_joint_loss(g, &obs_loss, &fut_loss, settings.gamma)?;
        Ok((loss, obs_warn || fut_warn))
    }

    pub fn train_step(
        &self,
        ex: &TrainExample,
        settings: &TrainSettings,
        opt: &mut Adam,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainStepOutcome> {
        let g = Graph::new();
        let (loss, warn) = self.joint_loss(&g, ex, settings, settings.tf_prob, rng)?;
        let value = loss.item();
        g.backward(&loss)?;
        let params = self.params();
        opt.step(&params);
        for p in &params {
            p.zero_grad();
        }
        Ok(TrainStepOutcome {
            loss: value,
            ot_warning: warn,
        })
    }

    /// Joint loss without an update, teacher forcing fixed to 1.
    pub fn example_loss(&self, ex: &TrainExample, settings: &TrainSettings) -> Result<f64> {
        let g = Graph::new();
        let mut rng = crate::rng::forcing_stream(0, 0);
        let (loss, _) = self.joint_loss(&g, ex, settings, 1.0, &mut rng)?;
        Ok(loss.item())
    }

    /// Weak-mode inference: decode the future sequence over Z sudo states
    /// and label each future frame from the attention columns.
    pub fn forecast_frames_weak(&self, observed: &[Vec<f64>], z: usize) -> Result<WeakForecast> {
        if self.supervised {
            return Err(Error::Contract(
                "forecast_frames_weak called on a supervised model".into(),
            ));
        }
        if z == 0 {
            return Err(Error::Contract("forecast_frames_weak: Z must be >= 1".into()));
        }
        let g = Graph::inference();
        let frames = frame_tensors(observed);
        let encoded = self.encoder.encode(&g, &frames)?;
        let sudo = self.sudo_states(&g, &encoded.last(), z)?;
        let sudo_last = g.take_row(&sudo, z - 1)?;
        let decoded = greedy_decode(
            &g,
            &self.dec_future,
            &sudo,
            &sudo_last,
            &self.vocab,
            self.max_decode_len,
        )?;
        let n_real = decoded.symbols.len();
        let flagged = n_real == 0;
        // Steps entering the frame scores: the real-symbol steps, or the
        // EOS step alone when the decode was empty.
        let steps: Vec<usize> = if flagged {
            if decoded.step_scores.is_empty() {
                return Err(Error::Contract(
                    "forecast_frames_weak: decode cap of zero leaves frames unlabeled".into(),
                ));
            }
            vec![0]
        } else {
            (0..n_real).collect()
        };
        let n_scores = self.vocab.total();
        let mut frame_scores = Vec::with_capacity(z);
        let mut frame_labels = Vec::with_capacity(z);
        for t in 0..z {
            let mut column: Vec<f64> = steps
                .iter()
                .map(|&q| decoded.step_weights[q][t])
                .collect();
            if self.renormalize_frame_scores {
                let total: f64 = column.iter().sum();
                if total > 0.0 {
                    for w in column.iter_mut() {
                        *w /= total;
                    }
                }
            }
            let mut s = vec![0.0; n_scores];
            for (w, &q) in column.iter().zip(&steps) {
                for (acc, v) in s.iter_mut().zip(&decoded.step_scores[q]) {
                    *acc += w * v;
                }
            }
            frame_labels.push(argmax_over_classes(&s, self.vocab.n_classes()));
            frame_scores.push(s);
        }
        let mixed_step_scores = steps
            .iter()
            .map(|&q| decoded.step_scores[q].clone())
            .collect();
        Ok(WeakForecast {
            future_symbols: decoded.symbols,
            frame_labels,
            frame_scores,
            mixed_step_scores,
            flagged,
        })
    }

    /// Supervised inference: exactly Z future decoder steps, one label per
    /// sudo state.
    pub fn forecast_frames_supervised(
        &self,
        observed: &[Vec<f64>],
        z: usize,
    ) -> Result<WeakForecast> {
        if !self.supervised {
            return Err(Error::Contract(
                "forecast_frames_supervised called on a weak model".into(),
            ));
        }
        if z == 0 {
            return Err(Error::Contract(
                "forecast_frames_supervised: Z must be >= 1".into(),
            ));
        }
        let g = Graph::inference();
        let frames = frame_tensors(observed);
        let encoded = self.encoder.encode(&g, &frames)?;
        let sudo = self.sudo_states(&g, &encoded.last(), z)?;
        let mut state = g.take_row(&sudo, z - 1)?;
        let mut context = Tensor::zeros(&[1, self.hidden_dim]);
        let mut feedback = self.vocab.onehot(self.vocab.sos());
        let mut frame_labels = Vec::with_capacity(z);
        let mut frame_scores = Vec::with_capacity(z);
        for _ in 0..z {
            let step = self.dec_future.step(&g, &sudo, &state, &context, &feedback)?;
            state = step.state;
            context = step.context;
            let scores = step.scores.values();
            frame_labels.push(argmax_over_classes(&scores, self.vocab.n_classes()));
            let v = step.scores.numel();
            feedback = g.reshape(&g.softmax(&step.scores)?, &[1, v])?;
            frame_scores.push(scores);
        }
        Ok(WeakForecast {
            future_symbols: frame_labels.clone(),
            frame_labels,
            mixed_step_scores: frame_scores.clone(),
            frame_scores,
            flagged: false,
        })
    }
}

/// Argmax restricted to real action classes.
fn argmax_over_classes(scores: &[f64], n_classes: usize) -> usize {
    argmax_skipping(&scores[..n_classes], None)
}

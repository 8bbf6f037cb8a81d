//! The action-sequence forecaster: bidirectional GRU encoder, attention
//! decoder initialized from the final encoder state, greedy decoding until
//! EOS.

use rand_chacha::ChaCha8Rng;

use crate::losses::{combined_loss, SequenceLossInput, UncertaintyParams};
use crate::nn::{Adam, BiEncoder};
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};

use super::{
    frame_tensors, greedy_decode, unroll_teacher, ActionVocabulary, AttnDecoder, TrainExample,
    TrainSettings, TrainStepOutcome,
};

pub struct SeqForecaster {
    pub vocab: ActionVocabulary,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub encoder: BiEncoder,
    pub decoder: AttnDecoder,
    pub max_decode_len: usize,
}

/// Decoded future sequence with per-step class probabilities (softmax over
/// real classes and EOS) for score pooling.
pub struct Forecast {
    pub symbols: Vec<usize>,
    pub step_probs: Vec<Vec<f64>>,
    pub hit_eos: bool,
}

impl SeqForecaster {
    pub fn new(
        rng: &mut ChaCha8Rng,
        vocab: ActionVocabulary,
        feature_dim: usize,
        hidden_dim: usize,
        max_decode_len: usize,
    ) -> SeqForecaster {
        let encoder = BiEncoder::new(rng, feature_dim, hidden_dim);
        let decoder = AttnDecoder::new(rng, hidden_dim, vocab.total());
        SeqForecaster {
            vocab,
            feature_dim,
            hidden_dim,
            encoder,
            decoder,
            max_decode_len,
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.encoder.collect_params("encoder", &mut out);
        self.decoder.collect_params("decoder", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// One optimizer update on one example; returns the pre-update loss.
    pub fn train_step(
        &self,
        ex: &TrainExample,
        settings: &TrainSettings,
        opt: &mut Adam,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainStepOutcome> {
        if ex.future_actions.is_empty() {
            return Err(Error::Contract(
                "train_step: example has no future actions".into(),
            ));
        }
        let g = Graph::new();
        let frames = frame_tensors(&ex.observed);
        let encoded = self.encoder.encode(&g, &frames)?;
        let mut targets = ex.future_actions.clone();
        targets.push(self.vocab.eos());
        let steps = unroll_teacher(
            &g,
            &self.decoder,
            &encoded.matrix,
            &encoded.last(),
            &targets,
            &self.vocab,
            settings.tf_prob,
            rng,
        )?;
        let score_rows: Vec<Tensor> = steps.iter().map(|s| s.scores.clone()).collect();
        let input = SequenceLossInput {
            step_scores: &score_rows,
            targets: &targets,
            ot_steps: ex.future_actions.len(),
        };
        let un = UncertaintyParams::new(ex.observed_actions.len().max(1), targets.len());
        let out = combined_loss(&g, &input, &un, &settings.ot, settings.loss)?;
        let loss = out.loss.item();
        g.backward(&out.loss)?;
        let params = self.params();
        opt.step(&params);
        for p in &params {
            p.zero_grad();
        }
        Ok(TrainStepOutcome {
            loss,
            ot_warning: out.ot_converged == Some(false),
        })
    }

    /// Loss of one example without updating, teacher forcing fixed to 1.
    pub fn example_loss(&self, ex: &TrainExample, settings: &TrainSettings) -> Result<f64> {
        if ex.future_actions.is_empty() {
            return Err(Error::Contract(
                "example_loss: example has no future actions".into(),
            ));
        }
        let g = Graph::new();
        let frames = frame_tensors(&ex.observed);
        let encoded = self.encoder.encode(&g, &frames)?;
        let mut targets = ex.future_actions.clone();
        targets.push(self.vocab.eos());
        let mut rng = crate::rng::forcing_stream(0, 0);
        let steps = unroll_teacher(
            &g,
            &self.decoder,
            &encoded.matrix,
            &encoded.last(),
            &targets,
            &self.vocab,
            1.0,
            &mut rng,
        )?;
        let score_rows: Vec<Tensor> = steps.iter().map(|s| s.scores.clone()).collect();
        let input = SequenceLossInput {
            step_scores: &score_rows,
            targets: &targets,
            ot_steps: ex.future_actions.len(),
        };
        let un = UncertaintyParams::new(ex.observed_actions.len().max(1), targets.len());
        let out = combined_loss(&g, &input, &un, &settings.ot, settings.loss)?;
        Ok(out.loss.item())
    }

    /// Greedy forecast of the future action sequence for observed frames.
    pub fn forecast(&self, observed: &[Vec<f64>]) -> Result<Forecast> {
        if observed.is_empty() {
            return Err(Error::Contract("forecast: empty observation".into()));
        }
        let g = Graph::inference();
        let frames = frame_tensors(observed);
        let encoded = self.encoder.encode(&g, &frames)?;
        let decoded = greedy_decode(
            &g,
            &self.decoder,
            &encoded.matrix,
            &encoded.last(),
            &self.vocab,
            self.max_decode_len,
        )?;
        let step_probs = decoded
            .step_scores
            .iter()
            .take(decoded.symbols.len())
            .map(|scores| {
                let gg = Graph::inference();
                gg.softmax(&Tensor::row(scores.clone()))
                    .map(|t| t.values())
            })
            .collect::<crate::tensor::Result<Vec<_>>>()?;
        Ok(Forecast {
            symbols: decoded.symbols,
            step_probs,
            hit_eos: decoded.hit_eos,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{forcing_stream, init_stream};

    fn tiny_model(max_len: usize) -> SeqForecaster {
        let vocab = ActionVocabulary::from_labels(["a", "b", "c"]).unwrap();
        SeqForecaster::new(&mut init_stream(1), vocab, 4, 6, max_len)
    }

    fn example() -> TrainExample {
        TrainExample {
            observed: vec![vec![0.5, -0.2, 0.1, 0.9]; 3],
            observed_actions: vec![0],
            future_actions: vec![1, 2],
            observed_frame_labels: None,
            future_frame_labels: None,
            z: 0,
        }
    }

    #[test]
    fn decode_cap_zero_gives_empty_sequence() {
        let model = tiny_model(0);
        let fc = model.forecast(&example().observed).unwrap();
        assert!(fc.symbols.is_empty());
        assert!(!fc.hit_eos);
    }

    #[test]
    fn model_biased_to_eos_emits_empty_sequence() {
        let model = tiny_model(8);
        // Push the output projection bias so EOS dominates every step.
        let bias = model.decoder.out_proj.bias.as_ref().unwrap();
        let eos = model.vocab.eos();
        bias.update_values(|v| v[eos] = 50.0);
        let fc = model.forecast(&example().observed).unwrap();
        assert!(fc.symbols.is_empty());
        assert!(fc.hit_eos);
    }

    #[test]
    fn forecast_is_deterministic_and_bounded() {
        let model = tiny_model(5);
        let a = model.forecast(&example().observed).unwrap();
        let b = model.forecast(&example().observed).unwrap();
        assert_eq!(a.symbols, b.symbols);
        assert!(a.symbols.len() <= 5);
    }

    #[test]
    fn train_step_is_deterministic_under_full_forcing() {
        let run = || {
            let model = tiny_model(5);
            let mut opt = Adam::new(1e-3, &model.params());
            let settings = TrainSettings {
                tf_prob: 1.0,
                ..TrainSettings::default()
            };
            let mut rng = forcing_stream(3, 0);
            model
                .train_step(&example(), &settings, &mut opt, &mut rng)
                .unwrap()
                .loss
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn one_small_step_reduces_the_example_loss() {
        let ex = example();
        let mut lr = 1e-3;
        for _attempt in 0..4 {
            let model = tiny_model(5);
            let settings = TrainSettings {
                tf_prob: 1.0,
                lr,
                ..TrainSettings::default()
            };
            let before = model.example_loss(&ex, &settings).unwrap();
            let mut opt = Adam::new(lr, &model.params());
            let mut rng = forcing_stream(3, 0);
            model.train_step(&ex, &settings, &mut opt, &mut rng).unwrap();
            let after = model.example_loss(&ex, &settings).unwrap();
            if after <= before {
                return;
            }
            lr *= 0.5;
        }
        panic!("loss failed to decrease even after halving the learning rate");
    }

    #[test]
    fn zero_forcing_feeds_back_own_softmax() {
        let model = tiny_model(5);
        let g = Graph::new();
        let frames = frame_tensors(&example().observed);
        let encoded = model.encoder.encode(&g, &frames).unwrap();
        let targets = vec![1, 2, model.vocab.eos()];
        let mut rng = forcing_stream(9, 0);
        let steps = unroll_teacher(
            &g,
            &model.decoder,
            &encoded.matrix,
            &encoded.last(),
            &targets,
            &model.vocab,
            0.0,
            &mut rng,
        )
        .unwrap();
        for q in 1..steps.len() {
            let expect = {
                let gg = Graph::inference();
                gg.softmax(&Tensor::row(steps[q - 1].scores.values()))
                    .unwrap()
                    .values()
            };
            let got = steps[q].feedback.values();
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-15, "free-running input must be the prior softmax");
            }
        }
    }

    #[test]
    fn full_forcing_feeds_back_onehot_targets() {
        let model = tiny_model(5);
        let g = Graph::new();
        let frames = frame_tensors(&example().observed);
        let encoded = model.encoder.encode(&g, &frames).unwrap();
        let targets = vec![1, 2, model.vocab.eos()];
        let mut rng = forcing_stream(9, 0);
        let steps = unroll_teacher(
            &g,
            &model.decoder,
            &encoded.matrix,
            &encoded.last(),
            &targets,
            &model.vocab,
            1.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(steps[0].feedback.values(), model.vocab.onehot(model.vocab.sos()).values());
        for q in 1..steps.len() {
            assert_eq!(
                steps[q].feedback.values(),
                model.vocab.onehot(targets[q - 1]).values()
            );
        }
    }
}

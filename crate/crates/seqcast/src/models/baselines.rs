//! Next-action baselines: a mean-pooling MLP, an LSTM classifier over the
//! frame sequence, and the random score generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::losses::cross_entropy;
use crate::nn::{Adam, Linear};
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};

use super::{argmax_skipping, ActionVocabulary, TrainExample, TrainStepOutcome};

/// Two tanh layers over mean-pooled frame features, then a class
/// projection. Predicts the next action only.
pub struct MlpBaseline {
    pub vocab: ActionVocabulary,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub l1: Linear,
    pub l2: Linear,
    pub out: Linear,
}

impl MlpBaseline {
    pub fn new(
        rng: &mut ChaCha8Rng,
        vocab: ActionVocabulary,
        feature_dim: usize,
        hidden_dim: usize,
    ) -> MlpBaseline {
        MlpBaseline {
            l1: Linear::new(rng, feature_dim, hidden_dim, true),
            l2: Linear::new(rng, hidden_dim, hidden_dim, true),
            out: Linear::new(rng, hidden_dim, vocab.n_classes(), true),
            vocab,
            feature_dim,
            hidden_dim,
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.l1.collect_params("l1", &mut out);
        self.l2.collect_params("l2", &mut out);
        self.out.collect_params("out", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn scores(&self, g: &Graph, observed: &[Vec<f64>]) -> Result<Tensor> {
        if observed.is_empty() {
            return Err(Error::Contract("mlp: empty observation".into()));
        }
        let d = self.feature_dim;
        let mut pooled = vec![0.0; d];
        for frame in observed {
            for (p, v) in pooled.iter_mut().zip(frame) {
                *p += v;
            }
        }
        for p in pooled.iter_mut() {
            *p /= observed.len() as f64;
        }
        let x = Tensor::row(pooled);
        let h1 = g.tanh(&self.l1.forward(g, &x)?)?;
        let h2 = g.tanh(&self.l2.forward(g, &h1)?)?;
        Ok(self.out.forward(g, &h2)?)
    }

    pub fn predict(&self, observed: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
        let g = Graph::inference();
        let scores = self.scores(&g, observed)?.values();
        Ok((argmax_skipping(&scores, None), scores))
    }

    pub fn train_step(
        &self,
        ex: &TrainExample,
        opt: &mut Adam,
    ) -> Result<TrainStepOutcome> {
        let Some(&target) = ex.future_actions.first() else {
            return Err(Error::Contract("mlp: example has no next action".into()));
        };
        let g = Graph::new();
        let scores = self.scores(&g, &ex.observed)?;
        let loss = cross_entropy(&g, &scores, target)?;
        let value = loss.item();
        g.backward(&loss)?;
        let params = self.params();
        opt.step(&params);
        for p in &params {
            p.zero_grad();
        }
        Ok(TrainStepOutcome {
            loss: value,
            ot_warning: false,
        })
    }
}

/// Standard LSTM cell; the baseline classifies from the final hidden state.
pub struct LstmBaseline {
    pub vocab: ActionVocabulary,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    w_input: Linear,
    u_input: Linear,
    w_forget: Linear,
    u_forget: Linear,
    w_output: Linear,
    u_output: Linear,
    w_cell: Linear,
    u_cell: Linear,
    pub out: Linear,
}

impl LstmBaseline {
    pub fn new(
        rng: &mut ChaCha8Rng,
        vocab: ActionVocabulary,
        feature_dim: usize,
        hidden_dim: usize,
    ) -> LstmBaseline {
        LstmBaseline {
            w_input: Linear::new(rng, feature_dim, hidden_dim, true),
            u_input: Linear::new(rng, hidden_dim, hidden_dim, false),
            w_forget: Linear::new(rng, feature_dim, hidden_dim, true),
            u_forget: Linear::new(rng, hidden_dim, hidden_dim, false),
            w_output: Linear::new(rng, feature_dim, hidden_dim, true),
            u_output: Linear::new(rng, hidden_dim, hidden_dim, false),
            w_cell: Linear::new(rng, feature_dim, hidden_dim, true),
            u_cell: Linear::new(rng, hidden_dim, hidden_dim, false),
            out: Linear::new(rng, hidden_dim, vocab.n_classes(), true),
            vocab,
            feature_dim,
            hidden_dim,
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.w_input.collect_params("lstm.w_input", &mut out);
        self.u_input.collect_params("lstm.u_input", &mut out);
        self.w_forget.collect_params("lstm.w_forget", &mut out);
        self.u_forget.collect_params("lstm.u_forget", &mut out);
        self.w_output.collect_params("lstm.w_output", &mut out);
        self.u_output.collect_params("lstm.u_output", &mut out);
        self.w_cell.collect_params("lstm.w_cell", &mut out);
        self.u_cell.collect_params("lstm.u_cell", &mut out);
        self.out.collect_params("out", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn scores(&self, g: &Graph, observed: &[Vec<f64>]) -> Result<Tensor> {
        if observed.is_empty() {
            return Err(Error::Contract("lstm: empty observation".into()));
        }
        let mut h = Tensor::zeros(&[1, self.hidden_dim]);
        let mut c = Tensor::zeros(&[1, self.hidden_dim]);
        for frame in observed {
            let x = Tensor::row(frame.clone());
            let i = g.sigmoid(&g.add(&self.w_input.forward(g, &x)?, &self.u_input.forward(g, &h)?)?)?;
            let f = g.sigmoid(&g.add(&self.w_forget.forward(g, &x)?, &self.u_forget.forward(g, &h)?)?)?;
            let o = g.sigmoid(&g.add(&self.w_output.forward(g, &x)?, &self.u_output.forward(g, &h)?)?)?;
            let cand = g.tanh(&g.add(&self.w_cell.forward(g, &x)?, &self.u_cell.forward(g, &h)?)?)?;
            c = g.add(&g.mul(&f, &c)?, &g.mul(&i, &cand)?)?;
            h = g.mul(&o, &g.tanh(&c)?)?;
        }
        Ok(self.out.forward(g, &h)?)
    }

    pub fn predict(&self, observed: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
        let g = Graph::inference();
        let scores = self.scores(&g, observed)?.values();
        Ok((argmax_skipping(&scores, None), scores))
    }

    pub fn train_step(
        &self,
        ex: &TrainExample,
        opt: &mut Adam,
    ) -> Result<TrainStepOutcome> {
        let Some(&target) = ex.future_actions.first() else {
            return Err(Error::Contract("lstm: example has no next action".into()));
        };
        let g = Graph::new();
        let scores = self.scores(&g, &ex.observed)?;
        let loss = cross_entropy(&g, &scores, target)?;
        let value = loss.item();
        g.backward(&loss)?;
        let params = self.params();
        opt.step(&params);
        for p in &params {
            p.zero_grad();
        }
        Ok(TrainStepOutcome {
            loss: value,
            ot_warning: false,
        })
    }
}

/// Emits uniform random score vectors per step up to a random length cap.
pub struct RandomBaseline {
    pub vocab: ActionVocabulary,
    pub max_len: usize,
}

impl RandomBaseline {
    pub fn new(vocab: ActionVocabulary, max_len: usize) -> RandomBaseline {
        RandomBaseline {
            vocab,
            max_len: max_len.max(1),
        }
    }

    /// Random forecast: length uniform in [1, max_len], each step a
    /// uniform random score vector over the real classes.
    pub fn forecast(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Vec<f64>>) {
        let len = rng.gen_range(1..=self.max_len);
        let n = self.vocab.n_classes();
        let mut symbols = Vec::with_capacity(len);
        let mut scores = Vec::with_capacity(len);
        for _ in 0..len {
            let step: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            symbols.push(argmax_skipping(&step, None));
            scores.push(step);
        }
        (symbols, scores)
    }
}

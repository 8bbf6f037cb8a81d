//! Recurrent and attention building blocks: GRU cell, bidirectional
//! encoder, additive attention scorer, linear projections, and the
//! adaptive-moment optimizer used by all training loops.

use rand::Rng;

use crate::tensor::{Graph, Result, Tensor, TensorError};

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; biases start at zero.
pub fn init_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(&[rows, cols], values).expect("init shape")
}

fn zero_bias(cols: usize) -> Tensor {
    Tensor::param(&[1, cols], vec![0.0; cols]).expect("bias shape")
}

/// y = x W + b over row vectors; x may hold several rows.
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, in_dim: usize, out_dim: usize, bias: bool) -> Linear {
        Linear {
            weight: init_matrix(rng, in_dim, out_dim),
            bias: bias.then(|| zero_bias(out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, g: &Graph, x: &Tensor) -> Result<Tensor> {
        let y = g.matmul(x, &self.weight)?;
        match &self.bias {
            None => Ok(y),
            Some(b) => {
                let rows = y.shape()[0];
                if rows == 1 {
                    g.add(&y, b)
                } else {
                    // Explicit broadcast of the bias row via a ones column.
                    let ones = Tensor::new(&[rows, 1], vec![1.0; rows])?;
                    let tiled = g.matmul(&ones, b)?;
                    g.add(&y, &tiled)
                }
            }
        }
    }

    pub(crate) fn collect_params(&self, name: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{name}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{name}.bias"), b.clone()));
        }
    }
}

/// Gated recurrent unit with update gate z, reset gate r and candidate
/// state, combined as h' = (1 - z) * h + z * cand.
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_update: Linear,
    u_update: Linear,
    w_reset: Linear,
    u_reset: Linear,
    w_cand: Linear,
    u_cand: Linear,
}

impl GruCell {
    pub fn new(rng: &mut impl Rng, input_dim: usize, hidden_dim: usize) -> GruCell {
        GruCell {
            input_dim,
            hidden_dim,
            w_update: Linear::new(rng, input_dim, hidden_dim, true),
            u_update: Linear::new(rng, hidden_dim, hidden_dim, false),
            w_reset: Linear::new(rng, input_dim, hidden_dim, true),
            u_reset: Linear::new(rng, hidden_dim, hidden_dim, false),
            w_cand: Linear::new(rng, input_dim, hidden_dim, true),
            u_cand: Linear::new(rng, hidden_dim, hidden_dim, false),
        }
    }

    /// One step: x is 1 x input_dim, h is 1 x hidden_dim.
    pub fn step(&self, g: &Graph, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        if x.shape() != [1, self.input_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "gru_step(x)",
                lhs: x.shape(),
                rhs: vec![1, self.input_dim],
            });
        }
        if h.shape() != [1, self.hidden_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "gru_step(h)",
                lhs: h.shape(),
                rhs: vec![1, self.hidden_dim],
            });
        }
        let z = g.sigmoid(&g.add(&self.w_update.forward(g, x)?, &self.u_update.forward(g, h)?)?)?;
        let r = g.sigmoid(&g.add(&self.w_reset.forward(g, x)?, &self.u_reset.forward(g, h)?)?)?;
        let gated = g.mul(&r, h)?;
        let cand =
            g.tanh(&g.add(&self.w_cand.forward(g, x)?, &self.u_cand.forward(g, &gated)?)?)?;
        let ones = Tensor::new(&[1, self.hidden_dim], vec![1.0; self.hidden_dim])?;
        let keep = g.sub(&ones, &z)?;
        g.add(&g.mul(&keep, h)?, &g.mul(&z, &cand)?)
    }

    pub fn zero_state(&self) -> Tensor {
        Tensor::zeros(&[1, self.hidden_dim])
    }

    pub(crate) fn collect_params(&self, name: &str, out: &mut Vec<(String, Tensor)>) {
        self.w_update.collect_params(&format!("{name}.w_update"), out);
        self.u_update.collect_params(&format!("{name}.u_update"), out);
        self.w_reset.collect_params(&format!("{name}.w_reset"), out);
        self.u_reset.collect_params(&format!("{name}.u_reset"), out);
        self.w_cand.collect_params(&format!("{name}.w_cand"), out);
        self.u_cand.collect_params(&format!("{name}.u_cand"), out);
    }
}

/// Per-position states of an encoded sequence. `matrix` stacks the merged
/// states into p x D for attention.
pub struct EncodedSequence {
    pub forward: Vec<Tensor>,
    pub backward: Vec<Tensor>,
    pub merged: Vec<Tensor>,
    pub matrix: Tensor,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.merged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merged.is_empty()
    }

    /// Final merged state, the decoder's initial hidden state.
    pub fn last(&self) -> Tensor {
        self.merged.last().expect("non-empty encoding").clone()
    }
}

/// Bidirectional GRU encoder: both directions start from zero state and the
/// per-position pair is merged by a 2D -> D linear map.
pub struct BiEncoder {
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
    pub merge: Linear,
}

impl BiEncoder {
    pub fn new(rng: &mut impl Rng, input_dim: usize, hidden_dim: usize) -> BiEncoder {
        BiEncoder {
            forward_cell: GruCell::new(rng, input_dim, hidden_dim),
            backward_cell: GruCell::new(rng, input_dim, hidden_dim),
            merge: Linear::new(rng, 2 * hidden_dim, hidden_dim, true),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward_cell.hidden_dim
    }

    pub fn encode(&self, g: &Graph, frames: &[Tensor]) -> Result<EncodedSequence> {
        if frames.is_empty() {
            return Err(TensorError::Contract(
                "encode: empty input sequence".into(),
            ));
        }
        let mut fwd = Vec::with_capacity(frames.len());
        let mut state = self.forward_cell.zero_state();
        for x in frames {
            state = self.forward_cell.step(g, x, &state)?;
            fwd.push(state.clone());
        }
        let mut bwd_rev = Vec::with_capacity(frames.len());
        let mut state = self.backward_cell.zero_state();
        for x in frames.iter().rev() {
            state = self.backward_cell.step(g, x, &state)?;
            bwd_rev.push(state.clone());
        }
        bwd_rev.reverse();
        let mut merged = Vec::with_capacity(frames.len());
        for (f, b) in fwd.iter().zip(&bwd_rev) {
            let cat = g.concat(f, b, 1)?;
            merged.push(self.merge.forward(g, &cat)?);
        }
        let matrix = g.stack_rows(&merged)?;
        Ok(EncodedSequence {
            forward: fwd,
            backward: bwd_rev,
            merged,
            matrix,
        })
    }

    pub(crate) fn collect_params(&self, name: &str, out: &mut Vec<(String, Tensor)>) {
        self.forward_cell.collect_params(&format!("{name}.fwd"), out);
        self.backward_cell.collect_params(&format!("{name}.bwd"), out);
        self.merge.collect_params(&format!("{name}.merge"), out);
    }
}

/// Additive attention: score_i = tanh([h_i; g] W_att) . V, weights by
/// softmax over positions, context = weighted sum of encoder states.
pub struct Attention {
    pub proj: Linear,
    pub v: Tensor,
}

impl Attention {
    pub fn new(rng: &mut impl Rng, hidden_dim: usize) -> Attention {
        Attention {
            proj: Linear::new(rng, 2 * hidden_dim, hidden_dim, true),
            v: init_matrix(rng, hidden_dim, 1),
        }
    }

    /// Returns (context 1 x D, weights p x 1).
    pub fn attend(&self, g: &Graph, states: &Tensor, query: &Tensor) -> Result<(Tensor, Tensor)> {
        let shape = states.shape();
        if shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "attend(states)",
                lhs: shape,
                rhs: vec![0, 0],
            });
        }
        let p = shape[0];
        let ones = Tensor::new(&[p, 1], vec![1.0; p])?;
        let tiled_query = g.matmul(&ones, query)?;
        let cat = g.concat(states, &tiled_query, 1)?;
        let scores = g.matmul(&g.tanh(&self.proj.forward(g, &cat)?)?, &self.v)?;
        let weights = g.softmax(&scores)?;
        let row = g.reshape(&weights, &[1, p])?;
        let context = g.matmul(&row, states)?;
        Ok((context, weights))
    }

    pub(crate) fn collect_params(&self, name: &str, out: &mut Vec<(String, Tensor)>) {
        self.proj.collect_params(&format!("{name}.proj"), out);
        out.push((format!("{name}.v"), self.v.clone()));
    }
}

/// Stable, ordered parameter listing shared by optimizers and checkpoints.
pub trait ParamBundle {
    fn named_params(&self) -> Vec<(String, Tensor)>;

    fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn zero_grads(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }
}

impl ParamBundle for Linear {
    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect_params("linear", &mut out);
        out
    }
}

impl ParamBundle for GruCell {
    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect_params("gru", &mut out);
        out
    }
}

impl ParamBundle for BiEncoder {
    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect_params("encoder", &mut out);
        out
    }
}

impl ParamBundle for Attention {
    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect_params("attention", &mut out);
        out
    }
}

/// Adaptive-moment gradient descent over a fixed parameter list.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &[Tensor]) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// One update over `params`, which must match the construction order.
    /// Parameters with no accumulated gradient are left untouched.
    pub fn step(&mut self, params: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/param list mismatch");
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, p) in params.iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.update_values(|vals| {
                for j in 0..vals.len() {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad[j];
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad[j] * grad[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    vals[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            });
        }
    }

    /// Flattened optimizer state for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.step_count, &self.m, &self.v)
    }

    pub fn restore(&mut self, step_count: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.step_count = step_count;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::{central_diff, max_rel_err};
    use crate::rng::init_stream;
    use rand::Rng;

    #[test]
    fn gru_zero_weights_closed_form() {
        let mut rng = init_stream(0);
        let cell = GruCell::new(&mut rng, 3, 2);
        for p in cell.params() {
            p.update_values(|v| v.iter_mut().for_each(|x| *x = 0.0));
        }
        let g = Graph::new();
        let x = Tensor::row(vec![0.3, -0.9, 0.2]);
        let h = Tensor::row(vec![0.8, -0.4]);
        let out = cell.step(&g, &x, &h).unwrap().values();
        assert!((out[0] - 0.4).abs() < 1e-15);
        assert!((out[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn gru_state_stays_bounded() {
        let mut rng = init_stream(1);
        let cell = GruCell::new(&mut rng, 4, 6);
        let g = Graph::inference();
        let mut h = Tensor::row(vec![0.9, -0.8, 0.2, 0.0, 0.5, -0.1]);
        let bound = f64::max(
            1.0,
            h.values().iter().fold(0.0f64, |a, x| a.max(x.abs())),
        );
        for step in 0..100 {
            let x = Tensor::row((0..4).map(|i| ((step * 7 + i) as f64 * 0.37).sin()).collect());
            h = cell.step(&g, &x, &h).unwrap();
            assert!(h.values().iter().all(|v| v.abs() <= bound + 1e-12));
        }
    }

    #[test]
    fn gru_shape_mismatch_is_an_error() {
        let mut rng = init_stream(2);
        let cell = GruCell::new(&mut rng, 3, 2);
        let g = Graph::new();
        let x = Tensor::row(vec![1.0, 2.0]);
        let h = Tensor::row(vec![0.0, 0.0]);
        assert!(cell.step(&g, &x, &h).is_err());
    }

    #[test]
    fn gru_gradient_matches_finite_differences() {
        let mut rng = init_stream(3);
        let cell = GruCell::new(&mut rng, 3, 4);
        let x0 = Tensor::row(vec![0.2, -0.4, 0.8]);
        let h0 = Tensor::row(vec![0.1, 0.3, -0.2, 0.5]);
        let params = cell.params();
        let run = || {
            let g = Graph::new();
            let out = cell.step(&g, &x0, &h0).unwrap();
            let loss = g.sum(&out).unwrap();
            (g, loss)
        };
        let (g, loss) = run();
        g.backward(&loss).unwrap();
        for p in &params {
            let base = p.values();
            let analytic = p.grad().unwrap();
            let fd = central_diff(&base, 1e-5, |xs| {
                p.set_values(xs);
                let v = run().1.item();
                p.set_values(&base);
                v
            });
            assert!(
                max_rel_err(&analytic, &fd) < 1e-4,
                "gru param gradient mismatch"
            );
        }
    }

    #[test]
    fn encode_handles_length_one() {
        let mut rng = init_stream(4);
        let enc = BiEncoder::new(&mut rng, 3, 5);
        let g = Graph::new();
        let frames = vec![Tensor::row(vec![0.1, 0.2, 0.3])];
        let out = enc.encode(&g, &frames).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.matrix.shape(), vec![1, 5]);
        assert!(enc.encode(&g, &[]).is_err());
    }

    #[test]
    fn encode_direction_symmetry_with_swapped_cells() {
        let mut rng = init_stream(5);
        let enc = BiEncoder::new(&mut rng, 3, 4);
        let swapped = BiEncoder {
            forward_cell: GruCell {
                input_dim: enc.backward_cell.input_dim,
                hidden_dim: enc.backward_cell.hidden_dim,
                w_update: Linear {
                    weight: enc.backward_cell.w_update.weight.clone(),
                    bias: enc.backward_cell.w_update.bias.clone(),
                },
                u_update: Linear {
                    weight: enc.backward_cell.u_update.weight.clone(),
                    bias: None,
                },
                w_reset: Linear {
                    weight: enc.backward_cell.w_reset.weight.clone(),
                    bias: enc.backward_cell.w_reset.bias.clone(),
                },
                u_reset: Linear {
                    weight: enc.backward_cell.u_reset.weight.clone(),
                    bias: None,
                },
                w_cand: Linear {
                    weight: enc.backward_cell.w_cand.weight.clone(),
                    bias: enc.backward_cell.w_cand.bias.clone(),
                },
                u_cand: Linear {
                    weight: enc.backward_cell.u_cand.weight.clone(),
                    bias: None,
                },
            },
            backward_cell: GruCell {
                input_dim: enc.forward_cell.input_dim,
                hidden_dim: enc.forward_cell.hidden_dim,
                w_update: Linear {
                    weight: enc.forward_cell.w_update.weight.clone(),
                    bias: enc.forward_cell.w_update.bias.clone(),
                },
                u_update: Linear {
                    weight: enc.forward_cell.u_update.weight.clone(),
                    bias: None,
                },
                w_reset: Linear {
                    weight: enc.forward_cell.w_reset.weight.clone(),
                    bias: enc.forward_cell.w_reset.bias.clone(),
                },
                u_reset: Linear {
                    weight: enc.forward_cell.u_reset.weight.clone(),
                    bias: None,
                },
                w_cand: Linear {
                    weight: enc.forward_cell.w_cand.weight.clone(),
                    bias: enc.forward_cell.w_cand.bias.clone(),
                },
                u_cand: Linear {
                    weight: enc.forward_cell.u_cand.weight.clone(),
                    bias: None,
                },
            },
            merge: Linear {
                weight: enc.merge.weight.clone(),
                bias: enc.merge.bias.clone(),
            },
        };
        let frames: Vec<Tensor> = (0..4)
            .map(|i| Tensor::row(vec![0.1 * i as f64, -0.2, 0.3 + 0.05 * i as f64]))
            .collect();
        let reversed: Vec<Tensor> = frames.iter().rev().cloned().collect();
        let g = Graph::inference();
        let a = enc.encode(&g, &frames).unwrap();
        let b = swapped.encode(&g, &reversed).unwrap();
        let p = frames.len();
        for t in 0..p {
            // forward states of `enc` equal backward states of the swapped
            // encoder at the mirrored position, pre-merge.
            let fa = a.forward[t].values();
            let bb = b.backward[p - 1 - t].values();
            for (x, y) in fa.iter().zip(&bb) {
                assert!((x - y).abs() < 1e-12);
            }
            let ba = a.backward[t].values();
            let fb = b.forward[p - 1 - t].values();
            for (x, y) in ba.iter().zip(&fb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_backward_path_carries_future_context() {
        let mut rng = init_stream(6);
        let enc = BiEncoder::new(&mut rng, 2, 3);
        let g = Graph::inference();
        let mut frames: Vec<Tensor> = (0..3)
            .map(|i| Tensor::row(vec![0.2 * i as f64, 0.1]))
            .collect();
        let h2_before = enc.encode(&g, &frames).unwrap().merged[1].values();
        frames[2] = Tensor::row(vec![5.0, -3.0]);
        let h2_after = enc.encode(&g, &frames).unwrap().merged[1].values();
        let delta: f64 = h2_before
            .iter()
            .zip(&h2_after)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(delta > 1e-6, "h_2 must respond to a change in x_3");
    }

    #[test]
    fn attend_single_position_and_uniform_cases() {
        let mut rng = init_stream(7);
        let att = Attention::new(&mut rng, 4);
        let g = Graph::new();
        let h1 = Tensor::row(vec![0.4, -0.2, 0.9, 0.0]);
        let (ctx, w) = att.attend(&g, &h1, &Tensor::row(vec![0.1, 0.1, -0.3, 0.2])).unwrap();
        assert_eq!(w.values(), vec![1.0]);
        assert_eq!(ctx.values(), h1.values());

        let same = Tensor::new(&[3, 4], [0.4, -0.2, 0.9, 0.0].repeat(3)).unwrap();
        let (_, w) = att
            .attend(&g, &same, &Tensor::row(vec![0.1, 0.1, -0.3, 0.2]))
            .unwrap();
        for v in w.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_weights_normalize_and_context_in_hull() {
        let mut seed_rng = init_stream(8);
        for _ in 0..10 {
            let mut rng = init_stream(seed_rng.gen());
            let att = Attention::new(&mut rng, 3);
            let p = rng.gen_range(2..6);
            let vals: Vec<f64> = (0..p * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let states = Tensor::new(&[p, 3], vals.clone()).unwrap();
            let query = Tensor::row((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let g = Graph::new();
            let (ctx, w) = att.attend(&g, &states, &query).unwrap();
            let w = w.values();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&x| x >= 0.0));
            let ctx = ctx.values();
            for d in 0..3 {
                let col: Vec<f64> = (0..p).map(|i| vals[i * 3 + d]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12;
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12;
                assert!(ctx[d] >= lo && ctx[d] <= hi);
            }
        }
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let a = init_matrix(&mut init_stream(42), 16, 8).values();
        let b = init_matrix(&mut init_stream(42), 16, 8).values();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let bound = 1.0 / 4.0;
        assert!(a.iter().all(|v| v.abs() <= bound));
        let c = init_matrix(&mut init_stream(43), 16, 8).values();
        assert_ne!(a, c);
    }

    #[test]
    fn adam_reduces_a_quadratic() {
        let p = Tensor::param(&[2], vec![3.0, -2.0]).unwrap();
        let mut opt = Adam::new(0.05, &[p.clone()]);
        for _ in 0..400 {
            let g = Graph::new();
            let loss = g.sum(&g.mul(&p, &p).unwrap()).unwrap();
            g.backward(&loss).unwrap();
            opt.step(&[p.clone()]);
            p.zero_grad();
        }
        assert!(p.values().iter().all(|v| v.abs() < 1e-2));
    }
}

//! Training objectives: cross-entropy, the uncertainty-weighted sequence
//! loss, the debiased Sinkhorn optimal-transport loss, and their
//! combinations.
//!
//! The Sinkhorn iterations run in log domain on the computation graph, so
//! the optimal-transport value is differentiable through the unrolled
//! updates with respect to the predicted points. Target measures are
//! constants.

use crate::tensor::{Graph, Result, Tensor, TensorError};

/// Counts entering the uncertainty weighting: `observed` actions seen and
/// `future` prediction steps.
#[derive(Debug, Clone, Copy)]
pub struct UncertaintyParams {
    pub observed: usize,
    pub future: usize,
    /// Divide the weighted sum by the step count. Off by default.
    pub normalized: bool,
}

impl UncertaintyParams {
    pub fn new(observed: usize, future: usize) -> UncertaintyParams {
        UncertaintyParams {
            observed,
            future,
            normalized: false,
        }
    }

    /// (1 - exp(-P/N)) observation factor.
    pub fn observation_factor(&self) -> f64 {
        1.0 - (-(self.observed as f64) / self.future as f64).exp()
    }
}

/// Entropic optimal-transport settings.
#[derive(Debug, Clone, Copy)]
pub struct OtParams {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Row-marginal violation threshold that stops the iterations; zero
    /// disables early stopping so exactly `max_iters` updates run.
    pub tol: f64,
    /// Trade-off weight on the OT term in combined losses.
    pub beta: f64,
    pub debiased: bool,
}

impl Default for OtParams {
    fn default() -> OtParams {
        OtParams {
            epsilon: 0.05,
            max_iters: 200,
            tol: 1e-6,
            beta: 0.001,
            debiased: true,
        }
    }
}

impl OtParams {
    fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(TensorError::Contract(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(TensorError::Contract("max_iters must be >= 1".into()));
        }
        if self.beta < 0.0 {
            return Err(TensorError::Contract(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Weighted sum of Dirac masses: `points` is n x d, `weights` sum to one.
pub struct DiscreteMeasure {
    pub points: Tensor,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Tensor, weights: Vec<f64>) -> Result<DiscreteMeasure> {
        let shape = points.shape();
        if shape.len() != 2 || shape[0] != weights.len() {
            return Err(TensorError::Contract(format!(
                "measure points {:?} inconsistent with {} weights",
                shape,
                weights.len()
            )));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(TensorError::Contract("negative measure weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TensorError::Contract(format!(
                "measure weights sum to {total}, expected 1"
            )));
        }
        Ok(DiscreteMeasure { points, weights })
    }

    pub fn uniform(points: Tensor) -> Result<DiscreteMeasure> {
        let n = points.shape()[0];
        DiscreteMeasure::new(points, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Converged coupling and its cost matrix, both detached.
pub struct TransportPlan {
    pub n: usize,
    pub m: usize,
    pub plan: Vec<f64>,
    pub cost: Vec<f64>,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.plan[i * self.m..(i + 1) * self.m].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.m)
            .map(|j| (0..self.n).map(|i| self.plan[i * self.m + j]).sum())
            .collect()
    }
}

pub struct SinkhornResult {
    pub value: Tensor,
    pub converged: bool,
    pub iterations: usize,
    pub marginal_error: f64,
    pub plan: TransportPlan,
}

/// -log softmax(scores)[target], computed with max subtraction.
pub fn cross_entropy(g: &Graph, scores: &Tensor, target: usize) -> Result<Tensor> {
    let n = scores.numel();
    if target >= n {
        return Err(TensorError::Contract(format!(
            "cross_entropy target {target} out of range for {n} classes"
        )));
    }
    let max = scores.with_values(|v| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let flat = g.reshape(scores, &[n])?;
    let shifted = g.add_scalar(&flat, -max)?;
    let lse = g.log(&g.sum(&g.exp(&shifted)?)?)?;
    g.sub(&lse, &g.select(&shifted, target)?)
}

/// (1 - exp(-P/N)) * sum_q exp(-q) * loss_q with q starting at 1.
pub fn uncertainty_loss(
    g: &Graph,
    step_losses: &Tensor,
    params: &UncertaintyParams,
) -> Result<Tensor> {
    let n = step_losses.numel();
    if n != params.future || params.future == 0 || params.observed == 0 {
        return Err(TensorError::Contract(format!(
            "uncertainty_loss: {} step losses with P={}, N={}",
            n, params.observed, params.future
        )));
    }
    let flat = g.reshape(step_losses, &[n])?;
    let weighted = discounted_sum(g, &flat)?;
    let mut factor = params.observation_factor();
    if params.normalized {
        factor /= n as f64;
    }
    g.mul_scalar(&weighted, factor)
}

/// sum_q exp(-q) * loss_q, the future-horizon part of the uncertainty loss.
fn discounted_sum(g: &Graph, step_losses: &Tensor) -> Result<Tensor> {
    let n = step_losses.numel();
    let weights: Vec<f64> = (1..=n).map(|q| (-(q as f64)).exp()).collect();
    let w = Tensor::new(&[n], weights)?;
    g.sum(&g.mul(step_losses, &w)?)
}

fn log_weights(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect()
}

/// Pairwise L2 distances between the rows of two point sets, entry by entry
/// so that exact zeros stay exact.
fn cost_matrix(g: &Graph, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(TensorError::ShapeMismatch {
            op: "cost_matrix",
            lhs: sa,
            rhs: sb,
        });
    }
    let (n, m) = (sa[0], sb[0]);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let ai = g.take_row(a, i)?;
        let mut entries = Vec::with_capacity(m);
        for j in 0..m {
            let bj = g.take_row(b, j)?;
            let diff = g.sub(&ai, &bj)?;
            entries.push(g.sqrt(&g.sum(&g.mul(&diff, &diff)?)?)?);
        }
        rows.push(g.reshape(&g.concat_many(&entries, 0)?, &[1, m])?);
    }
    g.stack_rows(&rows)
}

/// Broadcast constant helpers for the log-domain updates.
fn const_col_broadcast(values: &[f64], m: usize) -> Tensor {
    let n = values.len();
    let mut out = vec![0.0; n * m];
    for (i, &v) in values.iter().enumerate() {
        out[i * m..(i + 1) * m].fill(v);
    }
    Tensor::new(&[n, m], out).expect("broadcast shape")
}

fn const_row_broadcast(values: &[f64], n: usize) -> Tensor {
    let m = values.len();
    let mut out = vec![0.0; n * m];
    for row in 0..n {
        out[row * m..(row + 1) * m].copy_from_slice(values);
    }
    Tensor::new(&[n, m], out).expect("broadcast shape")
}

/// Column-wise logsumexp of an n x m tensor, returned as 1 x m. The
/// stabilizing shift is a detached constant, so values and gradients are
/// unchanged.
fn logsumexp_cols(g: &Graph, t: &Tensor, n: usize, m: usize) -> Result<Tensor> {
    let maxes = t.with_values(|v| {
        (0..m)
            .map(|j| (0..n).map(|i| v[i * m + j]).fold(f64::NEG_INFINITY, f64::max))
            .collect::<Vec<f64>>()
    });
    let shift = const_row_broadcast(&maxes, n);
    let e = g.exp(&g.sub(t, &shift)?)?;
    let ones = Tensor::new(&[1, n], vec![1.0; n])?;
    let sums = g.matmul(&ones, &e)?;
    g.add(&g.log(&sums)?, &Tensor::new(&[1, m], maxes)?)
}

/// Row-wise logsumexp of an n x m tensor, returned as n x 1.
fn logsumexp_rows(g: &Graph, t: &Tensor, n: usize, m: usize) -> Result<Tensor> {
    let maxes = t.with_values(|v| {
        (0..n)
            .map(|i| v[i * m..(i + 1) * m].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect::<Vec<f64>>()
    });
    let shift = const_col_broadcast(&maxes, m);
    let e = g.exp(&g.sub(t, &shift)?)?;
    let ones = Tensor::new(&[m, 1], vec![1.0; m])?;
    let sums = g.matmul(&e, &ones)?;
    g.add(&g.log(&sums)?, &Tensor::new(&[n, 1], maxes)?)
}

struct OtSolution {
    value: Tensor,
    converged: bool,
    iterations: usize,
    marginal_error: f64,
    plan: Vec<f64>,
}

/// Entropic OT value via log-domain Sinkhorn with epsilon scaling: the
/// working epsilon decays geometrically from 1.0 to the target, a
/// data-independent schedule, then iterations continue at the target until
/// the row marginals are within `tol` or `max_iters` is reached.
fn entropic_ot(
    g: &Graph,
    cost: &Tensor,
    wa: &[f64],
    wb: &[f64],
    params: &OtParams,
) -> Result<OtSolution> {
    let (n, m) = (wa.len(), wb.len());
    let loga_bcast = const_col_broadcast(&log_weights(wa), m);
    let logb_bcast = const_row_broadcast(&log_weights(wb), n);
    let mut f = Tensor::zeros(&[n, 1]);
    let mut pot = Tensor::zeros(&[1, m]);
    let ones_col = Tensor::new(&[n, 1], vec![1.0; n])?;
    let ones_row = Tensor::new(&[1, m], vec![1.0; m])?;

    let anneal_start: f64 = 1.0;
    let anneal_rate: f64 = 0.9;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut marginal_error = f64::INFINITY;
    for it in 0..params.max_iters {
        iterations = it + 1;
        let eps = params
            .epsilon
            .max(anneal_start * anneal_rate.powi(it as i32));
        let at_target = eps <= params.epsilon;
        // f_i = -eps LSE_j(log b_j + (g_j - C_ij)/eps)
        let g_mat = g.matmul(&ones_col, &pot)?;
        let t_f = g.add(&g.mul_scalar(&g.sub(&g_mat, cost)?, 1.0 / eps)?, &logb_bcast)?;
        f = g.mul_scalar(&logsumexp_rows(g, &t_f, n, m)?, -eps)?;
        // g_j = -eps LSE_i(log a_i + (f_i - C_ij)/eps)
        let f_mat = g.matmul(&f, &ones_row)?;
        let t_g = g.add(&g.mul_scalar(&g.sub(&f_mat, cost)?, 1.0 / eps)?, &loga_bcast)?;
        pot = g.mul_scalar(&logsumexp_cols(g, &t_g, n, m)?, -eps)?;

        if at_target {
            marginal_error = row_marginal_error(cost, &f, &pot, wa, wb, params.epsilon);
            if params.tol > 0.0 && marginal_error < params.tol {
                converged = true;
                break;
            }
        }
    }
    let plan = plan_values(cost, &f, &pot, wa, wb, params.epsilon);
    let a_col = Tensor::new(&[n, 1], wa.to_vec())?;
    let b_row = Tensor::new(&[1, m], wb.to_vec())?;
    let value = g.add(
        &g.sum(&g.mul(&f, &a_col)?)?,
        &g.sum(&g.mul(&pot, &b_row)?)?,
    )?;
    Ok(OtSolution {
        value,
        converged,
        iterations,
        marginal_error,
        plan,
    })
}

fn plan_values(
    cost: &Tensor,
    f: &Tensor,
    g_pot: &Tensor,
    wa: &[f64],
    wb: &[f64],
    eps: f64,
) -> Vec<f64> {
    let (n, m) = (wa.len(), wb.len());
    let fv = f.values();
    let gv = g_pot.values();
    cost.with_values(|c| {
        let mut p = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                p[i * m + j] = wa[i] * wb[j] * ((fv[i] + gv[j] - c[i * m + j]) / eps).exp();
            }
        }
        p
    })
}

fn row_marginal_error(
    cost: &Tensor,
    f: &Tensor,
    g_pot: &Tensor,
    wa: &[f64],
    wb: &[f64],
    eps: f64,
) -> f64 {
    let m = wb.len();
    let plan = plan_values(cost, f, g_pot, wa, wb, eps);
    wa.iter()
        .enumerate()
        .map(|(i, &a)| (plan[i * m..(i + 1) * m].iter().sum::<f64>() - a).abs())
        .sum()
}

/// Entropic optimal-transport cost between two discrete measures with
/// c(x, y) = ||x - y||_2. With `debiased` set this is the Sinkhorn
/// divergence OT(mu, nu) - (OT(mu, mu) + OT(nu, nu)) / 2, which is zero for
/// identical measures. Differentiable with respect to graph-tracked points.
pub fn sinkhorn_divergence(
    g: &Graph,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    params: &OtParams,
) -> Result<SinkhornResult> {
    params.validate()?;
    if mu.is_empty() || nu.is_empty() {
        return Err(TensorError::Contract(
            "sinkhorn_divergence: empty measure".into(),
        ));
    }
    let cost_ab = cost_matrix(g, &mu.points, &nu.points)?;
    let ab = entropic_ot(g, &cost_ab, &mu.weights, &nu.weights, params)?;
    let plan = TransportPlan {
        n: mu.len(),
        m: nu.len(),
        plan: ab.plan,
        cost: cost_ab.values(),
    };
    if !params.debiased {
        return Ok(SinkhornResult {
            value: ab.value,
            converged: ab.converged,
            iterations: ab.iterations,
            marginal_error: ab.marginal_error,
            plan,
        });
    }
    let cost_aa = cost_matrix(g, &mu.points, &mu.points)?;
    let aa = entropic_ot(g, &cost_aa, &mu.weights, &mu.weights, params)?;
    let cost_bb = cost_matrix(g, &nu.points, &nu.points)?;
    let bb = entropic_ot(g, &cost_bb, &nu.weights, &nu.weights, params)?;
    let self_terms = g.mul_scalar(&g.add(&aa.value, &bb.value)?, 0.5)?;
    let value = g.sub(&ab.value, &self_terms)?;
    Ok(SinkhornResult {
        value,
        converged: ab.converged && aa.converged && bb.converged,
        iterations: ab.iterations.max(aa.iterations).max(bb.iterations),
        marginal_error: ab
            .marginal_error
            .max(aa.marginal_error)
            .max(bb.marginal_error),
        plan,
    })
}

/// One-hot rows for a class sequence.
pub fn onehot_rows(classes: &[usize], dim: usize) -> Result<Tensor> {
    let mut values = vec![0.0; classes.len() * dim];
    for (i, &c) in classes.iter().enumerate() {
        if c >= dim {
            return Err(TensorError::Contract(format!(
                "class index {c} out of range for {dim}-dim one-hot"
            )));
        }
        values[i * dim + c] = 1.0;
    }
    Tensor::new(&[classes.len(), dim], values)
}

/// OT loss between predicted per-step probability rows and the one-hot
/// rows of a target class sequence, both as uniformly weighted measures.
pub fn sequence_ot_loss(
    g: &Graph,
    pred_probs: &Tensor,
    target_classes: &[usize],
    params: &OtParams,
) -> Result<SinkhornResult> {
    let shape = pred_probs.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(TensorError::Contract(
            "sequence_ot_loss: empty prediction".into(),
        ));
    }
    if target_classes.is_empty() {
        return Err(TensorError::Contract(
            "sequence_ot_loss: empty target".into(),
        ));
    }
    let mu = DiscreteMeasure::uniform(pred_probs.clone())?;
    let nu = DiscreteMeasure::uniform(onehot_rows(target_classes, shape[1])?)?;
    sinkhorn_divergence(g, &mu, &nu, params)
}

/// Selected training objective for a decoded sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    CrossEntropy,
    UncertaintyPast,
    UncertaintyFuture,
    Uncertainty,
    OtOnly,
    CrossEntropyOt,
    UncertaintyPastOt,
    UncertaintyFutureOt,
    UncertaintyOt,
}

impl LossVariant {
    pub fn parse(s: &str) -> Option<LossVariant> {
        Some(match s {
            "ce" => LossVariant::CrossEntropy,
            "unc-past" => LossVariant::UncertaintyPast,
            "unc-future" => LossVariant::UncertaintyFuture,
            "unc" => LossVariant::Uncertainty,
            "ot" => LossVariant::OtOnly,
            "ce+ot" => LossVariant::CrossEntropyOt,
            "unc-past+ot" => LossVariant::UncertaintyPastOt,
            "unc-future+ot" => LossVariant::UncertaintyFutureOt,
            "unc+ot" => LossVariant::UncertaintyOt,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::CrossEntropy => "ce",
            LossVariant::UncertaintyPast => "unc-past",
            LossVariant::UncertaintyFuture => "unc-future",
            LossVariant::Uncertainty => "unc",
            LossVariant::OtOnly => "ot",
            LossVariant::CrossEntropyOt => "ce+ot",
            LossVariant::UncertaintyPastOt => "unc-past+ot",
            LossVariant::UncertaintyFutureOt => "unc-future+ot",
            LossVariant::UncertaintyOt => "unc+ot",
        }
    }

    pub fn uses_ot(&self) -> bool {
        matches!(
            self,
            LossVariant::OtOnly
                | LossVariant::CrossEntropyOt
                | LossVariant::UncertaintyPastOt
                | LossVariant::UncertaintyFutureOt
                | LossVariant::UncertaintyOt
        )
    }

    pub fn all() -> &'static [LossVariant] {
        &[
            LossVariant::CrossEntropy,
            LossVariant::UncertaintyPast,
            LossVariant::UncertaintyFuture,
            LossVariant::Uncertainty,
            LossVariant::OtOnly,
            LossVariant::CrossEntropyOt,
            LossVariant::UncertaintyPastOt,
            LossVariant::UncertaintyFutureOt,
            LossVariant::UncertaintyOt,
        ]
    }
}

/// One decoded sequence ready for loss evaluation: raw score rows per step
/// and the target class per step. `ot_steps` marks how many leading steps
/// form the OT measures (the real-symbol steps, excluding any EOS step).
pub struct SequenceLossInput<'a> {
    pub step_scores: &'a [Tensor],
    pub targets: &'a [usize],
    pub ot_steps: usize,
}

pub struct SequenceLoss {
    pub loss: Tensor,
    /// Present when the variant includes the OT term.
    pub ot_converged: Option<bool>,
}

/// Assemble the configured sequence loss from per-step cross-entropies and
/// optionally the OT term weighted by beta.
pub fn combined_loss(
    g: &Graph,
    input: &SequenceLossInput,
    un: &UncertaintyParams,
    ot: &OtParams,
    variant: LossVariant,
) -> Result<SequenceLoss> {
    if input.step_scores.len() != input.targets.len() || input.step_scores.is_empty() {
        return Err(TensorError::Contract(format!(
            "combined_loss: {} score rows vs {} targets",
            input.step_scores.len(),
            input.targets.len()
        )));
    }
    let mut step_losses = Vec::with_capacity(input.targets.len());
    for (scores, &target) in input.step_scores.iter().zip(input.targets) {
        step_losses.push(cross_entropy(g, scores, target)?);
    }
    let stacked = g.concat_many(&step_losses, 0)?;

    let base = match variant {
        LossVariant::CrossEntropy | LossVariant::CrossEntropyOt => Some(g.sum(&stacked)?),
        LossVariant::UncertaintyPast | LossVariant::UncertaintyPastOt => {
            Some(g.mul_scalar(&g.sum(&stacked)?, un.observation_factor())?)
        }
        LossVariant::UncertaintyFuture | LossVariant::UncertaintyFutureOt => {
            Some(discounted_sum(g, &stacked)?)
        }
        LossVariant::Uncertainty | LossVariant::UncertaintyOt => Some(uncertainty_loss(
            g,
            &stacked,
            &UncertaintyParams {
                future: input.targets.len(),
                ..*un
            },
        )?),
        LossVariant::OtOnly => None,
    };

    if !variant.uses_ot() {
        return Ok(SequenceLoss {
            loss: base.expect("non-OT variant has a base loss"),
            ot_converged: None,
        });
    }

    let steps = input.ot_steps.min(input.step_scores.len());
    if steps == 0 {
        return Err(TensorError::Contract(
            "combined_loss: OT variant with zero OT steps".into(),
        ));
    }
    let mut prob_rows = Vec::with_capacity(steps);
    for scores in &input.step_scores[..steps] {
        let n = scores.numel();
        prob_rows.push(g.reshape(&g.softmax(scores)?, &[1, n])?);
    }
    let pred = g.stack_rows(&prob_rows)?;
    let result = sequence_ot_loss(g, &pred, &input.targets[..steps], ot)?;
    let loss = match base {
        Some(base) => {
            let weighted = g.mul_scalar(&result.value, ot.beta)?;
            g.add(&base, &weighted)?
        }
        None => result.value,
    };
    Ok(SequenceLoss {
        loss,
        ot_converged: Some(result.converged),
    })
}

/// Observed-branch loss plus gamma times the future-branch loss.
pub fn weak_joint_loss(g: &Graph, observed: &Tensor, future: &Tensor, gamma: f64) -> Result<Tensor> {
    if gamma < 0.0 {
        return Err(TensorError::Contract(format!(
            "gamma must be non-negative, got {gamma}"
        )));
    }
    g.add(observed, &g.mul_scalar(future, gamma)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::{central_diff, max_rel_err};
    use proptest::prelude::*;

    fn scores(vals: Vec<f64>) -> Tensor {
        Tensor::param(&[vals.len()], vals).unwrap()
    }

    #[test]
    fn cross_entropy_uniform_and_dominant() {
        let g = Graph::new();
        let s = scores(vec![0.5, 0.5, 0.5, 0.5]);
        let loss = cross_entropy(&g, &s, 2).unwrap().item();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        let s = scores(vec![0.0, 50.0, 0.0]);
        assert!(cross_entropy(&g, &s, 1).unwrap().item() < 1e-12);
        assert!(cross_entropy(&g, &s, 3).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let g = Graph::new();
        let vals = vec![0.7, -0.3, 1.2, 0.1];
        let s = scores(vals.clone());
        let loss = cross_entropy(&g, &s, 2).unwrap();
        g.backward(&loss).unwrap();
        let grad = s.grad().unwrap();
        let soft = {
            let gg = Graph::new();
            gg.softmax(&Tensor::new(&[4], vals.clone()).unwrap())
                .unwrap()
                .values()
        };
        for (i, (gr, p)) in grad.iter().zip(&soft).enumerate() {
            let expect = p - if i == 2 { 1.0 } else { 0.0 };
            assert!((gr - expect).abs() < 1e-12);
        }
        let fd = central_diff(&vals, 1e-5, |x| {
            let gg = Graph::new();
            cross_entropy(&gg, &scores(x.to_vec()), 2).unwrap().item()
        });
        assert!(max_rel_err(&grad, &fd) < 1e-6);
    }

    // Plain-scalar re-statement of the weighted sum, kept free of tensor code.
    fn uncertainty_oracle(p: usize, n: usize, losses: &[f64]) -> f64 {
        let factor = 1.0 - (-(p as f64) / (n as f64)).exp();
        let total: f64 = losses
            .iter()
            .enumerate()
            .map(|(i, l)| (-((i + 1) as f64)).exp() * l)
            .sum();
        factor * total
    }

    #[test]
    fn uncertainty_loss_closed_forms() {
        let g = Graph::new();
        let one = scores(vec![1.0]);
        let got = uncertainty_loss(&g, &one, &UncertaintyParams::new(1, 1))
            .unwrap()
            .item();
        let expect = (1.0 - (-1.0f64).exp()) * (-1.0f64).exp();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.23254).abs() < 1e-5);

        let zeros = scores(vec![0.0, 0.0, 0.0, 0.0]);
        for p in 1..5 {
            let v = uncertainty_loss(&g, &zeros, &UncertaintyParams::new(p, 4))
                .unwrap()
                .item();
            assert_eq!(v, 0.0);
        }

        let three = scores(vec![1.0, 1.0, 1.0]);
        let got = uncertainty_loss(&g, &three, &UncertaintyParams::new(2, 3))
            .unwrap()
            .item();
        assert!((got - uncertainty_oracle(2, 3, &[1.0, 1.0, 1.0])).abs() < 1e-15);

        let wrong = scores(vec![1.0, 1.0]);
        assert!(uncertainty_loss(&g, &wrong, &UncertaintyParams::new(2, 3)).is_err());
    }

    #[test]
    fn uncertainty_factor_monotone_in_p_and_weights_decreasing() {
        for n in 1..8 {
            let mut prev = f64::NEG_INFINITY;
            for p in 1..10 {
                let f = UncertaintyParams::new(p, n).observation_factor();
                assert!(f > prev);
                prev = f;
            }
        }
        let weights: Vec<f64> = (1..=10).map(|q| (-(q as f64)).exp()).collect();
        for w in weights.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn sinkhorn_identical_measures_are_zero() {
        let g = Graph::new();
        let pts = Tensor::new(&[3, 2], vec![0.0, 0.1, 0.9, -0.2, 0.5, 0.4]).unwrap();
        let mu = DiscreteMeasure::uniform(pts.detach()).unwrap();
        let nu = DiscreteMeasure::uniform(pts.detach()).unwrap();
        let r = sinkhorn_divergence(&g, &mu, &nu, &OtParams::default()).unwrap();
        assert!(r.value.item().abs() < 1e-6);
    }

    #[test]
    fn sinkhorn_single_pair_is_the_distance() {
        let g = Graph::new();
        let mu = DiscreteMeasure::uniform(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        let nu = DiscreteMeasure::uniform(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
        let r = sinkhorn_divergence(&g, &mu, &nu, &OtParams::default()).unwrap();
        assert!((r.value.item() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn sinkhorn_is_symmetric_and_nonnegative() {
        let g = Graph::new();
        let a = Tensor::new(&[3, 2], vec![0.1, 0.9, -0.5, 0.2, 0.7, 0.7]).unwrap();
        let b = Tensor::new(&[2, 2], vec![0.3, -0.4, 0.8, 0.1]).unwrap();
        let params = OtParams {
            max_iters: 500,
            tol: 1e-10,
            ..OtParams::default()
        };
        let mu = DiscreteMeasure::uniform(a).unwrap();
        let nu = DiscreteMeasure::uniform(b).unwrap();
        let ab = sinkhorn_divergence(&g, &mu, &nu, &params).unwrap();
        let ba = sinkhorn_divergence(&g, &nu, &mu, &params).unwrap();
        assert!((ab.value.item() - ba.value.item()).abs() < 1e-8);
        assert!(ab.value.item() > -1e-8);
    }

    #[test]
    fn sinkhorn_plan_marginals_match_weights() {
        let g = Graph::new();
        let a = Tensor::new(&[3, 2], vec![0.1, 0.9, -0.5, 0.2, 0.7, 0.7]).unwrap();
        let b = Tensor::new(&[2, 2], vec![0.3, -0.4, 0.8, 0.1]).unwrap();
        let params = OtParams {
            max_iters: 2000,
            tol: 1e-9,
            debiased: false,
            ..OtParams::default()
        };
        let mu = DiscreteMeasure::new(a, vec![0.5, 0.25, 0.25]).unwrap();
        let nu = DiscreteMeasure::new(b, vec![0.4, 0.6]).unwrap();
        let r = sinkhorn_divergence(&g, &mu, &nu, &params).unwrap();
        assert!(r.converged);
        for (got, want) in r.plan.row_sums().iter().zip(&mu.weights) {
            assert!((got - want).abs() < 1e-6);
        }
        for (got, want) in r.plan.col_sums().iter().zip(&nu.weights) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn sinkhorn_gradient_matches_finite_differences_on_2x2() {
        let params = OtParams {
            epsilon: 0.05,
            max_iters: 120,
            tol: 0.0, // fixed iteration count keeps the map smooth for FD
            beta: 0.0,
            debiased: true,
        };
        let pts = vec![0.2, 0.7, -0.4, 0.1];
        let target = Tensor::new(&[2, 2], vec![0.9, -0.3, 0.0, 0.5]).unwrap();
        let eval = |x: &[f64]| {
            let g = Graph::new();
            let p = Tensor::param(&[2, 2], x.to_vec()).unwrap();
            let mu = DiscreteMeasure::uniform(p).unwrap();
            let nu = DiscreteMeasure::uniform(target.detach()).unwrap();
            sinkhorn_divergence(&g, &mu, &nu, &params)
                .unwrap()
                .value
                .item()
        };
        let g = Graph::new();
        let p = Tensor::param(&[2, 2], pts.clone()).unwrap();
        let mu = DiscreteMeasure::uniform(p.clone()).unwrap();
        let nu = DiscreteMeasure::uniform(target.detach()).unwrap();
        let r = sinkhorn_divergence(&g, &mu, &nu, &params).unwrap();
        g.backward(&r.value).unwrap();
        let fd = central_diff(&pts, 1e-5, eval);
        assert!(max_rel_err(&p.grad().unwrap(), &fd) < 1e-3);
    }

    #[test]
    fn sequence_ot_identical_and_single_pair() {
        let g = Graph::new();
        let pred = onehot_rows(&[2, 0, 1], 4).unwrap();
        let r = sequence_ot_loss(&g, &pred, &[2, 0, 1], &OtParams::default()).unwrap();
        assert!(r.value.item().abs() < 1e-6);

        let pred = Tensor::new(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let r = sequence_ot_loss(&g, &pred, &[1], &OtParams::default()).unwrap();
        assert!((r.value.item() - 2.0f64.sqrt()).abs() < 1e-6);

        assert!(sequence_ot_loss(&g, &pred, &[], &OtParams::default()).is_err());
    }

    fn step_inputs(g: &Graph, n: usize) -> (Vec<Tensor>, Vec<usize>) {
        let _ = g;
        let rows: Vec<Tensor> = (0..n)
            .map(|i| {
                Tensor::param(&[1, 4], vec![0.1 * i as f64, -0.2, 0.4, 0.05 * i as f64]).unwrap()
            })
            .collect();
        let targets = (0..n).map(|i| i % 4).collect();
        (rows, targets)
    }

    #[test]
    fn combined_loss_beta_zero_reduces_to_base() {
        let g = Graph::new();
        let (rows, targets) = step_inputs(&g, 3);
        let input = SequenceLossInput {
            step_scores: &rows,
            targets: &targets,
            ot_steps: 3,
        };
        let un = UncertaintyParams::new(2, 3);
        let zero_beta = OtParams {
            beta: 0.0,
            ..OtParams::default()
        };
        let with = combined_loss(&g, &input, &un, &zero_beta, LossVariant::UncertaintyFutureOt)
            .unwrap()
            .loss
            .item();
        let without = combined_loss(&g, &input, &un, &zero_beta, LossVariant::UncertaintyFuture)
            .unwrap()
            .loss
            .item();
        assert!((with - without).abs() < 1e-15);
    }

    #[test]
    fn combined_loss_past_only_limit_equals_plain_ce() {
        let g = Graph::new();
        let (rows, targets) = step_inputs(&g, 3);
        let input = SequenceLossInput {
            step_scores: &rows,
            targets: &targets,
            ot_steps: 3,
        };
        let huge_p = UncertaintyParams::new(100_000, 3);
        let past = combined_loss(
            &g,
            &input,
            &huge_p,
            &OtParams::default(),
            LossVariant::UncertaintyPast,
        )
        .unwrap()
        .loss
        .item();
        let ce = combined_loss(
            &g,
            &input,
            &huge_p,
            &OtParams::default(),
            LossVariant::CrossEntropy,
        )
        .unwrap()
        .loss
        .item();
        assert!((past - ce).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_mixing_arithmetic() {
        // beta = 0.001 with known component magnitudes: 0.2688 + 0.001 * 1.5.
        let expected: f64 = 0.2688 + 0.001 * 1.5;
        assert!((expected - 0.2703).abs() < 1e-12);
    }

    #[test]
    fn weak_joint_loss_weighting() {
        let g = Graph::new();
        let obs = Tensor::param(&[1], vec![0.5]).unwrap();
        let fut = Tensor::param(&[1], vec![0.25]).unwrap();
        assert_eq!(weak_joint_loss(&g, &obs, &fut, 0.0).unwrap().item(), 0.5);
        assert_eq!(weak_joint_loss(&g, &obs, &fut, 2.0).unwrap().item(), 1.0);
        assert_eq!(weak_joint_loss(&g, &obs, &fut, 1.0).unwrap().item(), 0.75);
        assert!(weak_joint_loss(&g, &obs, &fut, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn uncertainty_matches_scalar_oracle(
            p in 1usize..10,
            n in 1usize..10,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let g = Graph::new();
            let t = Tensor::new(&[n], losses.clone()).unwrap();
            let got = uncertainty_loss(&g, &t, &UncertaintyParams::new(p, n)).unwrap().item();
            prop_assert!((got - uncertainty_oracle(p, n, &losses)).abs() < 1e-12);
        }

        #[test]
        fn uncertainty_monotone_in_observed_count(
            n in 1usize..8,
            seed in 0u64..500,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..2.0)).collect();
            let g = Graph::new();
            let t = Tensor::new(&[n], losses).unwrap();
            let mut prev = -1.0;
            for p in 1..8 {
                let v = uncertainty_loss(&g, &t, &UncertaintyParams::new(p, n)).unwrap().item();
                prop_assert!(v >= prev);
                prev = v;
            }
        }
    }
}

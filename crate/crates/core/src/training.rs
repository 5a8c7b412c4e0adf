//! One-step training, autoregressive rollout and the evaluation metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;
use crate::params::{Adam, Bound};
use crate::scalar::Scalar;
use crate::solvers::{Dataset, SpectralSolver};
use crate::tensor::Tensor;

/// `||x - y|| / ||y||` over every entry.
pub fn relative_l2<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<S> {
    let diff = x.sub(y)?;
    let norm = y.l2_norm();
    if norm == S::zero() {
        return Err(Error::ZeroReference);
    }
    Ok(diff.l2_norm() / norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Number of halvings spread evenly over the run.
    #[serde(default = "default_halvings")]
    pub lr_halvings: usize,
    /// Weight of the L1 penalty on free moments.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    16
}
fn default_lr() -> f64 {
    1e-3
}
fn default_halvings() -> usize {
    2
}
fn default_lambda() -> f64 {
    1e-3
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            lr_halvings: default_halvings(),
            lambda: default_lambda(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate of `epoch`: halved at every `1/(halvings+1)` of the run.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let period = self.epochs.div_ceil(self.lr_halvings + 1).max(1);
        self.learning_rate * 0.5f64.powi((epoch / period).min(self.lr_halvings) as i32)
    }
}

/// Loss terms of one batch.
pub struct LossTerms<'t, S: Scalar> {
    pub total: Var<'t, S>,
    pub pred: Var<'t, S>,
    pub reg: Var<'t, S>,
}

/// Mean one-step relative error over the batch plus `lambda` times the L1
/// penalty of the free moments (zero for models without any).
pub fn loss<'t, S: Scalar>(
    model: &HybridModel<S>,
    bound: &Bound<'t, S>,
    inputs: &Var<'t, S>,
    targets: &Tensor<S>,
    lambda: f64,
) -> Result<LossTerms<'t, S>> {
    let s = targets.shape().to_vec();
    if s.is_empty() || s[0] == 0 {
        return Err(Error::EmptyBatch);
    }
    let b = s[0];
    let d = targets.len() / b;
    let mut inv = Vec::with_capacity(b);
    for row in targets.data().chunks(d) {
        let n = row.iter().fold(S::zero(), |a, &x| a + x * x).sqrt();
        if n == S::zero() {
            return Err(Error::ZeroReference);
        }
        inv.push(S::one() / n);
    }
    let out = model.step(bound, inputs)?;
    let tape = inputs.tape();
    let diff = out.next.add_const(&targets.scale(-S::one()))?.reshape(&[b, d])?;
    let pred = diff.row_l2_norm()?.mul_const(&Tensor::new(vec![b], inv)?)?.mean();
    let reg = out.reg.unwrap_or_else(|| tape.constant(Tensor::scalar(S::zero())));
    let total = pred.add(&reg.scale(S::lit(lambda)))?;
    Ok(LossTerms { total, pred, reg })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub pred_loss: f64,
    pub reg_loss: f64,
}

/// `[B, C, H, W]` stacks of snapshots `(i, t)` and `(i, t + 1)`.
fn gather<S: Scalar>(data: &Dataset, pairs: &[(usize, usize)]) -> Result<(Tensor<S>, Tensor<S>)> {
    let frame: Vec<usize> = data.trajectories.shape()[2..].to_vec();
    let fl: usize = frame.iter().product();
    let mut x = Vec::with_capacity(pairs.len() * fl);
    let mut y = Vec::with_capacity(pairs.len() * fl);
    for &(i, t) in pairs {
        x.extend(data.snapshot(i, t).data().iter().map(|&v| S::lit(v)));
        y.extend(data.snapshot(i, t + 1).data().iter().map(|&v| S::lit(v)));
    }
    let mut shape = vec![pairs.len()];
    shape.extend(frame);
    Ok((Tensor::new(shape.clone(), x)?, Tensor::new(shape, y)?))
}

/// Every one-step pair `(trajectory, time)` of the dataset.
pub fn one_step_pairs(data: &Dataset) -> Vec<(usize, usize)> {
    let t = data.snapshots();
    (0..data.len()).flat_map(|i| (0..t.saturating_sub(1)).map(move |j| (i, j))).collect()
}

/// Mini-batch Adam on one-step pairs. Returns per-epoch means of the loss
/// terms; the result is a pure function of the model, data and config.
pub fn train<S: Scalar>(model: &mut HybridModel<S>, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let mut pairs = one_step_pairs(data);
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr_at(epoch);
        pairs.shuffle(&mut rng);
        let (mut sums, mut batches) = ([0.0f64; 3], 0usize);
        for chunk in pairs.chunks(cfg.batch_size) {
            let (x, y) = gather::<S>(data, chunk)?;
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let terms = loss(model, &bound, &tape.constant(x), &y, cfg.lambda)?;
            let total = terms.total.value().item()?.to_f64_lossy();
            if !total.is_finite() {
                return Err(Error::NanLoss { epoch });
            }
            sums[0] += total;
            sums[1] += terms.pred.value().item()?.to_f64_lossy();
            sums[2] += terms.reg.value().item()?.to_f64_lossy();
            batches += 1;
            let grads = bound.grads(&tape.backward(terms.total)?)?;
            opt.step(model.params_mut(), &grads)?;
        }
        let n = batches as f64;
        history.push(EpochStats {
            epoch,
            loss: sums[0] / n,
            pred_loss: sums[1] / n,
            reg_loss: sums[2] / n,
        });
    }
    Ok(history)
}

/// Anything that advances a batch of `[B, C, H, W]` states by one step.
pub trait Stepper: Sync {
    fn step_batch(&self, states: &Tensor<f64>) -> Result<Tensor<f64>>;
}

impl<S: Scalar> Stepper for HybridModel<S> {
    fn step_batch(&self, states: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.predict(&states.cast())?.cast())
    }
}

/// The reference solver run directly on the grid of the states; with equal
/// fine and coarse grids it reproduces the data generator exactly.
impl Stepper for SpectralSolver {
    fn step_batch(&self, states: &Tensor<f64>) -> Result<Tensor<f64>> {
        let s = states.shape();
        if s.len() != 4 || s[2] != self.grid() || s[3] != self.grid() {
            return Err(Error::ShapeMismatch {
                op: "SpectralSolver::step_batch",
                expected: vec![s.first().copied().unwrap_or(0), s.get(1).copied().unwrap_or(0), self.grid(), self.grid()],
                found: s.to_vec(),
            });
        }
        let fl = s[1] * s[2] * s[3];
        let out: Vec<f64> = states.data().chunks(fl).flat_map(|f| self.advance(f)).collect();
        Tensor::new(s.to_vec(), out)
    }
}

/// Autoregressive prediction from one initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `[steps + 1, C, H, W]`, starting with the initial state.
    pub states: Tensor<f64>,
    /// `R(prediction_j, reference_j)` for `j = 1..=steps` (empty without a reference).
    pub errors: Vec<f64>,
    /// Failure flag per step; once set it stays set.
    pub failed: Vec<bool>,
}

impl Rollout {
    pub fn has_failed(&self) -> bool {
        self.failed.last().copied().unwrap_or(false)
    }
}

/// Rolls out a batch of trajectories together. `references` is
/// `[B, T, C, H, W]` with `T > steps` when given.
fn rollout_batch(
    model: &dyn Stepper,
    initial: &Tensor<f64>,
    steps: usize,
    references: Option<&Tensor<f64>>,
    threshold: f64,
) -> Result<Vec<Rollout>> {
    let s = initial.shape().to_vec();
    let (b, fl) = (s[0], s[1..].iter().product::<usize>());
    if let Some(r) = references {
        let rs = r.shape();
        if rs.len() != 5 || rs[0] != b || rs[1] <= steps || rs[2..] != s[1..] {
            return Err(Error::ShapeMismatch {
                op: "rollout reference",
                expected: [vec![b, steps + 1], s[1..].to_vec()].concat(),
                found: rs.to_vec(),
            });
        }
    }
    let mut frames = vec![initial.data().to_vec()];
    let mut errors = vec![Vec::with_capacity(steps); b];
    let mut failed = vec![Vec::with_capacity(steps); b];
    let mut state = initial.clone();
    for j in 1..=steps {
        state = model.step_batch(&state)?;
        state.expect_shape("rollout step", &s)?;
        for k in 0..b {
            let pred = &state.data()[k * fl..(k + 1) * fl];
            let mut bad = failed[k].last().copied().unwrap_or(false) || pred.iter().any(|v| !v.is_finite());
            if let Some(r) = references {
                let t = r.shape()[1];
                let off = (k * t + j) * fl;
                let truth = &r.data()[off..off + fl];
                let num = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let den = truth.iter().map(|a| a * a).sum::<f64>().sqrt();
                if den == 0.0 {
                    return Err(Error::ZeroReference);
                }
                let e = num / den;
                bad |= !(e <= threshold);
                errors[k].push(e);
            }
            failed[k].push(bad);
        }
        frames.push(state.data().to_vec());
    }
    let mut out = Vec::with_capacity(b);
    let mut shape = vec![steps + 1];
    shape.extend_from_slice(&s[1..]);
    for k in 0..b {
        let data: Vec<f64> = frames.iter().flat_map(|f| f[k * fl..(k + 1) * fl].iter().copied()).collect();
        out.push(Rollout {
            states: Tensor::new(shape.clone(), data)?,
            errors: std::mem::take(&mut errors[k]),
            failed: std::mem::take(&mut failed[k]),
        });
    }
    Ok(out)
}

/// Default failure threshold on the per-step relative error.
pub const FAILURE_THRESHOLD: f64 = 1.0;

/// Rolls `initial` (`[C, H, W]`) forward `steps` times. With a `[T, C, H, W]`
/// reference the per-step relative errors are recorded as well.
pub fn rollout(model: &dyn Stepper, initial: &Tensor<f64>, steps: usize, reference: Option<&Tensor<f64>>) -> Result<Rollout> {
    let mut s = vec![1];
    s.extend_from_slice(initial.shape());
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            shape: initial.shape().to_vec(),
            reason: "initial state must be [C, H, W]".into(),
        });
    }
    let reference = match reference {
        Some(r) => {
            let mut rs = vec![1];
            rs.extend_from_slice(r.shape());
            Some(r.reshape(&rs)?)
        }
        None => None,
    };
    let mut all = rollout_batch(model, &initial.reshape(&s)?, steps, reference.as_ref(), FAILURE_THRESHOLD)?;
    Ok(all.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean relative error over every step of the successful trajectories
    /// (NaN when all of them failed).
    pub avg_l2_error: f64,
    pub sr_percent: f64,
    pub n_failed: usize,
    #[serde(skip)]
    pub failed: Vec<usize>,
    /// `[trajectory][step]` relative errors.
    #[serde(skip)]
    pub errors: Vec<Vec<f64>>,
}

/// Trajectories rolled out together in one batch.
const EVAL_CHUNK: usize = 8;

/// Rolls out every test trajectory from its first snapshot for `steps` steps
/// (all available ones by default) and scores it against the clean data.
pub fn evaluate(model: &dyn Stepper, test: &Dataset, steps: Option<usize>, threshold: f64) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let available = test.snapshots() - 1;
    let steps = steps.unwrap_or(available);
    if steps > available {
        return Err(Error::InvalidArgument(format!("{steps} steps requested, the data has {available}")));
    }
    let chunks: Vec<Vec<usize>> = (0..test.len()).collect::<Vec<_>>().chunks(EVAL_CHUNK).map(|c| c.to_vec()).collect();
    let results: Vec<Vec<Rollout>> = chunks
        .par_iter()
        .map(|idx| {
            let refs: Vec<Tensor<f64>> = idx.iter().map(|&i| test.trajectory(i)).collect();
            let refs = Tensor::stack(&refs)?;
            let init: Vec<Tensor<f64>> = idx.iter().map(|&i| test.snapshot(i, 0)).collect();
            rollout_batch(model, &Tensor::stack(&init)?, steps, Some(&refs), threshold)
        })
        .collect::<Result<_>>()?;
    let rollouts: Vec<Rollout> = results.into_iter().flatten().collect();
    Ok(summarize(rollouts.into_iter().map(|r| (r.errors, r.failed.last().copied().unwrap_or(false))).collect()))
}

/// Aggregates per-trajectory errors and failure flags.
pub fn summarize(runs: Vec<(Vec<f64>, bool)>) -> EvalReport {
    let n = runs.len();
    let failed: Vec<usize> = runs.iter().enumerate().filter(|(_, r)| r.1).map(|(i, _)| i).collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for (errs, bad) in &runs {
        if !bad {
            sum += errs.iter().sum::<f64>();
            count += errs.len();
        }
    }
    EvalReport {
        avg_l2_error: if count > 0 { sum / count as f64 } else if failed.len() < n { 0.0 } else { f64::NAN },
        sr_percent: if n == 0 { 100.0 } else { 100.0 * (n - failed.len()) as f64 / n as f64 },
        n_failed: failed.len(),
        failed,
        errors: runs.into_iter().map(|r| r.0).collect(),
    }
}

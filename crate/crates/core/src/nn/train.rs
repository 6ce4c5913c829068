//! Multi-step losses over recurrent rollouts, reverse-mode gradients through
//! them, Adam with decoupled weight decay, the one-cycle learning-rate
//! schedule, and the training loop.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{ResNetParams, Tensors};
use crate::sampling::{Dataset, TrainingSample};
use crate::state::PhaseState;
use crate::system::EnergyTransform;

/// Fixed chunk size for batch reductions; summation order is a function of
/// the sample order only, never of the worker count.
const REDUCE_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMetric {
    /// Squared Euclidean distance in phase space.
    Mse,
    /// Squared distance between energy-transform images.
    Ebe,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct OneCycleSchedule {
    pub initial: f64,
    #[serde(rename = "max")]
    pub peak: f64,
    #[serde(rename = "final")]
    pub end: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Loss sequence length S.
    pub sequence_len: usize,
    pub metric: LossMetric,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: OneCycleSchedule,
    pub weight_decay: f64,
    pub seed: u64,
}

fn metric_value(
    metric: LossMetric,
    target: &PhaseState,
    pred: &PhaseState,
    transform: Option<&dyn EnergyTransform>,
) -> f64 {
    match metric {
        LossMetric::Mse => {
            let d = pred.distance(target);
            d * d
        }
        LossMetric::Ebe => {
            let t = transform.expect("EBE requires an energy transform");
            let a = t.apply(pred);
            let b = t.apply(target);
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        }
    }
}

/// d metric / d pred, written into `out` (length 2d).
fn metric_grad(
    metric: LossMetric,
    target: &PhaseState,
    pred: &PhaseState,
    transform: Option<&dyn EnergyTransform>,
    out: &mut [f64],
) {
    match metric {
        LossMetric::Mse => {
            for ((o, a), b) in out
                .iter_mut()
                .zip(pred.concat())
                .zip(target.concat())
            {
                *o = 2.0 * (a - b);
            }
        }
        LossMetric::Ebe => {
            let t = transform.expect("EBE requires an energy transform");
            let a = t.apply(pred);
            let b = t.apply(target);
            let diff: Vec<f64> = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| 2.0 * (x - y))
                .collect();
            t.jacobian_transpose_apply(pred, &diff, out);
        }
    }
}

/// (1/S) sum_i metric(target_i, net^i(u0)); infinite when the rollout leaves
/// the finite range.
pub fn loss_multistep(
    params: &ResNetParams,
    sample: &TrainingSample,
    sequence_len: usize,
    metric: LossMetric,
    transform: Option<&dyn EnergyTransform>,
) -> Result<f64> {
    if sample.targets.len() < sequence_len {
        return Err(Error::Config(format!(
            "sample has {} targets, loss needs {sequence_len}",
            sample.targets.len()
        )));
    }
    let mut x = DVector::from_vec(sample.input.concat());
    let d = sample.input.dim();
    let mut loss = 0.0;
    for target in sample.targets.iter().take(sequence_len) {
        x = params.forward_vec(&x);
        if !x.iter().all(|v| v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        let pred = PhaseState::from_parts(x.as_slice()[..d].to_vec(), x.as_slice()[d..].to_vec());
        loss += metric_value(metric, target, &pred, transform);
    }
    Ok(loss / sequence_len as f64)
}

/// Mean loss over the whole dataset in canonical sample order.
pub fn dataset_loss(
    params: &ResNetParams,
    dataset: &Dataset,
    sequence_len: usize,
    metric: LossMetric,
    transform: Option<&dyn EnergyTransform>,
) -> Result<f64> {
    let sums: Vec<f64> = dataset
        .samples
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| -> Result<f64> {
            let mut s = 0.0;
            for sample in chunk {
                s += loss_multistep(params, sample, sequence_len, metric, transform)?;
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sums.iter().sum::<f64>() / dataset.samples.len() as f64)
}

/// Backpropagate one sample's multi-step loss through the recurrent rollout,
/// accumulating parameter gradients (not yet normalized by batch size).
fn accumulate_sample(
    params: &ResNetParams,
    sample: &TrainingSample,
    sequence_len: usize,
    metric: LossMetric,
    transform: Option<&dyn EnergyTransform>,
    grads: &mut Tensors,
) -> Result<f64> {
    let d = sample.input.dim();
    let inv_s = 1.0 / sequence_len as f64;
    let mut x = DVector::from_vec(sample.input.concat());
    let mut caches = Vec::with_capacity(sequence_len);
    let mut preds = Vec::with_capacity(sequence_len);
    let mut loss = 0.0;
    for target in sample.targets.iter().take(sequence_len) {
        let (out, cache) = params.forward_cached(&x);
        if !out.iter().all(|v| v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        let pred =
            PhaseState::from_parts(out.as_slice()[..d].to_vec(), out.as_slice()[d..].to_vec());
        loss += metric_value(metric, target, &pred, transform);
        caches.push(cache);
        preds.push(pred);
        x = out;
    }

    let mut adjoint = DVector::zeros(2 * d);
    let mut metric_buf = vec![0.0; 2 * d];
    for i in (0..sequence_len).rev() {
        metric_grad(metric, &sample.targets[i], &preds[i], transform, &mut metric_buf);
        for (a, m) in adjoint.iter_mut().zip(&metric_buf) {
            *a += inv_s * m;
        }
        adjoint = params.backward(&caches[i], &adjoint, grads);
    }
    Ok(loss * inv_s)
}

/// Exact reverse-mode gradient of the mean batch loss. Returns the gradient
/// tensors and the mean loss.
pub fn gradient(
    params: &ResNetParams,
    batch: &[TrainingSample],
    sequence_len: usize,
    metric: LossMetric,
    transform: Option<&dyn EnergyTransform>,
) -> Result<(Tensors, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("gradient batch"));
    }
    let partials: Vec<(Tensors, f64)> = batch
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| -> Result<(Tensors, f64)> {
            let mut g = params.zeros_like();
            let mut loss = 0.0;
            for sample in chunk {
                loss += accumulate_sample(params, sample, sequence_len, metric, transform, &mut g)?;
            }
            Ok((g, loss))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (g, l) in partials {
        for (acc, part) in grads.weights.iter_mut().zip(&g.weights) {
            *acc += part;
        }
        for (acc, part) in grads.biases.iter_mut().zip(&g.biases) {
            *acc += part;
        }
        loss += l;
    }
    let inv_n = 1.0 / batch.len() as f64;
    grads.scale(inv_n);
    Ok((grads, loss * inv_n))
}

/// Adam first/second moments with step counter.
pub struct AdamState {
    m: Tensors,
    v: Tensors,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ResNetParams) -> AdamState {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction and decoupled weight decay:
/// theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ResNetParams,
    grads: &Tensors,
    lr: f64,
    weight_decay: f64,
) {
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);

    let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        let decay = lr * weight_decay * *theta;
        *theta -= lr * mhat / (vhat.sqrt() + eps) + decay;
    };

    for ((w, gw), (mw, vw)) in params
        .tensors
        .weights
        .iter_mut()
        .zip(&grads.weights)
        .zip(state.m.weights.iter_mut().zip(state.v.weights.iter_mut()))
    {
        for ((t, g), (m, v)) in w.iter_mut().zip(gw.iter()).zip(mw.iter_mut().zip(vw.iter_mut())) {
            update(t, *g, m, v);
        }
    }
    for ((b, gb), (mb, vb)) in params
        .tensors
        .biases
        .iter_mut()
        .zip(&grads.biases)
        .zip(state.m.biases.iter_mut().zip(state.v.biases.iter_mut()))
    {
        for ((t, g), (m, v)) in b.iter_mut().zip(gb.iter()).zip(mb.iter_mut().zip(vb.iter_mut())) {
            update(t, *g, m, v);
        }
    }
}

/// Cosine one-cycle schedule: ramp initial -> max over the first 30% of
/// steps, anneal max -> final over the rest. Continuous at the switch.
pub fn one_cycle_lr(step: usize, total_steps: usize, schedule: &OneCycleSchedule) -> f64 {
    if total_steps == 0 {
        return schedule.initial;
    }
    let warm = ((0.3 * total_steps as f64).round() as usize).max(1);
    let pi = std::f64::consts::PI;
    if step <= warm {
        let t = step as f64 / warm as f64;
        schedule.initial + (schedule.peak - schedule.initial) * (1.0 - (pi * t).cos()) / 2.0
    } else {
        let t = (step - warm) as f64 / (total_steps - warm).max(1) as f64;
        schedule.end + (schedule.peak - schedule.end) * (1.0 + (pi * t).cos()) / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    /// Mean training loss per epoch, in epoch order.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Train a fresh network on the dataset. Deterministic for a fixed seed:
/// initialization, shuffle order, and batch reductions are all seeded or
/// order-fixed.
pub fn train(
    dataset: &Dataset,
    arch: crate::nn::Arch,
    config: &TrainConfig,
    transform: Option<&dyn EnergyTransform>,
) -> Result<(ResNetParams, TrainHistory)> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    if config.sequence_len == 0 || config.sequence_len > dataset.sequence_len {
        return Err(Error::Config(format!(
            "sequence_len {} outside 1..={}",
            config.sequence_len, dataset.sequence_len
        )));
    }
    if config.metric == LossMetric::Ebe && transform.is_none() {
        return Err(Error::Config("EBE loss needs a system with an energy transform".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be >= 1".into()));
    }

    let mut params = ResNetParams::init(arch, config.seed)?;
    let mut adam = AdamState::new(&params);
    // decorrelate the shuffle stream from the init stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e3779b97f4a7c15);
    let n = dataset.samples.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory { epoch_loss: Vec::with_capacity(config.epochs), steps: 0 };

    for epoch in 0..config.epochs {
        // Fisher-Yates with the run RNG
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainingSample> =
                chunk.iter().map(|i| dataset.samples[*i].clone()).collect();
            let (grads, loss) =
                gradient(&params, &batch, config.sequence_len, config.metric, transform)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            let lr = one_cycle_lr(history.steps, total_steps, &config.lr);
            adam_step(&mut adam, &mut params, &grads, lr, config.weight_decay);
            history.steps += 1;
            epoch_loss += loss * batch.len() as f64;
        }
        history.epoch_loss.push(epoch_loss / n as f64);
    }
    Ok((params, history))
}

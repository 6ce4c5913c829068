//! Fully-connected ResNet surrogate of the solution map: forward pass with
//! 1/L-scaled skip connections and ELU activations, hand-rolled reverse-mode
//! gradients, rollout, and checkpoint serialization.

pub mod train;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::report::fnv1a64;
use crate::solver::SolutionMap;
use crate::state::PhaseState;

pub use train::{
    adam_step, dataset_loss, gradient, loss_multistep, one_cycle_lr, train, AdamState,
    LossMetric, OneCycleSchedule, TrainConfig, TrainHistory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Arch {
    /// Hidden layer count L.
    pub hidden_layers: usize,
    /// Nodes per hidden layer.
    pub width: usize,
    /// Input/output dimension 2d.
    pub state_dim: usize,
}

/// Weight/bias stacks shared by parameters, gradients, and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Tensors {
    fn zeros(arch: &Arch) -> Tensors {
        let (l, n, io) = (arch.hidden_layers, arch.width, arch.state_dim);
        let mut weights = Vec::with_capacity(l + 1);
        let mut biases = Vec::with_capacity(l + 1);
        weights.push(DMatrix::zeros(n, io));
        biases.push(DVector::zeros(n));
        for _ in 1..l {
            weights.push(DMatrix::zeros(n, n));
            biases.push(DVector::zeros(n));
        }
        weights.push(DMatrix::zeros(io, n));
        biases.push(DVector::zeros(io));
        Tensors { weights, biases }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            *w *= c;
        }
        for b in &mut self.biases {
            *b *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flat_map(|w| w.iter()).all(|x| x.is_finite())
            && self.biases.iter().flat_map(|b| b.iter()).all(|x| x.is_finite())
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flat parameter view in layer order, weights row-major then bias.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for w in &mut self.weights {
            for x in w.iter_mut() {
                f(x);
            }
        }
        for b in &mut self.biases {
            for x in b.iter_mut() {
                f(x);
            }
        }
    }
}

/// ResNet parameters: input 2d -> n, (L-1) residual layers n -> n scaled by
/// 1/L, linear output n -> 2d.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetParams {
    pub arch: Arch,
    pub tensors: Tensors,
}

#[inline]
fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

#[inline]
fn elu_prime(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Pre- and post-activation values of one network application, kept for the
/// backward pass.
pub(crate) struct LayerCache {
    input: DVector<f64>,
    pre: Vec<DVector<f64>>,
    post: Vec<DVector<f64>>,
}

impl ResNetParams {
    /// He-style fan-in scaled normal weights, zero biases, seeded.
    pub fn init(arch: Arch, seed: u64) -> Result<ResNetParams> {
        if arch.hidden_layers == 0 || arch.width == 0 || arch.state_dim == 0 {
            return Err(Error::Config(format!("degenerate architecture {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Tensors::zeros(&arch);
        for w in &mut tensors.weights {
            let std = (2.0 / w.ncols() as f64).sqrt();
            for x in w.iter_mut() {
                *x = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(ResNetParams { arch, tensors })
    }

    pub fn zeros_like(&self) -> Tensors {
        Tensors::zeros(&self.arch)
    }

    pub fn forward(&self, u: &PhaseState) -> Result<PhaseState> {
        if u.dim() * 2 != self.arch.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.state_dim,
                got: u.dim() * 2,
                context: "network input",
            });
        }
        let x = DVector::from_vec(u.concat());
        let out = self.forward_vec(&x);
        PhaseState::from_concat(out.as_slice()).or_else(|_| {
            // keep non-finite outputs representable for rollout truncation
            let d = u.dim();
            Ok(PhaseState::from_parts(
                out.as_slice()[..d].to_vec(),
                out.as_slice()[d..].to_vec(),
            ))
        })
    }

    pub(crate) fn forward_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        self.forward_impl(x, None)
    }

    pub(crate) fn forward_cached(&self, x: &DVector<f64>) -> (DVector<f64>, LayerCache) {
        let mut cache = LayerCache {
            input: x.clone(),
            pre: Vec::with_capacity(self.arch.hidden_layers),
            post: Vec::with_capacity(self.arch.hidden_layers),
        };
        let out = self.forward_impl(x, Some(&mut cache));
        (out, cache)
    }

    fn forward_impl(&self, x: &DVector<f64>, mut cache: Option<&mut LayerCache>) -> DVector<f64> {
        let l = self.arch.hidden_layers;
        let inv_l = 1.0 / l as f64;
        let w = &self.tensors.weights;
        let b = &self.tensors.biases;

        let mut z = &w[0] * x + &b[0];
        if let Some(c) = cache.as_deref_mut() {
            c.pre.push(z.clone());
        }
        let mut y = z.map(elu);
        if let Some(c) = cache.as_deref_mut() {
            c.post.push(y.clone());
        }
        for layer in 1..l {
            z = &w[layer] * &y + &b[layer];
            if let Some(c) = cache.as_deref_mut() {
                c.pre.push(z.clone());
            }
            y += inv_l * z.map(elu);
            if let Some(c) = cache.as_deref_mut() {
                c.post.push(y.clone());
            }
        }
        &w[l] * &y + &b[l]
    }

    /// Backward pass of one application. Accumulates parameter gradients into
    /// `grads` and returns the gradient with respect to the input.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache,
        grad_out: &DVector<f64>,
        grads: &mut Tensors,
    ) -> DVector<f64> {
        let l = self.arch.hidden_layers;
        let inv_l = 1.0 / l as f64;
        let w = &self.tensors.weights;

        // output layer reads y_L = post[l-1]
        grads.weights[l].ger(1.0, grad_out, &cache.post[l - 1], 1.0);
        grads.biases[l] += grad_out;
        let mut g_y = w[l].transpose() * grad_out;

        for layer in (1..l).rev() {
            // y_layer = y_{layer-1} + (1/L) elu(z_layer)
            let g_z = DVector::from_iterator(
                cache.pre[layer].len(),
                cache.pre[layer].iter().zip(g_y.iter()).map(|(z, g)| inv_l * elu_prime(*z) * g),
            );
            grads.weights[layer].ger(1.0, &g_z, &cache.post[layer - 1], 1.0);
            grads.biases[layer] += &g_z;
            g_y += w[layer].transpose() * g_z;
        }

        let g_z = DVector::from_iterator(
            cache.pre[0].len(),
            cache.pre[0].iter().zip(g_y.iter()).map(|(z, g)| elu_prime(*z) * g),
        );
        grads.weights[0].ger(1.0, &g_z, &cache.input, 1.0);
        grads.biases[0] += &g_z;
        w[0].transpose() * g_z
    }
}

/// Repeated forward application, truncating at the first non-finite state.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub states: Vec<PhaseState>,
    /// Step index at which the trajectory left the finite range, if any.
    pub truncated_at: Option<usize>,
}

pub fn rollout(params: &ResNetParams, u0: &PhaseState, steps: usize) -> Result<Rollout> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(u0.clone());
    for step in 1..=steps {
        let next = params.forward(states.last().unwrap())?;
        if !next.is_finite() {
            return Ok(Rollout { states, truncated_at: Some(step) });
        }
        states.push(next);
    }
    Ok(Rollout { states, truncated_at: None })
}

/// Trained network packaged as a solution map for parareal and evaluation.
pub struct NetworkMap {
    pub params: Arc<ResNetParams>,
    dt: f64,
}

impl NetworkMap {
    pub fn new(params: Arc<ResNetParams>, dt: f64) -> NetworkMap {
        NetworkMap { params, dt }
    }
}

impl SolutionMap for NetworkMap {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn apply(&self, u: &PhaseState) -> Result<PhaseState> {
        self.params.forward(u)
    }

    fn label(&self) -> String {
        format!(
            "resnet({},{})",
            self.params.arch.hidden_layers, self.params.arch.width
        )
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: JSON header line, one CSV line per tensor in layer order
// (row-major, 17 significant digits), and a trailing fnv1a64 checksum line.
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    kind: String,
    version: u32,
    hidden_layers: usize,
    width: usize,
    state_dim: usize,
    activation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_config: Option<TrainConfig>,
}

pub fn save_checkpoint(
    params: &ResNetParams,
    train_config: Option<&TrainConfig>,
    path: &std::path::Path,
) -> Result<()> {
    let header = CheckpointHeader {
        kind: "resnet-checkpoint".into(),
        version: 1,
        hidden_layers: params.arch.hidden_layers,
        width: params.arch.width,
        state_dim: params.arch.state_dim,
        activation: "elu".into(),
        train_config: train_config.cloned(),
    };
    let mut body = String::new();
    body.push_str(&serde_json::to_string(&header).map_err(|e| Error::Config(e.to_string()))?);
    body.push('\n');
    for (w, b) in params.tensors.weights.iter().zip(&params.tensors.biases) {
        body.push_str(&format!("W,{},{}", w.nrows(), w.ncols()));
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                body.push_str(&format!(",{:.17e}", w[(r, c)]));
            }
        }
        body.push('\n');
        body.push_str(&format!("b,{}", b.len()));
        for x in b.iter() {
            body.push_str(&format!(",{x:.17e}"));
        }
        body.push('\n');
    }
    let checksum = fnv1a64(body.as_bytes());
    let mut file = std::fs::File::create(path)?;
    file.write_all(body.as_bytes())?;
    writeln!(file, "checksum,{checksum:016x}")?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(ResNetParams, Option<TrainConfig>)> {
    let content = std::fs::read_to_string(path)?;
    let (body, checksum_line) = content
        .trim_end_matches('\n')
        .rsplit_once('\n')
        .ok_or_else(|| Error::CheckpointCorrupt("missing checksum line".into()))?;
    let body_with_newline = format!("{body}\n");
    let expected = checksum_line
        .strip_prefix("checksum,")
        .ok_or_else(|| Error::CheckpointCorrupt("malformed checksum line".into()))?;
    let actual = format!("{:016x}", fnv1a64(body_with_newline.as_bytes()));
    if actual != expected {
        return Err(Error::CheckpointCorrupt(format!(
            "checksum mismatch: file says {expected}, content hashes to {actual}"
        )));
    }

    let mut lines = std::io::Cursor::new(body_with_newline.as_bytes()).lines();
    let header_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::CheckpointCorrupt("empty checkpoint".into()))?;
    let header: CheckpointHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    if header.kind != "resnet-checkpoint" || header.version != 1 {
        return Err(Error::CheckpointCorrupt("unknown kind or version".into()));
    }
    let arch = Arch {
        hidden_layers: header.hidden_layers,
        width: header.width,
        state_dim: header.state_dim,
    };
    let mut tensors = Tensors::zeros(&arch);
    for idx in 0..=arch.hidden_layers {
        let wline = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::CheckpointCorrupt("missing weight row".into()))?;
        parse_weight_line(&wline, &mut tensors.weights[idx])?;
        let bline = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::CheckpointCorrupt("missing bias row".into()))?;
        parse_bias_line(&bline, &mut tensors.biases[idx])?;
    }
    Ok((ResNetParams { arch, tensors }, header.train_config))
}

fn parse_weight_line(line: &str, w: &mut DMatrix<f64>) -> Result<()> {
    let mut parts = line.split(',');
    if parts.next() != Some("W") {
        return Err(Error::CheckpointCorrupt("expected weight line".into()));
    }
    let rows: usize = parse_field(parts.next())?;
    let cols: usize = parse_field(parts.next())?;
    if rows != w.nrows() || cols != w.ncols() {
        return Err(Error::CheckpointCorrupt(format!(
            "weight shape {rows}x{cols} does not match header"
        )));
    }
    for r in 0..rows {
        for c in 0..cols {
            w[(r, c)] = parse_field(parts.next())?;
        }
    }
    Ok(())
}

fn parse_bias_line(line: &str, b: &mut DVector<f64>) -> Result<()> {
    let mut parts = line.split(',');
    if parts.next() != Some("b") {
        return Err(Error::CheckpointCorrupt("expected bias line".into()));
    }
    let len: usize = parse_field(parts.next())?;
    if len != b.len() {
        return Err(Error::CheckpointCorrupt("bias length mismatch".into()));
    }
    for i in 0..len {
        b[i] = parse_field(parts.next())?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>) -> Result<T> {
    field
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::CheckpointCorrupt("truncated numeric field".into()))
}

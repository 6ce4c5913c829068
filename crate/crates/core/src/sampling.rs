//! Offline training-data generation: the HMC-style energy-shell sampler, the
//! trajectory-ensemble baseline, target-sequence construction, and coverage
//! diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::solver::SolutionMap;
use crate::state::PhaseState;
use crate::system::HamiltonianSystem;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    /// Target energy H0.
    pub target_energy: f64,
    pub q0: Vec<f64>,
    /// Std dev of the kinetic-energy jitter.
    pub sigma: f64,
    /// Chain count (shell sampler).
    pub chains: usize,
    /// Transitions per chain (shell sampler).
    pub transitions: usize,
    /// Level-set count (trajectory ensemble).
    pub level_sets: usize,
    /// Trajectories per level set (trajectory ensemble).
    pub trajectories: usize,
    /// Points collected per trajectory (trajectory ensemble).
    pub traj_len: usize,
    pub seed: u64,
    pub max_rejects: usize,
}

impl SamplerConfig {
    fn validate(&self, system: &dyn HamiltonianSystem) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.q0.len() != system.dim() {
            return Err(Error::DimensionMismatch {
                expected: system.dim(),
                got: self.q0.len(),
                context: "sampler q0",
            });
        }
        if self.max_rejects == 0 {
            return Err(Error::Config("max_rejects must be at least 1".into()));
        }
        Ok(())
    }
}

/// Origin of one emitted state: group is the chain (or level set), member the
/// trajectory within a level set, step the index along the chain/trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub group: usize,
    pub member: usize,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct SampleSet {
    pub states: Vec<PhaseState>,
    pub provenance: Vec<Provenance>,
    pub config: SamplerConfig,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Draw from N(mu, sigma^2) conditioned on positivity, counting rejections.
fn truncated_kinetic(
    mu: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
    max_rejects: usize,
) -> std::result::Result<f64, usize> {
    let mut rejects = 0;
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let k = mu + sigma * z;
        if k > 0.0 {
            return Ok(k);
        }
        rejects += 1;
        if rejects >= max_rejects {
            return Err(rejects);
        }
    }
}

/// Uniform direction on the unit sphere via a normalized Gaussian draw.
fn unit_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Momentum refreshment: sample K' ~ N(H0 - U(q), sigma^2) rejecting
/// non-positive draws, pick a uniform direction, and scale so that
/// p^T M^-1 p = 2 K' exactly (up to round-off).
pub fn sample_momentum_on_shell(
    system: &dyn HamiltonianSystem,
    q: &[f64],
    target_energy: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
    max_rejects: usize,
) -> Result<Vec<f64>> {
    let mu = target_energy - system.potential(q);
    let kinetic = truncated_kinetic(mu, sigma, rng, max_rejects).map_err(|rejects| {
        Error::ShellUnreachable { chain: 0, step: 0, rejects }
    })?;
    let dir = unit_direction(system.dim(), rng);
    let scale = (2.0 * kinetic).sqrt();
    Ok(dir
        .iter()
        .zip(system.mass_diag())
        .map(|(x, m)| scale * m.sqrt() * x)
        .collect())
}

fn chain_rng(seed: u64, group: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(group as u64 + 1);
    rng
}

fn relabel_shell_err(e: Error, chain: usize, step: usize) -> Error {
    match e {
        Error::ShellUnreachable { rejects, .. } => Error::ShellUnreachable { chain, step, rejects },
        other => other,
    }
}

/// Energy-shell chain sampler: each transition refreshes the momentum at the
/// current position and flows the state by the map's interval. Chains are
/// independent given (seed, chain index), so results do not depend on the
/// worker count.
pub fn hmc_h0(
    system: &dyn HamiltonianSystem,
    flow: &dyn SolutionMap,
    config: &SamplerConfig,
) -> Result<SampleSet> {
    config.validate(system)?;
    if config.chains == 0 || config.transitions == 0 {
        return Err(Error::Config("chain and transition counts must be >= 1".into()));
    }
    let chains: Vec<Vec<PhaseState>> = (0..config.chains)
        .into_par_iter()
        .map(|chain| -> Result<Vec<PhaseState>> {
            let mut rng = chain_rng(config.seed, chain);
            let mut q = config.q0.clone();
            let mut out = Vec::with_capacity(config.transitions);
            for step in 0..config.transitions {
                let p = sample_momentum_on_shell(
                    system,
                    &q,
                    config.target_energy,
                    config.sigma,
                    &mut rng,
                    config.max_rejects,
                )
                .map_err(|e| relabel_shell_err(e, chain, step))?;
                let next = flow.apply(&PhaseState::from_parts(p, q.clone()))?;
                if !next.is_finite() {
                    return Err(Error::NonFiniteState { iteration: chain, index: step });
                }
                q = next.q().to_vec();
                out.push(next);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut states = Vec::with_capacity(config.chains * config.transitions);
    let mut provenance = Vec::with_capacity(states.capacity());
    for (chain, list) in chains.into_iter().enumerate() {
        for (step, u) in list.into_iter().enumerate() {
            states.push(u);
            provenance.push(Provenance { group: chain, member: 0, step });
        }
    }
    Ok(SampleSet { states, provenance, config: config.clone() })
}

/// Trajectory-ensemble sampler: one kinetic energy per level set, one
/// direction per trajectory, all trajectories starting from q0, collecting
/// the first `traj_len` flow images.
pub fn traj_ensemble_h0(
    system: &dyn HamiltonianSystem,
    flow: &dyn SolutionMap,
    config: &SamplerConfig,
) -> Result<SampleSet> {
    config.validate(system)?;
    if config.level_sets == 0 || config.trajectories == 0 || config.traj_len == 0 {
        return Err(Error::Config(
            "level-set, trajectory, and length counts must be >= 1".into(),
        ));
    }
    let mu = config.target_energy - system.potential(&config.q0);
    let groups: Vec<Vec<PhaseState>> = (0..config.level_sets)
        .into_par_iter()
        .map(|set| -> Result<Vec<PhaseState>> {
            let mut rng = chain_rng(config.seed, set);
            let kinetic = truncated_kinetic(mu, config.sigma, &mut rng, config.max_rejects)
                .map_err(|rejects| Error::ShellUnreachable { chain: set, step: 0, rejects })?;
            let scale = (2.0 * kinetic).sqrt();
            let mut out = Vec::with_capacity(config.trajectories * config.traj_len);
            for _ in 0..config.trajectories {
                let dir = unit_direction(system.dim(), &mut rng);
                let p: Vec<f64> = dir
                    .iter()
                    .zip(system.mass_diag())
                    .map(|(x, m)| scale * m.sqrt() * x)
                    .collect();
                let mut u = PhaseState::from_parts(p, config.q0.clone());
                for step in 0..config.traj_len {
                    u = flow.apply(&u)?;
                    if !u.is_finite() {
                        return Err(Error::NonFiniteState { iteration: set, index: step });
                    }
                    out.push(u.clone());
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut states = Vec::new();
    let mut provenance = Vec::new();
    for (set, list) in groups.into_iter().enumerate() {
        for (i, u) in list.into_iter().enumerate() {
            states.push(u);
            provenance.push(Provenance {
                group: set,
                member: i / config.traj_len,
                step: i % config.traj_len,
            });
        }
    }
    Ok(SampleSet { states, provenance, config: config.clone() })
}

/// One training pair: an input state and its fine-solver target sequence.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub input: PhaseState,
    pub targets: Vec<PhaseState>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<TrainingSample>,
    pub state_dim: usize,
    pub sequence_len: usize,
    /// Samples dropped because propagation left the finite range.
    pub dropped: usize,
}

/// Propagate every input `sequence_len` steps with the fine map, in parallel
/// across samples. Non-finite propagations drop the sample and are counted.
pub fn build_training_set(
    inputs: &SampleSet,
    fine: &dyn SolutionMap,
    sequence_len: usize,
) -> Result<Dataset> {
    if sequence_len == 0 {
        return Err(Error::Config("target sequence length must be >= 1".into()));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyInput("sample set"));
    }
    let rows: Vec<Option<TrainingSample>> = inputs
        .states
        .par_iter()
        .map(|u0| {
            let mut targets = Vec::with_capacity(sequence_len);
            let mut u = u0.clone();
            for _ in 0..sequence_len {
                u = match fine.apply(&u) {
                    Ok(v) if v.is_finite() => v,
                    _ => return None,
                };
                targets.push(u.clone());
            }
            Some(TrainingSample { input: u0.clone(), targets })
        })
        .collect();
    let mut samples = Vec::with_capacity(rows.len());
    let mut dropped = 0;
    for row in rows {
        match row {
            Some(s) => samples.push(s),
            None => dropped += 1,
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("training set after dropping non-finite samples"));
    }
    let state_dim = samples[0].input.dim();
    Ok(Dataset { samples, state_dim, sequence_len, dropped })
}

/// Euclidean nearest-neighbor distance from each reference point to the
/// sample set, brute force over all pairs.
pub fn min_distance_diagnostic(
    reference: &[PhaseState],
    set: &SampleSet,
) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::EmptyInput("sample set for distance diagnostic"));
    }
    Ok(reference
        .par_iter()
        .map(|r| {
            set.states
                .iter()
                .map(|s| r.distance(s))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct DatasetHeader {
    kind: String,
    version: u32,
    state_dim: usize,
    sequence_len: usize,
    count: usize,
    algo: String,
    sampler: SamplerConfig,
}

/// Dataset file: one JSON header line (config snapshot, dimensions, count)
/// followed by CSV rows `u0, target_1, ..., target_S` in full precision.
pub fn write_dataset(
    dataset: &Dataset,
    sampler: &SamplerConfig,
    algo: &str,
    path: &std::path::Path,
) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let header = DatasetHeader {
        kind: "pint-dataset".into(),
        version: 1,
        state_dim: dataset.state_dim,
        sequence_len: dataset.sequence_len,
        count: dataset.samples.len(),
        algo: algo.into(),
        sampler: sampler.clone(),
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "{}",
        serde_json::to_string(&header).map_err(|e| Error::Config(e.to_string()))?
    )?;
    for sample in &dataset.samples {
        let mut row: Vec<String> = sample
            .input
            .concat()
            .iter()
            .map(|x| format!("{x:.17e}"))
            .collect();
        for t in &sample.targets {
            row.extend(t.concat().iter().map(|x| format!("{x:.17e}")));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &std::path::Path) -> Result<(Dataset, SamplerConfig, String)> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Config("empty dataset file".into()))?;
    let header: DatasetHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::Config(format!("dataset header: {e}")))?;
    if header.kind != "pint-dataset" || header.version != 1 {
        return Err(Error::Config("unknown dataset kind or version".into()));
    }
    let width = 2 * header.state_dim * (header.sequence_len + 1);
    let mut samples = Vec::with_capacity(header.count);
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("dataset row {}: {e}", lineno + 2)))?;
        if values.len() != width {
            return Err(Error::Config(format!(
                "dataset row {} has {} fields, expected {width}",
                lineno + 2,
                values.len()
            )));
        }
        let block = 2 * header.state_dim;
        let input = PhaseState::from_concat(&values[..block])?;
        let targets = (1..=header.sequence_len)
            .map(|i| PhaseState::from_concat(&values[i * block..(i + 1) * block]))
            .collect::<Result<Vec<_>>>()?;
        samples.push(TrainingSample { input, targets });
    }
    if samples.len() != header.count {
        return Err(Error::Config(format!(
            "dataset row count {} does not match header count {}",
            samples.len(),
            header.count
        )));
    }
    Ok((
        Dataset {
            samples,
            state_dim: header.state_dim,
            sequence_len: header.sequence_len,
            dropped: 0,
        },
        header.sampler,
        header.algo,
    ))
}

/// Mean and variance of N(mu, sigma^2) truncated to (0, inf), for checking
/// sampler statistics against closed-form moments.
pub fn truncated_normal_moments(mu: f64, sigma: f64) -> (f64, f64) {
    let alpha = -mu / sigma;
    let lambda = normal_pdf(alpha) / (1.0 - normal_cdf(alpha));
    let mean = mu + sigma * lambda;
    let delta = lambda * (lambda - alpha);
    let var = sigma * sigma * (1.0 - delta);
    (mean, var)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Abramowitz-Stegun 7.1.26 rational approximation of erf, |error| < 7.5e-8.
fn normal_cdf(x: f64) -> f64 {
    let z = x.abs() / 2.0_f64.sqrt();
    let t = 1.0 / (1.0 + 0.3275911 * z);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-z * z).exp();
    let erf = if x >= 0.0 { erf } else { -erf };
    0.5 * (1.0 + erf)
}

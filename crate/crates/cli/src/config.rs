//! TOML experiment configuration and construction of systems and solver
//! handles from it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pint_core::error::{Error, Result};
use pint_core::integrators::{IntegratorSpec, Precision, Scheme};
use pint_core::nn::{load_checkpoint, NetworkMap, OneCycleSchedule};
use pint_core::parareal::PararealMode;
use pint_core::solver::{IntegratorMap, SolutionMap};
use pint_core::state::PhaseState;
use pint_core::system::{FpuSystem, HamiltonianSystem, HarmonicOscillator};

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<OutputConfig>,
    pub simulate: Option<SimulateConfig>,
    pub parareal: Option<PararealSection>,
    pub sampler: Option<SamplerSection>,
    pub train: Option<TrainSection>,
    pub eval: Option<EvalSection>,
    pub bench: Option<BenchSection>,
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemConfig {
    Fpu { m: usize, omega: f64 },
    Harmonic,
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Substep size: plain number or exact dyadic text like "2^-9".
#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(untagged)]
pub enum HSpec {
    Dyadic(String),
    Plain(f64),
}

impl HSpec {
    pub fn resolve(&self) -> Result<f64> {
        match self {
            HSpec::Plain(x) => Ok(*x),
            HSpec::Dyadic(text) => {
                let t = text.trim();
                let rest = t
                    .strip_prefix("2^")
                    .ok_or_else(|| Error::Config(format!("step size `{t}` is not dyadic 2^k")))?;
                let exp: i32 = rest
                    .parse()
                    .map_err(|_| Error::Config(format!("bad dyadic exponent in `{t}`")))?;
                Ok(2f64.powi(exp))
            }
        }
    }
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(untagged)]
pub enum SolverConfig {
    Network { nn_checkpoint: PathBuf },
    Integrator {
        scheme: SchemeName,
        h: HSpec,
        #[serde(default)]
        precision: PrecisionName,
    },
}

#[derive(Debug, Clone, Copy, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Vv,
    Css4,
    Kl8,
}

#[derive(Debug, Clone, Copy, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionName {
    #[default]
    Double,
    Dd,
}

impl SolverConfig {
    pub fn integrator_spec(&self) -> Result<Option<IntegratorSpec>> {
        match self {
            SolverConfig::Network { .. } => Ok(None),
            SolverConfig::Integrator { scheme, h, precision } => {
                let scheme = match scheme {
                    SchemeName::Vv => Scheme::Vv,
                    SchemeName::Css4 => Scheme::Css4,
                    SchemeName::Kl8 => Scheme::Kl8,
                };
                let precision = match precision {
                    PrecisionName::Double => Precision::Double,
                    PrecisionName::Dd => Precision::DoubleDouble,
                };
                Ok(Some(IntegratorSpec::new(scheme, h.resolve()?, precision)?))
            }
        }
    }

    /// Resolve into a solution map with interval length `dt`. Checkpoint
    /// paths are taken relative to `base` when not absolute.
    pub fn build(
        &self,
        system: &Arc<dyn HamiltonianSystem>,
        dt: f64,
        base: &Path,
    ) -> Result<Box<dyn SolutionMap>> {
        match self {
            SolverConfig::Integrator { .. } => {
                let spec = self.integrator_spec()?.expect("integrator config");
                Ok(Box::new(IntegratorMap::new(system.clone(), spec, dt)?))
            }
            SolverConfig::Network { nn_checkpoint } => {
                let path = if nn_checkpoint.is_absolute() {
                    nn_checkpoint.clone()
                } else {
                    base.join(nn_checkpoint)
                };
                let (params, _) = load_checkpoint(&path)?;
                Ok(Box::new(NetworkMap::new(Arc::new(params), dt)))
            }
        }
    }
}

/// A value that may defer to the system's canonical choice.
#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(untagged)]
pub enum Canonical<T> {
    Keyword(String),
    Value(T),
}

impl<T: Clone> Canonical<T> {
    fn resolve(&self, canonical: T, what: &str) -> Result<T> {
        match self {
            Canonical::Value(v) => Ok(v.clone()),
            Canonical::Keyword(k) if k == "canonical" => Ok(canonical),
            Canonical::Keyword(k) => Err(Error::Config(format!("unknown {what} keyword `{k}`"))),
        }
    }
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
pub struct SimulateConfig {
    pub steps: usize,
    pub dt: f64,
    pub solver: SolverConfig,
    pub reference: Option<SolverConfig>,
    pub initial: Option<Canonical<Vec<f64>>>,
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
pub struct PararealSection {
    pub mode: PararealMode,
    pub n: usize,
    pub k: usize,
    pub dt: f64,
    pub coarse: SolverConfig,
    pub fine: SolverConfig,
    pub n_trust: Option<usize>,
    pub reference: Option<SolverConfig>,
    #[serde(default)]
    pub dump_correctors: bool,
    pub pinv_tol: Option<f64>,
    pub pinv_max_iter: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerAlgo {
    Hmc,
    Trajensemble,
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
pub struct SamplerSection {
    pub algo: SamplerAlgo,
    pub h0: Canonical<f64>,
    pub q0: Canonical<Vec<f64>>,
    pub sigma: f64,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default = "one")]
    pub transitions: usize,
    #[serde(default = "one")]
    pub level_sets: usize,
    #[serde(default = "one")]
    pub trajectories: usize,
    #[serde(default = "one")]
    pub traj_len: usize,
    pub delta_t: f64,
    pub flow: SolverConfig,
    #[serde(default = "default_max_rejects")]
    pub max_rejects: usize,
    /// Target-sequence length S for the emitted dataset.
    pub sequence_len: usize,
    /// Fine solver used to build target sequences.
    pub fine: SolverConfig,
    pub fine_dt: f64,
    #[serde(default = "default_dataset_name")]
    pub dataset_out: PathBuf,
}

fn one() -> usize {
    1
}

fn default_max_rejects() -> usize {
    10_000
}

fn default_dataset_name() -> PathBuf {
    PathBuf::from("dataset.csv")
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
pub struct TrainSection {
    pub dataset: PathBuf,
    pub hidden_layers: usize,
    pub width: usize,
    pub sequence_len: usize,
    pub metric: pint_core::nn::LossMetric,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: OneCycleSchedule,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_checkpoint_name")]
    pub checkpoint_out: PathBuf,
}

fn default_checkpoint_name() -> PathBuf {
    PathBuf::from("net.ckpt")
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
pub struct EvalSection {
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub dt: f64,
    pub reference: Option<SolverConfig>,
    pub initial: Option<Canonical<Vec<f64>>>,
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
pub struct BenchSection {
    pub dt: f64,
    #[serde(default = "default_calls")]
    pub calls: usize,
    pub reference: SolverConfig,
    pub solvers: Vec<SolverConfig>,
}

fn default_calls() -> usize {
    100
}

/// Parsed configuration plus the raw text (for the manifest snapshot).
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: String,
    pub base_dir: PathBuf,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig =
        toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base_dir = path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig { config, raw, base_dir })
}

/// Constructed system with access to instance-specific extras.
pub enum SystemHandle {
    Fpu(Arc<FpuSystem>),
    Harmonic(Arc<HarmonicOscillator>),
}

impl SystemHandle {
    pub fn build(config: &SystemConfig) -> Result<SystemHandle> {
        match config {
            SystemConfig::Fpu { m, omega } => Ok(SystemHandle::Fpu(Arc::new(FpuSystem::new(*m, *omega)?))),
            SystemConfig::Harmonic => Ok(SystemHandle::Harmonic(Arc::new(HarmonicOscillator::new()))),
        }
    }

    pub fn as_dyn(&self) -> Arc<dyn HamiltonianSystem> {
        match self {
            SystemHandle::Fpu(s) => s.clone(),
            SystemHandle::Harmonic(s) => s.clone(),
        }
    }

    pub fn fpu(&self) -> Option<&Arc<FpuSystem>> {
        match self {
            SystemHandle::Fpu(s) => Some(s),
            _ => None,
        }
    }

    /// The standard starting state for the system.
    pub fn canonical_state(&self) -> PhaseState {
        match self {
            SystemHandle::Fpu(s) => s.canonical_initial_state(),
            SystemHandle::Harmonic(_) => PhaseState::new(vec![1.0], vec![0.0]).expect("static state"),
        }
    }

    pub fn canonical_energy(&self) -> f64 {
        match self {
            SystemHandle::Fpu(s) => s.canonical_energy(),
            SystemHandle::Harmonic(_) => 0.5,
        }
    }

    pub fn resolve_state(&self, spec: &Option<Canonical<Vec<f64>>>) -> Result<PhaseState> {
        match spec {
            None => Ok(self.canonical_state()),
            Some(c) => {
                let flat = c.resolve(self.canonical_state().concat(), "initial state")?;
                PhaseState::from_concat(&flat)
            }
        }
    }

    pub fn resolve_energy(&self, spec: &Canonical<f64>) -> Result<f64> {
        spec.resolve(self.canonical_energy(), "target energy")
    }

    pub fn resolve_q0(&self, spec: &Canonical<Vec<f64>>) -> Result<Vec<f64>> {
        let q = spec.resolve(self.canonical_state().q().to_vec(), "q0")?;
        if q.len() != self.as_dyn().dim() {
            return Err(Error::DimensionMismatch {
                expected: self.as_dyn().dim(),
                got: q.len(),
                context: "sampler q0",
            });
        }
        Ok(q)
    }
}

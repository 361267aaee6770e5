//! Experiment configuration: one TOML file fully determines a run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use pathlattice::drift::DriftSpec;
use pathlattice::error::{CoreError, Result};
use pathlattice::lattice::InteractionRange;
use pathlattice::sim::{parameter_hash, BoundaryField, BoundaryMode, InitialLaw, SimConfig};

fn default_steps() -> usize {
    pathlattice::paths::DEFAULT_STEPS
}

fn default_z() -> f64 {
    3.0
}

fn default_spread() -> f64 {
    0.5
}

fn default_trials() -> usize {
    10_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub d: usize,
    pub n: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub replicas: usize,
    #[serde(default)]
    pub boundary: BoundaryMode,
}

impl SimBlock {
    pub fn to_sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            d: self.d,
            n: self.n,
            steps: self.steps,
            replicas: self.replicas,
            seed,
            boundary: self.boundary.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftConfig {
    Zero,
    Constant {
        c: f64,
    },
    Ou {
        kappa: f64,
    },
    BarycentreDelay {
        radius: usize,
        delay: f64,
        beta_plus: f64,
        beta_minus: f64,
    },
    /// Running time integral of the centre coordinate.
    RunningIntegral,
    NonLocalProbe,
    NonAdaptedProbe,
}

impl DriftConfig {
    pub fn build(&self, d: usize) -> Result<DriftSpec> {
        Ok(match self {
            DriftConfig::Zero => DriftSpec::zero(d),
            DriftConfig::Constant { c } => DriftSpec::constant(d, *c),
            DriftConfig::Ou { kappa } => DriftSpec::ornstein_uhlenbeck(d, *kappa)?,
            DriftConfig::BarycentreDelay {
                radius,
                delay,
                beta_plus,
                beta_minus,
            } => DriftSpec::barycentre_delay_const(
                InteractionRange::ball(d, *radius)?,
                *delay,
                *beta_plus,
                *beta_minus,
            )?,
            DriftConfig::RunningIntegral => DriftSpec::running_integral_coordinate(d),
            DriftConfig::NonLocalProbe => DriftSpec::non_local_probe(d),
            DriftConfig::NonAdaptedProbe => DriftSpec::non_adapted_probe(d),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Dirac { value: f64 },
    GaussianProduct { mean: f64, variance: f64 },
}

impl InitialConfig {
    pub fn build(&self) -> InitialLaw {
        match self {
            InitialConfig::Dirac { value } => InitialLaw::Dirac { value: *value },
            InitialConfig::GaussianProduct { mean, variance } => InitialLaw::GaussianProduct {
                mean: *mean,
                variance: *variance,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFnConfig {
    Coordinate { k: usize },
    CoordinateCapped { k: usize, cap: f64 },
    CoordinateSquared { k: usize },
    PositiveIndicator { k: usize },
}

impl TestFnConfig {
    pub fn grid_index(&self) -> usize {
        match self {
            TestFnConfig::Coordinate { k }
            | TestFnConfig::CoordinateCapped { k, .. }
            | TestFnConfig::CoordinateSquared { k }
            | TestFnConfig::PositiveIndicator { k } => *k,
        }
    }

    pub fn build(&self, d: usize) -> pathlattice::sim::LocalObservable {
        use pathlattice::sim::LocalObservable;
        match self {
            TestFnConfig::Coordinate { k } => LocalObservable::coordinate(d, *k),
            TestFnConfig::CoordinateCapped { k, cap } => {
                LocalObservable::coordinate_capped(d, *k, *cap)
            }
            TestFnConfig::CoordinateSquared { k } => LocalObservable::coordinate_squared(d, *k),
            TestFnConfig::PositiveIndicator { k } => LocalObservable::positive_indicator(d, *k),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlrBlock {
    /// Radius of the inner volume around the origin (0 = the origin alone).
    pub volume_radius: usize,
    /// Kernel proposals per replica.
    pub inner: usize,
    #[serde(default = "default_z")]
    pub z_threshold: f64,
    pub tests: Vec<TestFnConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyBlock {
    #[serde(default = "default_z")]
    pub z_threshold: f64,
}

impl Default for EntropyBlock {
    fn default() -> Self {
        EntropyBlock {
            z_threshold: default_z(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeEnergyBlock {
    /// Full model drift; mutually exclusive with `beta_offset`.
    #[serde(default)]
    pub beta: Option<DriftConfig>,
    /// Model drift = sampling drift plus this constant.
    #[serde(default)]
    pub beta_offset: Option<f64>,
    #[serde(default = "default_z")]
    pub z_threshold: f64,
}

impl FreeEnergyBlock {
    pub fn build_beta(&self, sampling: &DriftSpec, d: usize) -> Result<DriftSpec> {
        match (&self.beta, self.beta_offset) {
            (Some(cfg), None) => cfg.build(d),
            (None, Some(shift)) => Ok(sampling.clone().with_offset(shift)),
            _ => Err(CoreError::InvalidParameter(
                "free_energy needs exactly one of beta or beta_offset".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentBlock {
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub boundary: BoundaryField,
    #[serde(default = "default_spread")]
    pub spread_tolerance: f64,
    #[serde(default = "default_z")]
    pub z_threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    #[serde(default = "default_trials")]
    pub trials: usize,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        VerifyBlock {
            trials: default_trials(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

/// The full description of one run. The content hash of this structure
/// (after command-line overrides) is embedded in every output file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Which experiment the file describes; must match the subcommand.
    pub experiment: String,
    pub seed: u64,
    pub sim: SimBlock,
    pub drift: DriftConfig,
    pub initial: InitialConfig,
    pub output: OutputBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dlr: Option<DlrBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_energy: Option<FreeEnergyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment: Option<MomentBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyBlock>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> std::result::Result<ExperimentConfig, toml::de::Error> {
        toml::from_str(text)
    }

    /// Content hash of the effective configuration; depends on every field
    /// (including overridden seed and output dir) and nothing else.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        parameter_hash(&canonical)
    }
}

//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::CouplingMode;
use crate::density::{Alg3Options, Alg4Options};
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::fixtures::{self, Profile};
use crate::hrf::{LrSchedule, TrainConfig};
use crate::nn::{AdamConfig, MlpConfig};
use crate::sampler::SamplerSchedule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default)]
    pub velocity_check: VelocityCheckSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

fn default_name() -> String {
    "experiment".into()
}

/// Source and target laws, either from a named fixture or given explicitly.
/// Explicit entries override the fixture.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<DistributionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<DistributionSpec>,
}

impl DataSection {
    pub fn resolve(&self) -> Result<(DistributionSpec, DistributionSpec)> {
        let fixture = self.fixture.as_deref().map(fixtures::by_name).transpose()?;
        let target = self
            .target
            .clone()
            .or_else(|| fixture.as_ref().map(|f| f.target.clone()))
            .ok_or_else(|| Error::Config("missing target: set data.fixture or data.target".into()))?;
        let source = self
            .source
            .clone()
            .or_else(|| fixture.as_ref().map(|f| f.source.clone()))
            .unwrap_or_else(|| DistributionSpec::gaussian(target.dim()));
        source.validate()?;
        target.validate()?;
        if source.dim() != target.dim() {
            return Err(Error::Config(format!(
                "source dim {} differs from target dim {}",
                source.dim(),
                target.dim()
            )));
        }
        Ok((source, target))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "two")]
    pub depth: usize,
    #[serde(default)]
    pub profile: Profile,
    /// Overrides the profile's batch size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Overrides the profile's iteration count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Fixed training-set size; 0 draws fresh targets every iteration.
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    #[serde(default)]
    pub coupling: CouplingMode,
    #[serde(default = "default_ot_batch")]
    pub ot_batch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<MlpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_sources: Option<Vec<DistributionSpec>>,
}

fn two() -> usize {
    2
}
fn default_lr() -> f64 {
    1e-3
}
fn default_log_every() -> usize {
    100
}
fn default_dataset_size() -> usize {
    100_000
}
fn default_ot_batch() -> usize {
    128
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            depth: 2,
            profile: Profile::Desk,
            batch_size: None,
            iterations: None,
            lr: default_lr(),
            lr_schedule: LrSchedule::Constant,
            log_every: default_log_every(),
            dataset_size: default_dataset_size(),
            coupling: CouplingMode::Independent,
            ot_batch: default_ot_batch(),
            net: None,
            inner_sources: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    /// Defaults to `model.ckpt` in the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `[100]` for depth 1 and `[5, 20]` for depth 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<SamplerSchedule>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub record_trajectories: bool,
    #[serde(default = "default_max_trajectories")]
    pub max_trajectories: usize,
    #[serde(default)]
    pub reuse_inner_source: bool,
}

fn default_n() -> usize {
    100_000
}
fn default_max_trajectories() -> usize {
    1000
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            checkpoint: None,
            schedule: None,
            n: default_n(),
            record_trajectories: false,
            max_trajectories: default_max_trajectories(),
            reuse_inner_source: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// W1 in one dimension, sliced W2 otherwise.
    #[default]
    Auto,
    W1,
    Swd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Defaults to `samples.csv` in the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    #[serde(default)]
    pub metric: MetricKind,
    /// Fresh target samples drawn as the reference set.
    #[serde(default = "default_n")]
    pub n_target: usize,
    #[serde(default = "default_projections")]
    pub n_projections: usize,
}

fn default_projections() -> usize {
    crate::metrics::DEFAULT_PROJECTIONS
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            samples: None,
            metric: MetricKind::Auto,
            n_target: default_n(),
            n_projections: default_projections(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    #[default]
    Alg3,
    Alg4,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointOrigin {
    /// Fresh draws from the target law.
    #[default]
    Target,
    /// Samples generated by the model.
    Generated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub estimator: EstimatorChoice,
    /// CSV of evaluation points; when absent `n_points` are drawn from `origin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<PathBuf>,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default)]
    pub origin: PointOrigin,
    /// Schedule used when `origin = "generated"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<SamplerSchedule>,
    #[serde(default)]
    pub alg3: Alg3Options,
    #[serde(default)]
    pub alg4: Alg4Options,
}

fn default_n_points() -> usize {
    100
}

impl Default for DensitySection {
    fn default() -> Self {
        DensitySection {
            checkpoint: None,
            estimator: EstimatorChoice::Alg3,
            points: None,
            n_points: default_n_points(),
            origin: PointOrigin::Target,
            schedule: None,
            alg3: Alg3Options::default(),
            alg4: Alg4Options::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityCheckSection {
    /// `(x_t, t)` pairs.
    #[serde(default = "default_check_points")]
    pub points: Vec<[f64; 2]>,
    /// Accepted conditional samples per point.
    #[serde(default = "default_accept")]
    pub n_accept: usize,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Give up on a point after this many pair draws.
    #[serde(default = "default_max_draws")]
    pub max_draws: u64,
}

fn default_check_points() -> Vec<[f64; 2]> {
    vec![[-1.0, 0.0], [0.0, 0.4], [0.5, 0.6], [1.0, 1.0]]
}
fn default_accept() -> usize {
    1_000_000
}
fn default_window() -> f64 {
    0.01
}
fn default_bins() -> usize {
    100
}
fn default_max_draws() -> u64 {
    2_000_000_000
}

impl Default for VelocityCheckSection {
    fn default() -> Self {
        VelocityCheckSection {
            points: default_check_points(),
            n_accept: default_accept(),
            window: default_window(),
            bins: default_bins(),
            max_draws: default_max_draws(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[serde(default = "default_grid")]
    pub schedules: Vec<SamplerSchedule>,
    /// Declared NFE budget every schedule must meet; defaults to the first schedule's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nfe: Option<u64>,
    #[serde(default = "five")]
    pub n_models: usize,
    #[serde(default = "five")]
    pub n_eval_repeats: usize,
    /// Generated and reference samples per evaluation.
    #[serde(default = "default_n")]
    pub n_eval: usize,
    #[serde(default)]
    pub metric: MetricKind,
}

fn five() -> usize {
    5
}

fn default_grid() -> Vec<SamplerSchedule> {
    [[1, 100], [2, 50], [5, 20], [10, 10], [20, 5], [50, 2], [100, 1]]
        .into_iter()
        .map(|s| SamplerSchedule { steps: s.to_vec() })
        .collect()
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            schedules: default_grid(),
            nfe: None,
            n_models: 5,
            n_eval_repeats: 5,
            n_eval: default_n(),
            metric: MetricKind::Auto,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let (source, target) = self.data.resolve()?;
        let t = &self.train;
        let mut cfg = TrainConfig::new(t.depth, target);
        cfg.source = Some(source);
        cfg.batch_size = t.batch_size.unwrap_or(t.profile.batch_size());
        cfg.iterations = t.iterations.unwrap_or(t.profile.iterations());
        cfg.adam = AdamConfig {
            lr: t.lr,
            ..AdamConfig::default()
        };
        cfg.lr_schedule = t.lr_schedule;
        cfg.seed = self.seed;
        cfg.log_every = t.log_every;
        cfg.dataset_size = (t.dataset_size > 0).then_some(t.dataset_size);
        cfg.coupling = t.coupling;
        cfg.ot_batch = t.ot_batch;
        cfg.net = t.net.clone();
        cfg.inner_sources = t.inner_sources.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "demo"
[data]
fixture = "1n-2n"
"#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let train = cfg.train_config().unwrap();
        assert_eq!(train.depth, 2);
        assert_eq!(train.iterations, 4000);
        assert_eq!(train.batch_size, 4096);
        assert_eq!(cfg.ablate.schedules.len(), 7);
    }

    #[test]
    fn round_trip_is_identity_and_hash_is_stable() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.data.target = Some(DistributionSpec::GaussianRing {
            count: 6,
            radius: 4.0,
            component_std: 0.4,
        });
        cfg.data.source = Some(DistributionSpec::gaussian(2));
        cfg.train.net = Some(MlpConfig::hrf_default(2, 2));
        cfg.sample.schedule = Some(SamplerSchedule { steps: vec![2, 5, 10] });
        cfg.density.alg4.t = crate::density::TimeChoice::Fixed(0.5);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        let text2 = back.to_toml().unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let extra = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&extra), Err(Error::Config(_))));
        let nested = MINIMAL.replace("fixture", "fixtur");
        assert!(ExperimentConfig::from_toml(&nested).is_err());
        let v2 = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml(&v2)
            .unwrap_err()
            .to_string()
            .contains("schema_version"));
    }

    #[test]
    fn missing_target_is_a_config_error() {
        let cfg = ExperimentConfig::from_toml("schema_version = 1").unwrap();
        assert!(cfg.train_config().unwrap_err().to_string().contains("missing target"));
    }
}

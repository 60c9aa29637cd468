//! The JSON run configuration. Every field has a default, so `{}` is a
//! valid config (the two-component synthetic benchmark in `spu` mode).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use paced_forest_core::backbone::Activation;
use paced_forest_core::data::{ImbalanceSpec, Mapping, MixtureComponent};
use paced_forest_core::leafopt::LeafUpdateConfig;
use paced_forest_core::spl::{BetaPolicy, GammaDecay, PaceSchedule, WeightScheme};
use paced_forest_core::trainer::{AugmentTiming, Mode, ModelConfig, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ModeName {
    #[serde(rename = "drf")]
    Drf,
    #[serde(rename = "sp")]
    Sp,
    #[default]
    #[serde(rename = "spu")]
    Spu,
    #[serde(rename = "spu-robust")]
    SpuRobust,
}

impl ModeName {
    pub fn mode(self) -> Mode {
        match self {
            ModeName::Drf => Mode::Drf,
            ModeName::Sp => Mode::Sp,
            ModeName::Spu => Mode::Spu,
            ModeName::SpuRobust => Mode::SpuRobust,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match Mode::parse(s) {
            Some(Mode::Drf) => Ok(ModeName::Drf),
            Some(Mode::Sp) => Ok(ModeName::Sp),
            Some(Mode::Spu) => Ok(ModeName::Spu),
            Some(Mode::SpuRobust) => Ok(ModeName::SpuRobust),
            None => Err(CliError::Config(format!("unknown mode {s:?} (expected drf, sp, spu or spu-robust)"))),
        }
    }

    pub fn name(self) -> &'static str {
        self.mode().name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: ModeName,
    pub data: DataConfig,
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: ModeName::default(),
            data: DataConfig::default(),
            model: ModelSection::default(),
            schedule: ScheduleSection::default(),
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Width of the target bins used for groups and FAIR.
    pub group_width: f64,
    /// Share held out for evaluation; 0 evaluates on the training set.
    pub test_fraction: f64,
    pub label_noise: Option<NoiseSection>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic(SyntheticSection::default()),
            group_width: 1.0,
            test_fraction: 0.2,
            label_noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSection),
    Csv(CsvSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub n: usize,
    pub components: Vec<ComponentSection>,
    pub dim: usize,
    pub noise_std: f64,
    pub mapping: MappingName,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let spec = ImbalanceSpec::two_component_benchmark();
        SyntheticSection {
            n: 2000,
            components: spec
                .components
                .iter()
                .map(|c| ComponentSection {
                    mean: c.mean,
                    std: c.std,
                    proportion: c.proportion,
                })
                .collect(),
            dim: spec.dim,
            noise_std: spec.noise_std,
            mapping: MappingName::MonotoneSmooth,
        }
    }
}

impl SyntheticSection {
    pub fn spec(&self, group_width: f64) -> ImbalanceSpec {
        ImbalanceSpec {
            components: self
                .components
                .iter()
                .map(|c| MixtureComponent {
                    mean: c.mean,
                    std: c.std,
                    proportion: c.proportion,
                })
                .collect(),
            dim: self.dim,
            noise_std: self.noise_std,
            mapping: match self.mapping {
                MappingName::MonotoneSmooth => Mapping::MonotoneSmooth,
                MappingName::Piecewise => Mapping::Piecewise,
            },
            group_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSection {
    pub mean: f64,
    pub std: f64,
    pub proportion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingName {
    MonotoneSmooth,
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    #[serde(default = "default_target")]
    pub target_column: String,
}

fn default_target() -> String {
    "y".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Share of training labels to corrupt.
    pub fraction: f64,
    /// Noise standard deviation; `null` uses twice the training-target std.
    pub sigma: Option<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            fraction: 0.1,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub activation: ActivationName,
    pub trees: usize,
    pub depth: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            hidden: m.hidden,
            feature_dim: m.feature_dim,
            activation: ActivationName::Relu,
            trees: m.trees,
            depth: m.depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Relu,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaDecaySection {
    LinearToZero,
    Multiplicative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSection {
    Absolute(f64),
    Quantile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Hard,
    Linear,
    Log,
    Mixture,
}

impl SchemeName {
    pub const ALL: [SchemeName; 4] = [SchemeName::Hard, SchemeName::Linear, SchemeName::Log, SchemeName::Mixture];

    pub fn scheme(self) -> WeightScheme {
        match self {
            SchemeName::Hard => WeightScheme::Hard,
            SchemeName::Linear => WeightScheme::Linear,
            SchemeName::Log => WeightScheme::Log,
            SchemeName::Mixture => WeightScheme::Mixture,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub paces: usize,
    pub first_fraction: f64,
    pub gamma0: f64,
    pub gamma_decay: GammaDecaySection,
    pub soft_fraction: f64,
    /// Share of samples excluded by the likelihood cap (spu-robust only).
    pub cap_quantile: f64,
    pub beta: BetaSection,
    pub log_lambda: f64,
    pub min_selected_weight: f64,
    pub scheme: SchemeName,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = PaceSchedule::default();
        ScheduleSection {
            paces: s.paces,
            first_fraction: s.first_fraction,
            gamma0: s.gamma0,
            gamma_decay: GammaDecaySection::LinearToZero,
            soft_fraction: s.soft_fraction,
            cap_quantile: s.cap_quantile,
            beta: BetaSection::Quantile(0.9),
            log_lambda: s.log_lambda,
            min_selected_weight: s.min_selected_weight,
            scheme: SchemeName::Hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentTimingName {
    BeforeUpdate,
    AfterUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub warmup_epochs: usize,
    pub epochs_per_pace: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub leaf_iterations: usize,
    pub sigma2_floor: f64,
    pub min_responsibility_mass: f64,
    /// Gradient steps between leaf updates; `null` updates once per epoch.
    pub leaf_update_interval: Option<usize>,
    pub copies: usize,
    pub augment_timing: AugmentTimingName,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            warmup_epochs: t.warmup_epochs,
            epochs_per_pace: t.epochs_per_pace,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            leaf_iterations: t.leaf.iterations,
            sigma2_floor: t.leaf.sigma2_floor,
            min_responsibility_mass: t.leaf.min_responsibility_mass,
            leaf_update_interval: t.leaf_update_interval,
            copies: t.copies,
            augment_timing: AugmentTimingName::BeforeUpdate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Error level of the cumulative score.
    pub cs_level: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { cs_level: 1.0 }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and resolves a relative CSV path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg = Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let DataSource::Csv(csv) = &mut cfg.data.source {
            if csv.path.is_relative() {
                if let Some(dir) = path.parent() {
                    csv.path = dir.join(&csv.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The core training configuration, with the mode's overrides applied.
    pub fn train_config(&self, parallel: bool) -> Result<TrainConfig> {
        let s = &self.schedule;
        let t = &self.training;
        let mut c = TrainConfig {
            model: ModelConfig {
                hidden: self.model.hidden.clone(),
                feature_dim: self.model.feature_dim,
                activation: match self.model.activation {
                    ActivationName::Relu => Activation::Relu,
                    ActivationName::Logistic => Activation::Logistic,
                },
                trees: self.model.trees,
                depth: self.model.depth,
            },
            schedule: PaceSchedule {
                paces: s.paces,
                first_fraction: s.first_fraction,
                gamma0: s.gamma0,
                gamma_decay: match s.gamma_decay {
                    GammaDecaySection::LinearToZero => GammaDecay::LinearToZero,
                    GammaDecaySection::Multiplicative(r) => GammaDecay::Multiplicative(r),
                },
                soft_fraction: s.soft_fraction,
                cap_quantile: s.cap_quantile,
                beta: match s.beta {
                    BetaSection::Absolute(b) => BetaPolicy::Absolute(b),
                    BetaSection::Quantile(q) => BetaPolicy::Quantile(q),
                },
                log_lambda: s.log_lambda,
                min_selected_weight: s.min_selected_weight,
            },
            scheme: s.scheme.scheme(),
            warmup_epochs: t.warmup_epochs,
            epochs_per_pace: t.epochs_per_pace,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            leaf: LeafUpdateConfig {
                iterations: t.leaf_iterations,
                sigma2_floor: t.sigma2_floor,
                min_responsibility_mass: t.min_responsibility_mass,
            },
            leaf_update_interval: t.leaf_update_interval,
            augmentation: false,
            copies: t.copies,
            augment_timing: match t.augment_timing {
                AugmentTimingName::BeforeUpdate => AugmentTiming::BeforeUpdate,
                AugmentTimingName::AfterUpdate => AugmentTiming::AfterUpdate,
            },
            capping: false,
            cs_level: self.evaluation.cs_level,
            seed: self.seed,
            parallel,
        };
        self.mode.mode().apply(&mut c)?;
        c.validate()?;
        Ok(c)
    }
}

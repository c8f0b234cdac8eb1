//! The JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lc_core::cstep::{CostKind, CostModel};
use lc_core::engine::{Mode, ScheduleSpec};
use lc_core::model::{Activation, LStepConfig, LENET300};
use lc_core::{CompressionTask, ParamStore, QuantSolver, Scheme, SchemeSpec, ViewKind};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;
pub const DATA_DIR_ENV: &str = "LC_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    /// Training of the uncompressed reference model.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub l_step: LStepSection,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Reference checkpoint used by `compress` and `sweep` when none is given
    /// on the command line.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

fn default_sizes() -> Vec<usize> {
    LENET300.to_vec()
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sizes: default_sizes(),
            activation: Activation::default(),
            seed: 0,
        }
    }
}

/// MNIST-style IDX files. Relative file names are resolved against `dir`,
/// which falls back to `$LC_DATA_DIR`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_train_images")]
    pub train_images: PathBuf,
    #[serde(default = "default_train_labels")]
    pub train_labels: PathBuf,
    #[serde(default = "default_test_images")]
    pub test_images: PathBuf,
    #[serde(default = "default_test_labels")]
    pub test_labels: PathBuf,
    /// Use only the first N training examples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

fn default_train_images() -> PathBuf {
    "train-images-idx3-ubyte".into()
}
fn default_train_labels() -> PathBuf {
    "train-labels-idx1-ubyte".into()
}
fn default_test_images() -> PathBuf {
    "t10k-images-idx3-ubyte".into()
}
fn default_test_labels() -> PathBuf {
    "t10k-labels-idx1-ubyte".into()
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            train_images: default_train_images(),
            train_labels: default_train_labels(),
            test_images: default_test_images(),
            test_labels: default_test_labels(),
            train_limit: None,
            test_limit: None,
        }
    }
}

impl DataConfig {
    /// The data root: the configured directory, else `$LC_DATA_DIR`.
    pub fn root(&self) -> Option<PathBuf> {
        self.dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }

    pub fn resolve(&self, file: &Path) -> PathBuf {
        match self.root() {
            Some(root) if file.is_relative() => root.join(file),
            _ => file.to_path_buf(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_train_epochs")]
    pub epochs: usize,
    #[serde(default = "default_train_lr")]
    pub lr_base: f64,
    /// Per-epoch learning-rate decay.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_train_epochs() -> usize {
    60
}
fn default_train_lr() -> f64 {
    0.1
}
fn default_decay() -> f64 {
    0.98
}
fn default_batch() -> usize {
    128
}
fn default_momentum() -> f64 {
    0.9
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_train_epochs(),
            lr_base: default_train_lr(),
            decay: default_decay(),
            batch: default_batch(),
            momentum: default_momentum(),
        }
    }
}

/// Either a count or a percentage such as `"5%"` of the viewed weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Kappa {
    Count(usize),
    Fraction(String),
}

impl Kappa {
    pub fn resolve(&self, len: usize) -> Result<usize, String> {
        match self {
            Self::Count(k) => Ok(*k),
            Self::Fraction(s) => {
                let pct: f64 = s
                    .trim()
                    .strip_suffix('%')
                    .ok_or_else(|| format!("kappa {s:?}: expected a count or a percentage like \"5%\""))?
                    .trim()
                    .parse()
                    .map_err(|_| format!("kappa {s:?}: not a number"))?;
                if !(0.0..=100.0).contains(&pct) {
                    return Err(format!("kappa {s:?}: percentage outside 0..100"));
                }
                Ok((pct / 100.0 * len as f64).round() as usize)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverName {
    #[default]
    Dp,
    Lloyd,
}

/// Scheme names as they appear in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeConfig {
    AdaptiveQuantization {
        k: usize,
        #[serde(default)]
        solver: SolverName,
        #[serde(default)]
        seed: u64,
    },
    BinarizeFixed,
    BinarizeScaled,
    TernarizeScaled,
    L0Constraint {
        kappa: Kappa,
    },
    L1Constraint {
        kappa: f64,
    },
    L0Penalty {
        alpha: f64,
    },
    L1Penalty {
        alpha: f64,
    },
    LowRank {
        rank: usize,
    },
    RankSelectStorage {
        alpha: f64,
        #[serde(default = "one")]
        coefficient: f64,
    },
    RankSelectFlops {
        alpha: f64,
        #[serde(default = "one")]
        coefficient: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Family {
    Quantization,
    Pruning,
    LowRank,
}

impl SchemeConfig {
    fn family(&self) -> Family {
        match self {
            Self::AdaptiveQuantization { .. } | Self::BinarizeFixed | Self::BinarizeScaled | Self::TernarizeScaled => {
                Family::Quantization
            }
            Self::L0Constraint { .. } | Self::L1Constraint { .. } | Self::L0Penalty { .. } | Self::L1Penalty { .. } => {
                Family::Pruning
            }
            Self::LowRank { .. } | Self::RankSelectStorage { .. } | Self::RankSelectFlops { .. } => Family::LowRank,
        }
    }

    pub fn to_scheme(&self, len: usize) -> Result<Scheme, String> {
        Ok(match self {
            Self::AdaptiveQuantization { k, solver, seed } => Scheme::AdaptiveQuantization {
                k: *k,
                solver: match solver {
                    SolverName::Dp => QuantSolver::Dp,
                    SolverName::Lloyd => QuantSolver::Lloyd { seed: *seed },
                },
            },
            Self::BinarizeFixed => Scheme::BinarizeFixed,
            Self::BinarizeScaled => Scheme::BinarizeScaled,
            Self::TernarizeScaled => Scheme::TernarizeScaled,
            Self::L0Constraint { kappa } => Scheme::L0Constraint {
                kappa: kappa.resolve(len)?,
            },
            Self::L1Constraint { kappa } => Scheme::L1Constraint { kappa: *kappa },
            Self::L0Penalty { alpha } => Scheme::L0Penalty { alpha: *alpha },
            Self::L1Penalty { alpha } => Scheme::L1Penalty { alpha: *alpha },
            Self::LowRank { rank } => Scheme::LowRank { rank: *rank },
            Self::RankSelectStorage { alpha, coefficient } => Scheme::RankSelect {
                alpha: *alpha,
                cost: CostModel {
                    kind: CostKind::Storage,
                    coefficient: *coefficient,
                },
            },
            Self::RankSelectFlops { alpha, coefficient } => Scheme::RankSelect {
                alpha: *alpha,
                cost: CostModel {
                    kind: CostKind::Flops,
                    coefficient: *coefficient,
                },
            },
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewName {
    #[default]
    Vector,
    /// The tensor's own 2-D shape.
    Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub layers: Vec<String>,
    #[serde(default)]
    pub view: ViewName,
    #[serde(default)]
    pub scheme: Option<SchemeConfig>,
    #[serde(default)]
    pub additive: Option<Vec<SchemeConfig>>,
}

impl TaskConfig {
    fn schemes(&self) -> Vec<&SchemeConfig> {
        self.scheme.iter().chain(self.additive.iter().flatten()).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Al,
    Qp,
}

/// Unset fields take the defaults of the task mix (see [`RunConfig::schedule_spec`]).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub mu0: Option<f64>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub mode: ModeName,
    /// Absolute stopping threshold on `||w − Δ(Θ)||`.
    #[serde(default)]
    pub stop_tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LStepSection {
    #[serde(default)]
    pub lr_base: Option<f64>,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_epochs_per_step")]
    pub epochs_per_step: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_epochs_per_step() -> usize {
    20
}

impl Default for LStepSection {
    fn default() -> Self {
        Self {
            lr_base: None,
            decay: default_decay(),
            epochs_per_step: default_epochs_per_step(),
            batch: default_batch(),
            momentum: default_momentum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate the compressed model at every `every`-th record.
    #[serde(default = "one_usize")]
    pub every: usize,
    /// Also compute the training error (a full pass over the training set).
    #[serde(default = "yes")]
    pub train_error: bool,
    /// Also evaluate the uncompressed working weights.
    #[serde(default)]
    pub uncompressed: bool,
}

fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 1,
            train_error: true,
            uncompressed: false,
        }
    }
}

pub const DEFAULT_MU0: f64 = 9e-5;
pub const DEFAULT_A: f64 = 1.1;
pub const DEFAULT_A_LOW_RANK: f64 = 1.4;
pub const DEFAULT_STEPS: usize = 40;
pub const LR_QUANTIZATION: f64 = 0.09;
pub const LR_PRUNING: f64 = 0.1;
pub const LR_MIXED: f64 = 0.05;

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("{e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn families(&self) -> Vec<Family> {
        let mut f: Vec<Family> = self.tasks.iter().flat_map(|t| t.schemes()).map(SchemeConfig::family).collect();
        f.sort_by_key(|x| *x as u8);
        f.dedup();
        f
    }

    /// `a` defaults to 1.4 when any task is low-rank, else 1.1.
    pub fn schedule_spec(&self) -> ScheduleSpec {
        let low_rank = self.families().contains(&Family::LowRank);
        ScheduleSpec {
            mu0: self.schedule.mu0.unwrap_or(DEFAULT_MU0),
            a: self
                .schedule
                .a
                .unwrap_or(if low_rank { DEFAULT_A_LOW_RANK } else { DEFAULT_A }),
            num_steps: self.schedule.steps.unwrap_or(DEFAULT_STEPS),
            mode: match self.schedule.mode {
                ModeName::Al => Mode::AugmentedLagrangian,
                ModeName::Qp => Mode::QuadraticPenalty,
            },
        }
    }

    /// Base learning rate 0.09 for pure quantization, 0.1 for pure pruning,
    /// 0.05 for anything else.
    pub fn l_step_config(&self, seed: u64) -> LStepConfig {
        let lr = self.l_step.lr_base.unwrap_or(match self.families().as_slice() {
            [Family::Quantization] => LR_QUANTIZATION,
            [Family::Pruning] => LR_PRUNING,
            _ => LR_MIXED,
        });
        LStepConfig {
            lr_base: lr,
            decay: self.l_step.decay,
            epochs: self.l_step.epochs_per_step,
            batch_size: self.l_step.batch,
            momentum: self.l_step.momentum,
            nesterov: true,
            seed,
        }
    }

    /// Turns the task list into engine tasks, resolving matrix views and
    /// percentage kappas against the model's parameter shapes.
    pub fn compression_tasks(&self, params: &ParamStore) -> Result<Vec<CompressionTask>, CliError> {
        if self.tasks.is_empty() {
            return Err(CliError::Config("no compression tasks given".into()));
        }
        self.tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let err = |m: String| CliError::Config(format!("tasks[{i}]: {m}"));
                let mut len = 0;
                for name in &t.layers {
                    let tensor = params
                        .get(name)
                        .ok_or_else(|| err(format!("unknown layer {name:?}")))?;
                    len += tensor.len();
                }
                let view = match t.view {
                    ViewName::Vector => ViewKind::AsVector,
                    ViewName::Matrix => {
                        let [name] = t.layers.as_slice() else {
                            return Err(err("a matrix view needs exactly one layer".into()));
                        };
                        let (rows, cols) = params
                            .get(name)
                            .expect("checked above")
                            .dims2()
                            .map_err(|e| err(e.to_string()))?;
                        ViewKind::AsMatrix { rows, cols }
                    }
                };
                let scheme = match (&t.scheme, &t.additive) {
                    (Some(s), None) => SchemeSpec::Single(s.to_scheme(len).map_err(err)?),
                    (None, Some(list)) => SchemeSpec::Additive(
                        list.iter().map(|s| s.to_scheme(len)).collect::<Result<_, _>>().map_err(err)?,
                    ),
                    _ => return Err(err("give exactly one of \"scheme\" or \"additive\"".into())),
                };
                Ok(CompressionTask {
                    params: t.layers.clone(),
                    view,
                    scheme,
                })
            })
            .collect()
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configs always serialize")
    }
}

/// Replaces the value at a dotted path such as `tasks.0.scheme.kappa`.
/// Intermediate objects and arrays must exist; the final key may be new only
/// inside an existing object.
pub fn set_path(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<(), String> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("invalid axis path {path:?}"));
    }
    let mut cur = root;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        cur = match cur {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*part)
                    .ok_or_else(|| format!("axis path {path:?}: no field {part:?}"))?
            }
            serde_json::Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| format!("axis path {path:?}: {part:?} is not an array index"))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| format!("axis path {path:?}: index {idx} out of range (len {len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("axis path {path:?}: {part:?} is inside a scalar")),
        };
    }
    unreachable!("loop returns on the last component")
}

/// Parses a sweep value: JSON when it parses, a plain string otherwise.
pub fn parse_value(s: &str) -> serde_json::Value {
    serde_json::from_str(s.trim()).unwrap_or_else(|_| serde_json::Value::String(s.trim().to_string()))
}

//! Configuration, bookkeeping and the per-batch objective shared by the
//! subspace trainer and the fixed-penalty baseline.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::data::{BatchPlan, Dataset};
use crate::error::{param, Error, Result};
use crate::losses::{bce, zero_loss, FairnessMetric};
use crate::model::{backward, forward, MlpArchitecture, ParamVector, DEFAULT_HIDDEN};
use crate::tensor::Matrix;

/// Fraction of fairness-skipped batches above which a warning is recorded.
pub const SKIP_WARNING_FRACTION: f64 = 0.2;

/// How the mixing ratio is chosen for each batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// A fresh `α ~ U[0, 1]` per batch.
    UniformPerBatch,
    Fixed(f64),
}

impl AlphaMode {
    pub fn to_meta(self) -> String {
        match self {
            AlphaMode::UniformPerBatch => "uniform".into(),
            AlphaMode::Fixed(a) => format!("fixed:{a:?}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(AlphaMode::UniformPerBatch),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|v| v.parse().ok())
                .map(AlphaMode::Fixed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Strength `A` of the fairness penalty at the fairness endpoint.
    pub fairness_weight: f64,
    /// Weight of the endpoint cosine-similarity penalty.
    pub beta: f64,
    pub fairness_metric: FairnessMetric,
    pub seed: u64,
    pub alpha_mode: AlphaMode,
    pub hidden_dims: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 512,
            learning_rate: 0.001,
            fairness_weight: 1.0,
            beta: 1.0,
            fairness_metric: FairnessMetric::Dp,
            seed: 0,
            alpha_mode: AlphaMode::UniformPerBatch,
            hidden_dims: alloc::vec![DEFAULT_HIDDEN],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(param("epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(param("batch_size", "must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(param(
                "learning_rate",
                format!("{} must be positive", self.learning_rate),
            ));
        }
        if !(self.fairness_weight >= 0.0 && self.fairness_weight.is_finite()) {
            return Err(param(
                "A",
                format!("{} must be finite and non-negative", self.fairness_weight),
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(param("beta", format!("{} must be finite and non-negative", self.beta)));
        }
        if let AlphaMode::Fixed(a) = self.alpha_mode {
            if !(0.0..=1.0).contains(&a) {
                return Err(param("alpha", format!("{a} is outside [0, 1]")));
            }
        }
        if self.hidden_dims.contains(&0) {
            return Err(param("hidden", "every hidden layer needs at least one unit"));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Result<MlpArchitecture> {
        MlpArchitecture::new(input_dim, self.hidden_dims.clone())
    }

    pub(crate) fn batch_plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.batch_size,
            shuffle_seed: self.seed,
        }
    }

    fn write_meta(&self, m: &mut BTreeMap<String, String>) {
        m.insert("config.epochs".into(), self.epochs.to_string());
        m.insert("config.batch_size".into(), self.batch_size.to_string());
        m.insert("config.learning_rate".into(), format!("{:?}", self.learning_rate));
        m.insert("config.A".into(), format!("{:?}", self.fairness_weight));
        m.insert("config.beta".into(), format!("{:?}", self.beta));
        m.insert("config.metric".into(), self.fairness_metric.name().into());
        m.insert("config.seed".into(), self.seed.to_string());
        m.insert("config.alpha_mode".into(), self.alpha_mode.to_meta());
        let hidden: Vec<String> = self.hidden_dims.iter().map(|h| h.to_string()).collect();
        m.insert("config.hidden".into(), hidden.join(","));
    }

    fn read_meta(m: &mut BTreeMap<String, String>) -> Result<Self> {
        let hidden = take(m, "config.hidden")?;
        Ok(TrainConfig {
            epochs: parse_meta(m, "config.epochs")?,
            batch_size: parse_meta(m, "config.batch_size")?,
            learning_rate: parse_meta(m, "config.learning_rate")?,
            fairness_weight: parse_meta(m, "config.A")?,
            beta: parse_meta(m, "config.beta")?,
            fairness_metric: FairnessMetric::parse(&take(m, "config.metric")?)
                .ok_or_else(|| Error::Checkpoint("unknown fairness metric".into()))?,
            seed: parse_meta(m, "config.seed")?,
            alpha_mode: AlphaMode::parse(&take(m, "config.alpha_mode")?)
                .ok_or_else(|| Error::Checkpoint("unknown alpha mode".into()))?,
            hidden_dims: if hidden.is_empty() {
                Vec::new()
            } else {
                hidden
                    .split(',')
                    .map(|h| {
                        h.parse()
                            .map_err(|_| Error::Checkpoint(format!("bad hidden width `{h}`")))
                    })
                    .collect::<Result<_>>()?
            },
        })
    }
}

fn take(m: &mut BTreeMap<String, String>, key: &str) -> Result<String> {
    m.remove(key)
        .ok_or_else(|| Error::Checkpoint(format!("metadata key `{key}` missing")))
}

fn parse_meta<T: core::str::FromStr>(m: &mut BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = take(m, key)?;
    v.parse()
        .map_err(|_| Error::Checkpoint(format!("metadata `{key}={v}` does not parse")))
}

/// What a training run did, persisted alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub epochs_completed: usize,
    pub batches: usize,
    /// Batches whose fairness term was dropped because a group was absent.
    pub fairness_skips: usize,
    /// Free-form entries such as the feature encoder; keys must not collide
    /// with the `config.` / `train.` namespaces.
    pub extra: BTreeMap<String, String>,
}

impl TrainMeta {
    pub(crate) fn new(config: &TrainConfig) -> Self {
        TrainMeta {
            config: config.clone(),
            epochs_completed: 0,
            batches: 0,
            fairness_skips: 0,
            extra: BTreeMap::new(),
        }
    }

    pub fn skip_fraction(&self) -> f64 {
        if self.batches == 0 {
            0.0
        } else {
            self.fairness_skips as f64 / self.batches as f64
        }
    }

    /// More than [`SKIP_WARNING_FRACTION`] of batches trained without the fairness term.
    pub fn skip_warning(&self) -> bool {
        self.skip_fraction() > SKIP_WARNING_FRACTION
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = self.extra.clone();
        self.config.write_meta(&mut m);
        m.insert("train.epochs_completed".into(), self.epochs_completed.to_string());
        m.insert("train.batches".into(), self.batches.to_string());
        m.insert("train.fairness_skips".into(), self.fairness_skips.to_string());
        m.insert("train.skip_warning".into(), self.skip_warning().to_string());
        m
    }

    pub fn from_map(mut m: BTreeMap<String, String>) -> Result<Self> {
        let config = TrainConfig::read_meta(&mut m)?;
        let meta = TrainMeta {
            config,
            epochs_completed: parse_meta(&mut m, "train.epochs_completed")?,
            batches: parse_meta(&mut m, "train.batches")?,
            fairness_skips: parse_meta(&mut m, "train.fairness_skips")?,
            extra: BTreeMap::new(),
        };
        let warning: bool = parse_meta(&mut m, "train.skip_warning")?;
        if warning != meta.skip_warning() {
            return Err(Error::Checkpoint("skip warning disagrees with skip counts".into()));
        }
        Ok(TrainMeta { extra: m, ..meta })
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_ce: f64,
    /// Mean fairness gap over batches where it could be computed.
    pub mean_fairness: f64,
    /// Cosine penalty after the last step of the epoch (zero for single-endpoint training).
    pub reg: f64,
    pub fairness_skips: usize,
    pub batches: usize,
}

#[derive(Default)]
pub(crate) struct EpochAccumulator {
    ce: f64,
    fair: f64,
    fair_count: usize,
    skips: usize,
    batches: usize,
}

impl EpochAccumulator {
    pub(crate) fn record(&mut self, g: &TaskGradient) {
        self.ce += g.ce;
        self.batches += 1;
        match g.fairness {
            Some(f) => {
                self.fair += f;
                self.fair_count += 1;
            }
            None => self.skips += 1,
        }
    }

    pub(crate) fn finish(self, epoch: usize, reg: f64, meta: &mut TrainMeta) -> EpochStats {
        meta.epochs_completed = epoch + 1;
        meta.batches += self.batches;
        meta.fairness_skips += self.skips;
        EpochStats {
            epoch,
            mean_ce: self.ce / self.batches.max(1) as f64,
            mean_fairness: if self.fair_count == 0 {
                f64::NAN
            } else {
                self.fair / self.fair_count as f64
            },
            reg,
            fairness_skips: self.skips,
            batches: self.batches,
        }
    }
}

/// Rows of one mini-batch, gathered out of a [`Dataset`].
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
}

impl Batch {
    pub fn gather(ds: &Dataset, indices: &[usize]) -> Batch {
        Batch {
            x: ds.features().select_rows(indices),
            y: indices.iter().map(|&i| ds.labels()[i]).collect(),
            s: indices.iter().map(|&i| ds.sensitive()[i]).collect(),
        }
    }

    pub fn whole(ds: &Dataset) -> Batch {
        Batch {
            x: ds.features().clone(),
            y: ds.labels().to_vec(),
            s: ds.sensitive().to_vec(),
        }
    }
}

/// Value and parameter gradient of `L_ce + weight·L_f` at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGradient {
    pub ce: f64,
    /// `None` when the batch lacks a group the fairness metric needs.
    pub fairness: Option<f64>,
    pub grad: ParamVector,
}

impl TaskGradient {
    pub fn loss(&self, fairness_weight: f64) -> f64 {
        self.ce + fairness_weight * self.fairness.unwrap_or(0.0)
    }
}

/// One forward and one backward pass for `L_ce + fairness_weight · L_f`.
///
/// A batch missing a group needed by `metric` contributes only the task loss.
pub fn task_gradient(
    arch: &MlpArchitecture,
    theta: &ParamVector,
    batch: &Batch,
    metric: FairnessMetric,
    fairness_weight: f64,
) -> Result<TaskGradient> {
    let (yhat, cache) = forward(arch, theta, &batch.x)?;
    let ce = bce(&yhat, &batch.y)?;
    let (fair, fairness) = match metric.evaluate(&yhat, &batch.y, &batch.s) {
        Ok(l) => {
            let v = l.value;
            (l, Some(v))
        }
        Err(Error::EmptyGroup(_)) => (zero_loss(yhat.len()), None),
        Err(e) => return Err(e),
    };
    let dl: Vec<f64> = if fairness_weight == 0.0 {
        ce.grad_yhat
    } else {
        ce.grad_yhat
            .iter()
            .zip(&fair.grad_yhat)
            .map(|(c, f)| c + fairness_weight * f)
            .collect()
    };
    let grad = backward(arch, theta, &cache, &dl)?;
    Ok(TaskGradient {
        ce: ce.value,
        fairness,
        grad,
    })
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or infinity")))
    }
}

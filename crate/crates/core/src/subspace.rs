//! A line segment in weight space between an accuracy endpoint `ω1` and a
//! fairness endpoint `ω2`, trained jointly so that every point
//! `θ = (1−α)ω1 + αω2` is a usable model.
//!
//! Each batch draws one `α`, evaluates `L_ce + A·α·L_f` at `θ`, and sends the
//! single parameter gradient `g = ∂L/∂θ` back to the endpoints as
//! `(1−α)·g` and `α·g`. The squared cosine similarity of the endpoints,
//! weighted by `β`, is added directly to each endpoint's gradient. Each
//! endpoint has its own Adam state.

use alloc::format;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{param, Error, Result};
use crate::losses::{cosine_reg, FairnessMetric};
use crate::model::{forward, init_params, MlpArchitecture, ParamVector};
use crate::objective::{
    check_finite, task_gradient, AlphaMode, Batch, EpochAccumulator, EpochStats, TaskGradient, TrainConfig, TrainMeta,
};
use crate::optim::Adam;
use crate::tensor::{Matrix, Vector};

/// Offset mixed into the seed of the α sampler so it is independent of batch shuffling.
const ALPHA_STREAM: u64 = 0x0A1F_A5EE_D000_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub arch: MlpArchitecture,
    pub omega1: ParamVector,
    pub omega2: ParamVector,
    pub meta: TrainMeta,
}

impl SubspaceModel {
    pub fn new(arch: MlpArchitecture, omega1: ParamVector, omega2: ParamVector, meta: TrainMeta) -> Result<Self> {
        let m = arch.param_count();
        if omega1.len() != m || omega2.len() != m {
            return Err(Error::Shape(format!(
                "endpoints of length {} and {} for an architecture with {m} parameters",
                omega1.len(),
                omega2.len()
            )));
        }
        Ok(SubspaceModel {
            arch,
            omega1,
            omega2,
            meta,
        })
    }

    /// Parameters at mixing ratio `alpha`.
    pub fn weights_at(&self, alpha: f64) -> Result<ParamVector> {
        interpolate(&self.omega1, &self.omega2, alpha)
    }
}

/// `(1−α)·ω1 + α·ω2`, evaluated as `ω1 + α(ω2 − ω1)` so that equal endpoints
/// reproduce themselves; `α = 0` and `α = 1` return the endpoints verbatim.
pub fn interpolate(omega1: &ParamVector, omega2: &ParamVector, alpha: f64) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(param("alpha", format!("{alpha} is outside [0, 1]")));
    }
    if omega1.len() != omega2.len() {
        return Err(Error::Shape(format!(
            "endpoints of length {} and {}",
            omega1.len(),
            omega2.len()
        )));
    }
    if alpha == 0.0 {
        return Ok(omega1.clone());
    }
    if alpha == 1.0 {
        return Ok(omega2.clone());
    }
    Ok(omega1
        .iter()
        .zip(omega2.iter())
        .map(|(a, b)| a + alpha * (b - a))
        .collect::<alloc::vec::Vec<_>>()
        .into())
}

/// Splits `g = ∂L/∂θ` into the endpoint shares `((1−α)·g, α·g)`.
///
/// The larger share is the rounded product and the smaller one is `g` minus
/// it, which is exact (Sterbenz), so the shares always sum to `g` exactly and
/// `α ∈ {0, 1}` yields an exact zero for the idle endpoint.
pub fn route(g: &ParamVector, alpha: f64) -> (ParamVector, ParamVector) {
    let mut g1 = ParamVector::zeros(g.len());
    let mut g2 = ParamVector::zeros(g.len());
    if alpha <= 0.5 {
        let w = 1.0 - alpha;
        for i in 0..g.len() {
            g1[i] = w * g[i];
            g2[i] = g[i] - g1[i];
        }
    } else {
        for i in 0..g.len() {
            g2[i] = alpha * g[i];
            g1[i] = g[i] - g2[i];
        }
    }
    (g1, g2)
}

/// Gradients for one batch at one `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointStep {
    pub alpha: f64,
    pub task: TaskGradient,
    pub reg: f64,
    pub grad_w1: ParamVector,
    pub grad_w2: ParamVector,
}

/// Full gradient of `L_ce(θ) + A·α·L_f(θ) + β·L_reg(ω1, ω2)` with respect to both endpoints.
#[allow(clippy::too_many_arguments)]
pub fn endpoint_gradients(
    arch: &MlpArchitecture,
    omega1: &ParamVector,
    omega2: &ParamVector,
    alpha: f64,
    batch: &Batch,
    metric: FairnessMetric,
    fairness_weight: f64,
    beta: f64,
) -> Result<EndpointStep> {
    let theta = interpolate(omega1, omega2, alpha)?;
    let task = task_gradient(arch, &theta, batch, metric, fairness_weight * alpha)?;
    let (mut grad_w1, mut grad_w2) = route(&task.grad, alpha);
    let reg = cosine_reg(omega1, omega2)?;
    if beta != 0.0 {
        grad_w1.axpy(beta, &reg.grad_w1);
        grad_w2.axpy(beta, &reg.grad_w2);
    }
    Ok(EndpointStep {
        alpha,
        task,
        reg: reg.value,
        grad_w1,
        grad_w2,
    })
}

/// Initial endpoints: independent Xavier draws from `seed` and `seed + 1`.
pub fn init_endpoints(arch: &MlpArchitecture, seed: u64) -> (ParamVector, ParamVector) {
    (init_params(arch, seed), init_params(arch, seed.wrapping_add(1)))
}

pub fn train_yodo(train: &Dataset, config: &TrainConfig) -> Result<SubspaceModel> {
    train_yodo_with(train, config, |_| {})
}

/// Trains both endpoints, reporting after every epoch.
pub fn train_yodo_with(
    train: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<SubspaceModel> {
    config.validate()?;
    train.validate_groups()?;
    let arch = config.architecture(train.dim())?;
    let (mut w1, mut w2) = init_endpoints(&arch, config.seed);
    let mut adam1 = Adam::new(w1.len(), config.learning_rate);
    let mut adam2 = Adam::new(w2.len(), config.learning_rate);
    let mut alpha_rng = ChaCha8Rng::seed_from_u64(config.seed ^ ALPHA_STREAM);
    let plan = config.batch_plan();
    let mut meta = TrainMeta::new(config);

    for epoch in 0..config.epochs {
        let mut acc = EpochAccumulator::default();
        let mut reg = 0.0;
        for indices in plan.batches(train.len(), epoch as u64)? {
            let alpha = match config.alpha_mode {
                AlphaMode::UniformPerBatch => alpha_rng.gen::<f64>(),
                AlphaMode::Fixed(a) => a,
            };
            let batch = Batch::gather(train, &indices);
            let step = endpoint_gradients(
                &arch,
                &w1,
                &w2,
                alpha,
                &batch,
                config.fairness_metric,
                config.fairness_weight,
                config.beta,
            )?;
            check_finite("endpoint 1 gradient", &step.grad_w1)?;
            check_finite("endpoint 2 gradient", &step.grad_w2)?;
            adam1.step(&mut w1, &step.grad_w1);
            adam2.step(&mut w2, &step.grad_w2);
            acc.record(&step.task);
            reg = step.reg;
        }
        check_finite("endpoint 1", &w1)?;
        check_finite("endpoint 2", &w2)?;
        let stats = acc.finish(epoch, reg, &mut meta);
        on_epoch(&stats);
    }
    SubspaceModel::new(arch, w1, w2, meta)
}

/// Predictions of the network at mixing ratio `alpha`.
pub fn predict(model: &SubspaceModel, alpha: f64, x: &Matrix) -> Result<Vector> {
    let theta = model.weights_at(alpha)?;
    Ok(forward(&model.arch, &theta, x)?.0)
}

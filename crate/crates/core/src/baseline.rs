//! Single-model training with a fixed fairness penalty `L_ce + A·L_f`, and
//! the grid of such models used as the multi-model reference. `A = 0` is
//! plain empirical risk minimisation.

use alloc::format;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{param, Error, Result};
use crate::model::{forward, init_params, MlpArchitecture, ParamVector};
use crate::objective::{check_finite, task_gradient, Batch, EpochAccumulator, EpochStats, TrainConfig, TrainMeta};
use crate::optim::Adam;
use crate::tensor::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct FixedModel {
    pub arch: MlpArchitecture,
    pub theta: ParamVector,
    pub fairness_weight: f64,
    pub meta: TrainMeta,
}

impl FixedModel {
    pub fn new(arch: MlpArchitecture, theta: ParamVector, fairness_weight: f64, meta: TrainMeta) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector of length {} for an architecture with {} parameters",
                theta.len(),
                arch.param_count()
            )));
        }
        Ok(FixedModel {
            arch,
            theta,
            fairness_weight,
            meta,
        })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vector> {
        Ok(forward(&self.arch, &self.theta, x)?.0)
    }
}

pub fn train_fixed(train: &Dataset, config: &TrainConfig, fairness_weight: f64) -> Result<FixedModel> {
    train_fixed_with(train, config, fairness_weight, |_| {})
}

/// Trains one parameter vector on `L_ce + A·L_f` with the same batching,
/// optimiser and seeding as the subspace trainer. `config.fairness_weight`
/// and `config.alpha_mode` are ignored in favour of `fairness_weight`.
pub fn train_fixed_with(
    train: &Dataset,
    config: &TrainConfig,
    fairness_weight: f64,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<FixedModel> {
    let config = TrainConfig {
        fairness_weight,
        ..config.clone()
    };
    config.validate()?;
    train.validate_groups()?;
    let arch = config.architecture(train.dim())?;
    let mut theta = init_params(&arch, config.seed);
    let mut adam = Adam::new(theta.len(), config.learning_rate);
    let plan = config.batch_plan();
    let mut meta = TrainMeta::new(&config);

    for epoch in 0..config.epochs {
        let mut acc = EpochAccumulator::default();
        for indices in plan.batches(train.len(), epoch as u64)? {
            let batch = Batch::gather(train, &indices);
            let g = task_gradient(&arch, &theta, &batch, config.fairness_metric, fairness_weight)?;
            check_finite("gradient", &g.grad)?;
            adam.step(&mut theta, &g.grad);
            acc.record(&g);
        }
        check_finite("parameters", &theta)?;
        let stats = acc.finish(epoch, 0.0, &mut meta);
        on_epoch(&stats);
    }
    FixedModel::new(arch, theta, fairness_weight, meta)
}

/// `{0, 0.05, 0.10, …, 1.00}`: the ERM point plus twenty penalty strengths.
pub fn default_a_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

/// Configuration for grid point `index`: same settings, seed offset by the index.
pub fn sweep_point_config(config: &TrainConfig, index: usize) -> TrainConfig {
    TrainConfig {
        seed: config.seed.wrapping_add(index as u64),
        ..config.clone()
    }
}

/// One independently initialised model per penalty strength, in grid order.
pub fn sweep_fixed(train: &Dataset, config: &TrainConfig, grid: &[f64]) -> Result<Vec<FixedModel>> {
    if grid.is_empty() {
        return Err(param("A_grid", "must contain at least one value"));
    }
    grid.iter()
        .enumerate()
        .map(|(i, &a)| train_fixed(train, &sweep_point_config(config, i), a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_biased, SynthParams};
    use crate::losses::FairnessMetric;
    use crate::objective::AlphaMode;
    use crate::subspace::{endpoint_gradients, init_endpoints};
    use alloc::vec;

    fn data() -> Dataset {
        synth_biased(&SynthParams {
            n: 160,
            d: 4,
            seed: 2,
            ..SynthParams::default()
        })
        .unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 40,
            hidden_dims: vec![6],
            seed: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn deterministic_and_records_a() {
        let ds = data();
        let a = train_fixed(&ds, &cfg(), 0.35).unwrap();
        assert_eq!(a, train_fixed(&ds, &cfg(), 0.35).unwrap());
        assert_eq!(a.fairness_weight, 0.35);
        assert_eq!(a.meta.config.fairness_weight, 0.35);
        assert!(matches!(train_fixed(&ds, &cfg(), -1.0), Err(Error::Parameter { .. })));
    }

    #[test]
    fn erm_fits_nearly_separable_data() {
        let ds = synth_biased(&SynthParams {
            n: 2000,
            noise: 0.2,
            seed: 4,
            ..SynthParams::default()
        })
        .unwrap();
        let (train, test) = crate::data::split(&ds, 0.3, 4).unwrap();
        let config = TrainConfig {
            hidden_dims: vec![32],
            batch_size: 64,
            ..TrainConfig::default()
        };
        let m = train_fixed(&train, &config, 0.0).unwrap();
        let r = crate::eval::evaluate_fixed(&m, &test).unwrap();
        assert!(r.error_rate < 0.05, "test error {}", r.error_rate);
    }

    #[test]
    fn default_grid_has_21_points() {
        let g = default_a_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.05);
        assert_eq!(g[20], 1.0);
    }

    #[test]
    fn sweep_trains_one_model_per_point() {
        let ds = data();
        let models = sweep_fixed(&ds, &cfg(), &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(models.len(), 3);
        for (i, (m, a)) in models.iter().zip([0.0, 0.5, 1.0]).enumerate() {
            assert_eq!(m.fairness_weight, a);
            assert_eq!(m.meta.config.seed, 10 + i as u64);
        }
        assert!(sweep_fixed(&ds, &cfg(), &[]).is_err());
    }

    #[test]
    fn alpha_one_subspace_step_matches_fixed_penalty_step() {
        let ds = data();
        let c = TrainConfig {
            alpha_mode: AlphaMode::Fixed(1.0),
            beta: 0.0,
            ..cfg()
        };
        let arch = c.architecture(ds.dim()).unwrap();
        let (w1, w2) = init_endpoints(&arch, c.seed);
        let first = c.batch_plan().batches(ds.len(), 0).unwrap().remove(0);
        let batch = Batch::gather(&ds, &first);
        let sub = endpoint_gradients(&arch, &w1, &w2, 1.0, &batch, FairnessMetric::Dp, 1.0, 0.0).unwrap();
        let fixed = task_gradient(&arch, &w2, &batch, FairnessMetric::Dp, 1.0).unwrap();
        for (a, b) in sub.grad_w2.iter().zip(fixed.grad.iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!(sub.grad_w1.iter().all(|&v| v == 0.0));
    }
}

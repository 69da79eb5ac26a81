//! Train one network whose weights span a line segment between an
//! accuracy-oriented endpoint and a fairness-oriented endpoint, then pick
//! any trade-off along it at inference time with a single scalar `α`.
//!
//! The crate is `no_std` with `alloc`; file IO and the command line live
//! in the companion `yodo` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baseline;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod objective;
pub mod optim;
pub mod subspace;
pub mod tensor;

pub use baseline::{default_a_grid, sweep_fixed, train_fixed, train_fixed_with, FixedModel};
pub use checkpoint::{decode_model, Checkpoint, SavedModel};
pub use data::{split, synth_biased, Dataset, FeatureEncoder, RawTable, Schema, SynthParams};
pub use error::{Error, Result};
pub use eval::{
    alpha_sweep, default_alpha_grid, evaluate, frontier_gap, pareto, spearman, FairnessField, Metrics, MetricsRecord,
    ParetoFrontier,
};
pub use losses::FairnessMetric;
pub use model::{MlpArchitecture, ParamVector};
pub use objective::{AlphaMode, EpochStats, TrainConfig, TrainMeta};
pub use subspace::{interpolate, predict, route, train_yodo, train_yodo_with, SubspaceModel};
pub use tensor::{Matrix, Vector};

//! Simulated distributed logistic-regression training.

mod engine;
mod model;
mod straggler;

pub use engine::{
    partition, round_seed, run_training, ExperimentConfig, IterationRecord, RoundOutcome, SchemeConfig,
    SimConfig, SimSettings, Simulator, TraceSummary, TrainingState, TrainingTrace,
};
pub use model::{logistic_gradient, logistic_loss_sum, make_synthetic_dataset, sigmoid, SyntheticDataset};
pub use straggler::{straggler_sample, StragglerModel};

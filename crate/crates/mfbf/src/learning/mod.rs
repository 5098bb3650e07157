//! Data-driven barrier functions: dataset generation from rollouts, the
//! dropout-uncertainty MLP regressor, learned barrier backings, and the
//! iterative safe-set expansion algorithms.

mod checkpoint;
mod dataset;
mod expand;
mod learned;
mod mlp;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{
    generate_dataset, no_filter, read_dataset_csv, run_episodes, write_dataset_csv, DeltaSample,
    EpisodeDataset, EpisodeOptions, EpisodeOutcome, RolloutPolicy, RolloutSample, SamplerSpec,
};
pub use expand::{
    expand_safe_set, expand_safe_set_with_max, iterate_expansion, iteration_seeds, ExpandConfig,
    Expansion,
};
pub use learned::LearnedBarrier;
pub use mlp::{
    fit_regressor, predict_with_uncertainty, AngleMode, InputEncoder, MlpRegressor, Optimizer,
    RelativePose, TrainConfig, TrainReport, TrainRow,
};

//! Training loop, configuration, checkpoints and run orchestration.

mod checkpoint;
mod config;
mod evaluate;
mod run;
mod split;
mod train;

pub use checkpoint::{Checkpoint, NetworkBlob, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{parse_config, parse_override, EnvKind, HeadKind, TrainConfig};
pub use evaluate::{
    evaluate, rollout_policy, two_period_allocations, write_allocations_csv, write_icdf_csv, Evaluation, Rollout,
    TrajectoryRow,
};
pub use run::{
    combine_metrics, combine_weights, evaluate_params, evaluate_run_dir, execute, load_run, run_label, weight_band,
    write_report, write_run_dir, write_weight_bands, write_weights_csv, Report, RunOutput, WeightBand,
    ALLOCATIONS_FILE, BENCHMARK_FILE, CHECKPOINT_BEST, CHECKPOINT_LAST, CONFIG_FILE, HISTORY_FILE, ICDF_FILE,
    METRICS_FILE, SUMMARY_FILE, TRAJECTORY_FILE, WEIGHTS_FILE,
};
pub use split::{split_data, DataSplit};
pub use train::{
    model_based_buffer, simplex_lattice, train, train_model_based, Buffer, EpisodeRecord, Learner, RsVarGrid,
    RunHistory, TrainOutcome, UpdateStats,
};

//! Training, evaluation and experiment drivers.

pub mod config;
pub mod evaluate;
pub mod grid;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod train;

pub use config::{TrainConfig, SEED_ENV};
pub use evaluate::{branch_coverage, evaluate, jitter, predict_all, set_jitter, Coverage, Evaluation};
pub use objective::{objective, DiscreteState, GradMode, Objective, ObjectiveOptions, Sample};
pub use grid::{grid_rows, run_grid, write_grid_csv, GridAxis, GridResult, GridRow};
pub use optim::Adam;
pub use pipeline::{build_bank, ensemble_pseudo_targets, member_config, pseudo_targets, train_members};
pub use report::{render_svg, write_report};
pub use train::{derive_seed, mean_loss, train, train_from, EpochSummary, LogLine, TrainInputs, TrainOutcome};

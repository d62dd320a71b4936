use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("trajectory length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("target track {track_id} is not present at frame {frame}")]
    MissingTargetFrame { track_id: String, frame: usize },

    #[error("k = {k} exceeds the {available} available predictions")]
    KTooLarge { k: usize, available: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no overlapping steps (shift {shift}, lengths {left} and {right})")]
    EmptyOverlap { shift: usize, left: usize, right: usize },

    #[error("non-finite cost at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("history window is empty")]
    EmptyHistory,

    #[error("trace was recorded against parameter generation {trace}, predictor is at {current}")]
    StaleTrace { trace: u64, current: u64 },

    #[error("invalid time shift {shift} for horizon {horizon}")]
    InvalidShift { shift: usize, horizon: usize },

    #[error("need {needed} pooled trajectories for {clusters} clusters, got {got}")]
    TooFewTrajectories { needed: usize, clusters: usize, got: usize },

    #[error("unknown scenario {0}")]
    UnknownScenario(String),

    #[error("scenario {0} needs predictions from at least two distinct models")]
    InsufficientDiversity(String),

    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: PathBuf, line: usize, reason: String },

    #[error("{0}: no AGENT track")]
    MissingAgent(PathBuf),

    #[error("{path}: expected {expected} frames, found {found}")]
    WrongFrameCount { path: PathBuf, expected: usize, found: usize },

    #[error("scenario {scenario_id}: need {needed} observed frames, have {available}")]
    InsufficientFrames { scenario_id: String, needed: usize, available: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss in scenario {0}")]
    NonFiniteLoss(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

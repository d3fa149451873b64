//! Source training, target adaptation and the end-to-end comparison of a
//! source model with its adapted counterpart.

mod adapt;
mod direction;
mod log;
mod optimizer;
mod source;

pub use adapt::{adapt_target, AdaptConfig, AdaptRun};
pub use direction::{adapt_and_compare, evaluate, run_direction, score_dataset, Comparison, DirectionConfig, DirectionOutcome};
pub use log::{EpochRecord, TrainingLog, LOG_HEADER};
pub use optimizer::{ParamGroup, Sgd};
pub use source::{accuracy, train_source, SourceRun, SourceTrainConfig};

pub const STRATEGY_WITHOUT: &str = "w/o SATL";
pub const STRATEGY_WITH: &str = "w/ SATL";

//! Post-hoc analyses over assignments: label correlation, event shifts,
//! demographic slices and the stance dataset export.

mod correlation;
mod demographics;
mod events;
mod stance;

use thiserror::Error;

pub use correlation::{correlation_matrix, pearson, pearson_binary, CorrelationMatrix};
pub use demographics::{demographic_slice, AgeGroup, SliceMode, SliceReport, SliceSpec, US_STATES};
pub use events::{event_shift, EventShift, EventWindows, ScoredPoint, Weight};
pub use stance::{export_stance_dataset, SplitFractions, StanceRecord, StanceSplits};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no assigned instance carries a label")]
    NoLabeledInstances,
    #[error("no assigned instance carries a stance label")]
    NoStanceLabels,
    #[error("unknown US state code '{0}'")]
    UnknownState(String),
    #[error("window lengths must be positive")]
    InvalidWindow,
    #[error("split fractions must be nonnegative and sum to 1")]
    InvalidSplit,
    #[error("min_share {0} outside [0, 1]")]
    InvalidShare(f64),
    #[error("entity extraction failed: {0}")]
    Entities(#[from] crate::argumentation::ArgumentError),
}

//! Field ranking by adjusted mutual information with the class label.

mod discretize;
mod emi;
mod info;
mod prefilter;
mod report;

pub use discretize::{column_codes, discretize_floats, discretize_ints, Codes, DEFAULT_BINS};
pub use emi::{
    adjusted_mi, adjusted_mi_codes, ami_from_parts, expected_mi, expected_mi_monte_carlo, AmiScore, EmiMethod,
    EmiSettings,
};
pub use info::{entropy, mutual_information, ContingencyTable};
pub use prefilter::{
    builtin_denylist, denylisted, parse_denylist, prefilter_fields, Exclusion, ExclusionReason, PrefilterConfig,
};
pub use report::{label_codes, rank_top_k, write_ami_report, AmiEntry, AmiReport, RankConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("{0}")]
    Domain(String),
    #[error("ranking needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("feature matrix has no rows")]
    EmptyMatrix,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

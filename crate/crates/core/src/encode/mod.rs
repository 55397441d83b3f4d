//! Integer encoding of raw field values into a [`FeatureMatrix`].

mod dict;
mod matrix;
mod quality;
mod schema;

pub use dict::{build_domain_dictionary, second_level_domain, DomainDict};
pub use matrix::{build_feature_matrix, read_matrix, write_matrix, BuildStats, Column, ColumnValues, FeatureMatrix};
pub use quality::{filter_low_quality, QualityReport, MIN_VALID_FRACTION};
pub use schema::{decode_ipv4, encode_field, infer_schema, parse_hex_or_int, parse_ipv4, EncodedValue, FieldKind, FieldSchema, Numeric};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

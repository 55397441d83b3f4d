//! Shortcut-feature audit toolkit for labeled encrypted traffic captures.
//!
//! The crate covers the whole audit path: packets are dissected ([`ingest`]),
//! encoded into an integer feature table ([`encode`]), ranked by adjusted
//! mutual information against the class label ([`ranker`]), categorized
//! ([`taxonomy`]), validated per category ([`validators`]), occluded
//! byte-exactly in fixed-size session tensors ([`occlusion`]) and finally
//! scored with a decision tree ([`evaluator`]). [`synthgen`] produces labeled
//! captures with planted shortcuts, and [`pipeline`] chains every stage
//! through on-disk artifacts.

pub mod encode;
pub mod evaluator;
pub mod ingest;
pub mod occlusion;
pub mod pipeline;
pub mod plot;
pub mod ranker;
pub mod rng;
pub mod synthgen;
pub mod taxonomy;
pub mod validators;

pub use encode::{EncodedValue, FeatureMatrix, FieldKind, FieldSchema};
pub use ingest::{Direction, FlowKey, PacketRecord, ParsedPacket, Session};
pub use occlusion::{OcclusionSpec, SessionTensor, Strategy};
pub use pipeline::{run_pipeline, PipelineConfig, Stage};
pub use ranker::AmiReport;
pub use taxonomy::{Category, CategorizedReport};

/// Tool version embedded in every emitted report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

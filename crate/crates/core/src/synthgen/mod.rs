//! Synthetic labeled TCP captures with planted shortcuts and genuine
//! class signals, generated byte by byte.

mod generate;
mod packet;
mod spec;

pub use generate::{
    class_prefix, class_signature, client_address, generate_synthetic_dataset, manifest_paths,
    write_synthetic_dataset, FlowTruth, Manifest, ManifestFile, PlantedMechanism, SynthDataset, SynthFlow,
};
pub use spec::{Environment, HighbitsField, Shortcut, Signal, SynthSpec};

use thiserror::Error;

use crate::ingest::IngestError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

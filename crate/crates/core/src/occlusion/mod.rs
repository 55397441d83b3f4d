//! Fixed-size session tensors and byte-exact field occlusion.

mod apply;
mod checksum;
mod container;
mod tensor;

pub use apply::{apply_occlusion, modifiable_bytes, resolve_targets, OcclusionLog, OcclusionSpec, Strategy};
pub use checksum::{
    ipv4_header_checksum, ones_complement_sum, recompute_checksums, transport_checksum, ChecksumOutcome,
};
pub use container::{read_tensors, write_tensors, write_tensors_pcap};
pub use tensor::{
    build_session_tensor, RowMeta, SessionTensor, Span, HEADER_LEN, PACKETS, PAYLOAD_LEN, ROW_LEN, TENSOR_LEN,
};

use thiserror::Error;

use crate::ingest::IngestError;

#[derive(Debug, Error)]
pub enum OcclusionError {
    #[error("session {0} has no packets")]
    EmptySession(u64),
    #[error("session {0} was not parsed inline")]
    NotParsed(u64),
    #[error("unknown occlusion target `{0}`")]
    UnknownTarget(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("tensor container: {0}")]
    Container(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

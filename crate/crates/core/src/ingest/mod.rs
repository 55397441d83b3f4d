//! Packet acquisition: capture reading, inline dissection, external dissector
//! invocation, field-table loading and bidirectional session assembly.

mod capture;
mod dissector;
mod frames;
mod parser;
mod records;
mod sessions;

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use capture::{read_capture, write_pcap, Capture, Frame};
pub use frames::{dissect_capture, DissectStats};
pub use dissector::{run_external_dissector, DissectOutput, DissectorConfig, IDENTITY_FIELDS};
pub use parser::{
    parse_packet_inline, record_from_parsed, FieldSpan, LinkType, ParseError, ParsedPacket, Region, LOCATABLE_FIELDS,
    SNI_FIELD,
};
pub use records::{load_records, record_from_fields, write_records_ndjson, LoadOutput, RecordFormat};
pub use sessions::{
    assemble_sessions, load_flow_labels, AssemblyStats, LabelingRule, PacketId, Session,
    SessionPacket,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("capture {0} does not exist")]
    MissingInput(PathBuf),
    #[error("dissector `{binary}` could not be launched: {reason}")]
    ToolUnavailable { binary: String, reason: String },
    #[error("dissector exited with {status}: {stderr}")]
    DissectFailed { status: String, stderr: String },
    #[error("{path}: missing mandatory column(s) {columns:?}")]
    MissingColumns { path: PathBuf, columns: Vec<String> },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("capture {path}: {reason}")]
    Capture { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

impl Transport {
    pub fn ip_protocol(self) -> u8 {
        match self {
            Transport::Tcp => 6,
            Transport::Udp => 17,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

/// One side of a connection. Ordering is lexicographic on `(ip, port)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: Ipv4Addr, port: u16) -> Self {
        Self { ip, port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

/// Canonical bidirectional flow identity: `endpoint_a <= endpoint_b`, so both
/// directions of a connection share one key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub endpoint_a: Endpoint,
    pub endpoint_b: Endpoint,
    pub transport: Transport,
}

impl FlowKey {
    /// Canonicalizes a directed `(src, dst)` pair. The returned direction is
    /// `Forward` when `src` became `endpoint_a`.
    pub fn canonical(src: Endpoint, dst: Endpoint, transport: Transport) -> (FlowKey, Direction) {
        if src <= dst {
            (FlowKey { endpoint_a: src, endpoint_b: dst, transport }, Direction::Forward)
        } else {
            (FlowKey { endpoint_a: dst, endpoint_b: src, transport }, Direction::Reverse)
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = match self.transport {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        };
        write!(f, "{} <-> {} ({proto})", self.endpoint_a, self.endpoint_b)
    }
}

/// One dissected packet: dotted field names mapped to raw string values.
/// A field that did not occur in the packet has no key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    /// Index of the input (capture or field table) the packet came from.
    pub source: u32,
    pub capture_index: u64,
    /// Seconds relative to the start of the capture.
    pub timestamp: f64,
    pub fields: BTreeMap<String, String>,
    pub flow_key: FlowKey,
    /// Orientation relative to the canonical key until session assembly
    /// re-anchors it on the first packet seen.
    pub direction: Direction,
}

impl PacketRecord {
    pub fn id(&self) -> PacketId {
        PacketId { source: self.source, capture_index: self.capture_index }
    }

    pub fn get(&self, field: &str) -> Option<&str> {
        self.fields.get(field).map(String::as_str)
    }
}

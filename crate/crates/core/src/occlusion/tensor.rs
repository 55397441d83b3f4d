use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::OcclusionError;
use crate::ingest::{Region, Session, Transport};

pub const PACKETS: usize = 5;
pub const HEADER_LEN: usize = 80;
pub const PAYLOAD_LEN: usize = 240;
pub const ROW_LEN: usize = HEADER_LEN + PAYLOAD_LEN;
pub const TENSOR_LEN: usize = PACKETS * ROW_LEN;

/// Field location within a row: `(start, len)`, payload fields shifted by
/// the header budget.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub timestamp: f64,
    pub offsets: BTreeMap<String, Span>,
    pub ip_header_len: usize,
    pub transport: Option<Transport>,
    pub transport_header_len: usize,
    /// Captured header bytes that did not fit the header budget.
    pub header_truncated: bool,
    /// Payload bytes in the row.
    pub payload_len: usize,
    /// Payload is incomplete in the row (budget or capture length).
    pub payload_truncated: bool,
}

/// Fixed 5×320 byte view of a session: per packet, 80 header bytes starting
/// at the IP header, then 240 payload bytes. Missing packets are zero rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTensor {
    pub session_id: u64,
    pub label: String,
    pub dataset_tag: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
    pub rows: Vec<RowMeta>,
}

impl SessionTensor {
    pub fn row(&self, i: usize) -> &[u8] {
        &self.bytes[i * ROW_LEN..(i + 1) * ROW_LEN]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [u8] {
        &mut self.bytes[i * ROW_LEN..(i + 1) * ROW_LEN]
    }

    /// Absolute byte ranges of `field` across rows.
    pub fn field_spans(&self, field: &str) -> Vec<(usize, Span)> {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.offsets.get(field).map(|&s| (i, s)))
            .collect()
    }
}

/// Builds the tensor from the first five packets of a session, both
/// directions interleaved in time order.
pub fn build_session_tensor(session: &Session) -> Result<SessionTensor, OcclusionError> {
    if session.packets.is_empty() {
        return Err(OcclusionError::EmptySession(session.id));
    }
    let mut bytes = vec![0u8; TENSOR_LEN];
    let mut rows = Vec::new();
    for (i, pkt) in session.packets.iter().take(PACKETS).enumerate() {
        let p = pkt.parsed.as_ref().ok_or(OcclusionError::NotParsed(session.id))?;
        let base = i * ROW_LEN;
        let h = p.header_bytes.len().min(HEADER_LEN);
        bytes[base..base + h].copy_from_slice(&p.header_bytes[..h]);
        let pl = p.payload_bytes.len().min(PAYLOAD_LEN);
        bytes[base + HEADER_LEN..base + HEADER_LEN + pl].copy_from_slice(&p.payload_bytes[..pl]);
        let mut offsets = BTreeMap::new();
        for (name, span) in &p.field_offsets {
            match span.region {
                Region::Header if span.offset + span.len <= HEADER_LEN => {
                    offsets.insert(name.clone(), (span.offset, span.len));
                }
                Region::Payload if span.offset < PAYLOAD_LEN => {
                    let len = span.len.min(PAYLOAD_LEN - span.offset);
                    offsets.insert(name.clone(), (HEADER_LEN + span.offset, len));
                }
                _ => {}
            }
        }
        rows.push(RowMeta {
            timestamp: pkt.timestamp,
            offsets,
            ip_header_len: p.ip_header_len,
            transport: p.transport,
            transport_header_len: p.transport_header_len,
            header_truncated: p.header_bytes.len() > HEADER_LEN,
            payload_len: pl,
            payload_truncated: p.payload_bytes.len() > PAYLOAD_LEN || p.payload_len_on_wire() > pl,
        });
    }
    Ok(SessionTensor {
        session_id: session.id,
        label: session.label.clone(),
        dataset_tag: session.dataset_tag.clone(),
        bytes,
        rows,
    })
}

use log::debug;
use serde::{Deserialize, Serialize};

use super::{parse_packet_inline, record_from_parsed, Capture, ParseError, ParsedPacket, PacketRecord};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DissectStats {
    pub frames: usize,
    pub parsed: usize,
    pub truncated: usize,
    pub unsupported: usize,
    /// IPv4 packets without a TCP/UDP flow identity (fragments, ICMP).
    pub no_flow: usize,
}

/// Runs the inline parser over every frame of a capture.
pub fn dissect_capture(capture: &Capture, source: u32) -> (Vec<(PacketRecord, Option<ParsedPacket>)>, DissectStats) {
    let mut stats = DissectStats { frames: capture.frames.len(), ..Default::default() };
    stats.unsupported += capture.unsupported_link;
    let mut out = Vec::with_capacity(capture.frames.len());
    for f in &capture.frames {
        let Some(link) = f.link_type else {
            continue;
        };
        match parse_packet_inline(&f.data, link) {
            Ok(p) => match record_from_parsed(&p, source, f.index, f.timestamp, f.orig_len as usize) {
                Some(r) => {
                    stats.parsed += 1;
                    out.push((r, Some(p)));
                }
                None => stats.no_flow += 1,
            },
            Err(ParseError::Truncated { .. }) => stats.truncated += 1,
            Err(ParseError::Unsupported(why)) => {
                debug!("frame {}: {why}", f.index);
                stats.unsupported += 1;
            }
        }
    }
    (out, stats)
}

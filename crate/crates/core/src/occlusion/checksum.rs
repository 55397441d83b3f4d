use serde::{Deserialize, Serialize};

use super::tensor::{RowMeta, HEADER_LEN};
use crate::ingest::Transport;

/// RFC 1071 ones-complement sum of big-endian 16-bit words, folded.
pub fn ones_complement_sum(data: &[u8], initial: u32) -> u16 {
    let mut sum = initial as u64;
    let mut chunks = data.chunks_exact(2);
    for c in &mut chunks {
        sum += u16::from_be_bytes([c[0], c[1]]) as u64;
    }
    if let [last] = chunks.remainder() {
        sum += (*last as u64) << 8;
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    sum as u16
}

/// Checksum of an IPv4 header with its checksum field treated as zero.
pub fn ipv4_header_checksum(header: &[u8]) -> u16 {
    let mut h = header.to_vec();
    h[10] = 0;
    h[11] = 0;
    !ones_complement_sum(&h, 0)
}

/// TCP/UDP checksum over the pseudo-header and `segment`, whose checksum
/// field must already be zero.
pub fn transport_checksum(src: [u8; 4], dst: [u8; 4], protocol: u8, segment: &[u8]) -> u16 {
    let mut pseudo = Vec::with_capacity(12);
    pseudo.extend_from_slice(&src);
    pseudo.extend_from_slice(&dst);
    pseudo.push(0);
    pseudo.push(protocol);
    pseudo.extend_from_slice(&(segment.len() as u16).to_be_bytes());
    let partial = ones_complement_sum(&pseudo, 0);
    let c = !ones_complement_sum(segment, partial as u32);
    if protocol == 17 && c == 0 {
        0xffff
    } else {
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecksumOutcome {
    pub ip_updated: bool,
    pub transport_updated: bool,
    /// The segment is incomplete in the row, so its checksum was zeroed.
    pub transport_zeroed: bool,
}

pub(crate) fn transport_checksum_offset(meta: &RowMeta) -> Option<usize> {
    match meta.transport? {
        Transport::Tcp => Some(meta.ip_header_len + 16),
        Transport::Udp => Some(meta.ip_header_len + 6),
    }
}

/// Recomputes the IPv4 header checksum and, when the whole segment is in
/// the row, the transport checksum. A segment cut by the row limits gets a
/// zero transport checksum instead.
pub fn recompute_checksums(row: &mut [u8], meta: &RowMeta, ip: bool, transport: bool) -> ChecksumOutcome {
    let mut out = ChecksumOutcome::default();
    let ihl = meta.ip_header_len;
    if ip && (20..=HEADER_LEN).contains(&ihl) {
        let c = ipv4_header_checksum(&row[..ihl]);
        row[10..12].copy_from_slice(&c.to_be_bytes());
        out.ip_updated = true;
    }
    if !transport {
        return out;
    }
    let (Some(t), Some(at)) = (meta.transport, transport_checksum_offset(meta)) else {
        return out;
    };
    if at + 2 > HEADER_LEN {
        return out;
    }
    let th = meta.transport_header_len;
    if meta.header_truncated || meta.payload_truncated || ihl + th > HEADER_LEN {
        row[at..at + 2].copy_from_slice(&[0, 0]);
        out.transport_zeroed = true;
        return out;
    }
    let mut segment = Vec::with_capacity(th + meta.payload_len);
    segment.extend_from_slice(&row[ihl..ihl + th]);
    segment.extend_from_slice(&row[HEADER_LEN..HEADER_LEN + meta.payload_len]);
    let rel = at - ihl;
    segment[rel] = 0;
    segment[rel + 1] = 0;
    let src = [row[12], row[13], row[14], row[15]];
    let dst = [row[16], row[17], row[18], row[19]];
    let proto = match t {
        Transport::Tcp => 6,
        Transport::Udp => 17,
    };
    let c = transport_checksum(src, dst, proto, &segment);
    row[at..at + 2].copy_from_slice(&c.to_be_bytes());
    out.transport_updated = true;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_ipv4_header() {
        let h: [u8; 20] = [
            0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8, 0x00, 0x01, 0xc0,
            0xa8, 0x00, 0xc7,
        ];
        // word sum 0x2479c folds to 0x479e; complement 0xb861
        let words: u32 = h.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32).sum();
        let folded = (words & 0xffff) + (words >> 16);
        assert_eq!(!(folded as u16), 0xb861);
        assert_eq!(ipv4_header_checksum(&h), 0xb861);
    }

    #[test]
    fn valid_header_sums_to_all_ones() {
        let mut h: [u8; 20] = [
            0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8, 0x00, 0x01, 0xc0,
            0xa8, 0x00, 0xc7,
        ];
        let c = ipv4_header_checksum(&h);
        h[10..12].copy_from_slice(&c.to_be_bytes());
        assert_eq!(ones_complement_sum(&h, 0), 0xffff);
    }

    #[test]
    fn odd_length_pads_with_zero() {
        assert_eq!(ones_complement_sum(&[0x12], 0), 0x1200);
    }
}

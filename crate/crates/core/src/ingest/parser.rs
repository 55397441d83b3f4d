//! Minimal IPv4/TCP/UDP dissector that records the byte span of every field it
//! decodes, so later stages can rewrite fields in place.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Endpoint, FlowKey, PacketRecord, Transport};

pub const SNI_FIELD: &str = "tls.handshake.extensions_server_name";

/// Every field name the inline parser can locate, with its fixed width in
/// bytes (0 = variable).
pub const LOCATABLE_FIELDS: &[(&str, usize)] = &[
    ("ip.dsfield", 1),
    ("ip.len", 2),
    ("ip.id", 2),
    ("ip.flags", 1),
    ("ip.ttl", 1),
    ("ip.proto", 1),
    ("ip.checksum", 2),
    ("ip.src", 4),
    ("ip.dst", 4),
    ("tcp.srcport", 2),
    ("tcp.dstport", 2),
    ("tcp.seq_raw", 4),
    ("tcp.ack_raw", 4),
    ("tcp.flags", 1),
    ("tcp.window_size", 2),
    ("tcp.checksum", 2),
    ("tcp.urgent_pointer", 2),
    ("tcp.options.timestamp.tsval", 4),
    ("tcp.options.timestamp.tsecr", 4),
    ("udp.srcport", 2),
    ("udp.dstport", 2),
    ("udp.length", 2),
    ("udp.checksum", 2),
    (SNI_FIELD, 0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkType {
    Ethernet,
    RawIp,
    LinuxSll,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("truncated {layer} header: need {need} bytes, have {have}")]
    Truncated { layer: &'static str, need: usize, have: usize },
    #[error("unsupported packet: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Header,
    Payload,
}

/// Location of a field within `header_bytes` or `payload_bytes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpan {
    pub region: Region,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPacket {
    pub link_type: LinkType,
    /// IP header followed by the transport header (link layer stripped).
    pub header_bytes: Vec<u8>,
    /// Transport payload as captured.
    pub payload_bytes: Vec<u8>,
    pub field_offsets: BTreeMap<String, FieldSpan>,
    /// Big-endian value of every fixed-width field in `field_offsets`.
    pub parsed_values: BTreeMap<String, u64>,
    pub ip_header_len: usize,
    pub ip_total_len: usize,
    pub transport: Option<Transport>,
    pub transport_header_len: usize,
    pub server_name: Option<String>,
}

impl ParsedPacket {
    pub fn src_ip(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.parsed_values["ip.src"] as u32)
    }

    pub fn dst_ip(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.parsed_values["ip.dst"] as u32)
    }

    fn port(&self, side: &str) -> Option<u16> {
        let proto = match self.transport? {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        };
        self.parsed_values.get(&format!("{proto}.{side}")).map(|&v| v as u16)
    }

    /// Directed endpoints, when the packet has a TCP/UDP header.
    pub fn endpoints(&self) -> Option<(Endpoint, Endpoint, Transport)> {
        let t = self.transport?;
        Some((
            Endpoint::new(self.src_ip(), self.port("srcport")?),
            Endpoint::new(self.dst_ip(), self.port("dstport")?),
            t,
        ))
    }

    /// Number of payload bytes the IP header claims.
    pub fn payload_len_on_wire(&self) -> usize {
        self.ip_total_len.saturating_sub(self.ip_header_len + self.transport_header_len)
    }

    /// Reads a field's bytes from the packet.
    pub fn field_bytes(&self, field: &str) -> Option<&[u8]> {
        let span = self.field_offsets.get(field)?;
        let src = match span.region {
            Region::Header => &self.header_bytes,
            Region::Payload => &self.payload_bytes,
        };
        src.get(span.offset..span.offset + span.len)
    }
}

fn need(layer: &'static str, buf: &[u8], n: usize) -> Result<(), ParseError> {
    if buf.len() < n {
        Err(ParseError::Truncated { layer, need: n, have: buf.len() })
    } else {
        Ok(())
    }
}

fn be(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| (acc << 8) | b as u64)
}

struct Spans<'a> {
    buf: &'a [u8],
    offsets: BTreeMap<String, FieldSpan>,
    values: BTreeMap<String, u64>,
}

impl Spans<'_> {
    fn add(&mut self, name: &str, offset: usize, len: usize) {
        self.values.insert(name.to_string(), be(&self.buf[offset..offset + len]));
        self.offsets
            .insert(name.to_string(), FieldSpan { region: Region::Header, offset, len });
    }
}

/// Dissects one frame starting at the link layer.
pub fn parse_packet_inline(raw_frame: &[u8], link_type: LinkType) -> Result<ParsedPacket, ParseError> {
    let ip_start = match link_type {
        LinkType::Ethernet => {
            need("ethernet", raw_frame, 14)?;
            let mut off = 12;
            let mut ethertype = u16::from_be_bytes([raw_frame[off], raw_frame[off + 1]]);
            while ethertype == 0x8100 || ethertype == 0x88a8 {
                off += 4;
                need("vlan", raw_frame, off + 2)?;
                ethertype = u16::from_be_bytes([raw_frame[off], raw_frame[off + 1]]);
            }
            match ethertype {
                0x0800 => off + 2,
                0x86dd => return Err(ParseError::Unsupported("ipv6".into())),
                other => return Err(ParseError::Unsupported(format!("ethertype 0x{other:04x}"))),
            }
        }
        LinkType::LinuxSll => {
            need("sll", raw_frame, 16)?;
            match u16::from_be_bytes([raw_frame[14], raw_frame[15]]) {
                0x0800 => 16,
                0x86dd => return Err(ParseError::Unsupported("ipv6".into())),
                other => return Err(ParseError::Unsupported(format!("sll protocol 0x{other:04x}"))),
            }
        }
        LinkType::RawIp => 0,
    };

    let ip = &raw_frame[ip_start..];
    need("ipv4", ip, 20)?;
    let version = ip[0] >> 4;
    if version == 6 {
        return Err(ParseError::Unsupported("ipv6".into()));
    }
    if version != 4 {
        return Err(ParseError::Unsupported(format!("ip version {version}")));
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    if ihl < 20 {
        return Err(ParseError::Unsupported(format!("ipv4 ihl {ihl}")));
    }
    need("ipv4", ip, ihl)?;
    let total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    // total length 0 appears with segmentation offload; fall back to the frame
    let ip_end = if total_len == 0 { ip.len() } else { total_len.min(ip.len()) };
    if ip_end < ihl {
        return Err(ParseError::Unsupported(format!("ipv4 total length {total_len} < ihl {ihl}")));
    }
    let ip = &ip[..ip_end];
    let ip_total_len = if total_len == 0 { ip_end } else { total_len };

    let mut spans = Spans { buf: ip, offsets: BTreeMap::new(), values: BTreeMap::new() };
    spans.add("ip.dsfield", 1, 1);
    spans.add("ip.len", 2, 2);
    spans.add("ip.id", 4, 2);
    spans.add("ip.flags", 6, 1);
    spans.add("ip.ttl", 8, 1);
    spans.add("ip.proto", 9, 1);
    spans.add("ip.checksum", 10, 2);
    spans.add("ip.src", 12, 4);
    spans.add("ip.dst", 16, 4);

    let proto = ip[9];
    let frag_offset = u16::from_be_bytes([ip[6] & 0x1f, ip[7]]);
    let t = ihl;
    let (transport, thl) = if frag_offset != 0 {
        (None, 0)
    } else {
        match proto {
            6 => {
                need("tcp", ip, t + 20)?;
                let doff = (ip[t + 12] >> 4) as usize * 4;
                if doff < 20 {
                    return Err(ParseError::Unsupported(format!("tcp data offset {doff}")));
                }
                need("tcp", ip, t + doff)?;
                spans.add("tcp.srcport", t, 2);
                spans.add("tcp.dstport", t + 2, 2);
                spans.add("tcp.seq_raw", t + 4, 4);
                spans.add("tcp.ack_raw", t + 8, 4);
                spans.add("tcp.flags", t + 13, 1);
                spans.add("tcp.window_size", t + 14, 2);
                spans.add("tcp.checksum", t + 16, 2);
                spans.add("tcp.urgent_pointer", t + 18, 2);
                scan_tcp_options(&mut spans, t + 20, t + doff);
                (Some(Transport::Tcp), doff)
            }
            17 => {
                need("udp", ip, t + 8)?;
                spans.add("udp.srcport", t, 2);
                spans.add("udp.dstport", t + 2, 2);
                spans.add("udp.length", t + 4, 2);
                spans.add("udp.checksum", t + 6, 2);
                (Some(Transport::Udp), 8)
            }
            _ => (None, 0),
        }
    };

    let header_end = t + thl;
    let header_bytes = ip[..header_end].to_vec();
    let payload_bytes = ip[header_end..].to_vec();
    let Spans { mut offsets, values, .. } = spans;

    let mut server_name = None;
    if transport == Some(Transport::Tcp) {
        if let Some((off, len)) = find_sni(&payload_bytes) {
            if let Ok(name) = std::str::from_utf8(&payload_bytes[off..off + len]) {
                server_name = Some(name.to_string());
                offsets.insert(
                    SNI_FIELD.to_string(),
                    FieldSpan { region: Region::Payload, offset: off, len },
                );
            }
        }
    }

    Ok(ParsedPacket {
        link_type,
        header_bytes,
        payload_bytes,
        field_offsets: offsets,
        parsed_values: values,
        ip_header_len: ihl,
        ip_total_len,
        transport,
        transport_header_len: thl,
        server_name,
    })
}

fn scan_tcp_options(spans: &mut Spans<'_>, mut i: usize, end: usize) {
    while i < end {
        match spans.buf[i] {
            0 => break,
            1 => i += 1,
            kind => {
                if i + 1 >= end {
                    break;
                }
                let len = spans.buf[i + 1] as usize;
                if len < 2 || i + len > end {
                    break;
                }
                if kind == 8 && len == 10 {
                    spans.add("tcp.options.timestamp.tsval", i + 2, 4);
                    spans.add("tcp.options.timestamp.tsecr", i + 6, 4);
                }
                i += len;
            }
        }
    }
}

/// Locates the server_name bytes of a TLS ClientHello at the start of `p`.
fn find_sni(p: &[u8]) -> Option<(usize, usize)> {
    let u16_at = |i: usize| -> Option<usize> { Some(u16::from_be_bytes([*p.get(i)?, *p.get(i + 1)?]) as usize) };
    if p.len() < 9 || p[0] != 0x16 || p[1] != 0x03 || p[5] != 0x01 {
        return None;
    }
    // record header (5) + handshake header (4) + version (2) + random (32)
    let mut i = 5 + 4 + 2 + 32;
    i += 1 + *p.get(i)? as usize;
    i += 2 + u16_at(i)?;
    i += 1 + *p.get(i)? as usize;
    let ext_end = (i + 2 + u16_at(i)?).min(p.len());
    i += 2;
    while i + 4 <= ext_end {
        let ty = u16_at(i)?;
        let len = u16_at(i + 2)?;
        let body = i + 4;
        if ty == 0 {
            // server_name_list length (2), name type (1), name length (2)
            if *p.get(body + 2)? != 0 {
                return None;
            }
            let name_len = u16_at(body + 3)?;
            let start = body + 5;
            if start + name_len <= p.len() && name_len > 0 {
                return Some((start, name_len));
            }
            return None;
        }
        i = body + len;
    }
    None
}

/// Builds the record the built-in dissector reports for a parsed packet,
/// using tshark-compatible field names. `None` when the packet has no
/// TCP/UDP flow identity.
pub fn record_from_parsed(
    parsed: &ParsedPacket,
    source: u32,
    capture_index: u64,
    timestamp: f64,
    frame_len: usize,
) -> Option<PacketRecord> {
    let (src, dst, transport) = parsed.endpoints()?;
    let (flow_key, direction) = FlowKey::canonical(src, dst, transport);
    let mut fields = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        fields.insert(k.to_string(), v);
    };
    put("frame.number", (capture_index + 1).to_string());
    put("frame.time_relative", format!("{timestamp:.9}"));
    put("frame.len", frame_len.to_string());
    put("ip.version", "4".into());
    put("ip.hdr_len", parsed.ip_header_len.to_string());
    let hb = &parsed.header_bytes;
    put("ip.frag_offset", (u16::from_be_bytes([hb[6] & 0x1f, hb[7]]) as u32 * 8).to_string());
    for (name, value) in &parsed.parsed_values {
        let text = match name.as_str() {
            "ip.src" | "ip.dst" => Ipv4Addr::from(*value as u32).to_string(),
            "ip.checksum" | "tcp.checksum" | "udp.checksum" => format!("0x{value:04x}"),
            "ip.flags" | "ip.dsfield" => format!("0x{value:02x}"),
            "tcp.flags" => format!("0x{:03x}", value | (((hb[parsed.ip_header_len + 12] & 0x0f) as u64) << 8)),
            _ => value.to_string(),
        };
        put(name, text);
    }
    if transport == Transport::Tcp {
        put("tcp.hdr_len", parsed.transport_header_len.to_string());
        put("tcp.len", parsed.payload_len_on_wire().to_string());
    }
    if let Some(name) = &parsed.server_name {
        put(SNI_FIELD, name.clone());
    }
    Some(PacketRecord {
        source,
        capture_index,
        timestamp,
        fields,
        flow_key,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ethernet + IPv4 (IHL=5) + TCP SYN, 54 bytes, no options.
    fn syn_frame() -> Vec<u8> {
        let mut f = vec![
            0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01, 0x08, 0x00, // ethernet
            0x45, 0x00, 0x00, 0x28, 0x12, 0x34, 0x40, 0x00, 0x40, 0x06, 0x00, 0x00, // ip
            10, 0, 0, 1, 10, 0, 0, 2, // addrs
            0x04, 0xd2, 0x01, 0xbb, // ports 1234 -> 443
            0xde, 0xad, 0xbe, 0xef, // seq
            0x00, 0x00, 0x00, 0x00, // ack
            0x50, 0x02, 0x72, 0x10, // doff=5, SYN, window 29200
            0x00, 0x00, 0x00, 0x00, // checksum, urg
        ];
        assert_eq!(f.len(), 54);
        f.shrink_to_fit();
        f
    }

    #[test]
    fn tcp_fields_start_after_20_byte_ip_header() {
        let frame = syn_frame();
        let p = parse_packet_inline(&frame, LinkType::Ethernet).unwrap();
        assert_eq!(p.field_offsets["tcp.srcport"].offset, 20);
        assert_eq!(p.field_offsets["tcp.seq_raw"], FieldSpan { region: Region::Header, offset: 24, len: 4 });
        // seq_raw equals bytes 24..28 of the IP-anchored header, big-endian
        let expected = u32::from_be_bytes([frame[14 + 24], frame[14 + 25], frame[14 + 26], frame[14 + 27]]);
        assert_eq!(p.parsed_values["tcp.seq_raw"], expected as u64);
        assert_eq!(p.parsed_values["tcp.seq_raw"], 0xdeadbeef);
        assert_eq!(p.parsed_values["tcp.window_size"], 29200);
        assert_eq!(p.transport, Some(Transport::Tcp));
        assert!(p.payload_bytes.is_empty());
    }

    #[test]
    fn ip_options_shift_tcp_fields() {
        let mut frame = syn_frame();
        frame[14] = 0x46;
        frame[17] = 0x2c; // total length 44
        frame.splice(34..34, [0x01, 0x01, 0x01, 0x00]);
        let p = parse_packet_inline(&frame, LinkType::Ethernet).unwrap();
        assert_eq!(p.ip_header_len, 24);
        assert_eq!(p.field_offsets["tcp.srcport"].offset, 24);
        assert_eq!(p.parsed_values["tcp.dstport"], 443);
    }

    #[test]
    fn short_frame_is_truncated() {
        let err = parse_packet_inline(&[0u8; 10], LinkType::Ethernet).unwrap_err();
        assert!(matches!(err, ParseError::Truncated { .. }));
    }

    #[test]
    fn ipv6_is_unsupported() {
        let mut frame = syn_frame();
        frame[12] = 0x86;
        frame[13] = 0xdd;
        assert!(matches!(
            parse_packet_inline(&frame, LinkType::Ethernet),
            Err(ParseError::Unsupported(_))
        ));
    }

    #[test]
    fn timestamp_option_is_located() {
        let mut ip = vec![0x45, 0, 0, 0, 0, 0, 0, 0, 64, 6, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
        let mut tcp = vec![0, 80, 0, 81, 0, 0, 0, 1, 0, 0, 0, 0, 0x80, 0x10, 0, 1, 0, 0, 0, 0];
        tcp.extend([1, 1, 8, 10, 0, 0, 0, 100, 0, 0, 0, 90]);
        tcp.extend([1, 1, 1, 1]);
        let total = (ip.len() + tcp.len()) as u16;
        ip[2..4].copy_from_slice(&total.to_be_bytes());
        ip.extend(tcp);
        let p = parse_packet_inline(&ip, LinkType::RawIp).unwrap();
        assert_eq!(p.parsed_values["tcp.options.timestamp.tsval"], 100);
        assert_eq!(p.parsed_values["tcp.options.timestamp.tsecr"], 90);
        assert_eq!(p.field_offsets["tcp.options.timestamp.tsval"].offset, 20 + 20 + 4);
        assert_eq!(p.transport_header_len, 32);
    }

    #[test]
    fn builtin_record_uses_dotted_names() {
        let p = parse_packet_inline(&syn_frame(), LinkType::Ethernet).unwrap();
        let r = record_from_parsed(&p, 0, 0, 0.0, 54).unwrap();
        assert_eq!(r.get("ip.src"), Some("10.0.0.1"));
        assert_eq!(r.get("tcp.flags"), Some("0x002"));
        assert_eq!(r.get("tcp.len"), Some("0"));
        assert_eq!(r.get("frame.number"), Some("1"));
    }
}

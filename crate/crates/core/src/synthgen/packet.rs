use std::net::Ipv4Addr;

use crate::occlusion::{ipv4_header_checksum, transport_checksum};

pub(crate) const CLIENT_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x01];
pub(crate) const SERVER_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x02];

pub(crate) const FIN: u8 = 0x01;
pub(crate) const SYN: u8 = 0x02;
pub(crate) const PSH: u8 = 0x08;
pub(crate) const ACK: u8 = 0x10;

pub(crate) struct TcpPacket<'a> {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub ip_id: u16,
    pub ttl: u8,
    pub sport: u16,
    pub dport: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
    pub window: u16,
    pub tsval: u32,
    pub tsecr: u32,
    pub syn_options: bool,
    pub payload: &'a [u8],
}

fn tcp_options(p: &TcpPacket<'_>) -> Vec<u8> {
    let mut o = Vec::with_capacity(20);
    if p.syn_options {
        o.extend_from_slice(&[2, 4, 0x05, 0xb4, 4, 2]);
    } else {
        o.extend_from_slice(&[1, 1]);
    }
    o.extend_from_slice(&[8, 10]);
    o.extend_from_slice(&p.tsval.to_be_bytes());
    o.extend_from_slice(&p.tsecr.to_be_bytes());
    if p.syn_options {
        o.extend_from_slice(&[1, 3, 3, 7]);
    }
    o
}

/// Ethernet/IPv4/TCP frame with valid checksums.
pub(crate) fn build_frame(p: &TcpPacket<'_>, from_client: bool) -> Vec<u8> {
    let opts = tcp_options(p);
    let thl = 20 + opts.len();
    let total = 20 + thl + p.payload.len();
    let mut f = Vec::with_capacity(14 + total);
    let (smac, dmac) = if from_client { (CLIENT_MAC, SERVER_MAC) } else { (SERVER_MAC, CLIENT_MAC) };
    f.extend_from_slice(&dmac);
    f.extend_from_slice(&smac);
    f.extend_from_slice(&[0x08, 0x00]);

    let mut ip = [0u8; 20];
    ip[0] = 0x45;
    ip[2..4].copy_from_slice(&(total as u16).to_be_bytes());
    ip[4..6].copy_from_slice(&p.ip_id.to_be_bytes());
    ip[6] = 0x40;
    ip[8] = p.ttl;
    ip[9] = 6;
    ip[12..16].copy_from_slice(&p.src.octets());
    ip[16..20].copy_from_slice(&p.dst.octets());
    let c = ipv4_header_checksum(&ip);
    ip[10..12].copy_from_slice(&c.to_be_bytes());
    f.extend_from_slice(&ip);

    let mut seg = Vec::with_capacity(thl + p.payload.len());
    seg.extend_from_slice(&p.sport.to_be_bytes());
    seg.extend_from_slice(&p.dport.to_be_bytes());
    seg.extend_from_slice(&p.seq.to_be_bytes());
    seg.extend_from_slice(&p.ack.to_be_bytes());
    seg.push(((thl / 4) as u8) << 4);
    seg.push(p.flags);
    seg.extend_from_slice(&p.window.to_be_bytes());
    seg.extend_from_slice(&[0, 0, 0, 0]);
    seg.extend_from_slice(&opts);
    seg.extend_from_slice(p.payload);
    let c = transport_checksum(p.src.octets(), p.dst.octets(), 6, &seg);
    seg[16..18].copy_from_slice(&c.to_be_bytes());
    f.extend_from_slice(&seg);
    f
}

/// Syntactic TLS ClientHello carrying `server_name`.
pub(crate) fn client_hello(server_name: &str, random: &[u8; 32], session_id: &[u8; 32]) -> Vec<u8> {
    let name = server_name.as_bytes();
    let mut sni = Vec::new();
    sni.extend_from_slice(&((name.len() + 3) as u16).to_be_bytes());
    sni.push(0);
    sni.extend_from_slice(&(name.len() as u16).to_be_bytes());
    sni.extend_from_slice(name);
    let mut ext = Vec::new();
    ext.extend_from_slice(&[0x00, 0x00]);
    ext.extend_from_slice(&(sni.len() as u16).to_be_bytes());
    ext.extend_from_slice(&sni);
    // supported_versions: TLS 1.3, 1.2
    ext.extend_from_slice(&[0x00, 0x2b, 0x00, 0x05, 0x04, 0x03, 0x04, 0x03, 0x03]);

    let mut body = Vec::new();
    body.extend_from_slice(&[0x03, 0x03]);
    body.extend_from_slice(random);
    body.push(32);
    body.extend_from_slice(session_id);
    body.extend_from_slice(&[0x00, 0x06, 0x13, 0x01, 0x13, 0x02, 0xc0, 0x2f]);
    body.extend_from_slice(&[0x01, 0x00]);
    body.extend_from_slice(&(ext.len() as u16).to_be_bytes());
    body.extend_from_slice(&ext);

    let mut hs = vec![0x01];
    hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend_from_slice(&body);
    let mut rec = vec![0x16, 0x03, 0x01];
    rec.extend_from_slice(&(hs.len() as u16).to_be_bytes());
    rec.extend_from_slice(&hs);
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_packet_inline, LinkType, SNI_FIELD};
    use crate::occlusion::ones_complement_sum;

    fn packet(payload: &[u8], syn_options: bool) -> Vec<u8> {
        build_frame(
            &TcpPacket {
                src: Ipv4Addr::new(10, 1, 0, 1),
                dst: Ipv4Addr::new(172, 16, 0, 3),
                ip_id: 7,
                ttl: 64,
                sport: 40000,
                dport: 443,
                seq: 0xdead_beef,
                ack: 0,
                flags: SYN,
                window: 29200,
                tsval: 1000,
                tsecr: 0,
                syn_options,
                payload,
            },
            true,
        )
    }

    #[test]
    fn checksums_verify_to_all_ones() {
        let f = packet(b"hello!!", false);
        assert_eq!(ones_complement_sum(&f[14..34], 0), 0xffff);
        let seg = &f[34..];
        let mut pseudo = vec![10, 1, 0, 1, 172, 16, 0, 3, 0, 6];
        pseudo.extend_from_slice(&(seg.len() as u16).to_be_bytes());
        let partial = ones_complement_sum(&pseudo, 0);
        assert_eq!(ones_complement_sum(seg, partial as u32), 0xffff);
    }

    #[test]
    fn parser_reads_back_fields() {
        let f = packet(&[], true);
        let p = parse_packet_inline(&f, LinkType::Ethernet).unwrap();
        assert_eq!(p.parsed_values["tcp.seq_raw"], 0xdead_beef);
        assert_eq!(p.parsed_values["tcp.options.timestamp.tsval"], 1000);
        assert_eq!(p.parsed_values["tcp.window_size"], 29200);
        assert_eq!(p.transport_header_len, 40);
    }

    #[test]
    fn hello_exposes_server_name() {
        let hello = client_hello("api.shop.example", &[7; 32], &[9; 32]);
        let f = packet(&hello, false);
        let p = parse_packet_inline(&f, LinkType::Ethernet).unwrap();
        assert_eq!(p.server_name.as_deref(), Some("api.shop.example"));
        assert_eq!(p.field_bytes(SNI_FIELD).unwrap(), b"api.shop.example");
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::packet::{build_frame, client_hello, TcpPacket, ACK, FIN, PSH, SYN};
use super::spec::{HighbitsField, Shortcut, Signal, SynthSpec, LENGTH_BASE, LENGTH_STEP};
use super::SynthError;
use crate::ingest::{
    assemble_sessions, dissect_capture, write_pcap, Capture, Frame, LabelingRule, LinkType, PacketRecord, Session,
};
use crate::rng;

const SERVER_POOL: u8 = 16;
const CLIENT_POOL: u8 = 64;
const SERVER_PORT: u16 = 443;
const SNI_POOL: &[&str] = &[
    "www.alpha-video.com",
    "cdn.alpha-video.com",
    "api.beta-shop.net",
    "img.beta-shop.net",
    "mail.gamma-post.org",
    "login.delta-bank.com",
    "static.epsilon-news.com",
    "push.zeta-chat.io",
    "files.eta-drive.com",
    "ws.theta-games.net",
    "maps.iota-geo.com",
    "feed.kappa-social.com",
];
const DEFAULT_WINDOW: f64 = 29_200.0;

/// Top byte planted by the high-bits shortcut for class `c`.
pub fn class_prefix(c: usize) -> u32 {
    ((c as u32 * 37 + 11) & 0xff) << 24
}

/// Class signature bytes under the payload byte profile.
pub fn class_signature(c: usize) -> [u8; 4] {
    [0xc0 | (c as u8 & 0x0f), (c as u8).wrapping_mul(37).wrapping_add(11), 0x5a, c as u8]
}

pub fn client_address(c: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, (c + 1) as u8, 0, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTruth {
    pub class: usize,
    pub env: String,
    pub client: Ipv4Addr,
    pub client_port: u16,
    pub server: Ipv4Addr,
    pub server_port: u16,
    pub packets: usize,
}

#[derive(Debug, Clone)]
pub struct SynthFlow {
    pub truth: FlowTruth,
    /// `(seconds, ethernet frame)` in send order.
    pub frames: Vec<(f64, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedMechanism {
    pub mechanism: String,
    /// `shortcut` or `signal`.
    pub role: String,
    pub fields: Vec<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub class: String,
    pub env: String,
    pub flows: usize,
    pub packets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub classes: Vec<String>,
    pub planted: Vec<PlantedMechanism>,
    pub files: Vec<ManifestFile>,
    pub flows: Vec<FlowTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub flows: Vec<SynthFlow>,
}

fn planted(spec: &SynthSpec) -> Vec<PlantedMechanism> {
    let mut out = Vec::new();
    let mut push = |mechanism: &str, role: &str, fields: &[&str], detail: String| {
        out.push(PlantedMechanism {
            mechanism: mechanism.into(),
            role: role.into(),
            fields: fields.iter().map(|s| s.to_string()).collect(),
            detail,
        })
    };
    let mut shortcuts = spec.shortcuts.clone();
    shortcuts.sort();
    shortcuts.dedup();
    for s in shortcuts {
        match s {
            Shortcut::SiiBijection => push(
                "sii_bijection",
                "shortcut",
                &["ip.src", "ip.dst"],
                "client address 10.<class+1>.0.1; servers drawn from a shared pool".into(),
            ),
            Shortcut::SessionConstantHighbits { field: HighbitsField::Seq } => push(
                "session_constant_highbits",
                "shortcut",
                &["tcp.seq_raw", "tcp.ack_raw"],
                "initial sequence numbers carry top byte (37*class+11) mod 256 on both sides".into(),
            ),
            Shortcut::SessionConstantHighbits { field: HighbitsField::Tsval } => push(
                "session_constant_highbits",
                "shortcut",
                &["tcp.options.timestamp.tsval", "tcp.options.timestamp.tsecr"],
                "initial timestamp values carry top byte (37*class+11) mod 256 on both sides".into(),
            ),
            Shortcut::EnvCoupledWindow => push(
                "env_coupled_window",
                "shortcut",
                &["tcp.window_size"],
                format!(
                    "per-packet window ~ N(8192 + 6144*class + shift(env), {}); shifts {:?}",
                    spec.window_spread,
                    spec.environments.iter().map(|e| (e.tag.as_str(), e.window_shift)).collect::<Vec<_>>()
                ),
            ),
        }
    }
    let mut signals = spec.signals.clone();
    signals.sort();
    signals.dedup();
    for s in signals {
        match s {
            Signal::PayloadLengthProfile => push(
                "payload_length_profile",
                "signal",
                &["ip.len", "tcp.len"],
                format!(
                    "client data length ~ U[{LENGTH_BASE} + {LENGTH_STEP}*class, {LENGTH_BASE} + {LENGTH_STEP}*class + {}]",
                    spec.payload_length_width
                ),
            ),
            Signal::PayloadByteProfile => push(
                "payload_byte_profile",
                "signal",
                &["payload"],
                "client data bytes 5..9 carry a class signature".into(),
            ),
        }
    }
    out
}

struct Side {
    addr: Ipv4Addr,
    port: u16,
    ttl: u8,
    ip_id: u16,
    seq: u32,
    ts_base: u32,
    last_tsval: u32,
}

fn initial(spec: &SynthSpec, field: HighbitsField, class: usize, rng: &mut ChaCha8Rng) -> u32 {
    if spec.highbits(field) {
        class_prefix(class) | (rng.gen::<u32>() & 0x007f_ffff)
    } else {
        rng.gen()
    }
}

fn generate_flow(spec: &SynthSpec, class: usize, env: usize, index: usize, global: u64) -> SynthFlow {
    let mut rng = rng::stream(spec.seed, global);
    let environment = &spec.environments[env];
    let server = Ipv4Addr::new(172, 16, 0, rng.gen_range(1..=SERVER_POOL));
    let client_addr = if spec.has_shortcut(Shortcut::SiiBijection) {
        client_address(class)
    } else {
        Ipv4Addr::new(10, 100, 0, rng.gen_range(1..=CLIENT_POOL))
    };
    // disjoint port bands keep flow keys unique inside one capture
    let stride = (64_511 / spec.flows_per_class) as u16;
    let client_port = 1024 + index as u16 * stride + rng.gen_range(0..stride);

    let mut client = Side {
        addr: client_addr,
        port: client_port,
        ttl: 64,
        ip_id: rng.gen(),
        seq: initial(spec, HighbitsField::Seq, class, &mut rng),
        ts_base: initial(spec, HighbitsField::Tsval, class, &mut rng),
        last_tsval: 0,
    };
    let mut srv = Side {
        addr: server,
        port: SERVER_PORT,
        ttl: 52,
        ip_id: rng.gen(),
        seq: initial(spec, HighbitsField::Seq, class, &mut rng),
        ts_base: initial(spec, HighbitsField::Tsval, class, &mut rng),
        last_tsval: 0,
    };

    let window_dist = if spec.has_shortcut(Shortcut::EnvCoupledWindow) {
        Normal::new(8192.0 + 6144.0 * class as f64 + environment.window_shift, spec.window_spread)
    } else {
        Normal::new(DEFAULT_WINDOW, spec.window_spread)
    }
    .expect("spread validated positive");

    let n_packets = rng.gen_range(spec.packets_per_flow.0..=spec.packets_per_flow.1);
    let t0 = index as f64 * 0.05 + rng.gen_range(0.0..0.01);
    let rtt = rng.gen_range(0.005..0.04);
    let mut frames = Vec::with_capacity(n_packets);
    let mut t = t0;

    let emit = |from_client: bool,
                    flags: u8,
                    payload: &[u8],
                    syn_options: bool,
                    t: f64,
                    client: &mut Side,
                    srv: &mut Side,
                    rng: &mut ChaCha8Rng| {
        let (me, peer) = if from_client { (client, srv) } else { (srv, client) };
        let tsval = me.ts_base.wrapping_add(((t - t0) * 1000.0) as u32);
        let window = window_dist.sample(rng).round().clamp(1.0, 65_535.0) as u16;
        let ack = if flags & ACK != 0 { peer.seq } else { 0 };
        let frame = build_frame(
            &TcpPacket {
                src: me.addr,
                dst: peer.addr,
                ip_id: me.ip_id,
                ttl: me.ttl,
                sport: me.port,
                dport: peer.port,
                seq: me.seq,
                ack,
                flags,
                window,
                tsval,
                tsecr: peer.last_tsval,
                syn_options,
                payload,
            },
            from_client,
        );
        me.ip_id = me.ip_id.wrapping_add(1);
        me.last_tsval = tsval;
        let consumed = payload.len() as u32 + u32::from(flags & (SYN | FIN) != 0);
        me.seq = me.seq.wrapping_add(consumed);
        (t, frame)
    };

    frames.push(emit(true, SYN, &[], true, t, &mut client, &mut srv, &mut rng));
    t += rtt;
    frames.push(emit(false, SYN | ACK, &[], true, t, &mut client, &mut srv, &mut rng));
    t += rng.gen_range(0.0002..0.002);
    frames.push(emit(true, ACK, &[], false, t, &mut client, &mut srv, &mut rng));
    t += rng.gen_range(0.0002..0.002);
    let name = SNI_POOL[rng.gen_range(0..SNI_POOL.len())];
    let hello = client_hello(name, &rng.gen(), &rng.gen());
    frames.push(emit(true, PSH | ACK, &hello, false, t, &mut client, &mut srv, &mut rng));

    let length_profile = spec.has_signal(Signal::PayloadLengthProfile);
    let byte_profile = spec.has_signal(Signal::PayloadByteProfile);
    for _ in 4..n_packets {
        t += rng.gen_range(0.0002..0.003);
        let from_client = !rng.gen_bool(spec.reverse_fraction);
        let len = if from_client && length_profile {
            let lo = LENGTH_BASE + LENGTH_STEP * class;
            rng.gen_range(lo..=lo + spec.payload_length_width as usize)
        } else {
            rng.gen_range(LENGTH_BASE..=700)
        };
        let mut payload = vec![0u8; len];
        rng.fill(&mut payload[5..]);
        payload[..3].copy_from_slice(&[0x17, 0x03, 0x03]);
        payload[3..5].copy_from_slice(&((len - 5) as u16).to_be_bytes());
        if from_client && byte_profile {
            payload[5..9].copy_from_slice(&class_signature(class));
        }
        frames.push(emit(from_client, PSH | ACK, &payload, false, t, &mut client, &mut srv, &mut rng));
    }

    SynthFlow {
        truth: FlowTruth {
            class,
            env: environment.tag.clone(),
            client: client_addr,
            client_port,
            server,
            server_port: SERVER_PORT,
            packets: frames.len(),
        },
        frames,
    }
}

/// Generates every flow in memory. Flow `i` of class `c` in environment `e`
/// draws from its own stream keyed by its global index, so the output does
/// not depend on scheduling.
pub fn generate_synthetic_dataset(spec: &SynthSpec) -> Result<SynthDataset, SynthError> {
    spec.validate()?;
    let n_env = spec.environments.len();
    let total = spec.n_classes * n_env * spec.flows_per_class;
    let flows = (0..total)
        .into_par_iter()
        .map(|g| {
            let (file, index) = (g / spec.flows_per_class, g % spec.flows_per_class);
            generate_flow(spec, file / n_env, file % n_env, index, g as u64)
        })
        .collect();
    Ok(SynthDataset { spec: spec.clone(), flows })
}

impl SynthDataset {
    /// Capture index of the `(class, env)` file a flow belongs to.
    pub fn source_of(&self, class: usize, env: usize) -> u32 {
        (class * self.spec.environments.len() + env) as u32
    }

    fn env_index(&self, tag: &str) -> usize {
        self.spec.environments.iter().position(|e| e.tag == tag).expect("flow env comes from the spec")
    }

    /// One capture per `(class, env)`, frames ordered by time.
    pub fn captures(&self) -> Vec<(u32, String, String, Vec<(f64, &[u8])>)> {
        let mut by_file: BTreeMap<u32, Vec<(f64, &[u8])>> = BTreeMap::new();
        for f in &self.flows {
            let src = self.source_of(f.truth.class, self.env_index(&f.truth.env));
            by_file.entry(src).or_default().extend(f.frames.iter().map(|(t, b)| (*t, b.as_slice())));
        }
        let n_env = self.spec.environments.len();
        by_file
            .into_iter()
            .map(|(src, mut frames)| {
                frames.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (c, e) = (src as usize / n_env, src as usize % n_env);
                (src, SynthSpec::class_name(c), self.spec.environments[e].tag.clone(), frames)
            })
            .collect()
    }

    pub fn labeling(&self) -> (LabelingRule, BTreeMap<u32, String>) {
        let mut rule = LabelingRule::default();
        let mut tags = BTreeMap::new();
        for c in 0..self.spec.n_classes {
            for (e, env) in self.spec.environments.iter().enumerate() {
                rule.per_source.insert(self.source_of(c, e), SynthSpec::class_name(c));
                tags.insert(self.source_of(c, e), env.tag.clone());
            }
        }
        (rule, tags)
    }

    /// Parses the generated frames with the inline dissector and assembles
    /// labeled sessions, the same path a capture on disk takes.
    pub fn sessions(&self) -> (Vec<PacketRecord>, Vec<Session>) {
        let parsed: Vec<_> = self
            .captures()
            .into_par_iter()
            .flat_map_iter(|(src, _, _, frames)| {
                let t_first = frames.first().map_or(0.0, |f| f.0);
                let capture = Capture {
                    frames: frames
                        .iter()
                        .enumerate()
                        .map(|(i, (t, b))| Frame {
                            index: i as u64,
                            timestamp: t - t_first,
                            link_type: Some(LinkType::Ethernet),
                            data: b.to_vec(),
                            orig_len: b.len() as u32,
                        })
                        .collect(),
                    unsupported_link: 0,
                };
                dissect_capture(&capture, src).0
            })
            .collect();
        let (rule, tags) = self.labeling();
        let (records, parsed): (Vec<PacketRecord>, Vec<_>) = parsed.into_iter().unzip();
        let (sessions, _) = assemble_sessions(records.iter().zip(parsed), &rule, &tags);
        (records, sessions)
    }

    pub fn manifest(&self, files: Vec<ManifestFile>) -> Manifest {
        Manifest {
            spec: self.spec.clone(),
            classes: (0..self.spec.n_classes).map(SynthSpec::class_name).collect(),
            planted: planted(&self.spec),
            files,
            flows: self.flows.iter().map(|f| f.truth.clone()).collect(),
        }
    }
}

/// Writes `class<c>_<env>.pcap` per class and environment plus
/// `manifest.json`.
pub fn write_synthetic_dataset(spec: &SynthSpec, dir: &Path) -> Result<Manifest, SynthError> {
    let ds = generate_synthetic_dataset(spec)?;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (_, class, env, frames) in ds.captures() {
        let name = format!("{class}_{env}.pcap");
        let packets = frames.len();
        write_pcap(&dir.join(&name), LinkType::Ethernet, frames)?;
        let flows = ds.flows.iter().filter(|f| SynthSpec::class_name(f.truth.class) == class && f.truth.env == env).count();
        files.push(ManifestFile { path: name, class, env, flows, packets });
    }
    let manifest = ds.manifest(files);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Capture paths of a written dataset, in manifest order.
pub fn manifest_paths(manifest: &Manifest, dir: &Path) -> Vec<PathBuf> {
    manifest.files.iter().map(|f| dir.join(&f.path)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{dissect_capture, read_capture};

    fn small(seed: u64) -> SynthSpec {
        let mut s = SynthSpec::new(3, 4, seed)
            .with_shortcut(Shortcut::SiiBijection)
            .with_shortcut(Shortcut::SessionConstantHighbits { field: HighbitsField::Seq })
            .with_signal(Signal::PayloadByteProfile);
        s.packets_per_flow = (6, 12);
        s
    }

    #[test]
    fn same_spec_gives_identical_captures() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = write_synthetic_dataset(&small(1), a.path()).unwrap();
        write_synthetic_dataset(&small(1), b.path()).unwrap();
        for p in manifest_paths(&ma, a.path()) {
            let q = b.path().join(p.file_name().unwrap());
            assert_eq!(fs::read(&p).unwrap(), fs::read(q).unwrap());
        }
        let c = tempfile::tempdir().unwrap();
        let mc = write_synthetic_dataset(&small(2), c.path()).unwrap();
        assert_ne!(fs::read(&manifest_paths(&mc, c.path())[0]).unwrap(), fs::read(&manifest_paths(&ma, a.path())[0]).unwrap());
    }

    #[test]
    fn every_frame_parses_and_manifest_is_complete() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_synthetic_dataset(&small(3), dir.path()).unwrap();
        assert_eq!(m.files.len(), 3);
        assert_eq!(m.flows.len(), 12);
        let names: Vec<&str> = m.planted.iter().map(|p| p.mechanism.as_str()).collect();
        assert_eq!(names, vec!["sii_bijection", "session_constant_highbits", "payload_byte_profile"]);
        for (i, f) in m.files.iter().enumerate() {
            let cap = read_capture(&dir.path().join(&f.path)).unwrap();
            let (_, stats) = dissect_capture(&cap, i as u32);
            assert_eq!(stats.parsed, f.packets);
            assert_eq!(stats.frames, f.packets);
        }
        let back: Manifest = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn sessions_are_one_per_flow_with_planted_values() {
        let ds = generate_synthetic_dataset(&small(4)).unwrap();
        let (_, sessions) = ds.sessions();
        assert_eq!(sessions.len(), 12);
        for s in &sessions {
            let class: usize = s.label.trim_start_matches("class").parse().unwrap();
            let first = s.packets[0].parsed.as_ref().unwrap();
            assert_eq!(first.src_ip(), client_address(class));
            assert_eq!(first.parsed_values["tcp.seq_raw"] as u32 >> 24, class_prefix(class) >> 24);
            let syn_ack = s.packets[1].parsed.as_ref().unwrap();
            assert_eq!(syn_ack.parsed_values["tcp.seq_raw"] as u32 >> 24, class_prefix(class) >> 24);
            let data = s.packets[4].parsed.as_ref().unwrap();
            assert_eq!(&data.payload_bytes[5..9], &class_signature(class));
        }
    }

    #[test]
    fn class_prefixes_are_distinct() {
        let mut p: Vec<u32> = (0..250).map(class_prefix).collect();
        p.sort_unstable();
        p.dedup();
        assert_eq!(p.len(), 250);
    }

    #[test]
    fn impossible_specs_are_rejected() {
        let base = small(0);
        let cases = [
            SynthSpec { n_classes: 0, ..base.clone() },
            SynthSpec { flows_per_class: 0, ..base.clone() },
            SynthSpec { packets_per_flow: (4, 10), ..base.clone() },
            SynthSpec { packets_per_flow: (20, 10), ..base.clone() },
            SynthSpec { shortcuts: vec![], signals: vec![], ..base.clone() },
            SynthSpec { environments: vec![], ..base.clone() },
            SynthSpec { reverse_fraction: 1.5, ..base.clone() },
            SynthSpec::new(20, 2, 0).with_signal(Signal::PayloadLengthProfile),
        ];
        for s in cases {
            assert!(matches!(generate_synthetic_dataset(&s), Err(SynthError::InvalidSpec(_))), "{s:?}");
        }
    }
}

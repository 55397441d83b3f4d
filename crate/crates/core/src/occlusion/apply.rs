use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::checksum::{recompute_checksums, transport_checksum_offset, ChecksumOutcome};
use super::tensor::{SessionTensor, HEADER_LEN, ROW_LEN};
use super::OcclusionError;
use crate::ingest::{LOCATABLE_FIELDS, SNI_FIELD};
use crate::rng;
use crate::taxonomy::RELATIVE_FIELDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Zero,
    Relative,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    pub strategy: Strategy,
    /// Field names or group aliases (`@sii`, `@seq_ack`, `@tcp_timestamp`,
    /// `@sni`, `@task_agnostic`).
    pub targets: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

const ADDRESS_FIELDS: &[&str] = &["ip.src", "ip.dst"];
const PORT_FIELDS: &[&str] = &["tcp.srcport", "tcp.dstport", "udp.srcport", "udp.dstport"];
const CHECKSUM_FIELDS: &[&str] = &["ip.checksum", "tcp.checksum", "udp.checksum"];

fn alias(name: &str) -> Option<Vec<&'static str>> {
    Some(match name {
        "@sii" => ADDRESS_FIELDS.iter().chain(PORT_FIELDS).copied().collect(),
        "@seq_ack" => vec!["tcp.seq_raw", "tcp.ack_raw"],
        "@tcp_timestamp" => vec!["tcp.options.timestamp.tsval", "tcp.options.timestamp.tsecr"],
        "@sni" => vec![SNI_FIELD],
        "@task_agnostic" => vec!["tcp.window_size", "ip.ttl", "ip.checksum", "tcp.checksum", "udp.checksum"],
        _ => return None,
    })
}

fn width(field: &str) -> Option<usize> {
    LOCATABLE_FIELDS.iter().find(|(n, _)| *n == field).map(|&(_, w)| w)
}

/// Expands aliases and checks every target is locatable. Returned names are
/// sorted and unique.
pub fn resolve_targets(targets: &[String]) -> Result<Vec<String>, OcclusionError> {
    let mut out = BTreeSet::new();
    for t in targets {
        match alias(t) {
            Some(fields) => out.extend(fields.into_iter().map(String::from)),
            None if width(t).is_some() => {
                out.insert(t.clone());
            }
            None => return Err(OcclusionError::UnknownTarget(t.clone())),
        }
    }
    if out.is_empty() {
        return Err(OcclusionError::UnknownTarget("<empty target list>".into()));
    }
    Ok(out.into_iter().collect())
}

impl OcclusionSpec {
    pub fn validate(&self) -> Result<Vec<String>, OcclusionError> {
        let fields = resolve_targets(&self.targets)?;
        if self.strategy == Strategy::Relative {
            if let Some(f) = fields.iter().find(|f| width(f).unwrap_or(0) == 0) {
                return Err(OcclusionError::Unsupported(format!("relative strategy on variable-width `{f}`")));
            }
        }
        Ok(fields)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OcclusionLog {
    pub fields_applied: Vec<String>,
    /// Targets not located in any packet of the session.
    pub fields_absent: Vec<String>,
    pub checksums: Vec<ChecksumOutcome>,
}

fn read_be(b: &[u8]) -> u64 {
    b.iter().fold(0u64, |a, &x| (a << 8) | x as u64)
}

fn write_be(b: &mut [u8], v: u64) {
    let n = b.len();
    for (i, byte) in b.iter_mut().enumerate() {
        *byte = (v >> (8 * (n - 1 - i))) as u8;
    }
}

fn mask(len: usize) -> u64 {
    if len >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * len)) - 1
    }
}

/// Draws an injective substitute for every distinct original value.
fn substitution_map(originals: &BTreeSet<u64>, len: usize, rng: &mut impl RngCore) -> HashMap<u64, u64> {
    let mut used = HashSet::new();
    let mut map = HashMap::new();
    for &o in originals {
        let sub = loop {
            let v = rng.next_u64() & mask(len);
            if used.insert(v) {
                break v;
            }
        };
        map.insert(o, sub);
    }
    map
}

/// Applies one occlusion strategy to a tensor. Checksums covering modified
/// bytes are recomputed unless the checksum field itself is a target.
pub fn apply_occlusion(
    tensor: &SessionTensor,
    spec: &OcclusionSpec,
) -> Result<(SessionTensor, OcclusionLog), OcclusionError> {
    let fields = spec.validate()?;
    let mut out = tensor.clone();
    let mut log = OcclusionLog::default();
    let mut rng = rng::stream(spec.seed, tensor.session_id);
    let before = tensor.bytes.clone();

    let mut address_map: Option<HashMap<u64, u64>> = None;
    let mut port_map: Option<HashMap<u64, u64>> = None;
    for field in &fields {
        let spans = out.field_spans(field);
        if spans.is_empty() {
            log.fields_absent.push(field.clone());
            continue;
        }
        log.fields_applied.push(field.clone());
        let at = |(row, (start, _)): (usize, (usize, usize))| row * ROW_LEN + start;
        match spec.strategy {
            Strategy::Zero => {
                for &(row, (start, len)) in &spans {
                    let s = at((row, (start, len)));
                    out.bytes[s..s + len].fill(0);
                }
            }
            Strategy::Relative => {
                let values: Vec<u64> =
                    spans.iter().map(|&(r, (st, len))| read_be(&tensor.row(r)[st..st + len])).collect();
                for (i, &(row, (start, len))) in spans.iter().enumerate() {
                    let v = if i == 0 { 0 } else { values[i].wrapping_sub(values[i - 1]) & mask(len) };
                    let s = at((row, (start, len)));
                    write_be(&mut out.bytes[s..s + len], v);
                }
            }
            Strategy::Random => {
                let len0 = spans[0].1 .1;
                let is_addr = ADDRESS_FIELDS.contains(&field.as_str());
                let is_port = PORT_FIELDS.contains(&field.as_str());
                if is_addr || is_port {
                    let group = if is_addr { ADDRESS_FIELDS } else { PORT_FIELDS };
                    let slot = if is_addr { &mut address_map } else { &mut port_map };
                    let map = slot.get_or_insert_with(|| {
                        let originals: BTreeSet<u64> = group
                            .iter()
                            .flat_map(|g| tensor.field_spans(g))
                            .map(|(r, (st, len))| read_be(&tensor.row(r)[st..st + len]))
                            .collect();
                        substitution_map(&originals, len0, &mut rng)
                    });
                    for &(row, (start, len)) in &spans {
                        let orig = read_be(&tensor.row(row)[start..start + len]);
                        let s = at((row, (start, len)));
                        write_be(&mut out.bytes[s..s + len], map[&orig]);
                    }
                } else if RELATIVE_FIELDS.contains(&field.as_str()) && width(field).unwrap_or(0) > 0 {
                    let base = rng.next_u64();
                    let first = read_be(&tensor.row(spans[0].0)[spans[0].1 .0..spans[0].1 .0 + len0]);
                    for &(row, (start, len)) in &spans {
                        let v = read_be(&tensor.row(row)[start..start + len]);
                        let s = at((row, (start, len)));
                        write_be(&mut out.bytes[s..s + len], base.wrapping_add(v.wrapping_sub(first)) & mask(len));
                    }
                } else {
                    for &(row, (start, len)) in &spans {
                        let s = at((row, (start, len)));
                        rng.fill(&mut out.bytes[s..s + len]);
                    }
                }
            }
        }
    }

    let skip_ip = fields.iter().any(|f| f == "ip.checksum");
    let skip_transport = fields.iter().any(|f| f == "tcp.checksum" || f == "udp.checksum");
    for (i, meta) in tensor.rows.iter().enumerate() {
        let base = i * ROW_LEN;
        let changed = |lo: usize, hi: usize| before[base + lo..base + hi] != out.bytes[base + lo..base + hi];
        let ihl = meta.ip_header_len.min(HEADER_LEN);
        let ip_changed = changed(0, ihl);
        let transport_changed = meta.transport.is_some()
            && (changed(12, 20.min(ihl)) || changed(ihl, HEADER_LEN) || changed(HEADER_LEN, ROW_LEN));
        if !(ip_changed || transport_changed) {
            continue;
        }
        let outcome = recompute_checksums(
            out.row_mut(i),
            meta,
            ip_changed && !skip_ip,
            transport_changed && !skip_transport && transport_checksum_offset(meta).is_some(),
        );
        log.checksums.push(outcome);
    }
    Ok((out, log))
}

/// Byte ranges (absolute) that an occlusion may modify: target spans plus
/// checksum fields.
pub fn modifiable_bytes(tensor: &SessionTensor, spec: &OcclusionSpec) -> Result<Vec<bool>, OcclusionError> {
    let fields = spec.validate()?;
    let mut mask = vec![false; tensor.bytes.len()];
    for f in fields.iter().map(String::as_str).chain(CHECKSUM_FIELDS.iter().copied()) {
        for (row, (start, len)) in tensor.field_spans(f) {
            mask[row * ROW_LEN + start..row * ROW_LEN + start + len].fill(true);
        }
    }
    Ok(mask)
}

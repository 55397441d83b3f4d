use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Direction, Endpoint, FlowKey, IngestError, PacketRecord, ParsedPacket, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PacketId {
    pub source: u32,
    pub capture_index: u64,
}

/// Class assignment: one label per input by default, with optional per-flow
/// overrides.
#[derive(Debug, Clone, Default)]
pub struct LabelingRule {
    pub per_source: BTreeMap<u32, String>,
    pub flow_overrides: HashMap<FlowKey, String>,
}

impl LabelingRule {
    pub fn label_for(&self, source: u32, key: &FlowKey) -> Option<&str> {
        self.flow_overrides
            .get(key)
            .or_else(|| self.per_source.get(&source))
            .map(String::as_str)
    }
}

/// Reads a flow→label table with columns
/// `src_ip,src_port,dst_ip,dst_port,transport,label`.
pub fn load_flow_labels(path: &Path) -> Result<HashMap<FlowKey, String>, IngestError> {
    let fmt_err = |reason: String| IngestError::Format { path: path.to_path_buf(), reason };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fmt_err(e.to_string()))?;
    let mut out = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| fmt_err(e.to_string()))?;
        let line = i + 2;
        let get = |j: usize| row.get(j).map(str::trim).unwrap_or("");
        let ip = |j: usize| get(j).parse::<Ipv4Addr>().map_err(|_| fmt_err(format!("line {line}: bad address")));
        let port = |j: usize| get(j).parse::<u16>().map_err(|_| fmt_err(format!("line {line}: bad port")));
        let transport = match get(4).to_ascii_lowercase().as_str() {
            "tcp" | "6" => Transport::Tcp,
            "udp" | "17" => Transport::Udp,
            other => return Err(fmt_err(format!("line {line}: unknown transport `{other}`"))),
        };
        let label = get(5);
        if label.is_empty() {
            return Err(fmt_err(format!("line {line}: empty label")));
        }
        let (key, _) =
            FlowKey::canonical(Endpoint::new(ip(0)?, port(1)?), Endpoint::new(ip(2)?, port(3)?), transport);
        out.insert(key, label.to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPacket {
    pub id: PacketId,
    pub timestamp: f64,
    /// Relative to the first packet of the session.
    pub direction: Direction,
    #[serde(skip)]
    pub parsed: Option<ParsedPacket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: u64,
    pub source: u32,
    pub flow_key: FlowKey,
    pub packets: Vec<SessionPacket>,
    pub label: String,
    pub dataset_tag: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyStats {
    pub sessions: usize,
    pub packets: usize,
    pub unlabeled_flows: usize,
    pub unlabeled_packets: usize,
}

/// Groups packets into bidirectional sessions keyed by `(source, FlowKey)`.
/// Packet order inside a session is `(timestamp, capture_index)`; session ids
/// follow `(source, first packet, key)` so the result does not depend on the
/// input order.
pub fn assemble_sessions<I, R>(
    packets: I,
    rule: &LabelingRule,
    dataset_tags: &BTreeMap<u32, String>,
) -> (Vec<Session>, AssemblyStats)
where
    I: IntoIterator<Item = (R, Option<ParsedPacket>)>,
    R: Borrow<PacketRecord>,
{
    let mut groups: HashMap<(u32, FlowKey), Vec<(&PacketRecord, Option<ParsedPacket>)>> = HashMap::new();
    let packets: Vec<(R, Option<ParsedPacket>)> = packets.into_iter().collect();
    let mut parsed_of: Vec<Option<ParsedPacket>> = Vec::with_capacity(packets.len());
    let mut recs: Vec<R> = Vec::with_capacity(packets.len());
    for (r, p) in packets {
        recs.push(r);
        parsed_of.push(p);
    }
    for (rec, parsed) in recs.iter().map(Borrow::borrow).zip(parsed_of) {
        groups.entry((rec.source, rec.flow_key)).or_default().push((rec, parsed));
    }

    let mut stats = AssemblyStats::default();
    let mut sessions = Vec::with_capacity(groups.len());
    for ((source, key), mut members) in groups {
        let Some(label) = rule.label_for(source, &key) else {
            stats.unlabeled_flows += 1;
            stats.unlabeled_packets += members.len();
            continue;
        };
        members.sort_by(|a, b| {
            a.0.timestamp
                .total_cmp(&b.0.timestamp)
                .then(a.0.capture_index.cmp(&b.0.capture_index))
        });
        let anchor = members[0].0.direction;
        let packets: Vec<SessionPacket> = members
            .into_iter()
            .map(|(rec, parsed)| SessionPacket {
                id: rec.id(),
                timestamp: rec.timestamp,
                direction: if rec.direction == anchor { Direction::Forward } else { Direction::Reverse },
                parsed,
            })
            .collect();
        stats.packets += packets.len();
        sessions.push(Session {
            id: 0,
            source,
            flow_key: key,
            packets,
            label: label.to_string(),
            dataset_tag: dataset_tags.get(&source).cloned().unwrap_or_default(),
        });
    }
    sessions.sort_by(|a, b| {
        a.source
            .cmp(&b.source)
            .then(a.packets[0].timestamp.total_cmp(&b.packets[0].timestamp))
            .then(a.packets[0].id.capture_index.cmp(&b.packets[0].id.capture_index))
            .then(a.flow_key.cmp(&b.flow_key))
    });
    for (i, s) in sessions.iter_mut().enumerate() {
        s.id = i as u64;
    }
    stats.sessions = sessions.len();
    (sessions, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(idx: u64, ts: f64, src: (&str, u16), dst: (&str, u16)) -> PacketRecord {
        let (flow_key, direction) = FlowKey::canonical(
            Endpoint::new(src.0.parse().unwrap(), src.1),
            Endpoint::new(dst.0.parse().unwrap(), dst.1),
            Transport::Tcp,
        );
        PacketRecord { source: 0, capture_index: idx, timestamp: ts, fields: BTreeMap::new(), flow_key, direction }
    }

    fn rule() -> LabelingRule {
        LabelingRule { per_source: BTreeMap::from([(0, "app".to_string())]), ..Default::default() }
    }

    #[test]
    fn both_directions_form_one_session() {
        let pkts = vec![
            (rec(0, 0.0, ("10.0.0.9", 1234), ("10.0.0.1", 443)), None),
            (rec(1, 0.1, ("10.0.0.1", 443), ("10.0.0.9", 1234)), None),
        ];
        let (sessions, stats) = assemble_sessions(pkts, &rule(), &BTreeMap::new());
        assert_eq!(sessions.len(), 1);
        assert_eq!(stats.packets, 2);
        let dirs: Vec<_> = sessions[0].packets.iter().map(|p| p.direction).collect();
        assert_eq!(dirs, vec![Direction::Forward, Direction::Reverse]);
    }

    #[test]
    fn different_client_port_is_a_different_session() {
        let pkts = vec![
            (rec(0, 0.0, ("10.0.0.9", 1234), ("10.0.0.1", 443)), None),
            (rec(1, 0.1, ("10.0.0.9", 1235), ("10.0.0.1", 443)), None),
        ];
        let (sessions, _) = assemble_sessions(pkts, &rule(), &BTreeMap::new());
        assert_eq!(sessions.len(), 2);
    }

    #[test]
    fn packets_are_resorted_by_time() {
        let pkts = vec![
            (rec(0, 0.5, ("1.1.1.1", 1), ("2.2.2.2", 2)), None),
            (rec(1, 0.2, ("2.2.2.2", 2), ("1.1.1.1", 1)), None),
            (rec(2, 0.2, ("1.1.1.1", 1), ("2.2.2.2", 2)), None),
        ];
        let (sessions, _) = assemble_sessions(pkts, &rule(), &BTreeMap::new());
        let order: Vec<u64> = sessions[0].packets.iter().map(|p| p.id.capture_index).collect();
        assert_eq!(order, vec![1, 2, 0]);
        assert_eq!(sessions[0].packets[0].direction, Direction::Forward);
        assert_eq!(sessions[0].packets[1].direction, Direction::Reverse);
    }

    #[test]
    fn unlabeled_flows_are_counted() {
        let mut pkt = rec(0, 0.0, ("1.1.1.1", 1), ("2.2.2.2", 2));
        pkt.source = 7;
        let (sessions, stats) = assemble_sessions(vec![(pkt, None)], &rule(), &BTreeMap::new());
        assert!(sessions.is_empty());
        assert_eq!(stats.unlabeled_flows, 1);
    }

    #[test]
    fn flow_override_beats_source_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(&path, "src_ip,src_port,dst_ip,dst_port,transport,label\n2.2.2.2,2,1.1.1.1,1,tcp,special\n").unwrap();
        let mut r = rule();
        r.flow_overrides = load_flow_labels(&path).unwrap();
        let pkts = vec![(rec(0, 0.0, ("1.1.1.1", 1), ("2.2.2.2", 2)), None)];
        let (sessions, _) = assemble_sessions(pkts, &r, &BTreeMap::new());
        assert_eq!(sessions[0].label, "special");
    }
}

use serde::{Deserialize, Serialize};

use super::schema::{converts, parse_ipv4, FieldSchema};
use crate::ingest::PacketRecord;

/// Packets with a strictly smaller valid-field fraction are dropped.
pub const MIN_VALID_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub input: usize,
    pub kept: usize,
    pub dropped_low_validity: usize,
    pub dropped_malformed_ip: usize,
    pub threshold: f64,
}

fn malformed_ip(r: &PacketRecord) -> bool {
    ["ip.src", "ip.dst"]
        .iter()
        .any(|f| r.get(f).is_some_and(|v| parse_ipv4(v).is_none()))
}

fn valid_fraction(r: &PacketRecord, schema: &[FieldSchema]) -> f64 {
    if schema.is_empty() {
        return 1.0;
    }
    let valid = schema
        .iter()
        .filter(|s| r.get(&s.name).is_some_and(|v| converts(v, s.kind)))
        .count();
    valid as f64 / schema.len() as f64
}

/// Drops packets whose valid-field fraction over `schema` is below
/// `threshold`, and packets whose addresses do not encode as IPv4.
pub fn filter_low_quality(
    records: Vec<PacketRecord>,
    schema: &[FieldSchema],
    threshold: f64,
) -> (Vec<PacketRecord>, QualityReport) {
    let mut report = QualityReport { input: records.len(), threshold, ..Default::default() };
    let kept: Vec<PacketRecord> = records
        .into_iter()
        .filter(|r| {
            if malformed_ip(r) {
                report.dropped_malformed_ip += 1;
                false
            } else if valid_fraction(r, schema) < threshold {
                report.dropped_low_validity += 1;
                false
            } else {
                true
            }
        })
        .collect();
    report.kept = kept.len();
    (kept, report)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::encode::FieldKind;
    use crate::ingest::record_from_fields;

    fn record(n_valid: usize) -> PacketRecord {
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        fields.insert("frame.time_relative".into(), "0.0".into());
        fields.insert("ip.src".into(), "10.0.0.1".into());
        fields.insert("ip.dst".into(), "10.0.0.2".into());
        fields.insert("tcp.srcport".into(), "1".into());
        fields.insert("tcp.dstport".into(), "2".into());
        for i in 0..n_valid {
            fields.insert(format!("f.{i:03}"), i.to_string());
        }
        record_from_fields(0, 0, fields).unwrap()
    }

    fn universe() -> Vec<FieldSchema> {
        (0..100).map(|i| FieldSchema { name: format!("f.{i:03}"), kind: FieldKind::HexOrInt }).collect()
    }

    #[test]
    fn five_percent_boundary_is_kept() {
        let (kept, rep) = filter_low_quality(vec![record(3), record(5)], &universe(), MIN_VALID_FRACTION);
        assert_eq!(kept.len(), 1);
        assert_eq!(rep.dropped_low_validity, 1);
    }

    #[test]
    fn malformed_address_is_dropped() {
        let mut r = record(50);
        r.fields.insert("ip.src".into(), "999.1.2.3".into());
        let (kept, rep) = filter_low_quality(vec![r], &universe(), MIN_VALID_FRACTION);
        assert!(kept.is_empty());
        assert_eq!(rep.dropped_malformed_ip, 1);
    }
}

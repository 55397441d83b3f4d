use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Endpoint, FlowKey, IngestError, PacketRecord, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Ndjson,
    Csv,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutput {
    pub records: Vec<PacketRecord>,
    /// Rows or lines skipped as malformed or without flow identity.
    pub warnings: usize,
}

pub(crate) const TIMESTAMP_KEYS: &[&str] = &["frame.time_relative", "timestamp"];
const SOURCE_KEY: &str = "_source";

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum RecordIssue {
    NoTimestamp,
    NoFlowIdentity,
    BadValue(&'static str),
}

fn first_occurrence(v: &str) -> &str {
    // multi-occurrence fields (tunnels, repeated options) come comma-joined
    v.split(',').next().unwrap_or(v).trim()
}

/// Converts a flat field map into a record, deriving timestamp and flow
/// identity from the conventional field names.
pub fn record_from_fields(
    source: u32,
    position: u64,
    mut fields: BTreeMap<String, String>,
) -> Result<PacketRecord, String> {
    fields.retain(|_, v| !v.is_empty());
    record_from_map(source, position, fields).map_err(|e| format!("{e:?}"))
}

pub(crate) fn record_from_map(
    source: u32,
    position: u64,
    fields: BTreeMap<String, String>,
) -> Result<PacketRecord, RecordIssue> {
    let ts_raw = TIMESTAMP_KEYS
        .iter()
        .find_map(|k| fields.get(*k))
        .ok_or(RecordIssue::NoTimestamp)?;
    let timestamp: f64 = first_occurrence(ts_raw)
        .parse()
        .map_err(|_| RecordIssue::BadValue("timestamp"))?;
    if !timestamp.is_finite() || timestamp < 0.0 {
        return Err(RecordIssue::BadValue("timestamp"));
    }
    let capture_index = match fields.get("frame.number") {
        Some(n) => first_occurrence(n)
            .parse::<u64>()
            .map_err(|_| RecordIssue::BadValue("frame.number"))?
            .saturating_sub(1),
        None => position,
    };

    let ip = |k: &str| -> Result<Ipv4Addr, RecordIssue> {
        first_occurrence(fields.get(k).ok_or(RecordIssue::NoFlowIdentity)?)
            .parse()
            .map_err(|_| RecordIssue::BadValue("ip address"))
    };
    let (src_ip, dst_ip) = (ip("ip.src")?, ip("ip.dst")?);
    let port = |k: &str| -> Option<Result<u16, RecordIssue>> {
        fields
            .get(k)
            .map(|v| first_occurrence(v).parse().map_err(|_| RecordIssue::BadValue("port")))
    };
    let (transport, sp, dp) = match (port("tcp.srcport"), port("tcp.dstport")) {
        (Some(s), Some(d)) => (Transport::Tcp, s?, d?),
        _ => match (port("udp.srcport"), port("udp.dstport")) {
            (Some(s), Some(d)) => (Transport::Udp, s?, d?),
            _ => return Err(RecordIssue::NoFlowIdentity),
        },
    };
    let (flow_key, direction) =
        FlowKey::canonical(Endpoint::new(src_ip, sp), Endpoint::new(dst_ip, dp), transport);
    Ok(PacketRecord { source, capture_index, timestamp, fields, flow_key, direction })
}

fn json_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(a) => a.first().and_then(json_to_string),
        other => Some(other.to_string()),
    }
}

fn has_flow_columns(cols: &[&str]) -> Vec<String> {
    let mut missing = Vec::new();
    if !TIMESTAMP_KEYS.iter().any(|k| cols.contains(k)) {
        missing.push("frame.time_relative".to_string());
    }
    for k in ["ip.src", "ip.dst"] {
        if !cols.contains(&k) {
            missing.push(k.to_string());
        }
    }
    let tcp = cols.contains(&"tcp.srcport") && cols.contains(&"tcp.dstport");
    let udp = cols.contains(&"udp.srcport") && cols.contains(&"udp.dstport");
    if !tcp && !udp {
        missing.push("tcp.srcport/tcp.dstport or udp.srcport/udp.dstport".to_string());
    }
    missing
}

/// Loads a pre-extracted field table. Keys starting with `_` are metadata;
/// `_source` overrides `source` when present.
pub fn load_records(path: &Path, format: RecordFormat, source: u32) -> Result<LoadOutput, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingInput(path.to_path_buf()));
    }
    let mut out = LoadOutput::default();
    match format {
        RecordFormat::Ndjson => {
            let reader = BufReader::new(File::open(path)?);
            let mut lines = 0usize;
            let mut missing_identity = 0usize;
            for (pos, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                lines += 1;
                let obj: serde_json::Map<String, serde_json::Value> = match serde_json::from_str(&line) {
                    Ok(o) => o,
                    Err(e) => {
                        warn!("{}:{}: skipped malformed line: {e}", path.display(), pos + 1);
                        out.warnings += 1;
                        continue;
                    }
                };
                let src = obj
                    .get(SOURCE_KEY)
                    .and_then(|v| v.as_u64())
                    .map(|s| s as u32)
                    .unwrap_or(source);
                let fields: BTreeMap<String, String> = obj
                    .iter()
                    .filter(|(k, _)| !k.starts_with('_'))
                    .filter_map(|(k, v)| json_to_string(v).filter(|s| !s.is_empty()).map(|s| (k.clone(), s)))
                    .collect();
                match record_from_map(src, pos as u64, fields) {
                    Ok(r) => out.records.push(r),
                    Err(issue) => {
                        if matches!(issue, RecordIssue::NoTimestamp | RecordIssue::NoFlowIdentity) {
                            missing_identity += 1;
                        }
                        out.warnings += 1;
                    }
                }
            }
            if lines > 0 && out.records.is_empty() && missing_identity == lines {
                return Err(IngestError::MissingColumns {
                    path: path.to_path_buf(),
                    columns: vec!["timestamp and flow identity".into()],
                });
            }
        }
        RecordFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|e| {
                IngestError::Format { path: path.to_path_buf(), reason: e.to_string() }
            })?;
            let headers = rdr
                .headers()
                .map_err(|e| IngestError::Format { path: path.to_path_buf(), reason: e.to_string() })?
                .clone();
            let cols: Vec<&str> = headers.iter().collect();
            let missing = has_flow_columns(&cols);
            if !missing.is_empty() {
                return Err(IngestError::MissingColumns { path: path.to_path_buf(), columns: missing });
            }
            for (pos, row) in rdr.records().enumerate() {
                let row = match row {
                    Ok(r) if r.len() == headers.len() => r,
                    _ => {
                        out.warnings += 1;
                        continue;
                    }
                };
                let mut src = source;
                let mut fields = BTreeMap::new();
                for (k, v) in headers.iter().zip(row.iter()) {
                    if k == SOURCE_KEY {
                        src = v.parse().unwrap_or(source);
                    } else if !k.starts_with('_') && !v.is_empty() {
                        fields.insert(k.to_string(), v.to_string());
                    }
                }
                match record_from_map(src, pos as u64, fields) {
                    Ok(r) => out.records.push(r),
                    Err(_) => out.warnings += 1,
                }
            }
        }
    }
    if out.warnings > 0 {
        warn!("{}: {} row(s) skipped", path.display(), out.warnings);
    }
    Ok(out)
}

/// Writes records in the flat NDJSON layout `load_records` reads back.
pub fn write_records_ndjson(path: &Path, records: &[PacketRecord]) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let mut obj = serde_json::Map::new();
        obj.insert(SOURCE_KEY.into(), r.source.into());
        for (k, v) in &r.fields {
            obj.insert(k.clone(), serde_json::Value::String(v.clone()));
        }
        // frame.number / time are the record's identity; keep them explicit
        obj.insert("frame.number".into(), (r.capture_index + 1).to_string().into());
        if !r.fields.contains_key("frame.time_relative") {
            obj.insert("timestamp".into(), r.timestamp.to_string().into());
        }
        serde_json::to_writer(&mut w, &obj).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Direction;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ndjson_maps_keys_directly() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "r.ndjson",
            r#"{"frame.time_relative":"0.5","ip.src":"10.0.0.1","ip.dst":"10.0.0.2","tcp.srcport":"1234","tcp.dstport":443,"tcp.flags":"0x002"}
"#,
        );
        let out = load_records(&p, RecordFormat::Ndjson, 3).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.get("ip.src"), Some("10.0.0.1"));
        assert_eq!(r.get("tcp.dstport"), Some("443"));
        assert_eq!(r.source, 3);
        assert_eq!(r.direction, Direction::Forward);
        assert_eq!(r.timestamp, 0.5);
    }

    #[test]
    fn csv_empty_cell_means_absent() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "r.csv",
            "frame.time_relative,ip.src,ip.dst,udp.srcport,udp.dstport,dns.qry.name\n0.1,1.1.1.1,2.2.2.2,53,5353,\n",
        );
        let out = load_records(&p, RecordFormat::Csv, 0).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(!out.records[0].fields.contains_key("dns.qry.name"));
        assert_eq!(out.records[0].flow_key.transport, Transport::Udp);
    }

    #[test]
    fn csv_without_flow_columns_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "frame.time_relative,ip.ttl\n0.1,64\n");
        let err = load_records(&p, RecordFormat::Csv, 0).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumns { .. }));
    }

    #[test]
    fn malformed_rows_are_skipped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "r.ndjson",
            "not json\n{\"timestamp\":1,\"ip.src\":\"1.1.1.1\",\"ip.dst\":\"2.2.2.2\",\"tcp.srcport\":1,\"tcp.dstport\":2}\n",
        );
        let out = load_records(&p, RecordFormat::Ndjson, 0).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.warnings, 1);
    }

    #[test]
    fn ndjson_lacking_identity_everywhere_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.ndjson", "{\"ip.ttl\":\"64\"}\n{\"ip.ttl\":\"63\"}\n");
        assert!(matches!(
            load_records(&p, RecordFormat::Ndjson, 0),
            Err(IngestError::MissingColumns { .. })
        ));
    }

    #[test]
    fn ndjson_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "r.ndjson",
            "{\"frame.number\":\"7\",\"frame.time_relative\":\"0.25\",\"ip.src\":\"9.9.9.9\",\"ip.dst\":\"1.1.1.1\",\"tcp.srcport\":\"80\",\"tcp.dstport\":\"5000\"}\n",
        );
        let first = load_records(&p, RecordFormat::Ndjson, 2).unwrap().records;
        let cache = dir.path().join("cache.ndjson");
        write_records_ndjson(&cache, &first).unwrap();
        let second = load_records(&cache, RecordFormat::Ndjson, 0).unwrap().records;
        assert_eq!(first, second);
        assert_eq!(second[0].capture_index, 6);
        assert_eq!(second[0].direction, Direction::Reverse);
    }
}

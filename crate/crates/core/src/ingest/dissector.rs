use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::records::{record_from_map, RecordIssue};
use super::{IngestError, PacketRecord};

/// Fields always requested in explicit-field mode so every record carries
/// its timestamp and flow identity.
pub const IDENTITY_FIELDS: &[&str] = &[
    "frame.number",
    "frame.time_relative",
    "ip.src",
    "ip.dst",
    "tcp.srcport",
    "tcp.dstport",
    "udp.srcport",
    "udp.dstport",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissectorConfig {
    pub binary: PathBuf,
    #[serde(default)]
    pub extra_args: Vec<String>,
}

impl Default for DissectorConfig {
    fn default() -> Self {
        Self { binary: PathBuf::from("tshark"), extra_args: Vec::new() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DissectOutput {
    pub records: Vec<PacketRecord>,
    /// Output lines (or JSON packets) that could not be parsed.
    pub warnings: usize,
    /// Packets without IPv4 TCP/UDP identity.
    pub skipped: usize,
}

/// Runs a tshark-compatible dissector over a capture. An empty `field_list`
/// selects the structured JSON export ("all fields"); otherwise a
/// tab-separated export with a header row is parsed.
pub fn run_external_dissector(
    capture_path: &Path,
    field_list: &[String],
    config: &DissectorConfig,
    source: u32,
) -> Result<DissectOutput, IngestError> {
    if !capture_path.exists() {
        return Err(IngestError::MissingInput(capture_path.to_path_buf()));
    }
    let mut cmd = Command::new(&config.binary);
    cmd.arg("-r").arg(capture_path).arg("-n");
    let all_fields = field_list.is_empty();
    if all_fields {
        cmd.args(["-T", "json"]);
    } else {
        cmd.args(["-T", "fields", "-E", "header=y", "-E", "separator=/t", "-E", "occurrence=f"]);
        let mut requested: Vec<&str> = IDENTITY_FIELDS.to_vec();
        for f in field_list {
            if !requested.contains(&f.as_str()) {
                requested.push(f);
            }
        }
        for f in requested {
            cmd.arg("-e").arg(f);
        }
    }
    cmd.args(&config.extra_args);
    debug!("running {cmd:?}");
    let output = cmd.output().map_err(|e| IngestError::ToolUnavailable {
        binary: config.binary.display().to_string(),
        reason: e.to_string(),
    })?;
    if !output.status.success() {
        return Err(IngestError::DissectFailed {
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let out = if all_fields { parse_json_export(&stdout, source)? } else { parse_tsv_export(&stdout, source) };
    if out.warnings > 0 {
        warn!("{}: {} unparseable dissector output item(s)", capture_path.display(), out.warnings);
    }
    Ok(out)
}

fn push(out: &mut DissectOutput, source: u32, position: u64, fields: BTreeMap<String, String>) {
    match record_from_map(source, position, fields) {
        Ok(r) => out.records.push(r),
        Err(RecordIssue::NoFlowIdentity) => out.skipped += 1,
        Err(_) => out.warnings += 1,
    }
}

pub(crate) fn parse_tsv_export(text: &str, source: u32) -> DissectOutput {
    let mut out = DissectOutput::default();
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return out;
    };
    let columns: Vec<&str> = header.split('\t').collect();
    for (pos, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != columns.len() {
            out.warnings += 1;
            continue;
        }
        let fields = columns
            .iter()
            .zip(cells)
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        push(&mut out, source, pos as u64, fields);
    }
    out
}

fn flatten(value: &serde_json::Value, into: &mut BTreeMap<String, String>) {
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            match v {
                serde_json::Value::Object(_) => flatten(v, into),
                serde_json::Value::String(s) if k.contains('.') && !s.is_empty() => {
                    into.entry(k.clone()).or_insert_with(|| s.clone());
                }
                serde_json::Value::Array(items) if k.contains('.') => {
                    if let Some(serde_json::Value::String(s)) = items.first() {
                        into.entry(k.clone()).or_insert_with(|| s.clone());
                    } else {
                        for item in items {
                            flatten(item, into);
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

pub(crate) fn parse_json_export(text: &str, source: u32) -> Result<DissectOutput, IngestError> {
    let mut out = DissectOutput::default();
    if text.trim().is_empty() {
        return Ok(out);
    }
    let packets: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| IngestError::DissectFailed {
        status: "0".into(),
        stderr: format!("unparseable JSON export: {e}"),
    })?;
    for (pos, pkt) in packets.iter().enumerate() {
        let Some(layers) = pkt.pointer("/_source/layers") else {
            out.warnings += 1;
            continue;
        };
        let mut fields = BTreeMap::new();
        flatten(layers, &mut fields);
        push(&mut out, source, pos as u64, fields);
    }
    Ok(out)
}

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{SessionTensor, HEADER_LEN, TENSOR_LEN};
use super::OcclusionError;
use crate::ingest::{write_pcap, LinkType};

pub const MAGIC: &[u8; 4] = b"SATN";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Index {
    version: u32,
    class_names: Vec<String>,
    sessions: Vec<SessionTensor>,
}

/// Writes `<stem>.bin` (magic, version, count, tensors, label codes) and
/// `<stem>.json` (row metadata and class names).
pub fn write_tensors(dir: &Path, stem: &str, tensors: &[SessionTensor]) -> Result<(), OcclusionError> {
    fs::create_dir_all(dir)?;
    let mut class_names: Vec<String> = tensors.iter().map(|t| t.label.clone()).collect();
    class_names.sort();
    class_names.dedup();
    let mut buf = Vec::with_capacity(16 + tensors.len() * (TENSOR_LEN + 4));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&t.bytes);
    }
    for t in tensors {
        let code = class_names.binary_search(&t.label).unwrap() as u32;
        buf.extend_from_slice(&code.to_le_bytes());
    }
    fs::File::create(dir.join(format!("{stem}.bin")))?.write_all(&buf)?;
    let index = Index { version: VERSION, class_names, sessions: tensors.to_vec() };
    let json = serde_json::to_vec(&index).map_err(|e| OcclusionError::Container(e.to_string()))?;
    fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}

pub fn read_tensors(dir: &Path, stem: &str) -> Result<Vec<SessionTensor>, OcclusionError> {
    let bad = |m: &str| OcclusionError::Container(format!("{stem}.bin: {m}"));
    let mut buf = Vec::new();
    fs::File::open(dir.join(format!("{stem}.bin")))?.read_to_end(&mut buf)?;
    if buf.len() < 16 || &buf[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if buf.len() != 16 + n * (TENSOR_LEN + 4) {
        return Err(bad("length does not match count"));
    }
    let index: Index = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)
        .map_err(|e| OcclusionError::Container(e.to_string()))?;
    if index.sessions.len() != n {
        return Err(bad("index and container disagree on count"));
    }
    let labels_at = 16 + n * TENSOR_LEN;
    let mut out = index.sessions;
    for (i, t) in out.iter_mut().enumerate() {
        t.bytes = buf[16 + i * TENSOR_LEN..16 + (i + 1) * TENSOR_LEN].to_vec();
        let code = u32::from_le_bytes(buf[labels_at + 4 * i..labels_at + 4 * i + 4].try_into().unwrap());
        if index.class_names.get(code as usize) != Some(&t.label) {
            return Err(bad("label code disagrees with index"));
        }
    }
    Ok(out)
}

/// Re-emits tensor rows as raw-IP packets, one per populated row.
pub fn write_tensors_pcap(path: &Path, tensors: &[SessionTensor]) -> Result<(), OcclusionError> {
    let mut frames: Vec<(f64, Vec<u8>)> = Vec::new();
    for t in tensors {
        for (i, meta) in t.rows.iter().enumerate() {
            let row = t.row(i);
            let hlen = (meta.ip_header_len + meta.transport_header_len).min(HEADER_LEN);
            let mut pkt = row[..hlen].to_vec();
            pkt.extend_from_slice(&row[HEADER_LEN..HEADER_LEN + meta.payload_len]);
            frames.push((meta.timestamp, pkt));
        }
    }
    frames.sort_by(|a, b| a.0.total_cmp(&b.0));
    write_pcap(path, LinkType::RawIp, frames.iter().map(|(ts, d)| (*ts, d.as_slice())))?;
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::occlusion::build_session_tensor;
    use crate::synthgen::{generate_synthetic_dataset, Shortcut, SynthSpec};

    #[test]
    fn round_trip_preserves_bytes_and_metadata() {
        let mut spec = SynthSpec::new(2, 3, 1).with_shortcut(Shortcut::SiiBijection);
        spec.packets_per_flow = (6, 6);
        let (_, sessions) = generate_synthetic_dataset(&spec).unwrap().sessions();
        let tensors: Vec<SessionTensor> = sessions.iter().map(|s| build_session_tensor(s).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        write_tensors(dir.path(), "none", &tensors).unwrap();
        assert_eq!(read_tensors(dir.path(), "none").unwrap(), tensors);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_tensors(dir.path(), "x", &[]).unwrap();
        let p = dir.path().join("x.bin");
        let mut b = fs::read(&p).unwrap();
        b[0] = b'Z';
        fs::write(&p, b).unwrap();
        assert!(matches!(read_tensors(dir.path(), "x"), Err(OcclusionError::Container(_))));
    }

    #[test]
    fn pcap_export_reparses() {
        let mut spec = SynthSpec::new(2, 1, 1).with_shortcut(Shortcut::SiiBijection);
        spec.packets_per_flow = (5, 5);
        let (_, sessions) = generate_synthetic_dataset(&spec).unwrap().sessions();
        let tensors: Vec<SessionTensor> = sessions.iter().map(|s| build_session_tensor(s).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pcap");
        write_tensors_pcap(&p, &tensors).unwrap();
        let cap = crate::ingest::read_capture(&p).unwrap();
        assert_eq!(cap.frames.len(), 10);
        let (parsed, stats) = crate::ingest::dissect_capture(&cap, 0);
        assert_eq!(stats.parsed, 10, "{stats:?}");
        assert_eq!(parsed.len(), 10);
    }
}

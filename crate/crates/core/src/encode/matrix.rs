use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dict::DomainDict;
use super::schema::{encode_field, EncodedValue, FieldKind, FieldSchema, Numeric};
use super::EncodeError;
use crate::ingest::{PacketId, PacketRecord, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum ColumnValues {
    Int(Vec<i64>),
    Float(Vec<f64>),
}

/// One encoded field. Invalid cells hold a sentinel; consult `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: FieldKind,
    pub values: ColumnValues,
    pub valid: Vec<bool>,
    /// Codebook of an opaque categorical column, in first-seen order.
    pub categories: Vec<String>,
}

impl Column {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn get(&self, row: usize) -> EncodedValue {
        let value = match &self.values {
            ColumnValues::Int(v) => Numeric::Int(v[row]),
            ColumnValues::Float(v) => Numeric::Float(v[row]),
        };
        EncodedValue { value, valid: self.valid[row] }
    }

    /// Cell as `f64` when valid.
    pub fn numeric(&self, row: usize) -> Option<f64> {
        if !self.valid[row] {
            return None;
        }
        Some(match &self.values {
            ColumnValues::Int(v) => v[row] as f64,
            ColumnValues::Float(v) => v[row],
        })
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn schema(&self) -> FieldSchema {
        FieldSchema { name: self.name.clone(), kind: self.kind }
    }
}

/// Per-packet feature table. Rows are grouped by session and time-ordered
/// within each session.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<Column>,
    /// Class code per row, indexing `class_names`.
    pub labels: Vec<u32>,
    pub class_names: Vec<String>,
    pub dataset_tags: Vec<String>,
    pub session_ids: Vec<u64>,
    pub packet_ids: Vec<PacketId>,
    pub domain_dict: DomainDict,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_fields(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn schema(&self) -> Vec<FieldSchema> {
        self.columns.iter().map(Column::schema).collect()
    }

    /// Row-index ranges of consecutive rows sharing a session id.
    pub fn session_groups(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.session_ids.len() {
            if i == self.session_ids.len() || self.session_ids[i] != self.session_ids[start] {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let pick_cols = |c: &Column| Column {
            name: c.name.clone(),
            kind: c.kind,
            values: match &c.values {
                ColumnValues::Int(v) => ColumnValues::Int(rows.iter().map(|&r| v[r]).collect()),
                ColumnValues::Float(v) => ColumnValues::Float(rows.iter().map(|&r| v[r]).collect()),
            },
            valid: rows.iter().map(|&r| c.valid[r]).collect(),
            categories: c.categories.clone(),
        };
        FeatureMatrix {
            columns: self.columns.iter().map(pick_cols).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_names: self.class_names.clone(),
            dataset_tags: rows.iter().map(|&r| self.dataset_tags[r].clone()).collect(),
            session_ids: rows.iter().map(|&r| self.session_ids[r]).collect(),
            packet_ids: rows.iter().map(|&r| self.packet_ids[r]).collect(),
            domain_dict: self.domain_dict.clone(),
        }
    }

    /// Rows carrying the given dataset tag.
    pub fn with_tag(&self, tag: &str) -> FeatureMatrix {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&r| self.dataset_tags[r] == tag).collect();
        self.select_rows(&rows)
    }

    pub fn tags(&self) -> Vec<String> {
        self.dataset_tags.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub rows: usize,
    pub orphan_records: usize,
    /// Session packets whose record was filtered out upstream.
    pub missing_records: usize,
}

fn encode_column(schema: &FieldSchema, raws: &[Option<&str>], dict: &DomainDict) -> Column {
    let mut categories = Vec::new();
    let mut valid = Vec::with_capacity(raws.len());
    let values = match schema.kind {
        FieldKind::FloatTemporal => {
            let mut scratch = DomainDict::default();
            let vals = raws
                .iter()
                .map(|r| {
                    let e = encode_field(*r, schema, &mut scratch);
                    valid.push(e.valid);
                    match e.value {
                        Numeric::Float(f) => f,
                        Numeric::Int(i) => i as f64,
                    }
                })
                .collect();
            ColumnValues::Float(vals)
        }
        FieldKind::OpaqueCategorical => {
            let mut index: HashMap<&str, i64> = HashMap::new();
            let vals = raws
                .iter()
                .map(|r| match r.filter(|s| !s.trim().is_empty()) {
                    Some(s) => {
                        valid.push(true);
                        *index.entry(s).or_insert_with(|| {
                            categories.push(s.to_string());
                            categories.len() as i64 - 1
                        })
                    }
                    None => {
                        valid.push(false);
                        i64::MIN
                    }
                })
                .collect();
            ColumnValues::Int(vals)
        }
        FieldKind::DomainName => {
            let vals = raws
                .iter()
                .map(|r| match r.filter(|s| !s.trim().is_empty()).and_then(|s| dict.get(s)) {
                    Some(i) => {
                        valid.push(true);
                        i as i64
                    }
                    None => {
                        valid.push(false);
                        i64::MIN
                    }
                })
                .collect();
            ColumnValues::Int(vals)
        }
        _ => {
            let mut scratch = DomainDict::default();
            let vals = raws
                .iter()
                .map(|r| {
                    let e = encode_field(*r, schema, &mut scratch);
                    valid.push(e.valid);
                    match e.value {
                        Numeric::Int(i) => i,
                        Numeric::Float(_) => i64::MIN,
                    }
                })
                .collect();
            ColumnValues::Int(vals)
        }
    };
    Column { name: schema.name.clone(), kind: schema.kind, values, valid, categories }
}

/// Assembles the per-packet matrix. Rows follow session id, then packet order
/// within the session; labels and dataset tags come from the owning session.
/// `dict` is extended with any domain not yet present.
pub fn build_feature_matrix(
    sessions: &[Session],
    records: &[PacketRecord],
    schema: &[FieldSchema],
    dict: &mut DomainDict,
) -> (FeatureMatrix, BuildStats) {
    let by_id: HashMap<PacketId, &PacketRecord> = records.iter().map(|r| (r.id(), r)).collect();
    let class_names: Vec<String> =
        sessions.iter().map(|s| s.label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let class_code: HashMap<&str, u32> =
        class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i as u32)).collect();

    let mut ordered: Vec<&Session> = sessions.iter().collect();
    ordered.sort_by_key(|s| s.id);
    let mut stats = BuildStats::default();
    let mut rows: Vec<&PacketRecord> = Vec::new();
    let mut labels = Vec::new();
    let mut dataset_tags = Vec::new();
    let mut session_ids = Vec::new();
    let mut packet_ids = Vec::new();
    for s in ordered {
        for p in &s.packets {
            let Some(rec) = by_id.get(&p.id) else {
                stats.missing_records += 1;
                continue;
            };
            rows.push(rec);
            labels.push(class_code[s.label.as_str()]);
            dataset_tags.push(s.dataset_tag.clone());
            session_ids.push(s.id);
            packet_ids.push(p.id);
        }
    }
    stats.rows = rows.len();
    stats.orphan_records = records.len() - rows.len().min(records.len());

    for s in schema.iter().filter(|s| s.kind == FieldKind::DomainName) {
        for r in &rows {
            if let Some(v) = r.get(&s.name).filter(|v| !v.trim().is_empty()) {
                dict.insert(v);
            }
        }
    }
    let frozen: &DomainDict = dict;
    let columns: Vec<Column> = schema
        .par_iter()
        .map(|s| {
            let raws: Vec<Option<&str>> = rows.iter().map(|r| r.get(&s.name)).collect();
            encode_column(s, &raws, frozen)
        })
        .collect();

    let matrix = FeatureMatrix {
        columns,
        labels,
        class_names,
        dataset_tags,
        session_ids,
        packet_ids,
        domain_dict: dict.clone(),
    };
    (matrix, stats)
}

#[derive(Serialize, Deserialize)]
struct ColumnMeta {
    name: String,
    kind: FieldKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    categories: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    fields: Vec<ColumnMeta>,
    class_names: Vec<String>,
    labels: Vec<u32>,
    dataset_tags: Vec<String>,
    session_ids: Vec<u64>,
    packet_ids: Vec<PacketId>,
    domain_dict: DomainDict,
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> EncodeError {
    EncodeError::Format { path: path.to_path_buf(), reason: e.to_string() }
}

/// Writes `values.csv`, `validity.csv` and `matrix.json` into `dir`.
pub fn write_matrix(matrix: &FeatureMatrix, dir: &Path) -> Result<(), EncodeError> {
    fs::create_dir_all(dir)?;
    let names: Vec<&str> = matrix.columns.iter().map(|c| c.name.as_str()).collect();
    let values_path = dir.join("values.csv");
    let validity_path = dir.join("validity.csv");
    let mut values = csv::Writer::from_path(&values_path).map_err(|e| csv_err(&values_path, e))?;
    let mut validity = csv::Writer::from_path(&validity_path).map_err(|e| csv_err(&validity_path, e))?;
    values.write_record(&names).map_err(|e| csv_err(&values_path, e))?;
    validity.write_record(&names).map_err(|e| csv_err(&validity_path, e))?;
    for row in 0..matrix.n_rows() {
        let cells: Vec<String> = matrix
            .columns
            .iter()
            .map(|c| match (c.valid[row], &c.values) {
                (false, _) => String::new(),
                (true, ColumnValues::Int(v)) => v[row].to_string(),
                (true, ColumnValues::Float(v)) => v[row].to_string(),
            })
            .collect();
        values.write_record(&cells).map_err(|e| csv_err(&values_path, e))?;
        validity
            .write_record(matrix.columns.iter().map(|c| if c.valid[row] { "1" } else { "0" }))
            .map_err(|e| csv_err(&validity_path, e))?;
    }
    values.flush()?;
    validity.flush()?;
    let sidecar = Sidecar {
        fields: matrix
            .columns
            .iter()
            .map(|c| ColumnMeta { name: c.name.clone(), kind: c.kind, categories: c.categories.clone() })
            .collect(),
        class_names: matrix.class_names.clone(),
        labels: matrix.labels.clone(),
        dataset_tags: matrix.dataset_tags.clone(),
        session_ids: matrix.session_ids.clone(),
        packet_ids: matrix.packet_ids.clone(),
        domain_dict: matrix.domain_dict.clone(),
    };
    fs::write(dir.join("matrix.json"), serde_json::to_vec(&sidecar).map_err(|e| csv_err(dir, e))?)?;
    Ok(())
}

pub fn read_matrix(dir: &Path) -> Result<FeatureMatrix, EncodeError> {
    let side_path = dir.join("matrix.json");
    let sidecar: Sidecar =
        serde_json::from_slice(&fs::read(&side_path)?).map_err(|e| csv_err(&side_path, e))?;
    let n = sidecar.labels.len();
    let mut columns: Vec<Column> = sidecar
        .fields
        .into_iter()
        .map(|m| Column {
            values: if m.kind == FieldKind::FloatTemporal {
                ColumnValues::Float(Vec::with_capacity(n))
            } else {
                ColumnValues::Int(Vec::with_capacity(n))
            },
            name: m.name,
            kind: m.kind,
            valid: Vec::with_capacity(n),
            categories: m.categories,
        })
        .collect();

    let values_path = dir.join("values.csv");
    let validity_path = dir.join("validity.csv");
    let mut values = csv::Reader::from_path(&values_path).map_err(|e| csv_err(&values_path, e))?;
    let mut validity = csv::Reader::from_path(&validity_path).map_err(|e| csv_err(&validity_path, e))?;
    let header = values.headers().map_err(|e| csv_err(&values_path, e))?.clone();
    if header.len() != columns.len() || header.iter().zip(&columns).any(|(h, c)| h != c.name) {
        return Err(csv_err(&values_path, "header does not match matrix.json"));
    }
    for (vrow, mrow) in values.records().zip(validity.records()) {
        let vrow = vrow.map_err(|e| csv_err(&values_path, e))?;
        let mrow = mrow.map_err(|e| csv_err(&validity_path, e))?;
        for (j, col) in columns.iter_mut().enumerate() {
            let ok = mrow.get(j) == Some("1");
            col.valid.push(ok);
            let cell = vrow.get(j).unwrap_or("");
            match &mut col.values {
                ColumnValues::Int(v) => v.push(if ok {
                    cell.parse().map_err(|e| csv_err(&values_path, format!("{}: {e}", col.name)))?
                } else {
                    i64::MIN
                }),
                ColumnValues::Float(v) => v.push(if ok {
                    cell.parse().map_err(|e| csv_err(&values_path, format!("{}: {e}", col.name)))?
                } else {
                    f64::NAN
                }),
            }
        }
    }
    if columns.iter().any(|c| c.valid.len() != n) {
        return Err(csv_err(&values_path, format!("expected {n} rows")));
    }
    Ok(FeatureMatrix {
        columns,
        labels: sidecar.labels,
        class_names: sidecar.class_names,
        dataset_tags: sidecar.dataset_tags,
        session_ids: sidecar.session_ids,
        packet_ids: sidecar.packet_ids,
        domain_dict: sidecar.domain_dict,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::encode::infer_schema;
    use crate::ingest::{assemble_sessions, record_from_fields, LabelingRule};

    fn records() -> Vec<PacketRecord> {
        let mut out = Vec::new();
        for (i, (src, port, extra)) in [
            ("10.0.0.1", "1000", None),
            ("10.0.0.9", "443", None),
            ("10.0.0.1", "1000", Some("www.example.com")),
            ("10.0.0.2", "2000", None),
            ("10.0.0.9", "443", None),
            ("10.0.0.2", "2000", None),
        ]
        .into_iter()
        .enumerate()
        {
            let dst_is_server = src != "10.0.0.9";
            let other = if i < 3 { ("10.0.0.1", "1000") } else { ("10.0.0.2", "2000") };
            let (dst, dport) = if dst_is_server { ("10.0.0.9", "443") } else { other };
            let mut f = BTreeMap::from([
                ("frame.number".to_string(), (i + 1).to_string()),
                ("frame.time_relative".to_string(), format!("{}.5", i)),
                ("ip.src".to_string(), src.to_string()),
                ("ip.dst".to_string(), dst.to_string()),
                ("tcp.srcport".to_string(), port.to_string()),
                ("tcp.dstport".to_string(), dport.to_string()),
                ("tcp.flags".to_string(), "0x0018".to_string()),
                ("tcp.options".to_string(), if i % 2 == 0 { "01:01" } else { "08:0a" }.to_string()),
            ]);
            if let Some(sni) = extra {
                f.insert("tls.handshake.extensions_server_name".into(), sni.into());
            }
            out.push(record_from_fields(0, i as u64, f).unwrap());
        }
        out
    }

    fn matrix() -> (FeatureMatrix, BuildStats) {
        let recs = records();
        let rule = LabelingRule { per_source: BTreeMap::from([(0, "app".to_string())]), ..Default::default() };
        let (sessions, _) =
            assemble_sessions(recs.iter().cloned().map(|r| (r, None)), &rule, &BTreeMap::from([(0, "d1".into())]));
        let schema = infer_schema(&recs);
        let mut dict = DomainDict::default();
        build_feature_matrix(&sessions, &recs, &schema, &mut dict)
    }

    #[test]
    fn shape_and_union_semantics() {
        let (m, stats) = matrix();
        assert_eq!(m.n_rows(), 6);
        assert_eq!(stats.orphan_records, 0);
        assert_eq!(m.session_groups(), vec![0..3, 3..6]);
        let sni = m.column("tls.handshake.extensions_server_name").unwrap();
        assert_eq!(sni.n_valid(), 1);
        assert_eq!(m.domain_dict.entries(), ["example.com"]);
        let opts = m.column("tcp.options").unwrap();
        assert_eq!(opts.kind, FieldKind::OpaqueCategorical);
        assert_eq!(opts.categories, ["01:01", "08:0a"]);
        assert_eq!(m.column("ip.src").unwrap().get(0).value, Numeric::Int(0x0a000001));
        assert!(m.dataset_tags.iter().all(|t| t == "d1"));
    }

    #[test]
    fn empty_input_gives_zero_rows() {
        let mut dict = DomainDict::default();
        let (m, _) = build_feature_matrix(&[], &[], &[], &mut dict);
        assert_eq!(m.n_rows(), 0);
    }

    #[test]
    fn csv_json_round_trip() {
        let (m, _) = matrix();
        let dir = tempfile::tempdir().unwrap();
        write_matrix(&m, dir.path()).unwrap();
        let back = read_matrix(dir.path()).unwrap();
        assert_eq!(back.n_rows(), m.n_rows());
        for (a, b) in m.columns.iter().zip(&back.columns) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.valid, b.valid);
            for r in 0..m.n_rows() {
                assert_eq!(a.numeric(r), b.numeric(r));
            }
        }
        assert_eq!(back.labels, m.labels);
        assert_eq!(back.packet_ids, m.packet_ids);
    }
}

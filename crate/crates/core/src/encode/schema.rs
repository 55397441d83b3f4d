use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use log::info;
use serde::{Deserialize, Serialize};

use super::dict::DomainDict;
use crate::ingest::{PacketRecord, SNI_FIELD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Ipv4Address,
    HexOrInt,
    FloatTemporal,
    DomainName,
    OpaqueCategorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Numeric {
    Int(i64),
    Float(f64),
}

/// An encoded cell. Validity is carried separately from the value; invalid
/// cells hold a sentinel that must never be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodedValue {
    pub value: Numeric,
    pub valid: bool,
}

impl EncodedValue {
    pub const INVALID_INT: EncodedValue = EncodedValue { value: Numeric::Int(i64::MIN), valid: false };
    pub const INVALID_FLOAT: EncodedValue = EncodedValue { value: Numeric::Float(f64::NAN), valid: false };

    fn int(v: i64) -> Self {
        EncodedValue { value: Numeric::Int(v), valid: true }
    }
}

/// Dotted quad to its base-256 integer.
pub fn parse_ipv4(raw: &str) -> Option<u32> {
    raw.trim().parse::<Ipv4Addr>().ok().map(u32::from)
}

pub fn decode_ipv4(v: u32) -> Ipv4Addr {
    Ipv4Addr::from(v)
}

/// `0x`-prefixed hex, then decimal, then bare hex.
pub fn parse_hex_or_int(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        return u64::from_str_radix(h, 16).ok().and_then(|v| i64::try_from(v).ok());
    }
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    u64::from_str_radix(s, 16).ok().and_then(|v| i64::try_from(v).ok())
}

fn parse_float(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn looks_like_hostname(raw: &str) -> bool {
    let s = raw.trim().trim_end_matches('.');
    !s.is_empty()
        && s.bytes().any(|b| b.is_ascii_alphabetic())
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'.' || b == b'_')
        && s.contains('.')
}

fn is_domain_field(name: &str) -> bool {
    name == SNI_FIELD
        || name.ends_with("server_name")
        || name.ends_with(".qry.name")
        || name.ends_with(".resp.name")
        || name == "http.host"
}

/// Encodes one raw value. Conversion failures never error; they yield an
/// invalid cell. Domain names are inserted into `dict` when new.
pub fn encode_field(raw: Option<&str>, schema: &FieldSchema, dict: &mut DomainDict) -> EncodedValue {
    let invalid = if schema.kind == FieldKind::FloatTemporal {
        EncodedValue::INVALID_FLOAT
    } else {
        EncodedValue::INVALID_INT
    };
    let Some(raw) = raw.filter(|r| !r.trim().is_empty()) else {
        return invalid;
    };
    match schema.kind {
        FieldKind::Ipv4Address => parse_ipv4(raw).map(|v| EncodedValue::int(v as i64)),
        FieldKind::HexOrInt => parse_hex_or_int(raw).map(EncodedValue::int),
        FieldKind::FloatTemporal => {
            parse_float(raw).map(|v| EncodedValue { value: Numeric::Float(v), valid: true })
        }
        FieldKind::DomainName => Some(EncodedValue::int(dict.insert(raw) as i64)),
        // per-column codebooks are assigned during matrix assembly
        FieldKind::OpaqueCategorical => None,
    }
    .unwrap_or(invalid)
}

pub(crate) fn converts(raw: &str, kind: FieldKind) -> bool {
    if raw.trim().is_empty() {
        return false;
    }
    match kind {
        FieldKind::Ipv4Address => parse_ipv4(raw).is_some(),
        FieldKind::HexOrInt => parse_hex_or_int(raw).is_some(),
        FieldKind::FloatTemporal => parse_float(raw).is_some(),
        FieldKind::DomainName | FieldKind::OpaqueCategorical => true,
    }
}

fn infer_kind(name: &str, values: &BTreeSet<&str>) -> FieldKind {
    if is_domain_field(name) {
        return FieldKind::DomainName;
    }
    let all = |f: &dyn Fn(&str) -> bool| !values.is_empty() && values.iter().all(|v| f(v));
    if all(&|v| parse_ipv4(v).is_some()) {
        FieldKind::Ipv4Address
    } else if all(&|v| parse_hex_or_int(v).is_some()) {
        FieldKind::HexOrInt
    } else if all(&|v| parse_float(v).is_some()) {
        FieldKind::FloatTemporal
    } else if all(&looks_like_hostname) {
        FieldKind::DomainName
    } else {
        FieldKind::OpaqueCategorical
    }
}

/// Infers one kind per field over the union of field names, sorted by name.
pub fn infer_schema(records: &[PacketRecord]) -> Vec<FieldSchema> {
    let mut observed: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        for (k, v) in &r.fields {
            let set = observed.entry(k.as_str()).or_default();
            if !v.trim().is_empty() && set.len() < 4096 {
                set.insert(v.as_str());
            }
        }
    }
    let schema: Vec<FieldSchema> = observed
        .into_iter()
        .map(|(name, values)| FieldSchema { name: name.to_string(), kind: infer_kind(name, &values) })
        .collect();
    for s in &schema {
        info!("field {} encoded as {:?}", s.name, s.kind);
    }
    schema
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(kind: FieldKind) -> FieldSchema {
        FieldSchema { name: "f".into(), kind }
    }

    #[test]
    fn ipv4_is_base_256() {
        let mut d = DomainDict::default();
        let v = encode_field(Some("192.168.1.1"), &schema(FieldKind::Ipv4Address), &mut d);
        assert_eq!(v, EncodedValue::int(192 * 256i64.pow(3) + 168 * 256i64.pow(2) + 256 + 1));
        assert_eq!(v.value, Numeric::Int(3232235777));
        assert!(!encode_field(Some("999.1.2.3"), &schema(FieldKind::Ipv4Address), &mut d).valid);
    }

    #[test]
    fn hex_chain_prefers_decimal_over_bare_hex() {
        assert_eq!(parse_hex_or_int("0x1a"), Some(26));
        assert_eq!(parse_hex_or_int("80"), Some(80));
        assert_eq!(parse_hex_or_int("ff"), Some(255));
        assert_eq!(parse_hex_or_int("-3"), Some(-3));
        assert_eq!(parse_hex_or_int("zz"), None);
    }

    #[test]
    fn empty_and_absent_are_invalid() {
        let mut d = DomainDict::default();
        for raw in [Some(""), None, Some("  ")] {
            let v = encode_field(raw, &schema(FieldKind::HexOrInt), &mut d);
            assert!(!v.valid);
        }
        assert!(!encode_field(Some("x"), &schema(FieldKind::FloatTemporal), &mut d).valid);
    }

    #[test]
    fn first_domain_gets_index_zero() {
        let mut d = DomainDict::default();
        let v = encode_field(Some("www.example.com"), &schema(FieldKind::DomainName), &mut d);
        assert_eq!(v, EncodedValue::int(0));
        assert_eq!(d.get("example.com"), Some(0));
    }

    #[test]
    fn kinds_are_inferred_from_values() {
        let set = |xs: &[&'static str]| xs.iter().copied().collect::<BTreeSet<&str>>();
        assert_eq!(infer_kind("ip.src", &set(&["10.0.0.1"])), FieldKind::Ipv4Address);
        assert_eq!(infer_kind("tcp.flags", &set(&["0x0002", "0x0012"])), FieldKind::HexOrInt);
        assert_eq!(infer_kind("frame.time_relative", &set(&["0.000000", "0.25"])), FieldKind::FloatTemporal);
        assert_eq!(infer_kind(SNI_FIELD, &set(&["a.b.com"])), FieldKind::DomainName);
        assert_eq!(infer_kind("tcp.options", &set(&["01:01:08:0a"])), FieldKind::OpaqueCategorical);
    }
}

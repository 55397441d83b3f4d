use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Last two labels of a dotted name, lowercased, without a trailing dot.
/// Names with fewer than two labels are used verbatim.
pub fn second_level_domain(name: &str) -> String {
    let name = name.trim().trim_end_matches('.').to_ascii_lowercase();
    let labels: Vec<&str> = name.split('.').collect();
    if labels.len() < 2 {
        return name;
    }
    labels[labels.len() - 2..].join(".")
}

/// Second-level domain → dense index in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct DomainDict {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for DomainDict {
    fn from(entries: Vec<String>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        Self { entries, index }
    }
}

impl From<DomainDict> for Vec<String> {
    fn from(d: DomainDict) -> Self {
        d.entries
    }
}

impl DomainDict {
    pub fn insert(&mut self, name: &str) -> usize {
        let key = second_level_domain(name);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.entries.len();
        self.index.insert(key.clone(), i);
        self.entries.push(key);
        i
    }

    /// Index of a name's second-level domain, if known.
    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(&second_level_domain(name)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }
}

pub fn build_domain_dictionary<'a, I>(values: I) -> DomainDict
where
    I: IntoIterator<Item = &'a str>,
{
    let mut d = DomainDict::default();
    for v in values {
        if !v.trim().is_empty() {
            d.insert(v);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_seen_order() {
        let d = build_domain_dictionary(["a.x.com", "b.x.com", "y.org"]);
        assert_eq!(d.entries(), ["x.com", "y.org"]);
        assert_eq!(d.get("b.x.com"), Some(0));
        assert_eq!(d.get("y.org"), Some(1));
    }

    #[test]
    fn degenerate_names() {
        assert!(build_domain_dictionary([]).is_empty());
        let d = build_domain_dictionary(["com"]);
        assert_eq!(d.entries(), ["com"]);
        assert_eq!(second_level_domain("WWW.Example.COM."), "example.com");
    }

    #[test]
    fn serde_round_trip_keeps_index() {
        let d = build_domain_dictionary(["a.x.com", "y.org"]);
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"["x.com","y.org"]"#);
        let back: DomainDict = serde_json::from_str(&json).unwrap();
        assert_eq!(back.get("q.y.org"), Some(1));
    }
}

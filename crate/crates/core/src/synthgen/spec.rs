use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SynthError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighbitsField {
    Seq,
    Tsval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shortcut {
    /// One client address per class.
    SiiBijection,
    /// Class-determined top byte of the initial value of `field`, both sides.
    SessionConstantHighbits { field: HighbitsField },
    /// Per-packet window drawn around a class mean plus the environment shift.
    EnvCoupledWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Client data lengths from a class-specific band.
    PayloadLengthProfile,
    /// Class signature bytes at the start of client data.
    PayloadByteProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub tag: String,
    #[serde(default)]
    pub window_shift: f64,
}

fn default_packets() -> (usize, usize) {
    (100, 140)
}

fn default_envs() -> Vec<Environment> {
    vec![Environment { tag: "env0".into(), window_shift: 0.0 }]
}

fn default_length_width() -> u16 {
    40
}

fn default_window_spread() -> f64 {
    1500.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    /// Flows per class and environment.
    pub flows_per_class: usize,
    #[serde(default = "default_packets")]
    pub packets_per_flow: (usize, usize),
    #[serde(default)]
    pub shortcuts: Vec<Shortcut>,
    #[serde(default)]
    pub signals: Vec<Signal>,
    #[serde(default = "default_envs")]
    pub environments: Vec<Environment>,
    pub seed: u64,
    /// Probability that a data packet goes server to client.
    #[serde(default)]
    pub reverse_fraction: f64,
    /// Width of each class band under the length profile.
    #[serde(default = "default_length_width")]
    pub payload_length_width: u16,
    #[serde(default = "default_window_spread")]
    pub window_spread: f64,
}

pub(crate) const LENGTH_BASE: usize = 60;
pub(crate) const LENGTH_STEP: usize = 120;
pub(crate) const MAX_PAYLOAD: usize = 1400;

impl SynthSpec {
    pub fn new(n_classes: usize, flows_per_class: usize, seed: u64) -> Self {
        Self {
            n_classes,
            flows_per_class,
            packets_per_flow: default_packets(),
            shortcuts: vec![],
            signals: vec![],
            environments: default_envs(),
            seed,
            reverse_fraction: 0.0,
            payload_length_width: default_length_width(),
            window_spread: default_window_spread(),
        }
    }

    pub fn with_shortcut(mut self, s: Shortcut) -> Self {
        self.shortcuts.push(s);
        self
    }

    pub fn with_signal(mut self, s: Signal) -> Self {
        self.signals.push(s);
        self
    }

    pub fn with_environments(mut self, envs: &[(&str, f64)]) -> Self {
        self.environments =
            envs.iter().map(|&(t, s)| Environment { tag: t.to_string(), window_shift: s }).collect();
        self
    }

    pub fn has_shortcut(&self, s: Shortcut) -> bool {
        self.shortcuts.contains(&s)
    }

    pub fn has_signal(&self, s: Signal) -> bool {
        self.signals.contains(&s)
    }

    pub fn highbits(&self, f: HighbitsField) -> bool {
        self.has_shortcut(Shortcut::SessionConstantHighbits { field: f })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_classes == 0 || self.n_classes > 250 {
            return bad(format!("n_classes must be in 1..=250, got {}", self.n_classes));
        }
        if self.flows_per_class == 0 || self.flows_per_class > 64_511 {
            return bad(format!("flows_per_class must be in 1..=64511, got {}", self.flows_per_class));
        }
        let (lo, hi) = self.packets_per_flow;
        if lo < 5 || lo > hi || hi > 10_000 {
            return bad(format!("packets_per_flow must satisfy 5 <= min <= max <= 10000, got {lo}..{hi}"));
        }
        if self.shortcuts.is_empty() && self.signals.is_empty() {
            return bad("at least one shortcut or signal is required".into());
        }
        if self.environments.is_empty() {
            return bad("at least one environment is required".into());
        }
        let tags: BTreeSet<&str> = self.environments.iter().map(|e| e.tag.as_str()).collect();
        if tags.len() != self.environments.len() || tags.contains("") {
            return bad("environment tags must be unique and non-empty".into());
        }
        if self.environments.iter().any(|e| !e.window_shift.is_finite()) {
            return bad("window_shift must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.reverse_fraction) {
            return bad(format!("reverse_fraction must be in [0, 1], got {}", self.reverse_fraction));
        }
        if !(self.window_spread > 0.0 && self.window_spread.is_finite()) {
            return bad("window_spread must be positive".into());
        }
        if self.has_signal(Signal::PayloadLengthProfile) {
            let top = LENGTH_BASE + LENGTH_STEP * (self.n_classes - 1) + self.payload_length_width as usize;
            if top > MAX_PAYLOAD {
                return bad(format!("length profile for {} classes exceeds {MAX_PAYLOAD} bytes", self.n_classes));
            }
        }
        Ok(())
    }

    pub fn class_name(c: usize) -> String {
        format!("class{c}")
    }
}

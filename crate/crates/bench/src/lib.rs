//! Shared fixtures for the benchmarks.

use shortcut_audit::encode::{build_feature_matrix, infer_schema, DomainDict, FeatureMatrix};
use shortcut_audit::occlusion::{build_session_tensor, SessionTensor};
use shortcut_audit::synthgen::{generate_synthetic_dataset, Shortcut, Signal, SynthSpec};

pub fn spec(classes: usize, flows: usize) -> SynthSpec {
    let mut s = SynthSpec::new(classes, flows, 1)
        .with_shortcut(Shortcut::SiiBijection)
        .with_signal(Signal::PayloadLengthProfile);
    s.packets_per_flow = (20, 30);
    s
}

pub fn matrix(spec: &SynthSpec) -> FeatureMatrix {
    let (records, sessions) = generate_synthetic_dataset(spec).unwrap().sessions();
    let schema = infer_schema(&records);
    build_feature_matrix(&sessions, &records, &schema, &mut DomainDict::default()).0
}

pub fn tensors(spec: &SynthSpec) -> Vec<SessionTensor> {
    let (_, sessions) = generate_synthetic_dataset(spec).unwrap().sessions();
    sessions.iter().map(|s| build_session_tensor(s).unwrap()).collect()
}

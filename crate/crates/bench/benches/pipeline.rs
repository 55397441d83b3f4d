use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use shortcut_audit::evaluator::{evaluate_tensors, train_decision_tree, ByteMatrix, EvalProtocol, TreeParams};
use shortcut_audit::occlusion::{apply_occlusion, ipv4_header_checksum, OcclusionSpec, Strategy};
use shortcut_audit::ranker::{expected_mi, rank_top_k, RankConfig};
use shortcut_audit::synthgen::generate_synthetic_dataset;
use shortcut_audit_bench::{matrix, spec, tensors};

fn emi(c: &mut Criterion) {
    let mut g = c.benchmark_group("expected_mi");
    for n in [1_000u64, 10_000, 100_000] {
        let rows = vec![n / 5; 5];
        let cols = vec![n / 50; 50];
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| expected_mi(black_box(&rows), &cols)));
    }
    g.finish();
}

fn rank(c: &mut Criterion) {
    let m = matrix(&spec(5, 40));
    let cfg = RankConfig::default();
    c.bench_function("rank_top_k/5x40", |b| b.iter(|| rank_top_k(black_box(&m), &cfg).unwrap()));
}

fn synth(c: &mut Criterion) {
    let s = spec(5, 20);
    c.bench_function("synth+sessions/5x20", |b| b.iter(|| generate_synthetic_dataset(&s).unwrap().sessions()));
}

fn occlusion(c: &mut Criterion) {
    let t = tensors(&spec(2, 10));
    let mut g = c.benchmark_group("occlusion");
    for strategy in [Strategy::Zero, Strategy::Relative, Strategy::Random] {
        let targets = if strategy == Strategy::Relative { "@seq_ack" } else { "@sii" };
        let o = OcclusionSpec { strategy, targets: vec![targets.into()], seed: 1 };
        g.bench_function(format!("{strategy:?}"), |b| b.iter(|| apply_occlusion(black_box(&t[0]), &o).unwrap()));
    }
    g.finish();
    let header: Vec<u8> = (0..60u8).collect();
    c.bench_function("ipv4_header_checksum", |b| b.iter(|| ipv4_header_checksum(black_box(&header))));
}

fn tree(c: &mut Criterion) {
    let t = tensors(&spec(5, 60));
    let rows: Vec<Vec<u8>> = t.iter().map(|x| x.bytes.clone()).collect();
    let labels: Vec<u32> = t.iter().map(|x| x.label.trim_start_matches("class").parse().unwrap()).collect();
    let x = ByteMatrix::from_rows(&rows).unwrap();
    c.bench_function("train_decision_tree/300", |b| {
        b.iter(|| train_decision_tree(black_box(&x), &labels, 5, &TreeParams::default()).unwrap())
    });
    let p = EvalProtocol::default();
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    g.bench_function("evaluate_tensors/300", |b| b.iter(|| evaluate_tensors(&t, "none", &[], &p, "bench").unwrap()));
    g.finish();
}

criterion_group!(benches, emi, rank, synth, occlusion, tree);
criterion_main!(benches);

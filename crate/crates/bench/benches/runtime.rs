use std::collections::BTreeMap;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use tripart_bench::{chunk_head, head_fixture, logits, pons_fixture, toy_head};
use tripart_core::cache::{read_archive, write_archive, CacheManifest, Dtype, ReadMode, TensorEntry};
use tripart_core::decoder::{Decoder, DecoderConfig};
use tripart_core::paracat::forward;
use tripart_core::pons::attention_pool;
use tripart_core::scheduler::{simulate, ScheduleConfig};
use tripart_core::Matrix;

fn head(c: &mut Criterion) {
    for (name, cfg) in [("head_forward/toy", toy_head()), ("head_forward/k20_d16", chunk_head())] {
        let (params, bundle) = head_fixture(&cfg, 1);
        c.bench_function(name, |b| b.iter(|| forward(black_box(&bundle), &params, &cfg).unwrap()));
    }
}

fn decoder(c: &mut Criterion) {
    let l = logits(16, 2);
    let mut dec = Decoder::new(DecoderConfig::default()).unwrap();
    c.bench_function("decoder_step/16", |b| b.iter(|| dec.step_logits(black_box(&l), true).unwrap()));
}

fn pons(c: &mut Criterion) {
    let (params, g) = pons_fixture(300, 64, 3);
    c.bench_function("context_pool/300x64", |b| b.iter(|| attention_pool(black_box(&g), &params).unwrap()));
}

fn scheduler(c: &mut Criterion) {
    let cfg = ScheduleConfig::default();
    c.bench_function("simulate/100_chunks", |b| b.iter(|| simulate(black_box(&cfg), 100, 0).unwrap()));
}

fn cache(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.svc");
    let m = Matrix::from_fn(512, 256, |i, j| ((i * 31 + j) % 97) as f64 / 97.0);
    let manifest = CacheManifest {
        version_hash: "bench".into(),
        tensors: vec![TensorEntry::new("x", vec![512, 256], Dtype::F16)],
        ..Default::default()
    };
    write_archive(&manifest, &BTreeMap::from([("x".to_string(), m)]), &path).unwrap();
    for (name, mode) in [("cache_read/eager", ReadMode::Eager), ("cache_read/mapped", ReadMode::Mapped)] {
        c.bench_function(name, |b| {
            b.iter(|| {
                let r = read_archive(&path, mode).unwrap();
                r.tensor("x").unwrap()
            })
        });
    }
}

criterion_group!(benches, head, decoder, pons, scheduler, cache);
criterion_main!(benches);

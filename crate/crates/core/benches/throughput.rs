//! Sequential (one-thread pool) versus parallel throughput of the two hot
//! loops: semantic-group retrieval over a bank and a batch of gradients.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rayon::ThreadPoolBuilder;
use sgcap::bank::{SentenceBank, SentenceRecord};
use sgcap::model::vocab::EOS;
use sgcap::model::{Example, ModelConfig, ModelParams, Weights};
use sgcap::similarity::select_groups_for_bank;
use sgcap::{par, seed};

fn bank(n: usize, d: usize) -> SentenceBank {
    let mut rng = seed::rng(1);
    let records = (0..n)
        .map(|i| {
            let tokens: Vec<String> = (0..3)
                .map(|_| format!("w{}", rng.random_range(0..50)))
                .collect();
            let emb = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            SentenceRecord::new(format!("s{i}"), tokens, emb)
        })
        .collect();
    SentenceBank::build(records).unwrap()
}

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let all = ThreadPoolBuilder::new().build().unwrap();
    let n = all.current_num_threads();
    vec![
        (
            "sequential".into(),
            ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
        ),
        (format!("parallel-{n}"), all),
    ]
}

fn retrieval(c: &mut Criterion) {
    let b = bank(2000, 64);
    let queries: Vec<usize> = (0..b.len()).collect();
    let mut group = c.benchmark_group("select_groups_for_bank");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |bench| {
            bench.iter(|| pool.install(|| select_groups_for_bank(&b, &queries, 0.5, 5).unwrap()))
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let cfg = ModelConfig::desk(32, 200);
    let params = ModelParams::from_weights(cfg.clone(), Weights::init(&cfg, 0));
    let mut rng = seed::rng(2);
    let examples: Vec<Example> = (0..64)
        .map(|_| Example {
            slots: (0..6)
                .map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            candidates: (0..6)
                .map(|_| {
                    let mut c: Vec<u32> = (0..10).map(|_| rng.random_range(4..200)).collect();
                    c.push(EOS);
                    c
                })
                .collect(),
            weights: vec![1.0 / 6.0; 6],
        })
        .collect();
    let mut group = c.benchmark_group("batch_loss_and_grad");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |bench| {
            bench.iter(|| {
                pool.install(|| {
                    par::map(&examples, |ex| {
                        let mut g = Weights::zeros(&params.config);
                        params.loss_and_grad(ex, &mut g).unwrap().loss
                    })
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, retrieval, gradients);
criterion_main!(benches);

//! Sequential vs data-parallel throughput of the batch workloads. Build with
//! `--no-default-features` to measure the plain-loop fallback everywhere.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hspr_core::experiment::{benchmark_agent, generate_scenes, standard_benchmark, BenchmarkSpec};
use hspr_core::kb::accumulate_scenes;
use hspr_core::par::default_parallelism;
use hspr_core::sim::{run_batch, Policy};
use hspr_core::synth::{house_generator_kb, GeneratorConfig};

// The parallel run uses at least 4 workers so the pooled path is measured
// even on single-core machines.
fn thread_counts() -> [usize; 2] {
    [1, default_parallelism().max(4)]
}

fn episodes(c: &mut Criterion) {
    let spec = BenchmarkSpec {
        scenes: 40,
        ..BenchmarkSpec::default()
    };
    let bench = standard_benchmark(&spec, 0).unwrap();
    let agent = benchmark_agent(bench.kb.n_types(), 7).unwrap();
    let mut group = c.benchmark_group("run_batch");
    group.sample_size(20);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| {
                black_box(run_batch(
                    &bench.scenes,
                    &bench.episodes,
                    &bench.kb,
                    &agent,
                    Policy::Hspr,
                    t,
                ))
            })
        });
    }
    group.finish();
}

fn knowledge_base(c: &mut Criterion) {
    let kb = house_generator_kb();
    let scenes = generate_scenes(&kb, &GeneratorConfig::default(), 500, 1, 0).unwrap();
    let mut group = c.benchmark_group("accumulate_scenes");
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| black_box(accumulate_scenes(&kb.type_vocabulary, &kb.object_vocabulary, &scenes, t).unwrap()))
        });
    }
    group.finish();
}

fn scene_generation(c: &mut Criterion) {
    let kb = house_generator_kb();
    let mut group = c.benchmark_group("generate_scenes");
    group.sample_size(20);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| black_box(generate_scenes(&kb, &GeneratorConfig::default(), 200, 1, t).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, episodes, knowledge_base, scene_generation);
criterion_main!(benches);

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use didchain_core::clock::SteppingClock;
use didchain_core::events::{ActorSpec, CommitMode, Engine, EngineConfig, Role};
use didchain_core::scenario::{closure_scenario, run_scenario};
use didchain_core::trace::trace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn engine() -> Engine {
    let start = "2024-03-05T00:00:00Z".parse().unwrap();
    let mut e = Engine::new(EngineConfig::default(), Arc::new(SteppingClock::starting_at(start))).unwrap();
    for (alias, role) in [("producer", Role::Producer), ("manufacturer", Role::Manufacturer)] {
        e.register_actor(ActorSpec {
            alias: alias.into(),
            role,
            balance: u64::MAX / 4,
            mode: Default::default(),
            seed: None,
            public_key: None,
        })
        .unwrap();
    }
    e
}

fn events(c: &mut Criterion) {
    let mut group = c.benchmark_group("events");
    group.bench_function("produce", |b| {
        let mut e = engine();
        b.iter(|| e.produce("producer", BTreeMap::new()).unwrap());
    });
    group.bench_function("ship+receive", |b| {
        let e = RefCell::new(engine());
        b.iter_batched(
            || e.borrow_mut().produce("producer", BTreeMap::new()).unwrap().0,
            |did| {
                let mut e = e.borrow_mut();
                e.ship("producer", &did, "manufacturer").unwrap();
                e.receive("manufacturer", &did).unwrap();
            },
            criterion::BatchSize::SmallInput,
        );
    });
    group.finish();
}

fn manufacture(c: &mut Criterion) {
    let mut group = c.benchmark_group("manufacture");
    for n in [2usize, 16, 64] {
        for mode in [CommitMode::ServiceList, CommitMode::MerkleRoot] {
            group.bench_with_input(BenchmarkId::new(mode.to_string(), n), &n, |b, &n| {
                let e = RefCell::new(engine());
                b.iter_batched(
                    || {
                        let mut e = e.borrow_mut();
                        (0..n)
                            .map(|_| {
                                let (d, _) = e.produce("producer", BTreeMap::new()).unwrap();
                                e.ship("producer", &d, "manufacturer").unwrap();
                                e.receive("manufacturer", &d).unwrap();
                                d
                            })
                            .collect::<Vec<_>>()
                    },
                    |inputs| e.borrow_mut().manufacture("manufacturer", &inputs, BTreeMap::new(), mode).unwrap(),
                    criterion::BatchSize::SmallInput,
                );
            });
        }
    }
    group.finish();
}

fn tracing(c: &mut Criterion) {
    let mut group = c.benchmark_group("trace");
    for events in [13usize, 50, 200] {
        let mut rng = ChaCha8Rng::seed_from_u64(events as u64);
        let (script, root) = closure_scenario(&mut rng, events, 3, CommitMode::ServiceList);
        let start = "2024-03-05T00:00:00Z".parse().unwrap();
        let mut e = Engine::new(EngineConfig::default(), Arc::new(SteppingClock::starting_at(start))).unwrap();
        let run = run_scenario(&mut e, &script).unwrap();
        let did = run.assets[&root].clone();
        group.bench_with_input(BenchmarkId::from_parameter(events), &did, |b, did| {
            b.iter(|| black_box(trace(e.registry(), e.store(), did).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, events, manufacture, tracing);
criterion_main!(benches);

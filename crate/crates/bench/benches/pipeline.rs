use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use intentguard::harness::run_scenario;
use intentguard::vision::{estimate_homography, CANONICAL_CORNERS};
use intentguard::{AttackKind, OcrNoiseModel, Supervisor};
use intentguard_bench::{observe, pose, scenario, typed_bank_form};

fn vision(c: &mut Criterion) {
    let state = typed_bank_form();
    let inclined = pose(45.0);
    c.bench_function("estimate_homography", |b| {
        b.iter(|| estimate_homography(black_box(&inclined.corners.0), &CANONICAL_CORNERS.0).unwrap())
    });
    let noise = OcrNoiseModel::calibrated();
    c.bench_function("frame_to_observed_form", |b| b.iter(|| observe(black_box(&state), &inclined, &noise, 7)));
}

fn supervisor(c: &mut Criterion) {
    let state = typed_bank_form();
    let obs = observe(&state, &pose(0.0), &OcrNoiseModel::zero(), 0);
    c.bench_function("supervisor_frame", |b| {
        b.iter_batched(
            || Supervisor::with_spec(state.spec().clone(), 0),
            |mut sup| sup.process_frame(black_box(&obs)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_scenario");
    g.sample_size(20);
    for (name, kind) in [("none", AttackKind::None), ("b1", AttackKind::B1), ("a2_slow", AttackKind::A2Slow)] {
        let p = scenario(kind, 3, true);
        g.bench_function(name, |b| b.iter(|| run_scenario(black_box(&p))));
    }
    g.finish();
}

criterion_group!(benches, vision, supervisor, scenarios);
criterion_main!(benches);

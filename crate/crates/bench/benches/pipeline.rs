use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use provfig::coordination::propagate;
use provfig::demo::{demo_catalog, DemoSeeds};
use provfig::interaction::interaction_to_predicate;
use provfig::session::{MessageRequest, SessionConfig, Workspace};
use provfig::testkit::{
    coordination_trial, figure_with_gesture, fixed_time, ledger_workout, propagating_gesture, random_catalog, random_plan,
};
use provfig::{execute_plan, reference_execute, ChartType, InteractionEvent, InteractionKind};

fn engine(c: &mut Criterion) {
    let mut g = c.benchmark_group("engine");
    for rows in [1_000usize, 10_000] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let catalog = random_catalog(&mut rng, rows);
        let plans: Vec<_> = (0..16).map(|_| random_plan(&mut rng, &catalog)).collect();
        g.bench_with_input(BenchmarkId::new("execute_plan", rows), &plans, |b, plans| {
            b.iter(|| plans.iter().filter(|p| execute_plan(p, &catalog).is_ok()).count())
        });
        g.bench_with_input(BenchmarkId::new("reference", rows), &plans, |b, plans| {
            b.iter(|| plans.iter().filter(|p| reference_execute(p, &catalog).is_ok()).count())
        });
    }
    g.finish();
}

fn gestures(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let catalog = random_catalog(&mut rng, 10_000);
    let mut g = c.benchmark_group("gesture_to_predicate");
    for (chart, kind) in [
        (ChartType::Scatter, InteractionKind::Interval2d),
        (ChartType::Bar, InteractionKind::SingleSelect),
        (ChartType::Line, InteractionKind::Interval1d),
    ] {
        let Some((fig, gesture)) = figure_with_gesture(&mut rng, &catalog, chart, kind, "f1") else {
            continue;
        };
        let map = fig.mark_map().unwrap();
        let ev = InteractionEvent {
            figure_id: "f1".into(),
            gesture,
            at: fixed_time(),
        };
        g.bench_function(format!("{chart:?}/{kind:?}"), |b| {
            b.iter(|| interaction_to_predicate(&ev, &map, &fig.visualization, &fig.data).unwrap())
        });
    }
    g.finish();
}

fn coordination(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let catalog = random_catalog(&mut rng, 5_000);
    let trial = (0..100).find_map(|_| coordination_trial(&mut rng, &catalog)).expect("trial");
    let gesture = (0..100).find_map(|_| propagating_gesture(&mut rng, &trial)).expect("gesture");
    c.bench_function("propagate", |b| {
        b.iter(|| propagate(&trial.schema, &trial.source, &trial.target, &gesture, &catalog, fixed_time()).unwrap())
    });
}

fn ledger(c: &mut Criterion) {
    c.bench_function("ledger_workout_1000_ops", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(4),
            |mut rng| ledger_workout(&mut rng, 1_000, 1_000).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn turns(c: &mut Criterion) {
    let catalog = demo_catalog(DemoSeeds::default()).unwrap();
    c.bench_function("template_turn", |b| {
        b.iter_batched(
            || {
                let mut ws = Workspace::new(catalog.clone());
                let sid = ws.create_session(SessionConfig::default()).unwrap();
                (ws, sid)
            },
            |(mut ws, sid)| {
                let req = MessageRequest {
                    text: Some("plot mean temp by month for Florida as a line chart".into()),
                    ..Default::default()
                };
                ws.post_message(&sid, req, &mut |_| {}).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = engine, gestures, coordination, ledger, turns
}
criterion_main!(benches);

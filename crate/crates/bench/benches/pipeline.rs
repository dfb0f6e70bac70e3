use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kpi2kvi_bench::case;
use kpi2kvi_core::agents::{Exhaustion, ScriptedProvider};
use kpi2kvi_core::calculus::{brute_force_range, eval_interval, parse_formula, Interval, IntervalBindings};
use kpi2kvi_core::eval::{run_case, RunSettings};
use kpi2kvi_core::orchestrator::{create_session_with_id, handle_user_turn, Workflow};
use kpi2kvi_core::taxonomy::fixture_taxonomy;

fn bindings(pairs: &[(&str, f64, f64)]) -> IntervalBindings {
    pairs.iter().map(|(s, lo, hi)| (s.to_string(), Interval::new(*lo, *hi).unwrap())).collect()
}

fn calculus(c: &mut Criterion) {
    let f = parse_formula("min(100 * A_p / N_p, 100 * (r_s - 1) / 4)").unwrap();
    let b = bindings(&[("A_p", 7.0, 9.0), ("N_p", 10.0, 10.0), ("r_s", 3.8, 4.4)]);
    c.bench_function("eval_interval", |bench| bench.iter(|| eval_interval(black_box(&f), black_box(&b))));
    c.bench_function("brute_force_range/200", |bench| bench.iter(|| brute_force_range(black_box(&f), &b, 200)));
    let repeated = parse_formula("x * (10 - x) + y / (1 + y)").unwrap();
    let b2 = bindings(&[("x", 2.0, 8.0), ("y", 0.5, 3.0)]);
    c.bench_function("brute_force_range/repeated/200", |bench| {
        bench.iter(|| brute_force_range(black_box(&repeated), &b2, 200))
    });
}

fn orchestrator(c: &mut Criterion) {
    let (spec, pb) = case("telemedicine");
    let provider = ScriptedProvider::new(&pb, Exhaustion::Fail).unwrap();
    let wf = Workflow::fixture();
    c.bench_function("replay/telemedicine", |bench| {
        bench.iter(|| {
            let mut s = create_session_with_id("bench", Some(&spec.description));
            for m in &spec.messages {
                black_box(handle_user_turn(&mut s, m, &provider, &wf));
            }
            s
        })
    });
}

fn harness(c: &mut Criterion) {
    let (spec, pb) = case("triage-governance");
    let tax = fixture_taxonomy();
    let settings = RunSettings::default();
    for v in [1u8, 4] {
        c.bench_function(&format!("run_case/triage-governance/v{v}"), |bench| {
            bench.iter(|| run_case(&spec, &pb, &tax, v, 0.5, 3, &settings))
        });
    }
}

criterion_group!(benches, calculus, orchestrator, harness);
criterion_main!(benches);

//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p kpi2kvi-core --test acceptance`.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use kpi2kvi_core::agents::{kvi_result_key, AgentName, Exhaustion, ScriptedProvider};
use kpi2kvi_core::calculus::{
    brute_force_range, eval_interval, verify_result, BinaryOp, FormulaExpr, Func, Interval, IntervalBindings, KviResult,
};
use kpi2kvi_core::eval::{
    compute_f1, compute_instability, compute_success_rate, load_cases, run_point, summarize, CaseSpec, RunRecord,
    RunSettings, SweepConfig,
};
use kpi2kvi_core::orchestrator::{create_session_with_id, handle_user_turn, SessionState, Workflow};
use kpi2kvi_core::taxonomy::{degrade_taxonomy, fixture_taxonomy, lookup_codes, DegradationSpec};
use kpi2kvi_core::agents::Playbook;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn cases() -> Vec<(CaseSpec, Playbook)> {
    load_cases(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/cases")).expect("fixture cases load")
}

fn case(id: &str) -> (CaseSpec, Playbook) {
    cases().into_iter().find(|(c, _)| c.case_id == id).expect("case present")
}

/// Replays a case's messages through a fresh session; returns the session
/// and the SSE frames in order.
fn replay(case: &CaseSpec, playbook: &Playbook, wf: &Workflow) -> (SessionState, Vec<String>) {
    let provider = ScriptedProvider::new(playbook, Exhaustion::Fail).unwrap();
    let mut s = create_session_with_id(format!("{}-golden", case.case_id), Some(&case.description));
    let mut frames = Vec::new();
    for m in &case.messages {
        for e in handle_user_turn(&mut s, m, &provider, wf) {
            frames.push(e.to_sse(&s.session_id));
        }
    }
    (s, frames)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn worked_example() -> Check {
    let start = Instant::now();
    let (c, pb) = case("telemedicine");
    let (s, _) = replay(&c, &pb, &Workflow::fixture());
    let elapsed = start.elapsed();
    // Expected bounds from the worked example: A_p in [7, 9] (point 8) of
    // N_p = 10 patients, r_s in [3.8, 4.4] on a 1..5 scale.
    let want = [("PUC-UPCA", 70.0, 80.0, 90.0), ("RPS-DDSS", 70.0, 77.5, 85.0)];
    let mut got = Vec::new();
    for (code, lo, exact, hi) in want {
        let v = s.artifacts.get(&kvi_result_key(code)).ok_or_else(|| format!("no result for {code}"))?;
        let r: KviResult = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        ensure(close(r.min, lo) && close(r.exact, exact) && close(r.max, hi) && r.unit == "%", || {
            format!("{code}: got [{}, {}, {}] {}", r.min, r.exact, r.max, r.unit)
        })?;
        got.push(format!("{code}={}[{},{}]", r.exact, r.min, r.max));
    }
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{} in {elapsed:.2?}", got.join(" ")))
}

const SYMBOLS: [&str; 4] = ["a", "b", "c", "d"];

/// Divisors are strictly positive: a positive constant, a symbol (every box
/// is positive), or a sum of two such.
fn positive(rng: &mut ChaCha8Rng, nsym: usize, depth: usize) -> FormulaExpr {
    let leaf = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            FormulaExpr::symbol(SYMBOLS[rng.random_range(0..nsym)])
        } else {
            FormulaExpr::number(rng.random_range(1..=9) as f64)
        }
    };
    if depth >= 1 && rng.random_bool(0.3) {
        let a = leaf(rng);
        FormulaExpr::binary(BinaryOp::Add, a, leaf(rng))
    } else {
        leaf(rng)
    }
}

fn formula(rng: &mut ChaCha8Rng, nsym: usize, depth: usize) -> FormulaExpr {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.6) {
            FormulaExpr::symbol(SYMBOLS[rng.random_range(0..nsym)])
        } else {
            FormulaExpr::number(rng.random_range(-9..=9) as f64)
        };
    }
    let d = depth - 1;
    match rng.random_range(0..8) {
        0 => FormulaExpr::binary(BinaryOp::Add, formula(rng, nsym, d), formula(rng, nsym, d)),
        1 => FormulaExpr::binary(BinaryOp::Sub, formula(rng, nsym, d), formula(rng, nsym, d)),
        2 => FormulaExpr::binary(BinaryOp::Mul, formula(rng, nsym, d), formula(rng, nsym, d)),
        3 => FormulaExpr::binary(BinaryOp::Div, formula(rng, nsym, d), positive(rng, nsym, d)),
        4 => FormulaExpr::neg(formula(rng, nsym, d)),
        5 => FormulaExpr::call(Func::Min, vec![formula(rng, nsym, d), formula(rng, nsym, d)]),
        6 => FormulaExpr::call(Func::Max, vec![formula(rng, nsym, d), formula(rng, nsym, d)]),
        _ => {
            let lo = rng.random_range(-20..=0) as f64;
            let hi = lo + rng.random_range(0..=30) as f64;
            FormulaExpr::call(Func::Clamp, vec![formula(rng, nsym, d), FormulaExpr::number(lo), FormulaExpr::number(hi)])
        }
    }
}

fn interval_soundness() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut total, mut single, mut skipped) = (0, 0, 0);
    while total < 1000 {
        let nsym = rng.random_range(1..=4);
        let f = formula(&mut rng, nsym, 5);
        // Keep the 200-step grid affordable: at most two repeated symbols.
        let occ = f.symbol_occurrences();
        if occ.values().filter(|n| **n > 1).count() > 2 {
            skipped += 1;
            continue;
        }
        let b: IntervalBindings = occ
            .keys()
            .map(|s| {
                let lo = rng.random_range(0.5..5.0);
                (s.clone(), Interval::new(lo, lo + rng.random_range(0.0..5.0)).unwrap())
            })
            .collect();
        let enclosure = eval_interval(&f, &b).map_err(|e| format!("{f}: {e}"))?;
        let oracle = brute_force_range(&f, &b, 200).map_err(|e| format!("{f}: {e}"))?;
        ensure(enclosure.encloses(&oracle, 1e-9), || format!("{f}: grid {oracle} not inside {enclosure}"))?;
        if occ.values().all(|n| *n == 1) {
            single += 1;
            let tol = |x: f64| 1e-9 * x.abs().max(1.0);
            ensure(
                (oracle.lo() - enclosure.lo()).abs() <= tol(enclosure.lo())
                    && (oracle.hi() - enclosure.hi()).abs() <= tol(enclosure.hi()),
                || format!("{f}: single-occurrence grid {oracle} differs from {enclosure}"),
            )?;
        }
        total += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{total} formulas ({single} single-occurrence, {skipped} resampled) in {elapsed:.2?}"))
}

fn degradation_contract() -> Check {
    let base = fixture_taxonomy();
    let n = base.categories.len();
    ensure(n >= 10, || format!("fixture has {n} categories"))?;
    // floor((1 - q) * 12) worked by hand
    let expected = [(0.0, 12), (0.3, 8), (0.7, 3), (1.0, 0)];
    ensure(n == 12, || format!("pinned counts assume 12 categories, fixture has {n}"))?;
    for seed in [0u64, 1, 7, 42] {
        for (q, removed) in expected {
            let spec = DegradationSpec::new(q, seed, false).unwrap();
            let a = degrade_taxonomy(&base, &spec);
            let b = degrade_taxonomy(&base, &spec);
            ensure(a == b, || format!("q={q} seed={seed}: not deterministic"))?;
            let got = n - a.categories.len();
            ensure(got == removed, || format!("q={q} seed={seed}: removed {got}, want {removed}"))?;
        }
        let identity = degrade_taxonomy(&base, &DegradationSpec::new(1.0, seed, false).unwrap());
        ensure(identity == base, || format!("q=1 seed={seed} is not the identity"))?;
        let empty = degrade_taxonomy(&base, &DegradationSpec::new(0.0, seed, false).unwrap());
        ensure(empty.categories.is_empty() && empty.definitions.is_empty(), || format!("q=0 seed={seed} not empty"))?;
    }
    Ok("removed 12/8/3/0 at q=0/0.3/0.7/1 for 4 seeds; deterministic, identity, empty".into())
}

fn determinism() -> Check {
    let (c, pb) = case("telemedicine");
    let wf = Workflow::fixture();
    let (s1, f1) = replay(&c, &pb, &wf);
    let (s2, f2) = replay(&c, &pb, &wf);
    let a1 = serde_json::to_string(&s1.artifacts).unwrap();
    let a2 = serde_json::to_string(&s2.artifacts).unwrap();
    ensure(a1 == a2, || "artifact stores differ".into())?;
    ensure(f1 == f2, || {
        let i = f1.iter().zip(&f2).position(|(a, b)| a != b).unwrap_or(f1.len().min(f2.len()));
        format!("frame {i} differs")
    })?;
    ensure(s1.stage_index == 9, || format!("golden run stopped at stage {}", s1.stage_index))?;
    Ok(format!("{} artifacts ({} bytes), {} frames identical", s1.artifacts.len(), a1.len(), f1.len()))
}

fn coverage_of_scope() -> Check {
    let wf = Workflow::fixture();
    let mut codes = 0;
    let all = cases();
    for (c, pb) in &all {
        let (s, _) = replay(c, pb, &wf);
        ensure(s.current_agent == AgentName::KviAdvisor, || format!("{} ended at stage {}", c.case_id, s.stage_index))?;
        let finalized: Vec<String> =
            serde_json::from_value(s.artifacts["finalized_categories"]["category_ids"].clone()).map_err(|e| e.to_string())?;
        for d in lookup_codes(&wf.taxonomy, &finalized).map_err(|e| e.to_string())? {
            let v = s.artifacts.get(&kvi_result_key(&d.code)).ok_or_else(|| format!("{}: no {}", c.case_id, d.code))?;
            let r: KviResult = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
            let flags = verify_result(&r, &d);
            ensure(flags.is_empty() && r.flags.is_empty(), || format!("{} {}: {flags:?} {:?}", c.case_id, d.code, r.flags))?;
            codes += 1;
        }
    }
    Ok(format!("{} cases, {codes} codes stored and verified clean", all.len()))
}

fn metric_mechanics() -> Check {
    let ids = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let f1 = compute_f1(&ids(&["a", "b", "c"]), &ids(&["a", "b", "d"]));
    // precision = recall = 2/3
    ensure((f1 - 2.0 / 3.0).abs() <= 1e-12, || format!("f1 = {f1}"))?;

    let record = |flags: usize, exact: Option<f64>| RunRecord {
        case_id: "m".into(),
        variant: 4,
        q: 1.0,
        seed: 0,
        predicted: vec![],
        results: exact
            .map(|e| KviResult {
                code: "PUC-UPCA".into(),
                exact: e,
                min: e,
                max: e,
                unit: "%".into(),
                rationale: "r".into(),
                cited_kpis: vec!["k".into()],
                flags: vec![],
            })
            .into_iter()
            .collect(),
        run_flags: vec![],
        flag_count: flags,
        wall_time_ms: 0.0,
    };
    let ten: Vec<_> = (0..10).map(|i| record(usize::from(i < 4), None)).collect();
    let sr = compute_success_rate(&ten).map_err(|e| e.to_string())?;
    ensure(sr == 0.6, || format!("success rate = {sr}"))?;

    let inst = compute_instability(&[record(0, Some(70.0)), record(0, Some(90.0))]).map_err(|e| e.to_string())?;
    ensure((inst - 200f64.sqrt()).abs() <= 1e-9, || format!("instability = {inst}"))?;
    Ok(format!("f1={f1:.12} success={sr} instability={inst:.9}"))
}

fn harness_trends() -> Check {
    let start = Instant::now();
    let tax = fixture_taxonomy();
    let qs: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let config = SweepConfig { variants: vec![1, 2, 3, 4], qs: qs.clone(), runs: 10, base_seed: 0, settings: RunSettings::default() };
    let mut strict_drops = 0;
    for (c, pb) in cases() {
        // grid[v - 1][qi] = (mean f1, success rate)
        let mut grid = vec![Vec::new(); 4];
        for &q in &qs {
            for v in 1..=4u8 {
                let row = summarize(&c, v, q, &run_point(&c, &pb, &tax, v, q, &config)).map_err(|e| e.to_string())?;
                grid[v as usize - 1].push((row.f1_mean, row.success_rate));
            }
        }
        for v in [1usize, 3, 4] {
            for w in grid[v - 1].windows(2) {
                // qs ascend, so the lower-q point comes first
                ensure(w[0].0 <= w[1].0 + 1e-12, || format!("{} v{v}: F1 rises as q drops ({} > {})", c.case_id, w[0].0, w[1].0))?;
                strict_drops += usize::from(w[0].0 < w[1].0);
            }
        }
        let f2: Vec<f64> = grid[1].iter().map(|p| p.0).collect();
        let spread = f2.iter().cloned().fold(f64::MIN, f64::max) - f2.iter().cloned().fold(f64::MAX, f64::min);
        ensure(spread < 0.05, || format!("{}: variant 2 F1 spread {spread}", c.case_id))?;
        for (qi, q) in qs.iter().enumerate() {
            let s4 = grid[3][qi].1;
            for v in 1..=3 {
                let s = grid[v - 1][qi].1;
                ensure(s4 >= s, || format!("{} q={q}: variant 4 success {s4} < variant {v} {s}", c.case_id))?;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    ensure(strict_drops > 0, || "F1 never moves with q; the sweep is degenerate".into())?;
    Ok(format!("7 cases x 10 q x 4 variants x 10 runs in {elapsed:.2?}; {strict_drops} strict F1 drops"))
}

fn main() {
    let checks: [Criterion; 7] = [
        ("worked-example fidelity", worked_example),
        ("interval soundness", interval_soundness),
        ("degradation contract", degradation_contract),
        ("state-machine determinism", determinism),
        ("coverage of scope", coverage_of_scope),
        ("metric mechanics", metric_mechanics),
        ("harness trends", harness_trends),
    ];
    let mut failed = BTreeSet::new();
    for (i, (name, f)) in checks.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL [{}] {name}: {why}", i + 1);
                failed.insert(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("acceptance failures: {failed:?}");
        std::process::exit(1);
    }
}

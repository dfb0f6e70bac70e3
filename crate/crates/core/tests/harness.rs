use std::path::PathBuf;

use kpi2kvi_core::agents::Playbook;
use kpi2kvi_core::eval::{
    compute_f1, load_cases, parse_q_range, run_case, sweep, to_csv, CaseSpec, Mode, NoiseModel, RunSettings, SweepConfig,
    VariantConfig, CSV_COLUMNS, RUN_FAILED,
};
use kpi2kvi_core::taxonomy::fixture_taxonomy;

fn cases() -> Vec<(CaseSpec, Playbook)> {
    load_cases(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/cases")).unwrap()
}

#[test]
fn exactly_four_variants() {
    let all = VariantConfig::all();
    assert_eq!(all.len(), 4);
    let v = |n| VariantConfig::numbered(n).unwrap();
    assert_eq!((v(1).mode, v(1).taxonomy_enabled, v(1).cot_enabled), (Mode::Monolithic, true, true));
    assert_eq!((v(2).mode, v(2).taxonomy_enabled, v(2).cot_enabled), (Mode::Staged, false, false));
    assert_eq!((v(3).mode, v(3).taxonomy_enabled, v(3).cot_enabled), (Mode::Staged, true, false));
    assert_eq!((v(4).mode, v(4).taxonomy_enabled, v(4).cot_enabled), (Mode::Staged, true, true));
    assert!(VariantConfig::numbered(0).is_none() && VariantConfig::numbered(5).is_none());
}

#[test]
fn golden_run_through_the_harness() {
    let tax = fixture_taxonomy();
    let (case, pb) = cases().into_iter().find(|(c, _)| c.case_id == "telemedicine").unwrap();
    let settings = RunSettings { noise: NoiseModel::off(), ..RunSettings::default() };
    let r = run_case(&case, &pb, &tax, 4, 1.0, 0, &settings);
    let get = |code: &str| r.results.iter().find(|x| x.code == code).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let u = get("PUC-UPCA");
    assert!(close(u.min, 70.0) && close(u.exact, 80.0) && close(u.max, 90.0));
    let d = get("RPS-DDSS");
    assert!(close(d.min, 70.0) && close(d.exact, 77.5) && close(d.max, 85.0));
    assert_eq!(r.flag_count, 0);
}

#[test]
fn sweeps_are_seeded_and_bounded() {
    let tax = fixture_taxonomy();
    let all = cases();
    let config = SweepConfig {
        variants: vec![1, 2, 3, 4],
        qs: parse_q_range("0.0:1.0:0.25").unwrap(),
        runs: 4,
        base_seed: 11,
        settings: RunSettings::default(),
    };
    let rows = sweep(&all, &tax, &config).unwrap();
    assert_eq!(rows.len(), all.len() * 5 * 4);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.f1_mean) && (0.0..=1.0).contains(&r.success_rate), "{r:?}");
        assert!(r.instability_mean >= 0.0 && r.f1_var >= 0.0 && r.instability_var >= 0.0);
    }
    let a = to_csv(&rows, &config);
    let b = to_csv(&sweep(&all, &tax, &config).unwrap(), &config);
    assert_eq!(a, b);
    assert!(a.lines().any(|l| l == CSV_COLUMNS));
    assert!(a.starts_with("# "));
    assert!(sweep(&all, &tax, &SweepConfig { runs: 0, ..config }).is_err());
}

#[test]
fn predictions_shrink_as_quality_drops() {
    let tax = fixture_taxonomy();
    let qs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let settings = RunSettings::default();
    for (case, pb) in cases() {
        for v in [1u8, 3, 4] {
            for seed in 0..6 {
                let sets: Vec<Vec<String>> = qs.iter().map(|q| run_case(&case, &pb, &tax, v, *q, seed, &settings).predicted).collect();
                for w in sets.windows(2) {
                    assert!(w[0].iter().all(|id| w[1].contains(id)), "{} v{v} s{seed}: {:?} vs {:?}", case.case_id, w[0], w[1]);
                }
            }
        }
    }
}

#[test]
fn full_noise_breaks_runs() {
    let tax = fixture_taxonomy();
    let settings = RunSettings { noise: NoiseModel::fixed(1.0), ..RunSettings::default() };
    for (case, pb) in cases() {
        let r = run_case(&case, &pb, &tax, 4, 1.0, 0, &settings);
        assert_eq!(r.run_flags, [RUN_FAILED], "{}", case.case_id);
        let m = run_case(&case, &pb, &tax, 1, 1.0, 0, &settings);
        assert_eq!(m.run_flags, [RUN_FAILED]);
        assert_eq!(compute_f1(&m.predicted, &case.gold_category_ids), 0.0);
    }
}

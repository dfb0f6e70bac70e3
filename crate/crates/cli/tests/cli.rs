use std::path::PathBuf;
use std::process::{Command, Output};

fn kpi2kvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpi2kvi")).args(args).output().unwrap()
}

fn cases_dir() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/cases").display().to_string()
}

#[test]
fn gen_cases_reproduces_committed_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let out = kpi2kvi(&["gen-cases", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 14);
    for name in names {
        let fresh = std::fs::read(dir.path().join(&name)).unwrap();
        let committed = std::fs::read(PathBuf::from(cases_dir()).join(&name)).unwrap();
        assert!(fresh == committed, "{name:?} differs");
    }
}

#[test]
fn eval_writes_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = kpi2kvi(&[
            "eval", "--cases", &cases_dir(), "--variants", "1,2,3,4", "--q", "0.0:1.0:0.5", "--runs", "3", "--seed", "7",
            "--out", path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(
        header,
        "case_id,variant,q,complexity_depth,kpis_per_kvi,category_count,runs,f1_mean,f1_var,success_rate,instability_mean,instability_var"
    );
    // 7 cases x 3 q values x 4 variants
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 7 * 3 * 4);
    assert!(text.lines().next().unwrap().starts_with("# "));
}

#[test]
fn eval_rejects_bad_arguments() {
    let out = kpi2kvi(&["eval", "--cases", &cases_dir(), "--q", "0:2:0.5"]);
    assert!(!out.status.success());
    let out = kpi2kvi(&["eval", "--cases", &cases_dir(), "--variants", "5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown variant 5"));
}

#[test]
fn replay_prints_frames_and_records_a_playbook() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.playbook.json");
    let out = kpi2kvi(&["replay", "--cases", &cases_dir(), "--case", "telemedicine", "--record", rec.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("event: "));
    assert!(text.ends_with("\n\n"));
    assert!(text.contains("\"key\":\"kvi_result:RPS-DDSS\""));
    assert_eq!(text.matches("event: done\n").count(), 7);

    // the recording replays to the same frames
    let replay_dir = dir.path().join("cases");
    std::fs::create_dir(&replay_dir).unwrap();
    std::fs::copy(PathBuf::from(cases_dir()).join("telemedicine.case.json"), replay_dir.join("telemedicine.case.json")).unwrap();
    std::fs::copy(&rec, replay_dir.join("telemedicine.playbook.json")).unwrap();
    let again = kpi2kvi(&["replay", "--cases", replay_dir.to_str().unwrap(), "--case", "telemedicine"]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn replay_refuses_the_monolithic_variant() {
    let out = kpi2kvi(&["replay", "--cases", &cases_dir(), "--case", "telemedicine", "--variant", "1"]);
    assert!(!out.status.success());
}

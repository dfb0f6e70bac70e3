//! Inputs shared by the benchmarks.

use std::path::PathBuf;

use kpi2kvi_core::agents::Playbook;
use kpi2kvi_core::eval::{load_cases, CaseSpec};

pub fn cases() -> Vec<(CaseSpec, Playbook)> {
    load_cases(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/cases")).expect("fixture cases")
}

pub fn case(id: &str) -> (CaseSpec, Playbook) {
    cases().into_iter().find(|(c, _)| c.case_id == id).expect("known case id")
}

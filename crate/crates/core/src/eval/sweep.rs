use std::fmt::Write as _;

use super::case::CaseSpec;
use super::metrics::{compute_f1, compute_success_rate, instability_per_code, mean, sample_variance};
use super::run::{run_case, RunRecord, RunSettings};
use super::EvalError;
use crate::agents::Playbook;
use crate::taxonomy::Taxonomy;

pub const CSV_COLUMNS: &str =
    "case_id,variant,q,complexity_depth,kpis_per_kvi,category_count,runs,f1_mean,f1_var,success_rate,instability_mean,instability_var";

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub variants: Vec<u8>,
    pub qs: Vec<f64>,
    pub runs: usize,
    pub base_seed: u64,
    pub settings: RunSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub case_id: String,
    pub variant: u8,
    pub q: f64,
    pub complexity_depth: usize,
    pub kpis_per_kvi: usize,
    pub category_count: usize,
    pub runs: usize,
    pub f1_mean: f64,
    pub f1_var: f64,
    pub success_rate: f64,
    pub instability_mean: f64,
    pub instability_var: f64,
}

/// `start:end:step`, inclusive, rounded to 1e-9 so that 0.1 steps print
/// cleanly.
pub fn parse_q_range(s: &str) -> Result<Vec<f64>, EvalError> {
    let bad = || EvalError::Config(format!("bad q range `{s}`, expected start:end:step or a comma list"));
    let round = |x: f64| (x * 1e9).round() / 1e9;
    let parts: Vec<&str> = s.split(':').collect();
    let qs: Vec<f64> = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step): (f64, f64, f64) =
                (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?, step.parse().map_err(|_| bad())?);
            if step.is_nan() || step <= 0.0 || b < a {
                return Err(bad());
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| round(a + i as f64 * step)).collect()
        }
        [list] => list.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?,
        _ => return Err(bad()),
    };
    if qs.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(bad());
    }
    Ok(qs)
}

/// All runs for one axis point, seeds `base_seed + i`.
pub fn run_point(
    case: &CaseSpec,
    playbook: &Playbook,
    taxonomy: &Taxonomy,
    variant: u8,
    q: f64,
    config: &SweepConfig,
) -> Vec<RunRecord> {
    (0..config.runs)
        .map(|i| run_case(case, playbook, taxonomy, variant, q, config.base_seed + i as u64, &config.settings))
        .collect()
}

pub fn summarize(case: &CaseSpec, variant: u8, q: f64, records: &[RunRecord]) -> Result<SweepRow, EvalError> {
    let f1: Vec<f64> = records.iter().map(|r| compute_f1(&r.predicted, &case.gold_category_ids)).collect();
    let per_code: Vec<f64> = if records.len() >= 2 {
        instability_per_code(records)?.into_values().collect()
    } else {
        Vec::new()
    };
    Ok(SweepRow {
        case_id: case.case_id.clone(),
        variant,
        q,
        complexity_depth: case.complexity.formula_depth,
        kpis_per_kvi: case.complexity.kpis_per_kvi,
        category_count: case.category_count,
        runs: records.len(),
        f1_mean: mean(&f1),
        f1_var: sample_variance(&f1),
        success_rate: compute_success_rate(records)?,
        instability_mean: mean(&per_code),
        instability_var: sample_variance(&per_code),
    })
}

/// One row per (case, q, variant), in that nesting order.
pub fn sweep(cases: &[(CaseSpec, Playbook)], taxonomy: &Taxonomy, config: &SweepConfig) -> Result<Vec<SweepRow>, EvalError> {
    if config.runs == 0 {
        return Err(EvalError::Config("runs must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for (case, playbook) in cases {
        for &q in &config.qs {
            for &v in &config.variants {
                let records = run_point(case, playbook, taxonomy, v, q, config);
                rows.push(summarize(case, v, q, &records)?);
            }
        }
    }
    Ok(rows)
}

/// CSV with `#` metadata lines ahead of the header.
pub fn to_csv(rows: &[SweepRow], config: &SweepConfig) -> String {
    let n = &config.settings.noise;
    let mut out = String::new();
    out.push_str("# synthetic noise model over scripted playbooks; absolute values are not comparable to live-model curves\n");
    let _ = writeln!(
        out,
        "# p_err = min({}, {}*(1-q) + {}*depth); q = 0 for the no-taxonomy variant; runs use seeds {}..{}",
        n.cap,
        n.alpha,
        n.beta,
        config.base_seed,
        config.base_seed + config.runs as u64
    );
    out.push_str("# repetition uses seeds and noise in place of prompt paraphrases; *_var columns are sample variances\n");
    out.push_str(CSV_COLUMNS);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.case_id,
            r.variant,
            r.q,
            r.complexity_depth,
            r.kpis_per_kvi,
            r.category_count,
            r.runs,
            r.f1_mean,
            r.f1_var,
            r.success_rate,
            r.instability_mean,
            r.instability_var
        );
    }
    out
}

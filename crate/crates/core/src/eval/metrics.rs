use std::collections::{BTreeMap, BTreeSet};

use super::run::RunRecord;
use super::EvalError;

/// Harmonic mean of precision and recall; 0 when nothing is predicted.
pub fn compute_f1(predicted: &[String], gold: &[String]) -> f64 {
    let p: BTreeSet<&str> = predicted.iter().map(String::as_str).collect();
    let g: BTreeSet<&str> = gold.iter().map(String::as_str).collect();
    let hits = p.intersection(&g).count() as f64;
    if p.is_empty() || g.is_empty() || hits == 0.0 {
        return 0.0;
    }
    let precision = hits / p.len() as f64;
    let recall = hits / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn compute_success_rate(records: &[RunRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Arity { needed: 1, got: 0 });
    }
    Ok(records.iter().filter(|r| r.flag_count == 0).count() as f64 / records.len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1); 0 for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Per-code sample standard deviation of unflagged exact values. Codes with
/// fewer than two usable values get the largest deviation seen.
pub fn instability_per_code(records: &[RunRecord]) -> Result<BTreeMap<String, f64>, EvalError> {
    if records.len() < 2 {
        return Err(EvalError::Arity { needed: 2, got: records.len() });
    }
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in records {
        for r in &rec.results {
            let slot = values.entry(r.code.clone()).or_default();
            if r.flags.is_empty() {
                slot.push(r.exact);
            }
        }
    }
    let devs: BTreeMap<String, Option<f64>> = values
        .into_iter()
        .map(|(code, xs)| {
            let d = (xs.len() >= 2).then(|| sample_variance(&xs).sqrt());
            (code, d)
        })
        .collect();
    let worst = devs.values().flatten().fold(0.0_f64, |a, b| a.max(*b));
    Ok(devs.into_iter().map(|(c, d)| (c, d.unwrap_or(worst))).collect())
}

/// Mean over codes of [`instability_per_code`].
pub fn compute_instability(records: &[RunRecord]) -> Result<f64, EvalError> {
    let per_code: Vec<f64> = instability_per_code(records)?.into_values().collect();
    Ok(mean(&per_code))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::KviResult;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn record(exact: &[(&str, f64, bool)], flags: usize) -> RunRecord {
        RunRecord {
            case_id: "c".into(),
            variant: 4,
            q: 1.0,
            seed: 0,
            predicted: vec![],
            results: exact
                .iter()
                .map(|(code, e, flagged)| KviResult {
                    code: code.to_string(),
                    exact: *e,
                    min: *e,
                    max: *e,
                    unit: "%".into(),
                    rationale: "r".into(),
                    cited_kpis: vec!["k".into()],
                    flags: if *flagged { vec!["bounds-order".into()] } else { vec![] },
                })
                .collect(),
            run_flags: vec![],
            flag_count: flags,
            wall_time_ms: 0.0,
        }
    }

    #[test]
    fn f1_cases() {
        assert_eq!(compute_f1(&ids(&["user-trust"]), &ids(&["user-trust"])), 1.0);
        assert_eq!(compute_f1(&ids(&["a"]), &ids(&["b"])), 0.0);
        assert_eq!(compute_f1(&[], &ids(&["b"])), 0.0);
        let f = compute_f1(&ids(&["a", "b", "c"]), &ids(&["a", "b", "d"]));
        // P = R = 2/3, so F1 = 2/3
        assert!((f - 2.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn success_rates() {
        let clean: Vec<_> = (0..10).map(|_| record(&[], 0)).collect();
        assert_eq!(compute_success_rate(&clean).unwrap(), 1.0);
        let mixed: Vec<_> = (0..10).map(|i| record(&[], usize::from(i < 4))).collect();
        assert_eq!(compute_success_rate(&mixed).unwrap(), 0.6);
        let all: Vec<_> = (0..3).map(|_| record(&[], 2)).collect();
        assert_eq!(compute_success_rate(&all).unwrap(), 0.0);
        assert!(compute_success_rate(&[]).is_err());
    }

    #[test]
    fn instability_cases() {
        let same: Vec<_> = (0..10).map(|_| record(&[("PUC-UPCA", 80.0, false)], 0)).collect();
        assert_eq!(compute_instability(&same).unwrap(), 0.0);

        let two = [record(&[("X-Y", 70.0, false)], 0), record(&[("X-Y", 90.0, false)], 0)];
        let expected = (((70.0_f64 - 80.0).powi(2) + (90.0_f64 - 80.0).powi(2)) / 1.0).sqrt();
        assert!((compute_instability(&two).unwrap() - expected).abs() <= 1e-9);

        // B-B has no usable value and inherits A-A's deviation
        let recs = [
            record(&[("A-A", 70.0, false), ("B-B", 1.0, true)], 1),
            record(&[("A-A", 90.0, false), ("B-B", 2.0, true)], 1),
        ];
        let per = instability_per_code(&recs).unwrap();
        assert_eq!(per["A-A"], per["B-B"]);
        assert!(compute_instability(&recs[..1]).is_err());
    }
}

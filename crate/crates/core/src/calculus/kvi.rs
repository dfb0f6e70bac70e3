use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::eval::{eval_interval, eval_point, EvalError, IntervalBindings, PointBindings};
use super::formula::{parse_formula, FormulaError};
use crate::evidence::{KpiTable, Provenance};
use crate::taxonomy::KviDefinition;

/// Per-KVI calculation artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KviResult {
    pub code: String,
    pub exact: f64,
    pub min: f64,
    pub max: f64,
    pub unit: String,
    pub rationale: String,
    #[serde(default)]
    pub cited_kpis: Vec<String>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl KviResult {
    /// Result standing in for a calculation that could not be completed.
    pub fn placeholder(defn: &KviDefinition, flag: &str, reason: &str) -> KviResult {
        KviResult {
            code: defn.code.clone(),
            exact: 0.0,
            min: 0.0,
            max: 0.0,
            unit: defn.unit.clone(),
            rationale: format!("{} was not computed: {reason}", defn.code),
            cited_kpis: Vec::new(),
            flags: vec![flag.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KviError {
    #[error("{code}: formula does not parse: {source}")]
    Formula { code: String, source: FormulaError },
    #[error("{code}: no KPI in the table provides symbol `{symbol}`")]
    MissingSymbol { code: String, symbol: String },
    #[error("{code}: {source}")]
    Eval { code: String, source: EvalError },
}

/// Evaluates `defn` against the evidence table.
///
/// Bounds come from interval evaluation over the KPI ranges; the exact value
/// evaluates the formula at each KPI's nominal value (the interval midpoint).
pub fn compute_kvi(defn: &KviDefinition, table: &KpiTable) -> Result<KviResult, KviError> {
    let code = defn.code.clone();
    let formula = parse_formula(&defn.formula).map_err(|source| KviError::Formula { code: code.clone(), source })?;

    let mut boxes = IntervalBindings::new();
    let mut nominal = PointBindings::new();
    let mut rows = Vec::with_capacity(defn.kpi_symbols.len());
    for symbol in &defn.kpi_symbols {
        let row = table
            .row_for_symbol(symbol)
            .ok_or_else(|| KviError::MissingSymbol { code: code.clone(), symbol: symbol.clone() })?;
        let range = row.value.value.as_interval().map_err(|_| KviError::MissingSymbol {
            code: code.clone(),
            symbol: symbol.clone(),
        })?;
        boxes.insert(symbol.clone(), range);
        nominal.insert(symbol.clone(), row.value.value.nominal());
        rows.push(row);
    }

    let eval_err = |source| KviError::Eval { code: code.clone(), source };
    let bounds = eval_interval(&formula, &boxes).map_err(eval_err)?;
    let exact = eval_point(&formula, &nominal).map_err(eval_err)?;

    let mut rationale = format!("{} ({}) = {}, in {}.", defn.code, defn.title, formula, defn.unit);
    if !rows.is_empty() {
        rationale.push_str(" Evidence:");
        for (i, row) in rows.iter().enumerate() {
            let sep = if i == 0 { " " } else { "; " };
            let origin = match row.value.provenance {
                Provenance::UserProvided => "user-provided observation",
                Provenance::SystemDecided => "system-decided estimate, treated as an assumption",
            };
            let _ = write!(
                rationale,
                "{sep}{} from {} = {} {} ({origin})",
                row.kpi.symbol, row.kpi.id, row.value.value, row.value.unit
            );
        }
        rationale.push('.');
    }
    let _ = write!(
        rationale,
        " Exact value {exact} uses nominal inputs (interval midpoints); bounds [{}, {}] follow from interval arithmetic over the KPI ranges.",
        bounds.lo(),
        bounds.hi()
    );

    let mut result = KviResult {
        code: defn.code.clone(),
        exact,
        min: bounds.lo(),
        max: bounds.hi(),
        unit: defn.unit.clone(),
        rationale,
        cited_kpis: rows.iter().map(|r| r.kpi.id.clone()).collect(),
        flags: Vec::new(),
    };
    result.flags = verify_result(&result, defn);
    Ok(result)
}

/// Consistency flags for a result; empty when the result is clean.
pub fn verify_result(r: &KviResult, defn: &KviDefinition) -> Vec<String> {
    let mut flags = Vec::new();
    // written so that NaN fails the check
    if !(r.min <= r.exact && r.exact <= r.max) {
        flags.push("bounds-order".to_string());
    }
    if r.unit != defn.unit {
        flags.push("unit-mismatch".to_string());
    }
    if r.unit == "%" && !(0.0 <= r.min && r.max <= 100.0) {
        flags.push("percent-range".to_string());
    }
    if r.rationale.trim().is_empty() {
        flags.push("empty-rationale".to_string());
    }
    if r.cited_kpis.is_empty() && !defn.kpi_symbols.is_empty() {
        flags.push("no-citations".to_string());
    }
    flags
}

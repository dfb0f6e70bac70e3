//! KPI evidence: measurement plans, collected values with provenance, and the
//! structured KPI table that feeds every KVI calculation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{Interval, IntervalBindings};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvidenceError {
    #[error("could not read a value from {0:?}")]
    Unrecognized(String),
    #[error("interval bounds reversed in {0:?}")]
    ReversedInterval(String),
    #[error("cannot convert unit `{from}` to `{to}`")]
    Unconvertible { from: String, to: String },
    #[error("value for unknown KPI `{0}`")]
    UnknownKpi(String),
    #[error("KPI table incomplete, missing: {}", .0.join(", "))]
    Incomplete(Vec<String>),
    #[error("malformed KPI table: {0}")]
    Malformed(String),
}

/// One measurable quantity in a KPI plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kpi {
    pub id: String,
    pub symbol: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub unit: String,
}

static SYMBOL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap());

impl Kpi {
    /// Conventional id for a symbol: `A_p` becomes `kpi-a-p`.
    pub fn id_for_symbol(symbol: &str) -> String {
        format!("kpi-{}", symbol.to_lowercase().replace('_', "-"))
    }

    pub fn symbol_is_valid(&self) -> bool {
        SYMBOL_RE.is_match(&self.symbol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "user-provided")]
    UserProvided,
    #[serde(rename = "system-decided")]
    SystemDecided,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::UserProvided => "user-provided",
            Provenance::SystemDecided => "system-decided",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Quantity {
    Point { point: f64 },
    Interval { lo: f64, hi: f64 },
}

impl Quantity {
    pub fn from_interval(i: Interval) -> Self {
        Quantity::Interval { lo: i.lo(), hi: i.hi() }
    }

    pub fn as_interval(&self) -> Result<Interval, EvidenceError> {
        match *self {
            Quantity::Point { point } => {
                Interval::new(point, point).map_err(|e| EvidenceError::Malformed(e.to_string()))
            }
            Quantity::Interval { lo, hi } => Interval::new(lo, hi).map_err(|e| EvidenceError::Malformed(e.to_string())),
        }
    }

    /// Point value, or the interval midpoint.
    pub fn nominal(&self) -> f64 {
        match *self {
            Quantity::Point { point } => point,
            Quantity::Interval { lo, hi } => lo + (hi - lo) / 2.0,
        }
    }

    fn scaled(&self, factor: f64) -> Quantity {
        match *self {
            Quantity::Point { point } => Quantity::Point { point: point * factor },
            Quantity::Interval { lo, hi } => {
                let (a, b) = (lo * factor, hi * factor);
                Quantity::Interval { lo: a.min(b), hi: a.max(b) }
            }
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Point { point } => write!(f, "{point}"),
            Quantity::Interval { lo, hi } => write!(f, "[{lo}, {hi}]"),
        }
    }
}

/// A collected KPI value with its origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpiValue {
    pub kpi_id: String,
    pub value: Quantity,
    pub unit: String,
    pub provenance: Provenance,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedKind {
    Point(f64),
    Interval(Interval),
    Delegate,
}

/// Result of reading one user or estimator utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedValue {
    pub kind: ParsedKind,
    pub unit_hint: Option<String>,
}

impl ParsedValue {
    pub fn point(v: f64) -> Self {
        ParsedValue { kind: ParsedKind::Point(v), unit_hint: None }
    }

    pub fn interval(i: Interval) -> Self {
        ParsedValue { kind: ParsedKind::Interval(i), unit_hint: None }
    }

    pub fn delegate() -> Self {
        ParsedValue { kind: ParsedKind::Delegate, unit_hint: None }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit_hint = Some(unit.into());
        self
    }

    pub fn quantity(&self) -> Option<Quantity> {
        match &self.kind {
            ParsedKind::Point(v) => Some(Quantity::Point { point: *v }),
            ParsedKind::Interval(i) => Some(Quantity::from_interval(*i)),
            ParsedKind::Delegate => None,
        }
    }

    /// Canonical utterance; parses back to an equal value.
    pub fn render(&self) -> String {
        let body = match &self.kind {
            ParsedKind::Point(v) => v.to_string(),
            ParsedKind::Interval(i) => format!("[{}, {}]", i.lo(), i.hi()),
            ParsedKind::Delegate => return "please estimate it".to_string(),
        };
        match &self.unit_hint {
            Some(u) => format!("{body} {u}"),
            None => body,
        }
    }
}

const DELEGATION_PHRASES: [&str; 4] = ["estimate it", "delegate", "unknown", "you decide"];

const NUM: &str = r"(-?\d+(?:\.\d+)?)";
const UNIT: &str = r"(?:\s*(%|[A-Za-z][A-Za-z0-9/_]*))?";

static BRACKET_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^\[\s*{NUM}\s*,\s*{NUM}\s*\]{UNIT}$")).unwrap());
static BETWEEN_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)^between\s+{NUM}\s+and\s+{NUM}{UNIT}$")).unwrap());
static TO_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"(?i)^{NUM}\s+to\s+{NUM}{UNIT}$")).unwrap());
static DASH_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"^{NUM}\s*-\s*{NUM}{UNIT}$")).unwrap());
static POINT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"^{NUM}{UNIT}$")).unwrap());
static FILLER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:about|approximately|approx\.?|around|roughly|~)\s*").unwrap());

/// Reads a KPI value from free text: a decimal, an interval (`[7, 9]`,
/// `7-9`, `7 to 9`, `between 7 and 9`) with an optional trailing unit, or a
/// request to delegate the value to the system.
pub fn parse_value_utterance(text: &str) -> Result<ParsedValue, EvidenceError> {
    let lowered = text.to_lowercase();
    if DELEGATION_PHRASES.iter().any(|p| lowered.contains(p)) {
        return Ok(ParsedValue::delegate());
    }
    let trimmed = text.trim().trim_end_matches(['.', '!']).trim_end();
    let body = FILLER_RE.replace(trimmed, "");
    let body = body.as_ref();

    let unit_of = |caps: &regex::Captures<'_>, idx: usize| caps.get(idx).map(|m| m.as_str().to_string());
    let num = |s: &str| s.parse::<f64>().map_err(|_| EvidenceError::Unrecognized(text.to_string()));

    for re in [&*BRACKET_RE, &*BETWEEN_RE, &*TO_RE, &*DASH_RE] {
        if let Some(caps) = re.captures(body) {
            let lo = num(&caps[1])?;
            let hi = num(&caps[2])?;
            let interval = Interval::new(lo, hi).map_err(|_| EvidenceError::ReversedInterval(text.to_string()))?;
            return Ok(ParsedValue { kind: ParsedKind::Interval(interval), unit_hint: unit_of(&caps, 3) });
        }
    }
    if let Some(caps) = POINT_RE.captures(body) {
        return Ok(ParsedValue { kind: ParsedKind::Point(num(&caps[1])?), unit_hint: unit_of(&caps, 2) });
    }
    Err(EvidenceError::Unrecognized(text.to_string()))
}

fn canonical_unit(u: &str) -> &str {
    match u {
        "percent" | "pct" => "%",
        "sec" | "secs" | "second" | "seconds" => "s",
        "msec" | "millisecond" | "milliseconds" => "ms",
        "counts" => "count",
        other => other,
    }
}

/// Multiplicative factor taking a value in `from` to `to`.
fn conversion_factor(from: &str, to: &str) -> Option<f64> {
    let (from, to) = (canonical_unit(from), canonical_unit(to));
    if from == to {
        return Some(1.0);
    }
    match (from, to) {
        ("s", "ms") => Some(1000.0),
        ("ms", "s") => Some(0.001),
        ("fraction", "%") => Some(100.0),
        ("%", "fraction") => Some(0.01),
        _ => None,
    }
}

/// Expresses `v` in `declared_unit`. Delegations pass through unchanged.
pub fn normalize_unit(v: &ParsedValue, declared_unit: &str) -> Result<ParsedValue, EvidenceError> {
    let factor = match &v.unit_hint {
        None => 1.0,
        Some(hint) => conversion_factor(hint, declared_unit)
            .ok_or_else(|| EvidenceError::Unconvertible { from: hint.clone(), to: declared_unit.to_string() })?,
    };
    let kind = match &v.kind {
        ParsedKind::Delegate => return Ok(v.clone()),
        ParsedKind::Point(p) => ParsedKind::Point(p * factor),
        ParsedKind::Interval(i) => {
            let (a, b) = (i.lo() * factor, i.hi() * factor);
            ParsedKind::Interval(Interval::new(a.min(b), a.max(b)).map_err(|e| EvidenceError::Malformed(e.to_string()))?)
        }
    };
    Ok(ParsedValue { kind, unit_hint: Some(declared_unit.to_string()) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpiRow {
    pub kpi: Kpi,
    pub value: KpiValue,
}

/// Structured evidence table: rows in plan order, at most one per KPI.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiTable {
    pub rows: Vec<KpiRow>,
    pub complete: bool,
    /// Planned KPI ids without a value. Not part of the wire form.
    pub missing: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRow {
    kpi_id: String,
    symbol: String,
    unit: String,
    value: Quantity,
    provenance: Provenance,
    raw_text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTable {
    complete: bool,
    rows: Vec<WireRow>,
}

impl KpiTable {
    pub fn row_for_symbol(&self, symbol: &str) -> Option<&KpiRow> {
        self.rows.iter().find(|r| r.kpi.symbol == symbol)
    }

    pub fn system_decided_count(&self) -> usize {
        self.rows.iter().filter(|r| r.value.provenance == Provenance::SystemDecided).count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let wire = WireTable {
            complete: self.complete,
            rows: self
                .rows
                .iter()
                .map(|r| WireRow {
                    kpi_id: r.kpi.id.clone(),
                    symbol: r.kpi.symbol.clone(),
                    unit: r.value.unit.clone(),
                    value: r.value.value,
                    provenance: r.value.provenance,
                    raw_text: r.value.raw_text.clone(),
                })
                .collect(),
        };
        serde_json::to_value(wire).expect("table serializes")
    }

    /// Rebuilds a table from its wire form against `plan`, re-applying the
    /// table invariants (plan order, known ids, units, completeness).
    pub fn from_json(value: &serde_json::Value, plan: &[Kpi]) -> Result<KpiTable, EvidenceError> {
        let mut values = Vec::new();
        for (symbol, v) in parse_table_rows(value)? {
            if let Some(k) = plan.iter().find(|k| k.id == v.kpi_id) {
                if k.symbol != symbol {
                    return Err(EvidenceError::Malformed(format!(
                        "row {} has symbol {symbol} but the plan says {}",
                        v.kpi_id, k.symbol
                    )));
                }
            }
            values.push(v);
        }
        build_kpi_table(plan, &values)
    }
}

/// Checks the wire form of a table and returns `(symbol, value)` per row.
pub fn parse_table_rows(value: &serde_json::Value) -> Result<Vec<(String, KpiValue)>, EvidenceError> {
    let wire: WireTable = serde_json::from_value(value.clone()).map_err(|e| EvidenceError::Malformed(e.to_string()))?;
    wire.rows
        .into_iter()
        .map(|r| {
            if let Quantity::Interval { lo, hi } = r.value {
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return Err(EvidenceError::ReversedInterval(r.raw_text));
                }
            }
            Ok((
                r.symbol,
                KpiValue { kpi_id: r.kpi_id, value: r.value, unit: r.unit, provenance: r.provenance, raw_text: r.raw_text },
            ))
        })
        .collect()
}

/// Assembles the evidence table. Later values for the same KPI replace
/// earlier ones; the replaced utterance is kept in `raw_text`.
pub fn build_kpi_table(plan: &[Kpi], collected: &[KpiValue]) -> Result<KpiTable, EvidenceError> {
    let by_id: HashMap<&str, &Kpi> = plan.iter().map(|k| (k.id.as_str(), k)).collect();
    let mut latest: BTreeMap<&str, KpiValue> = BTreeMap::new();
    for v in collected {
        let kpi = by_id.get(v.kpi_id.as_str()).ok_or_else(|| EvidenceError::UnknownKpi(v.kpi_id.clone()))?;
        let mut v = v.clone();
        if v.unit != kpi.unit {
            let factor = conversion_factor(&v.unit, &kpi.unit)
                .ok_or_else(|| EvidenceError::Unconvertible { from: v.unit.clone(), to: kpi.unit.clone() })?;
            v.value = v.value.scaled(factor);
            v.unit = kpi.unit.clone();
        }
        if let Some(prev) = latest.get(kpi.id.as_str()) {
            v.raw_text = format!("{} [supersedes: {}]", v.raw_text, prev.raw_text);
        }
        latest.insert(kpi.id.as_str(), v);
    }
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for kpi in plan {
        match latest.remove(kpi.id.as_str()) {
            Some(value) => rows.push(KpiRow { kpi: kpi.clone(), value }),
            None => missing.push(kpi.id.clone()),
        }
    }
    Ok(KpiTable { rows, complete: missing.is_empty(), missing })
}

/// Interval bindings keyed by KPI symbol; points become `[v, v]`.
pub fn table_to_bindings(t: &KpiTable) -> Result<IntervalBindings, EvidenceError> {
    if !t.complete {
        return Err(EvidenceError::Incomplete(t.missing.clone()));
    }
    t.rows
        .iter()
        .map(|r| Ok((r.kpi.symbol.clone(), r.value.value.as_interval()?)))
        .collect()
}

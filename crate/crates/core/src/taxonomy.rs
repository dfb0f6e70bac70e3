//! KVI taxonomy: categories, per-code definitions, validation and seeded
//! degradation for quality sweeps.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::parse_formula;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KviCategory {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub kvi_codes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KviDefinition {
    /// Filled from the key of the `definitions` map.
    #[serde(skip)]
    pub code: String,
    pub title: String,
    pub unit: String,
    #[serde(default)]
    pub narrative: Vec<String>,
    pub formula: String,
    pub kpi_symbols: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Taxonomy {
    pub version: String,
    pub categories: Vec<KviCategory>,
    pub definitions: IndexMap<String, KviDefinition>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub q: f64,
    pub seed: u64,
    pub field_drop: bool,
}

impl DegradationSpec {
    pub fn new(q: f64, seed: u64, field_drop: bool) -> Result<Self, TaxonomyError> {
        if !(0.0..=1.0).contains(&q) {
            return Err(TaxonomyError::Quality(q));
        }
        Ok(DegradationSpec { q, seed, field_drop })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaxonomyError {
    #[error("taxonomy parse error at line {line}, column {column} (field `{path}`): {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("invalid taxonomy: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("quality must lie in [0, 1], got {0}")]
    Quality(f64),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

static CODE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Z]+-[A-Z]+$").unwrap());

/// Parses and validates a taxonomy document. Category and definition order
/// follow the document.
pub fn load_taxonomy(document: &str) -> Result<Taxonomy, TaxonomyError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let mut t: Taxonomy = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        TaxonomyError::Parse { path, line: inner.line(), column: inner.column(), message: inner.to_string() }
    })?;
    for (code, d) in t.definitions.iter_mut() {
        d.code = code.clone();
    }
    let violations = validate_taxonomy(&t);
    if violations.is_empty() {
        Ok(t)
    } else {
        Err(TaxonomyError::Invalid(violations))
    }
}

pub fn load_taxonomy_file(path: &Path) -> Result<Taxonomy, TaxonomyError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TaxonomyError::Io { path: path.display().to_string(), message: e.to_string() })?;
    load_taxonomy(&text)
}

/// Pretty JSON in the document format accepted by [`load_taxonomy`].
pub fn serialize_taxonomy(t: &Taxonomy) -> String {
    serde_json::to_string_pretty(t).expect("taxonomy serializes")
}

pub fn validate_taxonomy(t: &Taxonomy) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    for c in &t.categories {
        if c.id.trim().is_empty() {
            out.push(format!("category `{}` has an empty id", c.name));
        } else if !seen.insert(c.id.as_str()) && reported.insert(c.id.as_str()) {
            out.push(format!("duplicate category id `{}`", c.id));
        }
        if c.kvi_codes.is_empty() {
            out.push(format!("category `{}` lists no KVI codes", c.id));
        }
        let mut codes = HashSet::new();
        for code in &c.kvi_codes {
            if !codes.insert(code.as_str()) {
                out.push(format!("category `{}` lists code `{code}` twice", c.id));
            }
            if !t.definitions.contains_key(code) {
                out.push(format!("category `{}` references undefined code `{code}`", c.id));
            }
        }
    }
    for (code, d) in &t.definitions {
        if !CODE_RE.is_match(code) {
            out.push(format!("definition code `{code}` does not match PREFIX-SUFFIX"));
        }
        if d.unit.trim().is_empty() {
            out.push(format!("definition `{code}` has an empty unit"));
        }
        match parse_formula(&d.formula) {
            Err(e) => out.push(format!("definition `{code}` formula: {e}")),
            Ok(f) => {
                let free = f.free_symbols();
                let declared: BTreeSet<String> = d.kpi_symbols.iter().cloned().collect();
                for s in free.difference(&declared) {
                    out.push(format!("definition `{code}` formula reads `{s}`, which is not in kpi_symbols"));
                }
                for s in declared.difference(&free) {
                    out.push(format!("definition `{code}` lists `{s}` in kpi_symbols but the formula never reads it"));
                }
                if declared.len() != d.kpi_symbols.len() {
                    out.push(format!("definition `{code}` repeats a symbol in kpi_symbols"));
                }
            }
        }
    }
    out
}

/// Removes `floor((1 - q) N)` categories chosen by a seeded shuffle of the
/// sorted ids, optionally strips aliases and descriptions of survivors, and
/// drops definitions no surviving category references.
///
/// For a fixed seed the removed sets are nested: lowering `q` only removes
/// more categories.
pub fn degrade_taxonomy(t: &Taxonomy, spec: &DegradationSpec) -> Taxonomy {
    let q = spec.q.clamp(0.0, 1.0);
    let n = t.categories.len();
    // (1 - 0.9) * 10 is 0.999..., so floor needs a little help
    let remove = (((1.0 - q) * n as f64) + 1e-9).floor().min(n as f64) as usize;

    let mut ids: Vec<&str> = t.categories.iter().map(|c| c.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ids.shuffle(&mut rng);
    let removed: HashSet<&str> = ids[..remove].iter().copied().collect();

    let mut categories: Vec<KviCategory> =
        t.categories.iter().filter(|c| !removed.contains(c.id.as_str())).cloned().collect();

    if spec.field_drop {
        let p_drop = 1.0 - q;
        let mut order: Vec<usize> = (0..categories.len()).collect();
        order.sort_by(|&a, &b| categories[a].id.cmp(&categories[b].id));
        for i in order {
            if rng.random_bool(p_drop) {
                categories[i].aliases.clear();
            }
            if rng.random_bool(p_drop) {
                categories[i].description.clear();
            }
        }
    }

    let referenced: HashSet<&str> = categories.iter().flat_map(|c| c.kvi_codes.iter().map(String::as_str)).collect();
    let definitions = t
        .definitions
        .iter()
        .filter(|(code, _)| referenced.contains(code.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Taxonomy { version: t.version.clone(), categories, definitions }
}

/// Ids of the categories [`degrade_taxonomy`] would remove, sorted.
pub fn removed_category_ids(original: &Taxonomy, degraded: &Taxonomy) -> Vec<String> {
    let kept: HashSet<&str> = degraded.categories.iter().map(|c| c.id.as_str()).collect();
    let mut out: Vec<String> =
        original.categories.iter().filter(|c| !kept.contains(c.id.as_str())).map(|c| c.id.clone()).collect();
    out.sort();
    out
}

/// Definitions for the categories' codes, deduplicated in first-appearance order.
pub fn lookup_codes(t: &Taxonomy, category_ids: &[String]) -> Result<Vec<KviDefinition>, TaxonomyError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for id in category_ids {
        let cat = t.category(id).ok_or_else(|| TaxonomyError::UnknownCategory(id.clone()))?;
        for code in &cat.kvi_codes {
            if seen.insert(code.as_str()) {
                let d = t
                    .definitions
                    .get(code)
                    .ok_or_else(|| TaxonomyError::Invalid(vec![format!("undefined code `{code}`")]))?;
                out.push(d.clone());
            }
        }
    }
    Ok(out)
}

impl Taxonomy {
    pub fn empty(version: &str) -> Taxonomy {
        Taxonomy { version: version.to_string(), categories: Vec::new(), definitions: IndexMap::new() }
    }

    pub fn category(&self, id: &str) -> Option<&KviCategory> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn definition(&self, code: &str) -> Option<&KviDefinition> {
        self.definitions.get(code)
    }

    pub fn code_count(&self) -> usize {
        self.definitions.len()
    }

    /// Compact text rendering used in agent prompts.
    pub fn render_for_prompt(&self) -> String {
        let mut out = String::new();
        for c in &self.categories {
            out.push_str(&format!("- {} | {}", c.id, c.name));
            if !c.aliases.is_empty() {
                out.push_str(&format!(" (aka {})", c.aliases.join(", ")));
            }
            if !c.description.is_empty() {
                out.push_str(&format!(": {}", c.description));
            }
            out.push_str(&format!(" [codes: {}]\n", c.kvi_codes.join(", ")));
        }
        out
    }

    /// Category id → codes, for diagnostics.
    pub fn code_index(&self) -> BTreeMap<&str, &[String]> {
        self.categories.iter().map(|c| (c.id.as_str(), c.kvi_codes.as_slice())).collect()
    }
}

/// The bundled fixture taxonomy (illustrative data, not a published taxonomy).
pub const FIXTURE_TAXONOMY: &str = include_str!("../fixtures/kvi.taxonomy.json");

pub fn fixture_taxonomy() -> Taxonomy {
    load_taxonomy(FIXTURE_TAXONOMY).expect("bundled fixture taxonomy is valid")
}

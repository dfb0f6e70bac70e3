use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Final line a conversational agent emits when its stage is done.
pub const SENTINEL: &str = "[[STEP_COMPLETE]]";

pub const INTERVIEW_TRANSCRIPT: &str = "interview_transcript";
pub const CANDIDATE_CATEGORIES: &str = "candidate_categories";
pub const REFINEMENT_TRANSCRIPT: &str = "refinement_transcript";
pub const FINALIZED_CATEGORIES: &str = "finalized_categories";
pub const KPI_PLAN: &str = "kpi_plan";
pub const KPI_COLLECTION_TRANSCRIPT: &str = "kpi_collection_transcript";
pub const KPI_TABLE: &str = "kpi_table";
pub const KVI_RESULT_PREFIX: &str = "kvi_result:";
pub const ADVISOR_CONTEXT: &str = "advisor_context";

pub fn kvi_result_key(code: &str) -> String {
    format!("{KVI_RESULT_PREFIX}{code}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentName {
    Inspector,
    KviCategoryExtractor,
    KviCategoryEvaluator,
    KviCategoryFinalizer,
    KpiGenerator,
    KpiCollector,
    KpiStructurer,
    KviCalculator,
    KviAdvisor,
}

impl AgentName {
    pub const ALL: [AgentName; 9] = [
        AgentName::Inspector,
        AgentName::KviCategoryExtractor,
        AgentName::KviCategoryEvaluator,
        AgentName::KviCategoryFinalizer,
        AgentName::KpiGenerator,
        AgentName::KpiCollector,
        AgentName::KpiStructurer,
        AgentName::KviCalculator,
        AgentName::KviAdvisor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentName::Inspector => "inspector",
            AgentName::KviCategoryExtractor => "kvi_category_extractor",
            AgentName::KviCategoryEvaluator => "kvi_category_evaluator",
            AgentName::KviCategoryFinalizer => "kvi_category_finalizer",
            AgentName::KpiGenerator => "kpi_generator",
            AgentName::KpiCollector => "kpi_collector",
            AgentName::KpiStructurer => "kpi_structurer",
            AgentName::KviCalculator => "kvi_calculator",
            AgentName::KviAdvisor => "kvi_advisor",
        }
    }

    /// Pipeline stage, 1 to 9.
    pub fn stage(self) -> u8 {
        Self::ALL.iter().position(|a| *a == self).unwrap() as u8 + 1
    }

    pub fn for_stage(stage: u8) -> Option<AgentName> {
        Self::ALL.get((stage as usize).checked_sub(1)?).copied()
    }

    pub fn kind(self) -> AgentKind {
        match self {
            AgentName::Inspector | AgentName::KviCategoryEvaluator | AgentName::KpiCollector | AgentName::KviAdvisor => {
                AgentKind::Conversational
            }
            _ => AgentKind::Structured,
        }
    }
}

impl fmt::Display for AgentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown agent `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Conversational,
    Structured,
}

/// Declarative contract for one pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub name: AgentName,
    pub kind: AgentKind,
    /// Artifact keys embedded in the prompt, in order.
    pub context_keys: &'static [&'static str],
    /// Key the stage's artifact is stored under. The calculator stores one
    /// `kvi_result:<CODE>` per code; the advisor stores nothing.
    pub output_key: Option<&'static str>,
    pub prompt_template: &'static str,
    /// Structured-output schema restated on the retry prompt.
    pub schema_hint: Option<&'static str>,
    /// Only meaningful for the calculator: include the definition's
    /// step-by-step narrative in the prompt.
    pub cot_enabled: bool,
}

const INSPECTOR_PROMPT: &str = "\
You are the inspector of a KPI-to-KVI assessment. Interview the user about the service below. \
Cover: what data is processed and stored, who can access it (including recordings), which \
regulations apply, the expected user base, stakeholders and likely value impacts (privacy, \
security, sustainability, accessibility). Ask one or two questions per turn. When you have \
enough context, summarise it and end your reply with a final line containing only {sentinel}.";

const EXTRACTOR_PROMPT: &str = "\
You are the KVI category extractor. Using the interview transcript and the taxonomy as a \
controlled vocabulary, rank the KVI categories most relevant to the service.\n\n\
Interview transcript:\n{interview_transcript}\n\n{taxonomy_block}\
Reply with a short justification followed by one fenced JSON block:\n{schema}";

const EVALUATOR_PROMPT: &str = "\
You are the KVI category evaluator. Explain briefly why each candidate category was proposed \
and invite the user to add, remove or replace categories. When the user has confirmed a final \
set, restate it and end your reply with a final line containing only {sentinel}.\n\n\
Candidate categories:\n{candidate_categories}\n\n{taxonomy_block}";

const FINALIZER_PROMPT: &str = "\
You are the KVI category finalizer. Consolidate the candidate list and the refinement dialogue \
into the final category set. Resolve duplicates and use taxonomy ids exactly.\n\n\
Candidate categories:\n{candidate_categories}\n\nRefinement transcript:\n{refinement_transcript}\n\n\
{taxonomy_block}Reply with one fenced JSON block:\n{schema}";

const GENERATOR_PROMPT: &str = "\
You are the KPI generator. Propose a compact set of measurable KPIs that provides the evidence \
needed for the finalized KVI categories. Give each KPI an id, a formula symbol, a name, a \
description and a unit.\n\nInterview transcript:\n{interview_transcript}\n\n\
Finalized categories:\n{finalized_categories}\n\n{definitions_block}\
Reply with a one-paragraph measurement plan followed by one fenced JSON block:\n{schema}";

const COLLECTOR_PROMPT: &str = "\
You are the KPI collector. Collect one KPI value at a time. The user may give a number, an \
interval, or delegate the value to you; delegated values are recorded as assumptions. \
Acknowledge the value just recorded and ask for the next missing KPI. When every KPI has a \
value, summarise them and end your reply with a final line containing only {sentinel}.\n\n\
KPI plan:\n{kpi_plan}\n\nCollection status:\n{collection_status}";

const ESTIMATE_PROMPT: &str = "\
You are the KPI collector acting as estimator. The user delegated a KPI value to you. Reply \
with a plausible value as a single number or an interval [lo, hi] in the KPI's unit, with \
no other text.";

const STRUCTURER_PROMPT: &str = "\
You are the KPI structurer. Convert the collection transcript into a machine-readable KPI \
table: consistent numeric parsing, units aligned to the plan, provenance preserved.\n\n\
KPI plan:\n{kpi_plan}\n\nCollection transcript:\n{kpi_collection_transcript}\n\n\
Reply with one fenced JSON block:\n{schema}";

const CALCULATOR_PROMPT: &str = "\
You are the KVI calculator. Compute the target KVI from the KPI table. Give exact, min and max, \
a short rationale that cites the KPI ids and states which inputs are assumptions.\n\n\
Target KVI:\n{definition_block}\n\nKPI table:\n{kpi_table}\n\n\
Reply with one fenced JSON block:\n{schema}";

const ADVISOR_PROMPT: &str = "\
You are the KVI advisor. Answer the user's questions about the results below. Cite KPI ids and \
KVI codes, explain trade-offs, and point out which KPIs would most reduce the uncertainty of \
the bounds if measured more precisely.\n\nAdvisor context:\n{advisor_context}";

pub const CATEGORY_SCHEMA: &str = r#"```json
{"category_ids": ["<taxonomy category id>", "..."], "notes": "<optional>"}
```"#;

pub const PLAN_SCHEMA: &str = r#"```json
{"kpis": [{"id": "kpi-...", "symbol": "<formula symbol>", "name": "...", "description": "...", "unit": "..."}]}
```"#;

pub const TABLE_SCHEMA: &str = r#"```json
{"complete": true, "rows": [{"kpi_id": "...", "symbol": "...", "unit": "...", "value": {"kind": "point", "point": 1.0}, "provenance": "user-provided", "raw_text": "..."}]}
```"#;

pub const RESULT_SCHEMA: &str = r#"```json
{"code": "...", "exact": 0.0, "min": 0.0, "max": 0.0, "unit": "...", "rationale": "...", "cited_kpis": ["kpi-..."]}
```"#;

pub fn estimate_prompt() -> &'static str {
    ESTIMATE_PROMPT
}

/// The nine stage contracts, in pipeline order.
pub fn registry(cot_enabled: bool) -> Vec<AgentSpec> {
    AgentName::ALL.iter().map(|&n| agent_spec(n, cot_enabled)).collect()
}

pub fn agent_spec(name: AgentName, cot_enabled: bool) -> AgentSpec {
    let (context_keys, output_key, prompt_template, schema_hint): (&'static [&'static str], _, _, _) = match name {
        AgentName::Inspector => (&[], Some(INTERVIEW_TRANSCRIPT), INSPECTOR_PROMPT, None),
        AgentName::KviCategoryExtractor => {
            (&[INTERVIEW_TRANSCRIPT], Some(CANDIDATE_CATEGORIES), EXTRACTOR_PROMPT, Some(CATEGORY_SCHEMA))
        }
        AgentName::KviCategoryEvaluator => (&[CANDIDATE_CATEGORIES], Some(REFINEMENT_TRANSCRIPT), EVALUATOR_PROMPT, None),
        AgentName::KviCategoryFinalizer => (
            &[CANDIDATE_CATEGORIES, REFINEMENT_TRANSCRIPT],
            Some(FINALIZED_CATEGORIES),
            FINALIZER_PROMPT,
            Some(CATEGORY_SCHEMA),
        ),
        AgentName::KpiGenerator => {
            (&[INTERVIEW_TRANSCRIPT, FINALIZED_CATEGORIES], Some(KPI_PLAN), GENERATOR_PROMPT, Some(PLAN_SCHEMA))
        }
        AgentName::KpiCollector => (&[KPI_PLAN], Some(KPI_COLLECTION_TRANSCRIPT), COLLECTOR_PROMPT, None),
        AgentName::KpiStructurer => {
            (&[KPI_PLAN, KPI_COLLECTION_TRANSCRIPT], Some(KPI_TABLE), STRUCTURER_PROMPT, Some(TABLE_SCHEMA))
        }
        AgentName::KviCalculator => (&[KPI_TABLE], Some(KVI_RESULT_PREFIX), CALCULATOR_PROMPT, Some(RESULT_SCHEMA)),
        AgentName::KviAdvisor => (&[ADVISOR_CONTEXT], None, ADVISOR_PROMPT, None),
    };
    AgentSpec {
        name,
        kind: name.kind(),
        context_keys,
        output_key,
        prompt_template,
        schema_hint,
        cot_enabled: cot_enabled && name == AgentName::KviCalculator,
    }
}

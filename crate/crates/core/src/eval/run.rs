//! One end-to-end run of a case under a method variant.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::case::CaseSpec;
use super::noise::{NoiseDraws, NoiseModel, NoiseProvider, Perturbation};
use crate::agents::spec::FINALIZED_CATEGORIES;
use crate::agents::{
    call_provider, extract_json_block, AgentName, ChatMessage, Exhaustion, Playbook, Prompt, Provider, ScriptedProvider,
};
use crate::calculus::{verify_result, KviResult};
use crate::orchestrator::{create_session_with_id, handle_user_turn, Workflow};
use crate::taxonomy::{degrade_taxonomy, lookup_codes, DegradationSpec, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Monolithic,
    Staged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub mode: Mode,
    pub taxonomy_enabled: bool,
    pub cot_enabled: bool,
}

impl VariantConfig {
    /// The four compared methods, numbered 1 to 4.
    pub fn numbered(n: u8) -> Option<VariantConfig> {
        let (mode, taxonomy_enabled, cot_enabled) = match n {
            1 => (Mode::Monolithic, true, true),
            2 => (Mode::Staged, false, false),
            3 => (Mode::Staged, true, false),
            4 => (Mode::Staged, true, true),
            _ => return None,
        };
        Some(VariantConfig { mode, taxonomy_enabled, cot_enabled })
    }

    pub fn all() -> [(u8, VariantConfig); 4] {
        [1, 2, 3, 4].map(|n| (n, Self::numbered(n).unwrap()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub case_id: String,
    pub variant: u8,
    pub q: f64,
    pub seed: u64,
    /// Sorted, deduplicated.
    pub predicted: Vec<String>,
    pub results: Vec<KviResult>,
    /// Run-level markers such as `run-failed`.
    pub run_flags: Vec<String>,
    /// Result flags plus run-level markers.
    pub flag_count: usize,
    pub wall_time_ms: f64,
}

impl PartialEq for RunRecord {
    fn eq(&self, o: &Self) -> bool {
        self.case_id == o.case_id
            && self.variant == o.variant
            && self.q == o.q
            && self.seed == o.seed
            && self.predicted == o.predicted
            && self.results == o.results
            && self.run_flags == o.run_flags
            && self.flag_count == o.flag_count
    }
}

pub const RUN_FAILED: &str = "run-failed";

const MONOLITHIC_PROMPT: &str = "\
You carry out a complete KPI-to-KVI assessment in one reply. From the service description and \
the user's notes, select the relevant KVI categories, choose KPI values (estimating any that \
are missing), and compute every KVI implied by the selected categories as {exact, min, max} \
with a rationale citing KPI ids.";

/// Everything a run needs besides the case.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub noise: NoiseModel,
    /// Also drop aliases and descriptions when degrading.
    pub field_drop: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings { noise: NoiseModel::default(), field_drop: true }
    }
}

/// Runs `case` end to end. Deterministic in all arguments; pipeline
/// failures are recorded as a `run-failed` marker.
#[allow(clippy::too_many_arguments)]
pub fn run_case(
    case: &CaseSpec,
    playbook: &Playbook,
    base: &Taxonomy,
    variant: u8,
    q: f64,
    seed: u64,
    settings: &RunSettings,
) -> RunRecord {
    let start = Instant::now();
    let cfg = VariantConfig::numbered(variant).expect("variant in 1..=4");
    let taxonomy = if cfg.taxonomy_enabled {
        let spec = DegradationSpec::new(q, seed, settings.field_drop).expect("q within [0, 1]");
        degrade_taxonomy(base, &spec)
    } else {
        base.clone()
    };
    let q_eff = if cfg.taxonomy_enabled { q } else { 0.0 };
    let p = settings.noise.p_err(q_eff, case.complexity.formula_depth);
    let codes: Vec<String> = lookup_codes(base, &case.gold_category_ids)
        .map(|d| d.into_iter().map(|d| d.code).collect())
        .unwrap_or_default();
    let plan = Perturbation::choose(&settings.noise, p, &NoiseDraws::new(seed, &case.case_id), &case.gold_category_ids, &codes);
    let scripted = ScriptedProvider::new(playbook, Exhaustion::Fail).expect("case playbooks are validated on load");
    let provider = NoiseProvider::new(scripted, plan);
    let wf = Workflow { taxonomy: std::sync::Arc::new(taxonomy), taxonomy_in_prompts: cfg.taxonomy_enabled, cot: cfg.cot_enabled };

    let (mut predicted, results, failed) = match cfg.mode {
        Mode::Staged => staged(case, &provider, &wf, variant, seed),
        Mode::Monolithic => monolithic(case, &provider, &wf),
    };
    predicted.sort();
    predicted.dedup();
    let run_flags: Vec<String> = if failed { vec![RUN_FAILED.to_string()] } else { Vec::new() };
    let flag_count = results.iter().map(|r| r.flags.len()).sum::<usize>() + run_flags.len();
    RunRecord {
        case_id: case.case_id.clone(),
        variant,
        q,
        seed,
        predicted,
        results,
        run_flags,
        flag_count,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

fn staged(case: &CaseSpec, provider: &dyn Provider, wf: &Workflow, variant: u8, seed: u64) -> (Vec<String>, Vec<KviResult>, bool) {
    let mut session = create_session_with_id(format!("{}-v{variant}-s{seed}", case.case_id), Some(&case.description));
    for m in &case.messages {
        handle_user_turn(&mut session, m, provider, wf);
    }
    let predicted = session
        .artifacts
        .get(FINALIZED_CATEGORIES)
        .and_then(|v| serde_json::from_value(v["category_ids"].clone()).ok())
        .unwrap_or_default();
    let results = session
        .kvi_result_keys()
        .iter()
        .filter_map(|k| serde_json::from_value(session.artifacts[*k].clone()).ok())
        .collect();
    (predicted, results, session.stage_index != 9 || session.current_agent != AgentName::KviAdvisor)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MonolithicOutput {
    category_ids: Vec<String>,
    results: Vec<KviResult>,
}

fn parse_monolithic(text: &str) -> Option<MonolithicOutput> {
    let (v, _) = extract_json_block(text).ok()?;
    serde_json::from_value(v).ok()
}

/// Single-call realization: one reply carries categories and results.
fn monolithic(case: &CaseSpec, provider: &dyn Provider, wf: &Workflow) -> (Vec<String>, Vec<KviResult>, bool) {
    let mut system = MONOLITHIC_PROMPT.to_string();
    if wf.taxonomy_in_prompts {
        system.push_str(&format!("\n\nKVI taxonomy ({}):\n{}", wf.taxonomy.version, wf.taxonomy.render_for_prompt()));
    }
    system.push_str(
        "\nReply with one fenced JSON block: {\"category_ids\": [...], \"results\": [{\"code\", \"exact\", \"min\", \
         \"max\", \"unit\", \"rationale\", \"cited_kpis\"}]}",
    );
    let mut messages = vec![ChatMessage::user(case.description.clone())];
    messages.extend(case.messages.iter().map(|m| ChatMessage::user(m.clone())));
    let mut prompt = Prompt { system, messages };

    let mut turn = 0;
    let mut parsed = None;
    for attempt in 0..2 {
        let Ok(text) = call_provider(provider, "monolithic", &mut turn, attempt, None, &prompt) else { break };
        parsed = parse_monolithic(&text);
        if parsed.is_some() {
            break;
        }
        prompt.messages.push(ChatMessage::assistant(text));
        prompt.messages.push(ChatMessage::user("Reply again with exactly one complete fenced JSON block."));
    }
    let Some(out) = parsed else { return (Vec::new(), Vec::new(), true) };

    let mut predicted: Vec<String> = Vec::new();
    for id in out.category_ids {
        if wf.taxonomy.category(&id).is_some() && !predicted.contains(&id) {
            predicted.push(id);
        }
    }
    let defs = lookup_codes(&wf.taxonomy, &predicted).unwrap_or_default();
    let results = defs
        .iter()
        .map(|d| match out.results.iter().find(|r| r.code == d.code) {
            Some(r) => {
                let mut r = r.clone();
                r.flags = verify_result(&r, d);
                r
            }
            None => KviResult::placeholder(d, "missing-result", "the reply has no result for this code"),
        })
        .collect();
    (predicted, results, false)
}

//! Evaluation cases: specs, the KPI catalog, and playbook generation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::EvalError;
use crate::agents::{KpiPlan, Playbook, PlaybookEntry, SENTINEL};
use crate::calculus::{compute_kvi, parse_formula};
use crate::evidence::{build_kpi_table, normalize_unit, parse_value_utterance, Kpi, KpiValue, ParsedKind, Provenance};
use crate::taxonomy::{lookup_codes, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Complexity {
    /// Deepest operator nesting over the case's KVI formulas.
    pub formula_depth: usize,
    /// Largest number of KPIs read by one KVI.
    pub kpis_per_kvi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub case_id: String,
    pub description: String,
    pub gold_category_ids: Vec<String>,
    /// Playbook file name, relative to the case directory.
    pub playbook: String,
    pub complexity: Complexity,
    pub category_count: usize,
    /// User messages sent after the description, in order.
    pub messages: Vec<String>,
}

impl CaseSpec {
    /// Checks the spec against the taxonomy it is meant for.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Case { case_id: self.case_id.clone(), message: m });
        if self.gold_category_ids.is_empty() {
            return bad("gold category set is empty".into());
        }
        if self.category_count != self.gold_category_ids.len() {
            return bad(format!("category_count {} but {} gold ids", self.category_count, self.gold_category_ids.len()));
        }
        let actual = case_complexity(taxonomy, &self.gold_category_ids)?;
        if actual != self.complexity {
            return bad(format!("declared complexity {:?} but definitions give {actual:?}", self.complexity));
        }
        Ok(())
    }
}

/// Complexity implied by the definitions of `categories`.
pub fn case_complexity(taxonomy: &Taxonomy, categories: &[String]) -> Result<Complexity, EvalError> {
    let defs = lookup_codes(taxonomy, categories).map_err(|e| EvalError::Taxonomy(e.to_string()))?;
    let mut c = Complexity { formula_depth: 0, kpis_per_kvi: 0 };
    for d in defs {
        let f = parse_formula(&d.formula).map_err(|e| EvalError::Taxonomy(format!("{}: {e}", d.code)))?;
        c.formula_depth = c.formula_depth.max(f.depth());
        c.kpis_per_kvi = c.kpis_per_kvi.max(d.kpi_symbols.len());
    }
    Ok(c)
}

/// Loads every `<id>.case.json` in `dir` with its playbook, sorted by id.
pub fn load_cases(dir: &Path) -> Result<Vec<(CaseSpec, Playbook)>, EvalError> {
    let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".case.json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        let case: CaseSpec = serde_json::from_str(&text).map_err(|e| EvalError::Case {
            case_id: path.display().to_string(),
            message: e.to_string(),
        })?;
        let playbook = Playbook::load(&dir.join(&case.playbook))
            .map_err(|e| EvalError::Case { case_id: case.case_id.clone(), message: e.to_string() })?;
        out.push((case, playbook));
    }
    Ok(out)
}

pub fn write_cases(dir: &Path, cases: &[(CaseSpec, Playbook)]) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    for (case, playbook) in cases {
        let spec = serde_json::to_string_pretty(case).expect("case serializes") + "\n";
        fs::write(dir.join(format!("{}.case.json", case.case_id)), spec).map_err(io)?;
        fs::write(dir.join(&case.playbook), playbook.to_json() + "\n").map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub symbol: String,
    pub name: String,
    pub unit: String,
    /// What the simulated user answers when asked for this KPI.
    pub utterance: String,
    /// Estimator reply when the utterance delegates.
    #[serde(default)]
    pub estimate: Option<String>,
}

pub const KPI_CATALOG: &str = include_str!("../../fixtures/kpi.catalog.json");

pub fn kpi_catalog() -> Vec<CatalogEntry> {
    serde_json::from_str(KPI_CATALOG).expect("bundled KPI catalog is valid")
}

/// Hand-written framing for one generated case.
#[derive(Debug, Clone)]
pub struct CaseDesign {
    pub case_id: &'static str,
    pub description: &'static str,
    pub gold: &'static [&'static str],
    /// Extra category the extractor proposes and the user then rejects.
    pub distractor: &'static str,
    pub interview: [&'static str; 2],
    pub refinement: &'static str,
    pub advisor_question: &'static str,
}

pub fn suite_designs() -> Vec<CaseDesign> {
    vec![
        CaseDesign {
            case_id: "telemedicine",
            description: "A cloud-based video consultation platform for remote medical appointments between \
                          patients and general practitioners.",
            gold: &["user-trust"],
            distractor: "privacy-protection",
            interview: [
                "Consultations are video calls; recordings are stored encrypted for 30 days and only the treating \
                 doctor can open them. Health data falls under GDPR.",
                "About 5000 patients a year, mostly adults, on phones and laptops. Patients worry about who sees \
                 their data and whether the service is secure.",
            ],
            refinement: "Keep user trust only; data protection is assessed in a separate audit.",
            advisor_question: "Which KPI would most reduce the uncertainty of these results?",
        },
        CaseDesign {
            case_id: "patient-records",
            description: "A hosted electronic patient record with online consent management for a regional clinic \
                          network.",
            gold: &["privacy-protection", "security-resilience"],
            distractor: "transparency",
            interview: [
                "We store demographic and clinical records, consent forms and access logs in one EU data centre.",
                "Clinicians and admins access records; patients see their own file. Incidents are handled by an \
                 outsourced SOC.",
            ],
            refinement: "Drop transparency, keep privacy and security.",
            advisor_question: "Where is the privacy posture weakest?",
        },
        CaseDesign {
            case_id: "inclusive-portal",
            description: "A web and mobile appointment portal that must serve rural and elderly patients.",
            gold: &["accessibility", "digital-inclusion"],
            distractor: "quality-of-experience",
            interview: [
                "The portal books appointments and reminders. It is available in several languages.",
                "Many users are elderly or live in rural areas with older devices and limited connectivity.",
            ],
            refinement: "Quality of experience is out of scope; accessibility and inclusion are what we report.",
            advisor_question: "Which group is least well served?",
        },
        CaseDesign {
            case_id: "green-hosting",
            description: "Migration of a teleconsultation service to a greener cloud region with a new pricing model.",
            gold: &["environmental", "economic"],
            distractor: "workforce",
            interview: [
                "Remote consultations replace some in-person visits. Hosting moves to a provider with a renewable \
                 energy contract.",
                "The service charges a small patient fee and reimburses part of the cost through insurers.",
            ],
            refinement: "Leave workforce aside; environmental and economic value only.",
            advisor_question: "Is the carbon saving robust to the travel assumptions?",
        },
        CaseDesign {
            case_id: "care-pathways",
            description: "A remote follow-up programme for chronic patients using scheduled video check-ins.",
            gold: &["health-wellbeing", "quality-of-experience"],
            distractor: "economic",
            interview: [
                "Patients with diabetes or heart failure get monthly video follow-ups instead of clinic visits.",
                "We track waiting times, attendance and call quality; patients rate each session.",
            ],
            refinement: "Costs are handled elsewhere, keep health outcomes and experience.",
            advisor_question: "What limits the follow-up attendance estimate?",
        },
        CaseDesign {
            case_id: "triage-governance",
            description: "An AI-assisted triage service that ranks incoming requests for nurse review.",
            gold: &["transparency", "ethical-governance", "workforce"],
            distractor: "user-trust",
            interview: [
                "A model scores requests; nurses review high-risk ones and can override any ranking.",
                "Decisions are logged for audit. Staff were trained on the tool and admin time is tracked.",
            ],
            refinement: "User trust is measured by another team. Keep transparency, ethics and workforce.",
            advisor_question: "How reliable is the audit coverage figure?",
        },
        CaseDesign {
            case_id: "video-quality",
            description: "A video stack upgrade for a telehealth provider focused on call quality.",
            gold: &["quality-of-experience"],
            distractor: "accessibility",
            interview: [
                "We replaced the media server and added adaptive bitrate. Latency and jitter are monitored.",
                "Users rate calls on a five-point scale after each session.",
            ],
            refinement: "Only quality of experience for this release.",
            advisor_question: "Does latency or jitter drive the result?",
        },
    ]
}

fn block(value: &serde_json::Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(value).expect("json serializes"))
}

fn entry(agent: &str, turn: usize, response: String) -> PlaybookEntry {
    PlaybookEntry { agent: agent.into(), turn, response, subject: None }
}

/// Builds the case spec and its noise-free playbook from a design, the
/// taxonomy and the KPI catalog.
pub fn generate_case(
    design: &CaseDesign,
    taxonomy: &Taxonomy,
    catalog: &[CatalogEntry],
) -> Result<(CaseSpec, Playbook), EvalError> {
    let fail = |m: String| EvalError::Case { case_id: design.case_id.to_string(), message: m };
    let gold: Vec<String> = design.gold.iter().map(|s| s.to_string()).collect();
    let defs = lookup_codes(taxonomy, &gold).map_err(|e| fail(e.to_string()))?;

    let mut symbols: Vec<&str> = Vec::new();
    for d in &defs {
        for s in &d.kpi_symbols {
            if !symbols.contains(&s.as_str()) {
                symbols.push(s);
            }
        }
    }
    let mut plan = Vec::new();
    let mut rows: Vec<&CatalogEntry> = Vec::new();
    for s in &symbols {
        let c = catalog.iter().find(|c| c.symbol == *s).ok_or_else(|| fail(format!("catalog has no KPI `{s}`")))?;
        plan.push(Kpi {
            id: Kpi::id_for_symbol(s),
            symbol: c.symbol.clone(),
            name: c.name.clone(),
            description: String::new(),
            unit: c.unit.clone(),
        });
        rows.push(c);
    }

    let mut entries = vec![
        entry("inspector", 0, "Thanks. Who can access the data, which regulations apply, and who are the expected users?".into()),
        entry(
            "inspector",
            1,
            format!("Summary: {}\n{}\n{}\n{SENTINEL}", design.description, design.interview[0], design.interview[1]),
        ),
    ];
    let mut candidates = gold.clone();
    candidates.push(design.distractor.to_string());
    entries.push(entry(
        "kvi_category_extractor",
        0,
        format!("Candidate categories, most relevant first.\n{}", block(&json!({ "category_ids": candidates }))),
    ));
    entries.push(entry(
        "kvi_category_evaluator",
        0,
        format!("Understood. The final set is: {}.\n{SENTINEL}", gold.join(", ")),
    ));
    entries.push(entry("kvi_category_finalizer", 0, format!("Finalized.\n{}", block(&json!({ "category_ids": gold })))));
    entries.push(entry(
        "kpi_generator",
        0,
        format!(
            "These KPIs cover every formula in scope.\n{}",
            block(&serde_json::to_value(KpiPlan { kpis: plan.clone() }).unwrap())
        ),
    ));

    let mut values = Vec::new();
    let mut turn = 0;
    for (i, (kpi, c)) in plan.iter().zip(&rows).enumerate() {
        let parsed = parse_value_utterance(&c.utterance).map_err(|e| fail(e.to_string()))?;
        let (text, provenance) = match parsed.kind {
            ParsedKind::Delegate => {
                let est = c.estimate.clone().ok_or_else(|| fail(format!("{} delegates without an estimate", c.symbol)))?;
                entries.push(PlaybookEntry {
                    agent: "kpi_collector".into(),
                    turn,
                    response: est.clone(),
                    subject: Some(kpi.id.clone()),
                });
                turn += 1;
                (est, Provenance::SystemDecided)
            }
            _ => (c.utterance.clone(), Provenance::UserProvided),
        };
        let value = normalize_unit(&parse_value_utterance(&text).map_err(|e| fail(e.to_string()))?, &kpi.unit)
            .map_err(|e| fail(e.to_string()))?
            .quantity()
            .ok_or_else(|| fail(format!("{} estimate delegates again", c.symbol)))?;
        values.push(KpiValue {
            kpi_id: kpi.id.clone(),
            value,
            unit: kpi.unit.clone(),
            provenance,
            raw_text: text,
        });
        let ack = match provenance {
            Provenance::UserProvided => format!("Recorded {} = {} {}.", kpi.symbol, value, kpi.unit),
            Provenance::SystemDecided => {
                format!("Recorded {} = {} {} as an assumption (system estimate).", kpi.symbol, value, kpi.unit)
            }
        };
        let reply = match plan.get(i + 1) {
            Some(next) => format!("{ack} Next, {} ({}) in {}?", next.name, next.symbol, next.unit),
            None => format!("{ack} All {} KPI values are collected.\n{SENTINEL}", plan.len()),
        };
        entries.push(entry("kpi_collector", turn, reply));
        turn += 1;
    }

    let table = build_kpi_table(&plan, &values).map_err(|e| fail(e.to_string()))?;
    entries.push(entry("kpi_structurer", 0, format!("Structured table.\n{}", block(&table.to_json()))));

    let mut results = Vec::new();
    for (i, d) in defs.iter().enumerate() {
        let r = compute_kvi(d, &table).map_err(|e| fail(e.to_string()))?;
        if !r.flags.is_empty() {
            return Err(fail(format!("{} is flagged {:?} on its own evidence", d.code, r.flags)));
        }
        let mut wire = serde_json::to_value(&r).unwrap();
        wire.as_object_mut().unwrap().remove("flags");
        wire["rationale"] = json!(format!(
            "{} follows from {} with the tabled inputs; inputs marked system-decided are assumptions.",
            d.code, d.formula
        ));
        entries.push(PlaybookEntry {
            agent: "kvi_calculator".into(),
            turn: i,
            response: format!("Computed {}.\n{}", d.code, block(&wire)),
            subject: Some(d.code.clone()),
        });
        results.push(wire);
    }
    entries.push(entry(
        "kvi_advisor",
        0,
        format!(
            "The widest bounds come from the KPIs recorded as intervals; measuring them directly would narrow {}.",
            defs.iter().map(|d| d.code.as_str()).collect::<Vec<_>>().join(", ")
        ),
    ));
    entries.push(entry(
        "monolithic",
        0,
        format!("End-to-end assessment.\n{}", block(&json!({ "category_ids": gold, "results": results }))),
    ));

    let mut messages: Vec<String> = design.interview.iter().map(|s| s.to_string()).collect();
    messages.push(design.refinement.to_string());
    messages.extend(rows.iter().map(|c| c.utterance.clone()));
    messages.push(design.advisor_question.to_string());

    let case = CaseSpec {
        case_id: design.case_id.to_string(),
        description: design.description.to_string(),
        complexity: case_complexity(taxonomy, &gold)?,
        category_count: gold.len(),
        gold_category_ids: gold,
        playbook: format!("{}.playbook.json", design.case_id),
        messages,
    };
    let playbook = Playbook { entries };
    playbook.validate().map_err(|e| fail(e.to_string()))?;
    Ok((case, playbook))
}

/// The bundled case suite, generated from the fixture taxonomy.
pub fn generate_suite(taxonomy: &Taxonomy) -> Result<Vec<(CaseSpec, Playbook)>, EvalError> {
    let catalog = kpi_catalog();
    let mut out: Vec<_> =
        suite_designs().iter().map(|d| generate_case(d, taxonomy, &catalog)).collect::<Result<_, _>>()?;
    out.sort_by(|a, b| a.0.case_id.cmp(&b.0.case_id));
    Ok(out)
}

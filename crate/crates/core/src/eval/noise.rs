//! Synthetic provider unreliability for the harness.

use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{CompletionRequest, Provider, ProviderError, SENTINEL};

/// `p_err = min(cap, alpha * (1 - q) + beta * depth)`, unless `p_override`
/// is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub alpha: f64,
    pub beta: f64,
    pub cap: f64,
    pub p_override: Option<f64>,
    pub drop_category: bool,
    pub perturb_arithmetic: bool,
    pub omit_sentinel: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            alpha: 0.5,
            beta: 0.1,
            cap: 0.9,
            p_override: None,
            drop_category: true,
            perturb_arithmetic: true,
            omit_sentinel: true,
        }
    }
}

impl NoiseModel {
    pub fn off() -> Self {
        NoiseModel { p_override: Some(0.0), ..Self::default() }
    }

    pub fn fixed(p: f64) -> Self {
        NoiseModel { p_override: Some(p), ..Self::default() }
    }

    pub fn p_err(&self, q_eff: f64, depth: usize) -> f64 {
        let p = match self.p_override {
            Some(p) => p,
            None => (self.alpha * (1.0 - q_eff) + self.beta * depth as f64).min(self.cap),
        };
        p.clamp(0.0, 1.0)
    }
}

/// Per-run uniforms. They depend only on (seed, case), so every variant and
/// every q of a run index sees the same draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraws {
    pub u_drop: f64,
    pub u_arith: f64,
    pub u_sentinel: f64,
    pub u_id: f64,
    pub u_code: f64,
    pub u_magnitude: f64,
    pub u_sign: f64,
    pub u_agent: f64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl NoiseDraws {
    pub fn new(seed: u64, case_id: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(case_id.as_bytes()));
        NoiseDraws {
            u_drop: rng.random(),
            u_arith: rng.random(),
            u_sentinel: rng.random(),
            u_id: rng.random(),
            u_code: rng.random(),
            u_magnitude: rng.random(),
            u_sign: rng.random(),
            u_agent: rng.random(),
        }
    }
}

/// Agents whose completion cue can go missing.
pub const SENTINEL_AGENTS: [&str; 3] = ["inspector", "kvi_category_evaluator", "kpi_collector"];

/// Concrete perturbations chosen for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Perturbation {
    pub drop_id: Option<String>,
    /// Target code and multiplicative factor on its `exact` value.
    pub arithmetic: Option<(String, f64)>,
    pub strip_sentinel: Option<&'static str>,
}

fn pick<T>(items: &[T], u: f64) -> Option<&T> {
    if items.is_empty() {
        return None;
    }
    items.get(((u * items.len() as f64) as usize).min(items.len() - 1))
}

impl Perturbation {
    /// `gold` is the finalizer's list; `codes` the KVI codes in scope.
    pub fn choose(model: &NoiseModel, p: f64, d: &NoiseDraws, gold: &[String], codes: &[String]) -> Self {
        let mut out = Perturbation::default();
        if model.drop_category && d.u_drop < p {
            out.drop_id = pick(gold, d.u_id).cloned();
        }
        if model.perturb_arithmetic && d.u_arith < p {
            let sign = if d.u_sign < 0.5 { -1.0 } else { 1.0 };
            let factor = 1.0 + sign * (0.05 + 0.20 * d.u_magnitude);
            out.arithmetic = pick(codes, d.u_code).map(|c| (c.clone(), factor));
        }
        if model.omit_sentinel && d.u_sentinel < p {
            out.strip_sentinel = pick(&SENTINEL_AGENTS, d.u_agent).copied();
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        *self == Perturbation::default()
    }
}

static FENCE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)(```[ \t]*(?:json|JSON)?[ \t]*\r?\n)(.*?)(```)").unwrap());

/// Applies `f` to the first fenced JSON block, leaving the text alone when
/// there is no parseable block.
fn edit_block(text: &str, f: impl FnOnce(&mut Value)) -> String {
    let Some(caps) = FENCE_RE.captures(text) else { return text.to_string() };
    let Ok(mut v) = serde_json::from_str::<Value>(caps[2].trim()) else { return text.to_string() };
    f(&mut v);
    let whole = caps.get(0).unwrap();
    format!(
        "{}{}{}\n{}{}",
        &text[..whole.start()],
        &caps[1],
        serde_json::to_string_pretty(&v).unwrap(),
        &caps[3],
        &text[whole.end()..]
    )
}

fn drop_id(v: &mut Value, id: &str) {
    if let Some(ids) = v.get_mut("category_ids").and_then(Value::as_array_mut) {
        ids.retain(|x| x.as_str() != Some(id));
    }
}

fn scale_exact(v: &mut Value, factor: f64) {
    if let Some(x) = v.get("exact").and_then(Value::as_f64) {
        v["exact"] = serde_json::json!(x * factor);
    }
}

/// Wraps a provider and perturbs its replies.
pub struct NoiseProvider<P> {
    inner: P,
    plan: Perturbation,
}

impl<P: Provider> NoiseProvider<P> {
    pub fn new(inner: P, plan: Perturbation) -> Self {
        NoiseProvider { inner, plan }
    }

    fn perturb(&self, req: &CompletionRequest, text: String) -> String {
        let mut text = text;
        let agent = req.agent.as_str();
        if let Some(id) = &self.plan.drop_id {
            if agent == "kvi_category_finalizer" || agent == "monolithic" {
                text = edit_block(&text, |v| drop_id(v, id));
            }
        }
        if let Some((code, factor)) = &self.plan.arithmetic {
            if agent == "kvi_calculator" && req.subject.as_deref() == Some(code) {
                text = edit_block(&text, |v| scale_exact(v, *factor));
            }
            if agent == "monolithic" {
                text = edit_block(&text, |v| {
                    if let Some(rs) = v.get_mut("results").and_then(Value::as_array_mut) {
                        for r in rs.iter_mut().filter(|r| r.get("code").and_then(Value::as_str) == Some(code)) {
                            scale_exact(r, *factor);
                        }
                    }
                });
            }
        }
        if let Some(target) = self.plan.strip_sentinel {
            if agent == target {
                text = text.lines().filter(|l| l.trim() != SENTINEL).collect::<Vec<_>>().join("\n");
            } else if agent == "monolithic" {
                // A cut-off reply: the block never closes.
                if let Some(m) = FENCE_RE.captures(&text) {
                    let body = m.get(2).unwrap();
                    text = text[..body.start() + body.len() / 2].to_string();
                }
            }
        }
        text
    }
}

impl<P: Provider> Provider for NoiseProvider<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let text = self.inner.complete(request)?;
        Ok(self.perturb(request, text))
    }

    fn label(&self) -> String {
        format!("noise({})", self.inner.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let m = NoiseModel::default();
        assert_eq!(m.p_err(1.0, 0), 0.0);
        assert!((m.p_err(0.5, 2) - 0.45).abs() < 1e-12);
        assert_eq!(m.p_err(0.0, 9), 0.9);
        assert_eq!(NoiseModel::off().p_err(0.0, 9), 0.0);
    }

    #[test]
    fn zero_probability_means_no_perturbation() {
        let gold = vec!["a".to_string()];
        for seed in 0..50 {
            let d = NoiseDraws::new(seed, "case");
            assert!(Perturbation::choose(&NoiseModel::default(), 0.0, &d, &gold, &gold).is_empty());
            let all = Perturbation::choose(&NoiseModel::default(), 1.0, &d, &gold, &gold);
            assert!(all.drop_id.is_some() && all.arithmetic.is_some() && all.strip_sentinel.is_some());
            let (_, f) = all.arithmetic.unwrap();
            assert!((0.75..=0.95).contains(&f) || (1.05..=1.25).contains(&f), "{f}");
        }
    }

    #[test]
    fn draws_depend_on_case_and_seed_only() {
        assert_eq!(NoiseDraws::new(3, "x"), NoiseDraws::new(3, "x"));
        assert_ne!(NoiseDraws::new(3, "x"), NoiseDraws::new(3, "y"));
        assert_ne!(NoiseDraws::new(3, "x"), NoiseDraws::new(4, "x"));
    }

    #[test]
    fn block_edits() {
        let t = "ok\n```json\n{\"category_ids\": [\"a\", \"b\"]}\n```\ntail";
        let out = edit_block(t, |v| drop_id(v, "a"));
        assert!(out.starts_with("ok\n```json\n") && out.ends_with("```\ntail"), "{out}");
        assert!(!out.contains("\"a\""));
        assert_eq!(edit_block("no block", |v| drop_id(v, "a")), "no block");
    }
}

//! Scenario scripts and the runner that plays them against a service.
//!
//! A scenario is a list of phases. Each phase holds one ordered script per
//! actor; the runner interleaves the scripts of a phase under a seed while
//! keeping each actor's order. Steps get logical timestamps from a fixed
//! schedule, so a seed fixes the whole run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redress_core::audit::{verify_audit_chain, AuditEvent};
use reqwest::Method;
use serde_json::Value;

use crate::client::{Api, ClientError};

pub enum Body {
    None,
    Json(Value),
    /// Computed from earlier responses when the step runs.
    Build(fn(&Run) -> Value),
}

pub struct Step {
    pub label: String,
    pub actor: &'static str,
    pub method: Method,
    pub path: String,
    pub body: Body,
    pub expect: u16,
    /// `(variable, JSON pointer)` pairs read from the response.
    pub capture: Vec<(&'static str, &'static str)>,
}

impl Step {
    pub fn get(label: impl Into<String>, actor: &'static str, path: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            actor,
            method: Method::GET,
            path: path.into(),
            body: Body::None,
            expect: 200,
            capture: Vec::new(),
        }
    }

    pub fn post(label: impl Into<String>, actor: &'static str, path: impl Into<String>, body: Value) -> Self {
        Self {
            method: Method::POST,
            body: Body::Json(body),
            ..Self::get(label, actor, path)
        }
    }

    pub fn build(mut self, f: fn(&Run) -> Value) -> Self {
        self.method = Method::POST;
        self.body = Body::Build(f);
        self
    }

    pub fn expect(mut self, status: u16) -> Self {
        self.expect = status;
        self
    }

    pub fn capture(mut self, var: &'static str, pointer: &'static str) -> Self {
        self.capture.push((var, pointer));
        self
    }
}

/// Actor scripts that may interleave freely.
pub struct Phase(pub Vec<Vec<Step>>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
    /// Audit sequence numbers that substantiate the outcome.
    pub cites: Vec<u64>,
}

impl Check {
    pub fn pass(detail: impl Into<String>, cites: Vec<u64>) -> Self {
        Self {
            passed: true,
            detail: detail.into(),
            cites,
        }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self {
            passed: false,
            detail: detail.into(),
            cites: Vec::new(),
        }
    }

    pub fn from(ok: bool, detail: impl Into<String>, cites: Vec<u64>) -> Self {
        Self {
            passed: ok,
            detail: detail.into(),
            cites,
        }
    }
}

pub struct Assertion {
    pub name: &'static str,
    pub check: fn(&Run) -> Check,
}

pub struct Scenario {
    pub name: &'static str,
    pub summary: &'static str,
    pub tick_ms: u64,
    pub phases: Vec<Phase>,
    pub assertions: Vec<Assertion>,
}

/// Everything observed during one run, for assertions to inspect.
#[derive(Debug, Default)]
pub struct Run {
    pub vars: BTreeMap<String, String>,
    pub responses: BTreeMap<String, (u16, Value)>,
    /// Audit events recorded since the run started.
    pub audit: Vec<AuditEvent>,
    /// The whole log, for chain verification.
    pub full_audit: Vec<AuditEvent>,
}

impl Run {
    pub fn var(&self, name: &str) -> &str {
        self.vars.get(name).map_or("", String::as_str)
    }

    pub fn body(&self, label: &str) -> &Value {
        static NULL: Value = Value::Null;
        self.responses.get(label).map_or(&NULL, |(_, v)| v)
    }

    pub fn status(&self, label: &str) -> u16 {
        self.responses.get(label).map_or(0, |(s, _)| *s)
    }

    /// Events with `action` whose object starts with `report:<id>`.
    pub fn report_events<'a>(&'a self, report: &'a str, action: &'a str) -> impl Iterator<Item = &'a AuditEvent> + 'a {
        let prefix = format!("report:{report}");
        self.audit.iter().filter(move |e| {
            e.action == action && (e.object == prefix || e.object.starts_with(&format!("{prefix};")))
        })
    }

    pub fn events<'a>(&'a self, action: &'a str) -> impl Iterator<Item = &'a AuditEvent> + 'a {
        self.audit.iter().filter(move |e| e.action == action)
    }

    pub fn event(&self, seq: u64) -> Option<&AuditEvent> {
        self.full_audit.iter().find(|e| e.seq == seq)
    }

    pub fn chain_valid(&self) -> bool {
        verify_audit_chain(&self.full_audit).valid
    }

    /// Replaces `{var}` occurrences with captured values.
    pub fn fill(&self, text: &str) -> String {
        let mut out = text.to_owned();
        for (k, v) in &self.vars {
            out = out.replace(&format!("{{{k}}}"), v);
        }
        out
    }

    fn fill_value(&self, v: &Value) -> Value {
        match v {
            Value::String(s) => Value::String(self.fill(s)),
            Value::Array(xs) => Value::Array(xs.iter().map(|x| self.fill_value(x)).collect()),
            Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), self.fill_value(x))).collect()),
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub label: String,
    pub actor: String,
    pub at: u64,
    pub status: u16,
    pub expected: u16,
}

impl StepRecord {
    pub fn ok(&self) -> bool {
        self.status == self.expected
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertionResult {
    pub name: String,
    pub check: Check,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub name: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub assertions: Vec<AssertionResult>,
    /// Hex hash of the last audit event after the run.
    pub head: String,
    pub cited: BTreeMap<u64, AuditEvent>,
    pub duration: Duration,
}

impl ScenarioResult {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(StepRecord::ok) && self.assertions.iter().all(|a| a.check.passed)
    }

    /// One entry per assertion, in declaration order.
    pub fn verdicts(&self) -> Vec<bool> {
        self.assertions.iter().map(|a| a.check.passed).collect()
    }

    /// Human-readable trace: failed steps, then each assertion with the
    /// audit events it cites.
    pub fn trace(&self) -> String {
        let mut out = String::new();
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "scenario {} (seed {}): {verdict}", self.name, self.seed);
        for s in self.steps.iter().filter(|s| !s.ok()) {
            let _ = writeln!(out, "  step {} by {} at {}: status {} (expected {})", s.label, s.actor, s.at, s.status, s.expected);
        }
        for a in &self.assertions {
            let v = if a.check.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "  [{v}] {}: {}", a.name, a.check.detail);
            for seq in &a.check.cites {
                if let Some(e) = self.cited.get(seq) {
                    let _ = writeln!(out, "      audit #{} {} {} {}", e.seq, e.actor, e.action, e.object);
                }
            }
        }
        let _ = writeln!(out, "  audit head {}", self.head);
        out
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Interleaves the scripts of each phase. Per-actor order is kept.
pub fn schedule(phases: &[Phase], seed: u64) -> Vec<(usize, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::new();
    for (p, phase) in phases.iter().enumerate() {
        let mut next = vec![0usize; phase.0.len()];
        loop {
            let open: Vec<usize> = (0..phase.0.len()).filter(|&s| next[s] < phase.0[s].len()).collect();
            if open.is_empty() {
                break;
            }
            let s = open[rng.gen_range(0..open.len())];
            order.push((p, s, next[s]));
            next[s] += 1;
        }
    }
    order
}

/// Plays `scenario` against `api`. `clock_base` is the logical time of the
/// first step; pass [`None`] to start an hour after the last audit event.
pub async fn run(scenario: &Scenario, api: &Api, seed: u64, clock_base: Option<u64>) -> Result<ScenarioResult, ClientError> {
    let started = Instant::now();
    let before = api.audit(0).await?;
    let base = clock_base.unwrap_or_else(|| before.last().map_or(1_000_000, |e| e.at + 3_600_000).max(1_000_000));
    let mut run = Run::default();
    let mut steps = Vec::new();
    let mut aborted: Option<String> = None;
    for (i, (p, s, k)) in schedule(&scenario.phases, seed).into_iter().enumerate() {
        let step = &scenario.phases[p].0[s][k];
        let at = base + i as u64 * scenario.tick_ms;
        if aborted.is_some() {
            break;
        }
        let body = match &step.body {
            Body::None => None,
            Body::Json(v) => Some(run.fill_value(v)),
            Body::Build(f) => Some(f(&run)),
        };
        let path = run.fill(&step.path);
        let (status, value) = api.call(step.actor, step.method.clone(), &path, body.as_ref(), at).await?;
        for (var, pointer) in &step.capture {
            let captured = match value.pointer(pointer) {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => String::new(),
            };
            run.vars.insert((*var).to_owned(), captured);
        }
        let record = StepRecord {
            label: step.label.clone(),
            actor: step.actor.to_owned(),
            at,
            status,
            expected: step.expect,
        };
        if !record.ok() {
            aborted = Some(format!("step {} returned {status}: {value}", step.label));
        }
        steps.push(record);
        run.responses.insert(step.label.clone(), (status, value));
    }
    let full = api.audit(0).await?;
    run.audit = full[before.len().min(full.len())..].to_vec();
    run.full_audit = full;
    let assertions: Vec<AssertionResult> = scenario
        .assertions
        .iter()
        .map(|a| AssertionResult {
            name: a.name.to_owned(),
            check: match &aborted {
                Some(why) => Check::fail(format!("not evaluated: {why}")),
                None => (a.check)(&run),
            },
        })
        .collect();
    let cited = assertions
        .iter()
        .flat_map(|a| a.check.cites.iter())
        .filter_map(|seq| run.event(*seq).map(|e| (*seq, e.clone())))
        .collect();
    Ok(ScenarioResult {
        name: scenario.name.to_owned(),
        seed,
        steps,
        assertions,
        head: run.full_audit.last().map_or_else(|| hex(&[0; 32]), |e| hex(&e.hash)),
        cited,
        duration: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn phase(lens: &[usize]) -> Phase {
        Phase(
            lens.iter()
                .map(|&n| (0..n).map(|i| Step::get(format!("s{i}"), "acct-alice", "/")).collect())
                .collect(),
        )
    }

    #[test]
    fn schedule_keeps_actor_order_and_covers_every_step() {
        let phases = vec![phase(&[3, 2, 4]), phase(&[1])];
        for seed in 0..20 {
            let order = schedule(&phases, seed);
            assert_eq!(order.len(), 10);
            for s in 0..3 {
                let ks: Vec<usize> = order.iter().filter(|(p, x, _)| *p == 0 && *x == s).map(|o| o.2).collect();
                assert!(ks.windows(2).all(|w| w[0] < w[1]));
            }
            assert_eq!(order.last(), Some(&(1, 0, 0)));
        }
        assert_eq!(schedule(&phases, 7), schedule(&phases, 7));
        assert_ne!(schedule(&phases, 1), schedule(&phases, 2));
    }

    #[test]
    fn fill_substitutes_nested_strings() {
        let mut run = Run::default();
        run.vars.insert("report".into(), "R-3".into());
        let v = run.fill_value(&json!({"a": ["{report}", 1], "b": {"c": "x-{report}"}}));
        assert_eq!(v, json!({"a": ["R-3", 1], "b": {"c": "x-R-3"}}));
    }
}

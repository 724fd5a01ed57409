//! Disclosure authority and consent precedence, checked by replaying the
//! audit log of fuzzed runs.

use std::collections::{BTreeMap, BTreeSet};

use redress_core::audit::AuditEvent;
use redress_core::engine::{Engine, LevelCause};
use redress_core::minimize::VisibilityLevel;

use super::Fuzz;
use crate::props::Tally;

const INITIAL: [&str; 3] = ["report.file", "report.scope", "report.views"];

/// `key=value` parts of an audit object.
fn field<'a>(object: &'a str, key: &str) -> Option<&'a str> {
    object.split(';').find_map(|p| p.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn report_of(object: &str) -> Option<&str> {
    object.split(';').next().and_then(|p| p.strip_prefix("report:"))
}

/// `m1:full,m2:removed` as a map.
fn levels(object: &str) -> BTreeMap<String, String> {
    field(object, "levels")
        .unwrap_or("")
        .split(',')
        .filter_map(|p| p.rsplit_once(':'))
        .map(|(m, k)| (m.to_owned(), k.to_owned()))
        .collect()
}

/// Level kinds per report, rebuilt from the audit log alone.
pub fn replay(events: &[AuditEvent]) -> BTreeMap<String, BTreeMap<String, String>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for e in events {
        let Some(r) = report_of(&e.object) else { continue };
        match e.action.as_str() {
            "report.file" | "report.scope" | "report.views" | "request.grant" => {
                let map = out.entry(r.to_owned()).or_default();
                if let Some(dropped) = field(&e.object, "dropped") {
                    for m in dropped.split(',') {
                        map.remove(m);
                    }
                }
                map.extend(levels(&e.object));
            }
            _ => {}
        }
    }
    out
}

/// Who may raise a level with this event, and for which messages.
fn authority(engine: &Engine, e: &AuditEvent, msg: &str, kind: &str) -> Result<(), String> {
    let rid = report_of(&e.object).ok_or("event names no report")?;
    let report = engine.report(rid).ok_or("event names an unknown report")?;
    if e.actor != report.reporter.as_str() {
        return Err(format!("#{} by {} who is not the reporter", e.seq, e.actor));
    }
    if levels(&e.object).get(msg).map(String::as_str) != Some(kind) {
        return Err(format!("#{} does not record {msg}:{kind}", e.seq));
    }
    if INITIAL.contains(&e.action.as_str()) {
        return Ok(());
    }
    if e.action != "request.grant" {
        return Err(format!("#{} is {}, which cannot change levels", e.seq, e.action));
    }
    let request = field(&e.object, "request").ok_or("grant names no request")?;
    let opened = engine.audit().events().iter().take_while(|o| o.seq < e.seq).any(|o| {
        o.action == "request.open"
            && report_of(&o.object) == Some(rid)
            && field(&o.object, "request") == Some(request)
            && field(&o.object, "targets").is_some_and(|t| t.split(',').any(|x| x == msg))
    });
    if opened {
        Ok(())
    } else {
        Err(format!("#{} grants {msg} without an open request naming it", e.seq))
    }
}

/// Every contact follows the reporter's approval of that invite, and every
/// finding follows the contact.
pub fn consent_precedence(engine: &Engine) -> Result<usize, String> {
    let mut approved: BTreeSet<(String, String)> = BTreeSet::new();
    let mut contacted: BTreeSet<(String, String)> = BTreeSet::new();
    let mut checked = 0;
    for e in engine.audit().events() {
        let (Some(r), Some(inv)) = (report_of(&e.object), field(&e.object, "invite")) else { continue };
        let key = (r.to_owned(), inv.to_owned());
        match e.action.as_str() {
            "invite.approve" => {
                let reporter = engine.report(r).map(|x| x.reporter.to_string());
                if reporter.as_deref() != Some(e.actor.as_str()) {
                    return Err(format!("#{} approval by {} who is not the reporter", e.seq, e.actor));
                }
                approved.insert(key);
            }
            "bystander.contact" => {
                checked += 1;
                if !approved.contains(&key) {
                    return Err(format!("#{} contacts for {inv} before approval", e.seq));
                }
                contacted.insert(key);
            }
            "finding.submit" => {
                checked += 1;
                if !contacted.contains(&key) {
                    return Err(format!("#{} finding for {inv} before contact", e.seq));
                }
            }
            _ => {}
        }
    }
    Ok(checked)
}

/// `runs` fuzzed runs of `steps` operations each.
pub fn run(seed: u64, runs: usize, steps: usize) -> Tally {
    let mut t = Tally::default();
    for k in 0..runs {
        let mut f = Fuzz::new(seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
        for _ in 0..steps {
            let before: BTreeMap<String, BTreeMap<String, VisibilityLevel>> = f
                .reports
                .iter()
                .map(|id| (id.clone(), f.report(id).levels.iter().map(|(m, l)| (m.to_string(), l.clone())).collect()))
                .collect();
            let out = f.step();
            let events = &f.engine.audit().events()[out.audit_from..];
            for id in &f.reports {
                let after = &f.report(id).levels;
                let prior = before.get(id);
                for (m, l) in after {
                    let old = prior.and_then(|p| p.get(m.as_str()));
                    if old == Some(l) {
                        continue;
                    }
                    let increase = old.is_none_or(|o| !l.le(o));
                    if increase {
                        t.note("increases", 1);
                    }
                    let explained = events
                        .iter()
                        .filter(|e| report_of(&e.object) == Some(id.as_str()))
                        .any(|e| authority(&f.engine, e, m.as_str(), l.kind().as_str()).is_ok());
                    t.check(explained, || format!("run {k}: {id} {m} changed {old:?} -> {l:?} in {:?} by {}", out.op, out.actor));
                }
            }
        }
        let replayed = replay(f.engine.audit().events());
        for id in &f.reports {
            let r = f.report(id);
            let actual: BTreeMap<String, String> = r.levels.iter().map(|(m, l)| (m.to_string(), l.kind().as_str().to_owned())).collect();
            let got = replayed.get(id).cloned().unwrap_or_default();
            t.check(got == actual, || format!("run {k}: replay of {id} gives {got:?}, state has {actual:?}"));
            for c in &r.level_log {
                let seq = c.cause.audit_seq();
                let ok = match f.engine.audit().get(seq) {
                    Some(e) => {
                        let action_fits = match &c.cause {
                            LevelCause::Initial { .. } => INITIAL.contains(&e.action.as_str()),
                            LevelCause::Grant { request_id, .. } => {
                                e.action == "request.grant" && field(&e.object, "request") == Some(request_id.as_str())
                            }
                        };
                        action_fits && authority(&f.engine, e, c.msg_id.as_str(), c.to.kind().as_str()).is_ok()
                    }
                    None => false,
                };
                t.check(ok, || format!("run {k}: level log entry {c:?} has no authorizing event"));
            }
        }
        match consent_precedence(&f.engine) {
            Ok(n) => {
                t.note("consent-events", n);
                t.check(true, String::new);
            }
            Err(e) => t.check(false, || format!("run {k}: {e}")),
        }
        t.check(f.engine.audit().verify().valid, || format!("run {k}: audit chain broken"));
        t.note("runs", 1);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_and_levels_parse_audit_objects() {
        let o = "report:R-2;request=DR-1;levels=m2:full,m10:metadata_only";
        assert_eq!(report_of(o), Some("R-2"));
        assert_eq!(field(o, "request"), Some("DR-1"));
        assert_eq!(levels(o)["m10"], "metadata_only");
        assert_eq!(field("report:R-1;mode=last_n", "levels"), None);
    }

    #[test]
    fn small_run_is_clean_and_exercises_grants() {
        let t = run(1, 20, 120);
        assert!(t.ok(), "{t}");
        assert!(t.noted("increases") > 0);
        assert!(t.noted("consent-events") > 0);
    }
}

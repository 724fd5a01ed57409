//! Reveal-set monotonicity and removal without trace.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redress_core::bundle::{render_bundle_json, SenderRef};
use redress_core::fixtures::blank_message;
use redress_core::minimize::{
    render_views, AttributeName, Minimizer, MinimizerConfig, QuestionId, RedactionSpan, VisibilityLevel,
};
use redress_core::model::Message;

use super::Tally;

const QUESTIONS: [&str; 3] = ["who-initiated", "threat-made", "personal-info-shared"];
const CANNED: [&str; 5] = [
    "you are an idiot, see https://x.example/a.png",
    "meet me at 42 Elm St or call 555-123-4567",
    "thanks, that was great",
    "I hate this, shut up loser",
    "",
];
const ALPHABET: &[char] = &['a', 'b', 'e', 'k', 'z', ' ', '.', '/', '@', '4', '7', 'é', '✓', 'L'];

fn body(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.3) {
        return (*CANNED.choose(rng).expect("non-empty")).to_owned();
    }
    let n = rng.gen_range(0..80);
    (0..n).map(|_| *ALPHABET.choose(rng).expect("non-empty")).collect()
}

fn names(rng: &mut ChaCha8Rng) -> BTreeSet<AttributeName> {
    let mut s: BTreeSet<AttributeName> = AttributeName::ALL.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if s.is_empty() {
        s.insert(*AttributeName::ALL.choose(rng).expect("non-empty"));
    }
    s
}

/// Maximal runs of a covered position set, as auto spans.
fn runs(covered: &BTreeSet<usize>) -> Vec<RedactionSpan> {
    let mut out: Vec<RedactionSpan> = Vec::new();
    for &p in covered {
        match out.last_mut() {
            Some(s) if s.end == p => s.end = p + 1,
            _ => out.push(RedactionSpan::auto(p, p + 1)),
        }
    }
    out
}

fn coverage(len: usize, rng: &mut ChaCha8Rng, p: f64) -> BTreeSet<usize> {
    (0..len).filter(|_| rng.gen_bool(p)).collect()
}

fn level(rng: &mut ChaCha8Rng, len: usize) -> VisibilityLevel {
    match rng.gen_range(0..6) {
        0 => VisibilityLevel::Removed,
        1 => VisibilityLevel::MetadataOnly,
        2 => VisibilityLevel::Attributes { names: names(rng) },
        3 => VisibilityLevel::Answer {
            question: QuestionId::new(*QUESTIONS.choose(rng).expect("non-empty")).expect("valid"),
        },
        4 => {
            let p = rng.gen_range(0.0..0.6);
            VisibilityLevel::Redacted {
                spans: runs(&coverage(len, rng, p)),
            }
        }
        _ => VisibilityLevel::Full,
    }
}

fn covered(spans: &[RedactionSpan]) -> BTreeSet<usize> {
    spans.iter().flat_map(|s| s.start..s.end).collect()
}

/// A level at or below `hi`, built from it.
fn below(rng: &mut ChaCha8Rng, hi: &VisibilityLevel, len: usize) -> VisibilityLevel {
    if rng.gen_bool(0.15) {
        return if rng.gen_bool(0.5) { VisibilityLevel::Removed } else { VisibilityLevel::MetadataOnly };
    }
    match hi {
        VisibilityLevel::Full => match rng.gen_range(0..3) {
            0 => VisibilityLevel::Attributes { names: names(rng) },
            1 => VisibilityLevel::Redacted {
                spans: runs(&coverage(len, rng, 0.3)),
            },
            _ => VisibilityLevel::Full,
        },
        VisibilityLevel::Attributes { names } => {
            let mut sub: BTreeSet<AttributeName> = names.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
            if sub.is_empty() {
                sub.insert(*names.iter().next().expect("non-empty"));
            }
            VisibilityLevel::Attributes { names: sub }
        }
        VisibilityLevel::Redacted { spans } => {
            let mut c = covered(spans);
            c.extend(coverage(len, rng, 0.2));
            VisibilityLevel::Redacted { spans: runs(&c) }
        }
        other => other.clone(),
    }
}

/// The reveal order, written out case by case.
fn oracle_le(a: &VisibilityLevel, b: &VisibilityLevel) -> bool {
    use VisibilityLevel as V;
    match (a, b) {
        (V::Removed, _) => true,
        (_, V::Removed) => false,
        (V::MetadataOnly, _) => true,
        (_, V::MetadataOnly) => false,
        (V::Full, other) => matches!(other, V::Full),
        (V::Attributes { names: x }, V::Attributes { names: y }) => x.iter().all(|n| y.contains(n)),
        (V::Redacted { spans: x }, V::Redacted { spans: y }) => {
            let cx = covered(x);
            covered(y).iter().all(|p| cx.contains(p))
        }
        (V::Answer { question: x }, V::Answer { question: y }) => x == y,
        (V::Attributes { .. } | V::Redacted { .. }, V::Full) => true,
        _ => false,
    }
}

pub fn minimizer() -> Minimizer {
    Minimizer::new(MinimizerConfig::default()).expect("default config compiles")
}

/// Draws until `pairs` comparable `(message, lo, hi)` cases were checked.
pub fn monotonicity(seed: u64, pairs: usize) -> Tally {
    let mz = minimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    while t.cases < pairs && t.violations < 100 {
        let mut m = blank_message("msg-1", "conv-x", "acct-s0", rng.gen_range(0..1_000_000));
        m.body = body(&mut rng);
        let len = m.body.chars().count();
        let a = level(&mut rng, len);
        let b = if rng.gen_bool(0.6) { below(&mut rng, &a, len) } else { level(&mut rng, len) };
        let (le_ab, le_ba) = (oracle_le(&a, &b), oracle_le(&b, &a));
        if a.le(&b) != le_ab || b.le(&a) != le_ba {
            t.violation(|| format!("library order disagrees with oracle on {a:?} / {b:?}"));
            continue;
        }
        if !le_ab && !le_ba {
            t.note("incomparable-skipped", 1);
            continue;
        }
        let (lo, hi) = if le_ab { (a, b) } else { (b, a) };
        let reveal = |l: &VisibilityLevel| {
            mz.minimize(&m, l)
                .map(|v| v.map(|v| mz.reveal_set(&v)).unwrap_or_default())
        };
        match (reveal(&lo), reveal(&hi)) {
            (Ok(small), Ok(big)) => {
                let extra: Vec<_> = small.difference(&big).take(3).cloned().collect();
                t.check(extra.is_empty(), || format!("{lo:?} <= {hi:?} on {:?} but reveals {extra:?}", m.body));
            }
            (x, y) => t.check(false, || format!("minimize failed: {x:?} {y:?}")),
        }
    }
    t
}

fn bundle(rng: &mut ChaCha8Rng) -> (Vec<Message>, Vec<VisibilityLevel>) {
    let n = rng.gen_range(1..=20);
    let mut at = 1_000u64;
    let msgs: Vec<Message> = (0..n)
        .map(|i| {
            at += rng.gen_range(0..5_000);
            let mut m = blank_message(&format!("msg-{i:03}"), "conv-x", if rng.gen_bool(0.5) { "acct-s0" } else { "acct-s1" }, at);
            m.body = body(rng);
            m
        })
        .collect();
    let levels = msgs.iter().map(|m| level(rng, m.body.chars().count())).collect();
    (msgs, levels)
}

/// Removing a message yields the same bytes as never including it.
pub fn removal(seed: u64, bundles: usize) -> Tally {
    let mz = minimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    let sender = |m: &Message| SenderRef::Account { account: m.sender.clone() };
    for _ in 0..bundles {
        let (msgs, mut levels) = bundle(&mut rng);
        let pick = rng.gen_range(0..msgs.len());
        levels[pick] = VisibilityLevel::Removed;
        let with = render_views(&mz, msgs.iter().zip(&levels).map(|(m, l)| (m, l, sender(m))));
        let without = render_views(
            &mz,
            msgs.iter()
                .zip(&levels)
                .enumerate()
                .filter(|(i, _)| *i != pick)
                .map(|(_, (m, l))| (m, l, sender(m))),
        );
        match (with, without) {
            (Ok(a), Ok(b)) => {
                let (a, b) = (render_bundle_json(&a), render_bundle_json(&b));
                let id = msgs[pick].msg_id.as_str();
                t.check(a == b && !a.contains(id), || format!("removing {id} left a trace"));
            }
            (x, y) => t.check(false, || format!("render failed: {x:?} {y:?}")),
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_merge_adjacent_positions() {
        let c: BTreeSet<usize> = [0, 1, 2, 5, 7, 8].into_iter().collect();
        let r: Vec<(usize, usize)> = runs(&c).iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(r, [(0, 3), (5, 6), (7, 9)]);
    }

    #[test]
    fn oracle_order_by_hand() {
        let full = VisibilityLevel::Full;
        let meta = VisibilityLevel::MetadataOnly;
        let q = |s: &str| VisibilityLevel::Answer { question: QuestionId::new(s).unwrap() };
        assert!(oracle_le(&meta, &full));
        assert!(!oracle_le(&q("threat-made"), &full));
        assert!(!oracle_le(&q("threat-made"), &q("who-initiated")));
        let wide = VisibilityLevel::Redacted { spans: vec![RedactionSpan::auto(0, 4)] };
        let narrow = VisibilityLevel::Redacted { spans: vec![RedactionSpan::auto(1, 2)] };
        assert!(oracle_le(&wide, &narrow));
        assert!(!oracle_le(&narrow, &wide));
    }

    #[test]
    fn small_runs_are_clean() {
        let m = monotonicity(3, 300);
        assert!(m.ok(), "{m}");
        let r = removal(3, 50);
        assert!(r.ok(), "{r}");
    }
}

//! Ephemeral window availability under a logical clock.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redress_core::ephemeral::{EphemeralStore, EphemeralWindow, SegmentInput, WindowMode};
use redress_core::fixtures;
use redress_core::model::{AccountId, ConvId, SegId};

use super::Tally;

/// Every segment ever appended, as `(captured_at, seg_id)`.
type Timeline = Vec<(u64, String)>;

/// The window predicate evaluated over the whole timeline.
fn expected(mode: WindowMode, n: u32, all: &Timeline, now: u64) -> BTreeSet<String> {
    match mode {
        WindowMode::Seconds => all
            .iter()
            .filter(|(at, _)| now - at <= u64::from(n) * 1000)
            .map(|(_, id)| id.clone())
            .collect(),
        WindowMode::Messages => {
            let mut sorted = all.clone();
            sorted.sort();
            sorted.into_iter().rev().take(n as usize).map(|(_, id)| id).collect()
        }
    }
}

/// One schedule of appends, waits, queries and attaches. Seconds-mode
/// schedules also wait until the oldest live segment is exactly `n` seconds
/// old and query there.
fn schedule(rng: &mut ChaCha8Rng, mode: WindowMode, n: u32, t: &mut Tally) {
    let key = fixtures::key_ring();
    let conv = ConvId::new("conv-eph").expect("valid id");
    let mut store = EphemeralStore::default();
    store
        .register(conv.clone(), EphemeralWindow::new(mode, n).expect("n >= 1"))
        .expect("fresh store");
    let span = u64::from(n) * 1000;
    let mut now = 50_000u64;
    let mut all: Timeline = Vec::new();
    let mut purged: BTreeSet<String> = BTreeSet::new();
    let steps = rng.gen_range(5..80);
    for k in 0..steps {
        match rng.gen_range(0..9) {
            0..=2 => {
                let id = format!("seg-{k}");
                let at = now.saturating_sub(rng.gen_range(0..=span + 500));
                let speaker = AccountId::new(if rng.gen_bool(0.5) { "acct-a" } else { "acct-b" }).expect("valid id");
                let input = SegmentInput {
                    seg_id: SegId::new(&id).expect("valid id"),
                    speaker: speaker.clone(),
                    captured_at: at,
                    payload: format!("p{k}").into_bytes(),
                };
                match store.append(&conv, input, key.active(), now) {
                    Ok(out) => {
                        t.check(out.segment.speaker == speaker, || format!("{id} lost its speaker"));
                        all.push((at, id));
                        purged.extend(out.purged.into_iter().map(|p| p.seg_id.to_string()));
                    }
                    Err(e) => t.check(false, || format!("append {id} failed: {e}")),
                }
            }
            3 | 4 => now += [0, 1, span - 1, span, span + 1, rng.gen_range(0..=span * 2)][rng.gen_range(0..6)],
            5 if mode == WindowMode::Seconds => {
                let live: Vec<u64> = all.iter().filter(|(_, id)| !purged.contains(id)).map(|(at, _)| *at).collect();
                if let Some(oldest) = live.iter().min() {
                    if oldest + span >= now {
                        now = oldest + span;
                        t.note("boundary-queries", 1);
                    }
                }
                query(&store, &conv, mode, n, &all, &purged, now, t);
            }
            5..=6 => query(&store, &conv, mode, n, &all, &purged, now, t),
            _ => {
                if all.is_empty() {
                    continue;
                }
                let id = all[rng.gen_range(0..all.len())].1.clone();
                let live = expected(mode, n, &all, now).contains(&id);
                let res = store.attach(&[SegId::new(&id).expect("valid id")], now);
                let pinned_purged = res.as_ref().is_ok_and(|s| purged.contains(s[0].seg_id.as_str()));
                let verifies = res.as_ref().map_or(true, |s| s[0].verify(key.active()));
                t.check(res.is_ok() == live && !pinned_purged && verifies, || {
                    format!("attach {id} at {now}: ok={} expected {live}", res.is_ok())
                });
                t.note(if live { "attach-live" } else { "attach-expired" }, 1);
            }
        }
        let buffer = store.buffer(&conv).expect("registered");
        purged.extend(buffer.tombstones().iter().map(|p| p.seg_id.to_string()));
        let back: Vec<&str> = buffer.live().iter().map(|s| s.seg_id.as_str()).filter(|id| purged.contains(*id)).collect();
        if !back.is_empty() {
            t.violation(|| format!("purged segments {back:?} reappeared"));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn query(store: &EphemeralStore, conv: &ConvId, mode: WindowMode, n: u32, all: &Timeline, purged: &BTreeSet<String>, now: u64, t: &mut Tally) {
    let got: BTreeSet<String> = match store.reportable(conv, now) {
        Ok(segs) => segs.into_iter().map(|s| s.seg_id.to_string()).collect(),
        Err(e) => {
            t.check(false, || format!("reportable failed: {e}"));
            return;
        }
    };
    let want = expected(mode, n, all, now);
    t.check(got == want && got.is_disjoint(purged), || {
        format!("{mode:?}({n}) at {now}: got {got:?} want {want:?}")
    });
}

/// `schedules` schedules, alternating seconds and messages windows.
pub fn run(seed: u64, schedules: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for i in 0..schedules {
        let mode = if i % 2 == 0 { WindowMode::Seconds } else { WindowMode::Messages };
        let n = rng.gen_range(1..=12);
        schedule(&mut rng, mode, n, &mut t);
        t.note(if mode == WindowMode::Seconds { "seconds-schedules" } else { "messages-schedules" }, 1);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_boundary_by_hand() {
        let all: Timeline = vec![(5_000, "a".into()), (20_000, "b".into())];
        assert_eq!(expected(WindowMode::Seconds, 30, &all, 40_000), BTreeSet::from(["b".to_owned()]));
        assert_eq!(expected(WindowMode::Seconds, 30, &all, 35_000).len(), 2);
        assert_eq!(expected(WindowMode::Seconds, 30, &all, 35_001).len(), 1);
        assert_eq!(expected(WindowMode::Messages, 1, &all, 0), BTreeSet::from(["b".to_owned()]));
    }

    #[test]
    fn small_run_is_clean() {
        let t = run(9, 100);
        assert!(t.ok(), "{t}");
        assert!(t.noted("boundary-queries") > 0);
    }
}

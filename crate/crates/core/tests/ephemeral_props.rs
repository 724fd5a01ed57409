use std::collections::BTreeSet;

use proptest::prelude::*;
use redress_core::ephemeral::{EphemeralStore, EphemeralWindow, SegmentInput, WindowMode};
use redress_core::fixtures;
use redress_core::model::{AccountId, ConvId, SegId};

#[derive(Debug, Clone)]
enum Step {
    Append { lag: u64, speaker: bool },
    Wait { ms: u64 },
    Query,
    Attach { pick: usize },
}

fn arb_step(n: u32) -> impl Strategy<Value = Step> {
    let span = u64::from(n) * 1000;
    prop_oneof![
        3 => (0..=span + 500, any::<bool>()).prop_map(|(lag, speaker)| Step::Append { lag, speaker }),
        2 => prop_oneof![Just(0u64), 1..=span + 1, Just(span), Just(span + 1)].prop_map(|ms| Step::Wait { ms }),
        2 => Just(Step::Query),
        1 => any::<usize>().prop_map(|pick| Step::Attach { pick }),
    ]
}

fn arb_schedule() -> impl Strategy<Value = (WindowMode, u32, Vec<Step>)> {
    (prop_oneof![Just(WindowMode::Seconds), Just(WindowMode::Messages)], 1u32..6)
        .prop_flat_map(|(mode, n)| (Just(mode), Just(n), prop::collection::vec(arb_step(n), 1..60)))
}

/// The window predicate evaluated from scratch over every segment ever
/// appended: `(captured_at, seg_id)` rows.
fn expected(mode: WindowMode, n: u32, all: &[(u64, SegId)], now: u64) -> BTreeSet<SegId> {
    match mode {
        WindowMode::Seconds => all
            .iter()
            .filter(|(at, _)| now - at <= u64::from(n) * 1000)
            .map(|(_, id)| id.clone())
            .collect(),
        WindowMode::Messages => {
            let mut sorted: Vec<&(u64, SegId)> = all.iter().collect();
            sorted.sort();
            sorted.iter().rev().take(n as usize).map(|(_, id)| id.clone()).collect()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn availability_matches_window_predicate((mode, n, steps) in arb_schedule()) {
        let key = fixtures::key_ring();
        let conv = ConvId::new("conv-x").unwrap();
        let mut store = EphemeralStore::default();
        store.register(conv.clone(), EphemeralWindow::new(mode, n).unwrap()).unwrap();
        let mut now = 10_000u64;
        let mut all: Vec<(u64, SegId)> = Vec::new();
        let mut purged: BTreeSet<SegId> = BTreeSet::new();
        for (k, step) in steps.iter().enumerate() {
            match step {
                Step::Append { lag, speaker } => {
                    let id = SegId::new(format!("s{k}")).unwrap();
                    let at = now.saturating_sub(*lag);
                    let speaker = AccountId::new(if *speaker { "acct-a" } else { "acct-b" }).unwrap();
                    let input = SegmentInput { seg_id: id.clone(), speaker: speaker.clone(), captured_at: at, payload: vec![k as u8] };
                    let out = store.append(&conv, input, key.active(), now).unwrap();
                    prop_assert_eq!(&out.segment.speaker, &speaker);
                    all.push((at, id));
                    purged.extend(out.purged.into_iter().map(|t| t.seg_id));
                }
                Step::Wait { ms } => now += ms,
                Step::Query => {
                    let got: BTreeSet<SegId> = store.reportable(&conv, now).unwrap().into_iter().map(|s| s.seg_id).collect();
                    let want = expected(mode, n, &all, now);
                    prop_assert_eq!(&got, &want, "mode {:?} n {} now {}", mode, n, now);
                    prop_assert!(got.is_disjoint(&purged));
                }
                Step::Attach { pick } => {
                    if all.is_empty() {
                        continue;
                    }
                    let id = all[pick % all.len()].1.clone();
                    let live = expected(mode, n, &all, now).contains(&id);
                    let res = store.attach(std::slice::from_ref(&id), now);
                    prop_assert_eq!(res.is_ok(), live, "attach {} at {}", id, now);
                    if let Ok(segs) = res {
                        prop_assert!(segs[0].verify(key.active()));
                        prop_assert!(!purged.contains(&id));
                    }
                }
            }
            purged.extend(store.buffer(&conv).unwrap().tombstones().iter().map(|t| t.seg_id.clone()));
            for s in store.buffer(&conv).unwrap().live() {
                prop_assert!(!purged.contains(&s.seg_id), "purged segment {} reappeared", s.seg_id);
            }
        }
    }
}

#[test]
fn seconds_boundary_is_inclusive() {
    let key = fixtures::key_ring();
    let conv = ConvId::new("conv-x").unwrap();
    let mut store = EphemeralStore::default();
    store.register(conv.clone(), EphemeralWindow::seconds(30).unwrap()).unwrap();
    let input = SegmentInput {
        seg_id: SegId::new("s1").unwrap(),
        speaker: AccountId::new("acct-a").unwrap(),
        captured_at: 1_000,
        payload: b"x".to_vec(),
    };
    store.append(&conv, input, key.active(), 1_000).unwrap();
    assert_eq!(store.reportable(&conv, 31_000).unwrap().len(), 1);
    assert_eq!(store.reportable(&conv, 31_001).unwrap().len(), 0);
}

use std::collections::BTreeSet;

use proptest::prelude::*;
use redress_core::bundle::{render_bundle_json, SenderRef};
use redress_core::fixtures::blank_message;
use redress_core::minimize::{
    render_views, AttributeName, Minimizer, MinimizerConfig, QuestionId, RedactionSpan, VisibilityLevel,
};
use redress_core::model::Message;

fn minimizer() -> Minimizer {
    Minimizer::new(MinimizerConfig::default()).unwrap()
}

fn arb_body() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z ]{0,40}",
        "[a-zA-Z0-9 .:/@é✓]{0,60}",
        Just("you are an idiot, see https://x.example/a.png".to_owned()),
        Just("meet me at 42 Elm St or call 555-123-4567".to_owned()),
    ]
}

/// Sorted, non-overlapping spans inside a body of `len` chars.
fn arb_spans(len: usize) -> impl Strategy<Value = Vec<RedactionSpan>> {
    prop::collection::btree_set(0..=len, 0..8).prop_map(move |cuts| {
        let cuts: Vec<usize> = cuts.into_iter().collect();
        cuts.chunks(2)
            .filter(|c| c.len() == 2 && c[0] < c[1])
            .map(|c| RedactionSpan::auto(c[0], c[1]))
            .collect()
    })
}

fn arb_names() -> impl Strategy<Value = BTreeSet<AttributeName>> {
    prop::collection::btree_set(prop::sample::select(AttributeName::ALL.to_vec()), 1..5)
}

prop_compose! {
    fn arb_case()(body in arb_body())(
        spans in arb_spans(body.chars().count()),
        keep in prop::collection::vec(any::<bool>(), 8),
        names in arb_names(),
        keep_names in prop::collection::vec(any::<bool>(), 5),
        body in Just(body),
    ) -> (String, Vec<VisibilityLevel>) {
        let fewer: Vec<RedactionSpan> = spans.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| s.clone()).collect();
        let small: BTreeSet<AttributeName> = names.iter().zip(&keep_names).filter(|(_, k)| **k).map(|(n, _)| *n).collect();
        let small = if small.is_empty() { names.iter().take(1).copied().collect() } else { small };
        let levels = vec![
            VisibilityLevel::Removed,
            VisibilityLevel::MetadataOnly,
            VisibilityLevel::Attributes { names: small },
            VisibilityLevel::Attributes { names },
            VisibilityLevel::Answer { question: QuestionId::new("threat-made").unwrap() },
            VisibilityLevel::Redacted { spans },
            VisibilityLevel::Redacted { spans: fewer },
            VisibilityLevel::Full,
        ];
        (body, levels)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn reveal_sets_grow_with_level((body, levels) in arb_case()) {
        let mz = minimizer();
        let mut m = blank_message("m1", "c", "s0", 10);
        m.body = body;
        let reveals: Vec<_> = levels
            .iter()
            .map(|l| mz.minimize(&m, l).unwrap().map(|v| mz.reveal_set(&v)).unwrap_or_default())
            .collect();
        for (i, lo) in levels.iter().enumerate() {
            for (j, hi) in levels.iter().enumerate() {
                if lo.le(hi) {
                    let (a, b) = (&reveals[i], &reveals[j]);
                    prop_assert!(a.is_subset(b), "{:?} reveals {:?} not in {:?}", lo, a.difference(b).collect::<Vec<_>>(), hi);
                }
            }
        }
    }
}

prop_compose! {
    fn arb_bundle()(n in 1usize..20)(
        bodies in prop::collection::vec(arb_body(), n),
        kinds in prop::collection::vec(0u8..4, n),
        pick in 0..n,
    ) -> (Vec<Message>, Vec<VisibilityLevel>, usize) {
        let msgs: Vec<Message> = bodies
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                let mut m = blank_message(&format!("m{i}"), "c", if i % 2 == 0 { "s0" } else { "s1" }, 100 + i as u64);
                m.body = b;
                m
            })
            .collect();
        let levels = kinds
            .into_iter()
            .map(|k| match k {
                0 => VisibilityLevel::MetadataOnly,
                1 => VisibilityLevel::Attributes { names: AttributeName::ALL.into_iter().collect() },
                2 => VisibilityLevel::Removed,
                _ => VisibilityLevel::Full,
            })
            .collect();
        (msgs, levels, pick)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn removed_message_is_byte_identical_to_absent((msgs, mut levels, pick) in arb_bundle()) {
        let mz = minimizer();
        levels[pick] = VisibilityLevel::Removed;
        let sender = |m: &Message| SenderRef::Account { account: m.sender.clone() };
        let with = render_views(&mz, msgs.iter().zip(&levels).map(|(m, l)| (m, l, sender(m)))).unwrap();
        let without = render_views(
            &mz,
            msgs.iter().zip(&levels).enumerate().filter(|(i, _)| *i != pick).map(|(_, (m, l))| (m, l, sender(m))),
        )
        .unwrap();
        prop_assert_eq!(render_bundle_json(&with), render_bundle_json(&without));
    }

    #[test]
    fn minimize_is_deterministic((msgs, levels, _pick) in arb_bundle()) {
        let (a, b) = (minimizer(), minimizer());
        for (m, l) in msgs.iter().zip(&levels) {
            prop_assert_eq!(a.minimize(m, l).unwrap(), b.minimize(m, l).unwrap());
        }
    }
}

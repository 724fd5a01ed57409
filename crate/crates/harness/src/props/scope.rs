//! Scope policies against a brute-force single-pass oracle.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redress_core::fixtures::blank_message;
use redress_core::model::{AccountId, ConvId, Conversation, ConversationKind, Message};
use redress_core::scope::{apply_scope, preset, ScopePolicy};

use super::Tally;

const SENDERS: [&str; 5] = ["acct-s0", "acct-s1", "acct-s2", "acct-s3", "acct-s4"];
pub const MAX_MESSAGES: usize = 200;

fn account(i: usize) -> AccountId {
    AccountId::new(SENDERS[i]).expect("valid id")
}

fn conversation(rng: &mut ChaCha8Rng, id: &str) -> (Conversation, Vec<Message>) {
    let mut members: Vec<usize> = (0..SENDERS.len()).filter(|_| rng.gen_bool(0.7)).collect();
    if members.is_empty() {
        members.push(0);
    }
    let n = rng.gen_range(0..=MAX_MESSAGES);
    let horizon = rng.gen_range(1..2_000u64);
    let mut msgs: Vec<Message> = (0..n)
        .map(|i| {
            let s = *members.choose(rng).expect("non-empty");
            let mut m = blank_message(&format!("{id}-m{i}"), id, SENDERS[s], rng.gen_range(0..horizon));
            m.body = format!("b{i}");
            m
        })
        .collect();
    msgs.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    let conv = Conversation {
        conv_id: ConvId::new(id).expect("valid id"),
        kind: ConversationKind::PrivateGroup,
        participants: members.into_iter().map(account).collect(),
        ephemeral_policy: None,
    };
    (conv, msgs)
}

fn plain_policy(rng: &mut ChaCha8Rng) -> ScopePolicy {
    match rng.gen_range(0..4) {
        0 => ScopePolicy::AllInConversation,
        1 => ScopePolicy::LastN {
            n: rng.gen_range(1..=MAX_MESSAGES as u32 + 20),
        },
        2 => {
            let a = rng.gen_range(0..2_100u64);
            let b = rng.gen_range(0..2_100u64);
            ScopePolicy::TimeWindow {
                start_ms: a.min(b),
                end_ms: a.max(b),
            }
        }
        _ => ScopePolicy::participants((0..SENDERS.len()).filter(|_| rng.gen_bool(0.4)).map(account)),
    }
}

/// Decides each message from the policy's predicate in one pass.
fn oracle_one(policy: &ScopePolicy, msgs: &[Message]) -> Vec<String> {
    let total = msgs.len();
    let mut out = Vec::new();
    for (i, m) in msgs.iter().enumerate() {
        let from_end = total - i;
        let keep = match policy {
            ScopePolicy::AllInConversation => true,
            ScopePolicy::LastN { n } => from_end <= *n as usize,
            ScopePolicy::TimeWindow { start_ms, end_ms } => m.sent_at >= *start_ms && m.sent_at <= *end_ms,
            ScopePolicy::Participants { senders } => senders.iter().any(|s| s == &m.sender),
            ScopePolicy::CrossConversation { .. } => false,
        };
        if keep {
            out.push(m.msg_id.to_string());
        }
    }
    out
}

fn oracle(policy: &ScopePolicy, convs: &[(Conversation, Vec<Message>)], parties: &[AccountId]) -> Vec<String> {
    match policy {
        ScopePolicy::CrossConversation { inner } => {
            let mut rows: Vec<(u64, String)> = Vec::new();
            for (c, msgs) in convs {
                if parties.iter().all(|p| c.participants.iter().any(|x| x == p)) {
                    let keep: BTreeSet<String> = oracle_one(inner, msgs).into_iter().collect();
                    rows.extend(msgs.iter().filter(|m| keep.contains(m.msg_id.as_str())).map(|m| (m.sent_at, m.msg_id.to_string())));
                }
            }
            rows.sort();
            rows.into_iter().map(|(_, id)| id).collect()
        }
        plain => convs.iter().flat_map(|(_, m)| oracle_one(plain, m)).collect(),
    }
}

fn ids(v: &[Message]) -> Vec<String> {
    v.iter().map(|m| m.msg_id.to_string()).collect()
}

/// The shipped presets and the message counts they must forward.
pub const PRESETS: [(&str, u32); 3] = [("whatsapp-5", 5), ("messenger-30", 30), ("google-chat-50", 50)];

/// `conversations` random conversations; each is checked under one random
/// plain policy, one cross-conversation policy and all presets.
pub fn run(seed: u64, conversations: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for (name, n) in PRESETS {
        let got = preset(name).ok();
        t.check(got == Some(ScopePolicy::LastN { n }), || format!("preset {name} is {got:?}"));
    }
    for k in 0..conversations {
        let a = conversation(&mut rng, &format!("c{k}a"));
        let b = conversation(&mut rng, &format!("c{k}b"));
        let single = vec![a.clone()];
        let mut policies = vec![plain_policy(&mut rng)];
        policies.extend(PRESETS.iter().map(|(name, _)| preset(name).expect("shipped")));
        for p in &policies {
            let got = ids(&apply_scope(p, &single, &[]));
            let want = oracle(p, &single, &[]);
            t.check(got == want, || format!("conversation {k} policy {p:?}: got {} want {}", got.len(), want.len()));
        }
        let inner = plain_policy(&mut rng);
        let cross = ScopePolicy::cross(inner).expect("plain inner");
        let parties: Vec<AccountId> = (0..2).map(|_| account(rng.gen_range(0..SENDERS.len()))).collect();
        let both = vec![a, b];
        let got = ids(&apply_scope(&cross, &both, &parties));
        let want = oracle(&cross, &both, &parties);
        t.check(got == want, || format!("conversation {k} policy {cross:?}: got {} want {}", got.len(), want.len()));
        t.note("messages", both.iter().map(|(_, m)| m.len()).sum());
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_is_clean() {
        let t = run(1, 30);
        assert!(t.ok(), "{t}");
        assert_eq!(t.cases, 3 + 30 * 5);
    }

    #[test]
    fn oracle_last_n_and_window_by_hand() {
        let msgs: Vec<Message> = (0..6).map(|i| blank_message(&format!("m{i}"), "c", SENDERS[i % 2], 10 * i as u64)).collect();
        assert_eq!(oracle_one(&ScopePolicy::LastN { n: 2 }, &msgs), ["m4", "m5"]);
        assert_eq!(oracle_one(&ScopePolicy::TimeWindow { start_ms: 10, end_ms: 30 }, &msgs), ["m1", "m2", "m3"]);
    }
}

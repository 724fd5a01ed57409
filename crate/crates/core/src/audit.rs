//! Append-only, hash-chained audit log.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{b64, LengthPrefixed};

pub const GENESIS: [u8; 32] = [0; 32];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub actor: String,
    pub action: String,
    pub object: String,
    pub at: u64,
    #[serde(with = "b64::array32")]
    pub prev_hash: [u8; 32],
    #[serde(with = "b64::array32")]
    pub hash: [u8; 32],
}

pub fn event_hash(seq: u64, actor: &str, action: &str, object: &str, at: u64, prev: &[u8; 32]) -> [u8; 32] {
    let bytes = LengthPrefixed::new()
        .u64(seq)
        .bytes(actor.as_bytes())
        .bytes(action.as_bytes())
        .bytes(object.as_bytes())
        .u64(at)
        .raw(prev)
        .finish();
    Sha256::digest(bytes).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub valid: bool,
    /// Sequence number expected at the first position that fails.
    pub first_broken: Option<u64>,
}

/// Recomputes every hash and checks that sequence numbers run gaplessly
/// from 1.
pub fn verify_audit_chain(events: &[AuditEvent]) -> ChainCheck {
    let mut prev = GENESIS;
    for (i, e) in events.iter().enumerate() {
        let expected = i as u64 + 1;
        let ok = e.seq == expected
            && e.prev_hash == prev
            && e.hash == event_hash(e.seq, &e.actor, &e.action, &e.object, e.at, &e.prev_hash);
        if !ok {
            return ChainCheck {
                valid: false,
                first_broken: Some(expected),
            };
        }
        prev = e.hash;
    }
    ChainCheck {
        valid: true,
        first_broken: None,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLog {
    events: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn append(&mut self, actor: &str, action: &str, object: &str, at: u64) -> &AuditEvent {
        let seq = self.events.len() as u64 + 1;
        let prev_hash = self.head();
        let hash = event_hash(seq, actor, action, object, at, &prev_hash);
        self.events.push(AuditEvent {
            seq,
            actor: actor.to_owned(),
            action: action.to_owned(),
            object: object.to_owned(),
            at,
            prev_hash,
            hash,
        });
        self.events.last().expect("just pushed")
    }

    pub fn head(&self) -> [u8; 32] {
        self.events.last().map_or(GENESIS, |e| e.hash)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn get(&self, seq: u64) -> Option<&AuditEvent> {
        seq.checked_sub(1).and_then(|i| self.events.get(i as usize))
    }

    pub fn verify(&self) -> ChainCheck {
        verify_audit_chain(&self.events)
    }

    pub fn to_ndjson(&self) -> String {
        to_ndjson(&self.events)
    }
}

pub fn to_ndjson(events: &[AuditEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("audit events serialize"));
        out.push('\n');
    }
    out
}

pub fn from_ndjson(text: &str) -> Result<Vec<AuditEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_of(n: u64) -> AuditLog {
        let mut log = AuditLog::default();
        for i in 1..=n {
            log.append("acct-x", &format!("op.{}", i % 5), &format!("report:R-{i}"), i * 10);
        }
        log
    }

    // Independent recomputation: assemble the hashed bytes by hand.
    fn oracle_first_broken(events: &[AuditEvent]) -> Option<u64> {
        let mut prev = [0u8; 32];
        for (i, e) in events.iter().enumerate() {
            let mut buf = Vec::new();
            buf.extend_from_slice(&e.seq.to_be_bytes());
            for s in [&e.actor, &e.action, &e.object] {
                buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
                buf.extend_from_slice(s.as_bytes());
            }
            buf.extend_from_slice(&e.at.to_be_bytes());
            buf.extend_from_slice(&prev);
            let h: [u8; 32] = Sha256::digest(&buf).into();
            if e.seq != i as u64 + 1 || e.prev_hash != prev || e.hash != h {
                return Some(i as u64 + 1);
            }
            prev = e.hash;
        }
        None
    }

    #[test]
    fn untouched_log_verifies() {
        let log = log_of(50);
        assert_eq!(log.verify(), ChainCheck { valid: true, first_broken: None });
        assert_eq!(oracle_first_broken(log.events()), None);
    }

    #[test]
    fn mutated_action_breaks_at_that_seq() {
        let mut events = log_of(50).events().to_vec();
        events[16].action = "op.forged".into();
        assert_eq!(verify_audit_chain(&events).first_broken, Some(17));
    }

    #[test]
    fn deleted_event_breaks_at_gap() {
        let mut events = log_of(50).events().to_vec();
        events.remove(24);
        let check = verify_audit_chain(&events);
        assert!(!check.valid);
        assert_eq!(check.first_broken, oracle_first_broken(&events));
        assert_eq!(check.first_broken, Some(25));
    }

    #[test]
    fn ndjson_round_trip() {
        let log = log_of(3);
        let text = log.to_ndjson();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(from_ndjson(&text).unwrap(), log.events());
        assert!(text.lines().next().unwrap().contains("\"prev_hash\":\"AAAA"));
    }

    proptest! {
        #[test]
        fn any_single_mutation_detected(n in 1u64..40, pick in 0usize..40, field in 0u8..5) {
            let mut events = log_of(n).events().to_vec();
            let i = pick % events.len();
            match field {
                0 => events[i].actor.push('x'),
                1 => events[i].object.push('x'),
                2 => events[i].at += 1,
                3 => events[i].prev_hash[0] ^= 1,
                _ => events[i].seq += 1,
            }
            let check = verify_audit_chain(&events);
            prop_assert_eq!(check.first_broken, oracle_first_broken(&events));
            prop_assert_eq!(check.first_broken, Some(i as u64 + 1));
        }
    }
}

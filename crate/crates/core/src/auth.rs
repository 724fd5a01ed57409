//! Platform-side message franking, bundle attestation and forwarded-evidence
//! verification.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::bundle::{bundle_digest, ItemContent, RenderedItem, SenderRef};
use crate::access::PartyRole;
use crate::ephemeral::EphemeralSegment;
use crate::model::{b64, canonical_serialize, AccountId, Message, ModelError, ReportId, UserProfile};

type HmacSha256 = Hmac<Sha256>;

const ATTEST_DOMAIN: &[u8] = b"attest:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("attestation refused: source of {item_id} is missing or fails frank verification")]
    AttestationRefused { item_id: String },
    #[error("unknown key id {0:?}")]
    UnknownKey(String),
    #[error("invalid key material: {0}")]
    InvalidKey(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrankTag(#[serde(with = "b64::array32")] pub [u8; 32]);

impl FrankTag {
    pub fn zero() -> Self {
        Self([0; 32])
    }
}

impl fmt::Debug for FrankTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FrankTag(")?;
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

/// A MAC key held by the platform. Deliberately not serializable.
#[derive(Clone)]
pub struct PlatformKey {
    key_id: String,
    secret: [u8; 32],
}

impl PlatformKey {
    pub fn new(key_id: impl Into<String>, secret: [u8; 32]) -> Self {
        Self {
            key_id: key_id.into(),
            secret,
        }
    }

    pub fn from_hex(key_id: impl Into<String>, hex: &str) -> Result<Self, AuthError> {
        let hex = hex.trim();
        if hex.len() != 64 || !hex.is_ascii() {
            return Err(AuthError::InvalidKey("expected 64 hex characters".into()));
        }
        let mut secret = [0u8; 32];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let pair = std::str::from_utf8(chunk).expect("ascii");
            secret[i] = u8::from_str_radix(pair, 16)
                .map_err(|_| AuthError::InvalidKey(format!("bad hex digit pair {pair:?}")))?;
        }
        Ok(Self::new(key_id, secret))
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    /// Raw secret bytes; only for key-store persistence and secrecy scans.
    pub fn secret_bytes(&self) -> &[u8; 32] {
        &self.secret
    }

    pub(crate) fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.secret).expect("hmac accepts any key length")
    }
}

impl fmt::Debug for PlatformKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlatformKey")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

/// Active signing key plus retired keys kept for verification only.
#[derive(Debug, Clone)]
pub struct KeyRing {
    keys: BTreeMap<String, PlatformKey>,
    active: String,
}

impl KeyRing {
    pub fn new(active: PlatformKey) -> Self {
        let id = active.key_id.clone();
        Self {
            keys: BTreeMap::from([(id.clone(), active)]),
            active: id,
        }
    }

    /// Makes `key` the signing key; the previous one stays for verification.
    pub fn rotate(&mut self, key: PlatformKey) {
        self.active = key.key_id.clone();
        self.keys.insert(key.key_id.clone(), key);
    }

    pub fn insert_retired(&mut self, key: PlatformKey) {
        if key.key_id != self.active {
            self.keys.insert(key.key_id.clone(), key);
        }
    }

    pub fn active(&self) -> &PlatformKey {
        &self.keys[&self.active]
    }

    pub fn get(&self, key_id: &str) -> Option<&PlatformKey> {
        self.keys.get(key_id)
    }

    pub fn keys(&self) -> impl Iterator<Item = &PlatformKey> {
        self.keys.values()
    }

    pub fn frank(&self, m: &Message) -> Result<FrankTag, ModelError> {
        frank(m, self.active())
    }

    pub fn verify_frank(&self, m: &Message) -> bool {
        self.keys.values().any(|k| verify_frank(m, k))
    }
}

pub fn frank(m: &Message, key: &PlatformKey) -> Result<FrankTag, ModelError> {
    let bytes = canonical_serialize(m)?;
    let mut mac = key.mac();
    mac.update(bytes.as_bytes());
    Ok(FrankTag(mac.finalize().into_bytes().into()))
}

pub fn verify_frank(m: &Message, key: &PlatformKey) -> bool {
    let Ok(bytes) = canonical_serialize(m) else {
        return false;
    };
    let mut mac = key.mac();
    mac.update(bytes.as_bytes());
    mac.verify_slice(&m.frank_tag.0).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestationToken {
    #[serde(with = "b64::array32")]
    pub bundle_digest: [u8; 32],
    pub report_id: ReportId,
    pub issued_at: u64,
    pub key_id: String,
    #[serde(with = "b64::array32")]
    pub mac: [u8; 32],
}

fn token_mac(key: &PlatformKey, digest: &[u8; 32], report_id: &ReportId, issued_at: u64) -> HmacSha256 {
    let mut mac = key.mac();
    mac.update(ATTEST_DOMAIN);
    mac.update(digest);
    mac.update(&(report_id.as_str().len() as u32).to_be_bytes());
    mac.update(report_id.as_str().as_bytes());
    mac.update(&issued_at.to_be_bytes());
    mac
}

/// Lookup of the stored originals behind rendered items.
pub trait EvidenceSources {
    fn message(&self, msg_id: &str) -> Option<&Message>;
    fn segment(&self, seg_id: &str) -> Option<&EphemeralSegment>;
}

/// Issues a token over `bundle` after checking that every item traces back to
/// a stored original whose frank tag verifies.
pub fn attest_bundle(
    bundle: &[RenderedItem],
    report_id: &ReportId,
    ring: &KeyRing,
    issued_at: u64,
    sources: &impl EvidenceSources,
) -> Result<AttestationToken, AuthError> {
    for item in bundle {
        let ok = match &item.content {
            ItemContent::Segment { .. } => sources
                .segment(&item.id)
                .is_some_and(|s| ring.keys().any(|k| s.verify(k))),
            _ => sources.message(&item.id).is_some_and(|m| ring.verify_frank(m)),
        };
        if !ok {
            return Err(AuthError::AttestationRefused {
                item_id: item.id.clone(),
            });
        }
    }
    let key = ring.active();
    let digest = bundle_digest(bundle);
    let mac = token_mac(key, &digest, report_id, issued_at).finalize().into_bytes().into();
    Ok(AttestationToken {
        bundle_digest: digest,
        report_id: report_id.clone(),
        issued_at,
        key_id: key.key_id.clone(),
        mac,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Attribution {
    Account { account: AccountId },
    Role { pseudonym: String, role: PartyRole },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemAttribution {
    pub item_id: String,
    pub sender: Attribution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mac_valid: bool,
    pub report_id: ReportId,
    pub key_id: String,
    pub issued_at: u64,
    pub identity_attribution: Vec<ItemAttribution>,
    pub anonymized_roles: bool,
}

pub fn verify_forwarded(
    bundle: &[RenderedItem],
    token: &AttestationToken,
    ring: &KeyRing,
) -> Result<VerificationReport, AuthError> {
    let key = ring
        .get(&token.key_id)
        .ok_or_else(|| AuthError::UnknownKey(token.key_id.clone()))?;
    let digest_ok = bundle_digest(bundle) == token.bundle_digest;
    let mac_ok = token_mac(key, &token.bundle_digest, &token.report_id, token.issued_at)
        .verify_slice(&token.mac)
        .is_ok();
    let identity_attribution = bundle
        .iter()
        .map(|item| ItemAttribution {
            item_id: item.id.clone(),
            sender: match &item.sender {
                SenderRef::Account { account } => Attribution::Account {
                    account: account.clone(),
                },
                SenderRef::Pseudonym { pseudonym, role } => Attribution::Role {
                    pseudonym: pseudonym.clone(),
                    role: *role,
                },
            },
        })
        .collect();
    Ok(VerificationReport {
        mac_valid: digest_ok && mac_ok,
        report_id: token.report_id.clone(),
        key_id: token.key_id.clone(),
        issued_at: token.issued_at,
        identity_attribution,
        anonymized_roles: bundle
            .iter()
            .any(|i| matches!(i.sender, SenderRef::Pseudonym { .. })),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityMatch {
    Match,
    Mismatch,
}

/// Compares identifiers only. A look-alike account sharing the claimed
/// display name, or a renamed original, is decided by account id alone.
pub fn detect_impersonation(claimed: &UserProfile, evidence_sender: &AccountId) -> IdentityMatch {
    if &claimed.account_id == evidence_sender {
        IdentityMatch::Match
    } else {
        IdentityMatch::Mismatch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    struct Store(Vec<Message>);

    impl EvidenceSources for Store {
        fn message(&self, msg_id: &str) -> Option<&Message> {
            self.0.iter().find(|m| m.msg_id.as_str() == msg_id)
        }
        fn segment(&self, _: &str) -> Option<&EphemeralSegment> {
            None
        }
    }

    fn full_item(m: &Message) -> RenderedItem {
        RenderedItem {
            id: m.msg_id.to_string(),
            conversation: m.conversation_id.clone(),
            sender: SenderRef::Account {
                account: m.sender.clone(),
            },
            sent_at: m.sent_at,
            content: ItemContent::Full {
                body: m.body.clone(),
            },
        }
    }

    #[test]
    fn frank_round_trip_and_body_tamper() {
        let w = fixtures::world();
        let m1 = w.message("m1").clone();
        assert!(verify_frank(&m1, w.keys.active()));
        let mut tampered = m1.clone();
        tampered.body = "body-2".into();
        assert!(!verify_frank(&tampered, w.keys.active()));
    }

    #[test]
    fn sender_swap_to_lookalike_fails() {
        let w = fixtures::world();
        let original = w.message("m1").clone();
        let mut swapped = original.clone();
        swapped.sender = AccountId::new("acct-carol").unwrap();
        // Oracle: the MAC over the modified canonical bytes differs from the stored tag.
        let recomputed = frank(&swapped, w.keys.active()).unwrap();
        assert_ne!(recomputed, original.frank_tag);
        assert!(!verify_frank(&swapped, w.keys.active()));
        assert_eq!(w.profile("acct-carol").display_name, w.profile("acct-bob").display_name);
    }

    #[test]
    fn attest_then_verify_and_reorder() {
        let w = fixtures::world();
        let store = Store(w.f1_messages());
        let bundle: Vec<_> = store.0[..3].iter().map(full_item).collect();
        let rid = ReportId::new("R-1").unwrap();
        let token = attest_bundle(&bundle, &rid, &w.keys, 50_000, &store).unwrap();
        assert!(verify_forwarded(&bundle, &token, &w.keys).unwrap().mac_valid);

        let mut reordered = bundle.clone();
        reordered.swap(0, 1);
        assert!(!verify_forwarded(&reordered, &token, &w.keys).unwrap().mac_valid);
    }

    #[test]
    fn tampered_store_body_refuses_attestation() {
        let w = fixtures::world();
        let mut messages = w.f1_messages();
        messages[3].body = "edited after the fact".into();
        // Oracle: per-message frank verification.
        let bad: Vec<_> = messages
            .iter()
            .filter(|m| !verify_frank(m, w.keys.active()))
            .map(|m| m.msg_id.to_string())
            .collect();
        assert_eq!(bad, vec!["m4"]);
        let store = Store(messages);
        let bundle: Vec<_> = store.0.iter().map(full_item).collect();
        let err = attest_bundle(&bundle, &ReportId::new("R-1").unwrap(), &w.keys, 1, &store)
            .unwrap_err();
        assert_eq!(err, AuthError::AttestationRefused { item_id: "m4".into() });
    }

    #[test]
    fn token_for_other_report_fails() {
        let w = fixtures::world();
        let store = Store(w.f1_messages());
        let a: Vec<_> = store.0[..2].iter().map(full_item).collect();
        let b: Vec<_> = store.0[2..4].iter().map(full_item).collect();
        let ta = attest_bundle(&a, &ReportId::new("R-1").unwrap(), &w.keys, 1, &store).unwrap();
        let tb = attest_bundle(&b, &ReportId::new("R-2").unwrap(), &w.keys, 1, &store).unwrap();
        assert!(!verify_forwarded(&a, &tb, &w.keys).unwrap().mac_valid);
        let mut relabeled = ta.clone();
        relabeled.report_id = ReportId::new("R-2").unwrap();
        assert!(!verify_forwarded(&a, &relabeled, &w.keys).unwrap().mac_valid);
    }

    #[test]
    fn unknown_key_is_distinct_error() {
        let w = fixtures::world();
        let store = Store(w.f1_messages());
        let a: Vec<_> = store.0[..2].iter().map(full_item).collect();
        let mut t = attest_bundle(&a, &ReportId::new("R-1").unwrap(), &w.keys, 1, &store).unwrap();
        t.key_id = "k-nope".into();
        assert_eq!(
            verify_forwarded(&a, &t, &w.keys).unwrap_err(),
            AuthError::UnknownKey("k-nope".into())
        );
    }

    #[test]
    fn pseudonymized_report_has_no_account_ids() {
        let w = fixtures::world();
        let store = Store(w.f1_messages());
        let bundle: Vec<_> = store.0[..4]
            .iter()
            .map(|m| {
                let mut item = full_item(m);
                let (label, role) = if m.sender.as_str() == "acct-alice" {
                    ("Participant-1", PartyRole::Reporter)
                } else {
                    ("Participant-2", PartyRole::Reported)
                };
                item.sender = SenderRef::Pseudonym {
                    pseudonym: label.into(),
                    role,
                };
                item
            })
            .collect();
        let rid = ReportId::new("R-9").unwrap();
        let token = attest_bundle(&bundle, &rid, &w.keys, 7, &store).unwrap();
        let report = verify_forwarded(&bundle, &token, &w.keys).unwrap();
        assert!(report.mac_valid);
        assert!(report.anonymized_roles);
        let text = serde_json::to_string(&report).unwrap();
        for p in &w.profiles {
            assert!(!text.contains(p.account_id.as_str()), "{} leaked", p.account_id);
        }
        assert!(text.contains("\"reported\""));
    }

    #[test]
    fn rotation_keeps_old_tags_verifiable() {
        let w = fixtures::world();
        let mut ring = w.keys.clone();
        ring.rotate(PlatformKey::new("k-next", [9; 32]));
        assert!(ring.verify_frank(w.message("m2")));
        assert_eq!(ring.active().key_id(), "k-next");
    }

    #[test]
    fn impersonation_is_identifier_based() {
        let w = fixtures::world();
        let bob = w.profile("acct-bob").clone();
        let carol = w.profile("acct-carol");
        assert_eq!(detect_impersonation(&bob, &bob.account_id), IdentityMatch::Match);
        assert_eq!(bob.display_name, carol.display_name);
        assert_eq!(detect_impersonation(&bob, &carol.account_id), IdentityMatch::Mismatch);
        // Renamed after sending: same id, new display name.
        let mut renamed = bob.clone();
        renamed.display_name = "Robert".into();
        let oracle = renamed.account_id.as_str() == "acct-bob";
        assert!(oracle);
        assert_eq!(detect_impersonation(&renamed, &bob.account_id), IdentityMatch::Match);
    }

    #[test]
    fn key_debug_hides_secret() {
        let k = PlatformKey::new("k1", [0xab; 32]);
        let dbg = format!("{k:?}");
        assert!(!dbg.contains("ab, ") && !dbg.contains("171"));
        let parsed = PlatformKey::from_hex("k1", &"ab".repeat(32)).unwrap();
        assert_eq!(parsed.secret_bytes(), &[0xab; 32]);
    }
}

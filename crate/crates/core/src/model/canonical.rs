//! Deterministic byte encoding of messages, the input to franking.
//!
//! Layout: `msg_id`, `conversation_id`, `sender` as 4-byte big-endian length
//! prefixed byte strings, then `sent_at` as a fixed 8-byte big-endian integer,
//! then the length-prefixed body.

use super::{AccountId, ConvId, Message, ModelError, MsgId};

pub const MAX_BODY_BYTES: usize = 16 * 1024;
pub const MAX_ID_BYTES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalBytes(Vec<u8>);

impl CanonicalBytes {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }
}

impl AsRef<[u8]> for CanonicalBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// The fields covered by the canonical encoding. `deleted`, `edited` and the
/// tag itself are not part of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalFields {
    pub msg_id: MsgId,
    pub conversation_id: ConvId,
    pub sender: AccountId,
    pub sent_at: u64,
    pub body: String,
}

impl From<&Message> for CanonicalFields {
    fn from(m: &Message) -> Self {
        Self {
            msg_id: m.msg_id.clone(),
            conversation_id: m.conversation_id.clone(),
            sender: m.sender.clone(),
            sent_at: m.sent_at,
            body: m.body.clone(),
        }
    }
}

/// Append-only builder for length-prefixed encodings.
#[derive(Debug, Default)]
pub struct LengthPrefixed {
    buf: Vec<u8>,
}

impl LengthPrefixed {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, field: &[u8]) -> Self {
        self.buf.extend_from_slice(&(field.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn u64(mut self, value: u64) -> Self {
        self.buf.extend_from_slice(&value.to_be_bytes());
        self
    }

    pub fn raw(mut self, bytes: &[u8]) -> Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

fn bounded(field: &'static str, value: &[u8], limit: usize) -> Result<(), ModelError> {
    if value.len() > limit {
        Err(ModelError::Oversize {
            field,
            len: value.len(),
            limit,
        })
    } else {
        Ok(())
    }
}

pub fn canonical_serialize(m: &Message) -> Result<CanonicalBytes, ModelError> {
    encode_fields(
        m.msg_id.as_str(),
        m.conversation_id.as_str(),
        m.sender.as_str(),
        m.sent_at,
        &m.body,
    )
}

pub(crate) fn encode_fields(
    msg_id: &str,
    conversation_id: &str,
    sender: &str,
    sent_at: u64,
    body: &str,
) -> Result<CanonicalBytes, ModelError> {
    bounded("msg_id", msg_id.as_bytes(), MAX_ID_BYTES)?;
    bounded("conversation_id", conversation_id.as_bytes(), MAX_ID_BYTES)?;
    bounded("sender", sender.as_bytes(), MAX_ID_BYTES)?;
    bounded("body", body.as_bytes(), MAX_BODY_BYTES)?;
    Ok(CanonicalBytes(
        LengthPrefixed::new()
            .bytes(msg_id.as_bytes())
            .bytes(conversation_id.as_bytes())
            .bytes(sender.as_bytes())
            .u64(sent_at)
            .bytes(body.as_bytes())
            .finish(),
    ))
}

struct Reader<'a> {
    rest: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.rest.len() < n {
            return Err(ModelError::Malformed("truncated"));
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }

    fn prefixed(&mut self, limit: usize) -> Result<&'a str, ModelError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize;
        if len > limit {
            return Err(ModelError::Malformed("field exceeds bound"));
        }
        std::str::from_utf8(self.take(len)?).map_err(|_| ModelError::Malformed("invalid utf-8"))
    }
}

pub fn parse_canonical(bytes: &[u8]) -> Result<CanonicalFields, ModelError> {
    let mut r = Reader { rest: bytes };
    let msg_id = MsgId::new(r.prefixed(MAX_ID_BYTES)?)?;
    let conversation_id = ConvId::new(r.prefixed(MAX_ID_BYTES)?)?;
    let sender = AccountId::new(r.prefixed(MAX_ID_BYTES)?)?;
    let sent_at = u64::from_be_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let body = r.prefixed(MAX_BODY_BYTES)?.to_owned();
    if !r.rest.is_empty() {
        return Err(ModelError::Malformed("trailing bytes"));
    }
    Ok(CanonicalFields {
        msg_id,
        conversation_id,
        sender,
        sent_at,
        body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::FrankTag;
    use crate::fixtures;
    use proptest::prelude::*;

    fn msg(id: &str, conv: &str, sender: &str, sent_at: u64, body: &str) -> Message {
        Message {
            msg_id: MsgId::new(id).unwrap(),
            conversation_id: ConvId::new(conv).unwrap(),
            sender: AccountId::new(sender).unwrap(),
            sent_at,
            body: body.to_owned(),
            frank_tag: FrankTag::zero(),
            deleted: false,
            edited: false,
        }
    }

    // Written straight from the field order, independent of LengthPrefixed.
    fn hand_assembled(m: &Message) -> Vec<u8> {
        let mut out = Vec::new();
        for field in [m.msg_id.as_str(), m.conversation_id.as_str(), m.sender.as_str()] {
            let len = field.len() as u32;
            out.push((len >> 24) as u8);
            out.push((len >> 16) as u8);
            out.push((len >> 8) as u8);
            out.push(len as u8);
            out.extend(field.bytes());
        }
        for shift in (0..8).rev() {
            out.push((m.sent_at >> (shift * 8)) as u8);
        }
        let len = m.body.len() as u32;
        out.extend([(len >> 24) as u8, (len >> 16) as u8, (len >> 8) as u8, len as u8]);
        out.extend(m.body.bytes());
        out
    }

    #[test]
    fn empty_body_has_zero_prefix() {
        let bytes = canonical_serialize(&msg("m", "c", "a", 1, "")).unwrap();
        assert_eq!(&bytes.as_bytes()[bytes.as_bytes().len() - 4..], &[0, 0, 0, 0]);
    }

    #[test]
    fn timestamps_differ_only_in_timestamp_segment() {
        let a = canonical_serialize(&msg("m1", "c", "acct", 1000, "x")).unwrap().into_vec();
        let b = canonical_serialize(&msg("m1", "c", "acct", 2000, "x")).unwrap().into_vec();
        assert_eq!(a.len(), b.len());
        let differing: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        // 4+2 + 4+1 + 4+4 = 19 bytes precede the timestamp.
        assert!(differing.iter().all(|&i| (19..27).contains(&i)), "{differing:?}");
        assert!(!differing.is_empty());
    }

    #[test]
    fn fixture_m3_matches_hand_assembly() {
        let world = fixtures::world();
        let m3 = world.message("m3");
        assert_eq!(canonical_serialize(m3).unwrap().into_vec(), hand_assembled(m3));
    }

    #[test]
    fn oversize_body_rejected() {
        let m = msg("m", "c", "a", 1, &"x".repeat(MAX_BODY_BYTES + 1));
        assert!(matches!(
            canonical_serialize(&m),
            Err(ModelError::Oversize { field: "body", .. })
        ));
        let m = msg("m", "c", "a", 1, &"x".repeat(MAX_BODY_BYTES));
        assert!(canonical_serialize(&m).is_ok());
    }

    #[test]
    fn parse_rejects_trailing_and_truncated() {
        let mut bytes = canonical_serialize(&msg("m", "c", "a", 1, "hi")).unwrap().into_vec();
        bytes.push(0);
        assert!(parse_canonical(&bytes).is_err());
        bytes.truncate(bytes.len() - 3);
        assert!(parse_canonical(&bytes).is_err());
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        (
            "[a-z0-9]{1,6}",
            "[a-z]{1,3}",
            "[!-~]{1,8}",
            1u64..5_000,
            "\\PC{0,12}",
        )
            .prop_map(|(id, conv, sender, at, body)| msg(&id, &conv, &sender, at, &body))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn parse_then_serialize_is_identity(m in arb_message()) {
            let bytes = canonical_serialize(&m).unwrap();
            let fields = parse_canonical(bytes.as_bytes()).unwrap();
            prop_assert_eq!(&fields, &CanonicalFields::from(&m));
            let again = encode_fields(
                fields.msg_id.as_str(),
                fields.conversation_id.as_str(),
                fields.sender.as_str(),
                fields.sent_at,
                &fields.body,
            ).unwrap();
            prop_assert_eq!(again, bytes);
        }

        #[test]
        fn equal_bytes_imply_equal_fields(a in arb_message(), b in arb_message()) {
            let ba = canonical_serialize(&a).unwrap();
            let bb = canonical_serialize(&b).unwrap();
            prop_assert_eq!(ba == bb, CanonicalFields::from(&a) == CanonicalFields::from(&b));
        }
    }
}

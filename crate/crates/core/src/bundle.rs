//! Rendered evidence bundles: the exact JSON a moderator receives and the
//! platform attests.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::access::PartyRole;
use crate::minimize::{AttributeValues, QuestionId, RedactionSpan};
use crate::model::{b64, AccountId, ConvId};

/// Who sent an item, as shown to the viewer: either the raw account id or a
/// report-scoped pseudonym with its role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SenderRef {
    Account { account: AccountId },
    Pseudonym { pseudonym: String, role: PartyRole },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum ItemContent {
    MetadataOnly,
    Attributes {
        attributes: AttributeValues,
    },
    Answer {
        question: QuestionId,
        answer: String,
    },
    Redacted {
        body: String,
        redactions: Vec<RedactionSpan>,
    },
    Full {
        body: String,
    },
    Segment {
        #[serde(with = "b64")]
        payload: Vec<u8>,
    },
}

/// One entry of a rendered bundle. Removed messages never produce one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedItem {
    pub id: String,
    pub conversation: ConvId,
    pub sender: SenderRef,
    pub sent_at: u64,
    #[serde(flatten)]
    pub content: ItemContent,
}

impl RenderedItem {
    pub fn is_segment(&self) -> bool {
        matches!(self.content, ItemContent::Segment { .. })
    }

    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("rendered items serialize"))
    }
}

/// JSON with object keys sorted and no insignificant whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Canonical JSON array of the bundle, in bundle order.
pub fn render_bundle_json(items: &[RenderedItem]) -> String {
    let mut out = String::from("[");
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&item.canonical_json());
    }
    out.push(']');
    out
}

/// SHA-256 over the concatenated canonical JSON of each item.
pub fn bundle_digest(items: &[RenderedItem]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for item in items {
        hasher.update(item.canonical_json().as_bytes());
    }
    hasher.finalize().into()
}

/// Parses a bundle strictly: the input must be exactly what re-serializing
/// the parsed items produces, so no lenient-parse variant of a bundle can
/// share a digest with the original.
pub fn parse_bundle_strict(value: &Value) -> Result<Vec<RenderedItem>, String> {
    let items: Vec<RenderedItem> =
        serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    let round_trip = serde_json::to_value(&items).map_err(|e| e.to_string())?;
    if &round_trip != value {
        return Err("bundle contains fields outside the rendered item schema".into());
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn item(body: &str) -> RenderedItem {
        RenderedItem {
            id: "m1".into(),
            conversation: ConvId::new("c").unwrap(),
            sender: SenderRef::Account {
                account: AccountId::new("acct-x").unwrap(),
            },
            sent_at: 1000,
            content: ItemContent::Full { body: body.into() },
        }
    }

    #[test]
    fn canonical_json_sorts_keys_without_spaces() {
        let s = item("hi \"there\"").canonical_json();
        assert_eq!(
            s,
            r#"{"body":"hi \"there\"","conversation":"c","id":"m1","level":"full","sender":{"account":"acct-x"},"sent_at":1000}"#
        );
    }

    #[test]
    fn pseudonym_sender_shape() {
        let mut it = item("x");
        it.sender = SenderRef::Pseudonym {
            pseudonym: "Participant-2".into(),
            role: PartyRole::Reported,
        };
        let v = serde_json::to_value(&it).unwrap();
        assert_eq!(v["sender"], json!({"pseudonym": "Participant-2", "role": "reported"}));
        let back: RenderedItem = serde_json::from_value(v).unwrap();
        assert_eq!(back, it);
    }

    #[test]
    fn strict_parse_rejects_extra_fields() {
        let mut v = serde_json::to_value(vec![item("x")]).unwrap();
        v[0]["extra"] = json!(1);
        assert!(parse_bundle_strict(&v).is_err());
        let ok = serde_json::to_value(vec![item("x")]).unwrap();
        assert_eq!(parse_bundle_strict(&ok).unwrap(), vec![item("x")]);
    }

    #[test]
    fn digest_depends_on_order() {
        let a = item("a");
        let b = item("b");
        assert_ne!(
            bundle_digest(&[a.clone(), b.clone()]),
            bundle_digest(&[b, a])
        );
    }
}

//! Shared domain types: accounts, messages, conversations.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::FrankTag;
use crate::ephemeral::EphemeralWindow;

mod canonical;
mod validate;

pub use canonical::{
    canonical_serialize, parse_canonical, CanonicalBytes, CanonicalFields, LengthPrefixed,
    MAX_BODY_BYTES, MAX_ID_BYTES,
};
pub use validate::{validate_store, Violation, ViolationKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid account id {0:?}: expected 1-64 visible ASCII characters")]
    InvalidAccountId(String),
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("{field} is {len} bytes, limit is {limit}")]
    Oversize {
        field: &'static str,
        len: usize,
        limit: usize,
    },
    #[error("malformed canonical bytes: {0}")]
    Malformed(&'static str),
}

/// Stable platform identifier of an account. Unlike display names these are
/// unique and never reused, so they are what evidence is attributed to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AccountId(String);

impl AccountId {
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        let ok = (1..=64).contains(&value.len()) && value.bytes().all(|b| (0x21..=0x7e).contains(&b));
        if ok {
            Ok(Self(value))
        } else {
            Err(ModelError::InvalidAccountId(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AccountId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AccountId> for String {
    fn from(id: AccountId) -> Self {
        id.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
                let value = value.into();
                if value.is_empty()
                    || value.len() > MAX_ID_BYTES
                    || value.chars().any(|c| c.is_control())
                {
                    return Err(ModelError::InvalidId(value));
                }
                Ok(Self(value))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = ModelError;
            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> Self {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(MsgId);
string_id!(ConvId);
string_id!(ReportId);
string_id!(SegId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Member,
    CommunityModerator,
    SeniorModerator,
    PlatformModerator,
}

impl Role {
    pub fn is_moderator(self) -> bool {
        !matches!(self, Role::Member)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub account_id: AccountId,
    pub display_name: String,
    pub avatar_ref: String,
    pub join_date: u64,
    pub roles: BTreeSet<Role>,
}

impl UserProfile {
    pub fn is_moderator(&self) -> bool {
        self.roles.iter().any(|r| r.is_moderator())
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub msg_id: MsgId,
    pub conversation_id: ConvId,
    pub sender: AccountId,
    pub sent_at: u64,
    pub body: String,
    pub frank_tag: FrankTag,
    #[serde(default)]
    pub deleted: bool,
    #[serde(default)]
    pub edited: bool,
}

impl Message {
    /// Ordering key used everywhere messages are sequenced.
    pub fn order_key(&self) -> (u64, &str) {
        (self.sent_at, self.msg_id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversationKind {
    PublicChannel,
    PrivateGroup,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conv_id: ConvId,
    pub kind: ConversationKind,
    pub participants: BTreeSet<AccountId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ephemeral_policy: Option<EphemeralWindow>,
}

impl Conversation {
    pub fn has_participant(&self, account: &AccountId) -> bool {
        self.participants.contains(account)
    }
}

/// Serde helpers for binary fields, which travel as standard base64.
pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text.as_bytes()).map_err(D::Error::custom)
    }

    pub mod array32 {
        use super::*;

        pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
            super::serialize(bytes, s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
            let bytes = super::deserialize(d)?;
            <[u8; 32]>::try_from(bytes.as_slice())
                .map_err(|_| D::Error::custom(format!("expected 32 bytes, got {}", bytes.len())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn account_id_bounds() {
        assert!(AccountId::new("a").is_ok());
        assert!(AccountId::new("x".repeat(64)).is_ok());
        assert!(AccountId::new("x".repeat(65)).is_err());
        assert!(AccountId::new("").is_err());
        assert!(AccountId::new("has space").is_err());
        assert!(AccountId::new("naïve").is_err());
    }

    #[test]
    fn account_id_rejects_invalid_json() {
        let parsed: Result<AccountId, _> = serde_json::from_str("\"bad id\"");
        assert!(parsed.is_err());
    }
}

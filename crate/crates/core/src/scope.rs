//! Structural filters choosing which messages a report may draw from.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AccountId, Conversation, Message};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScopeError {
    #[error("last_n requires n >= 1")]
    ZeroN,
    #[error("time window start {start} is after end {end}")]
    InvertedWindow { start: u64, end: u64 },
    #[error("cross_conversation cannot nest another cross_conversation")]
    NestedCross,
    #[error("mode {mode} requires field {field}")]
    MissingField { mode: &'static str, field: &'static str },
    #[error("unknown scope preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeMode {
    AllInConversation,
    LastN,
    TimeWindow,
    Participants,
    CrossConversation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub enum ScopePolicy {
    AllInConversation,
    LastN { n: u32 },
    TimeWindow { start_ms: u64, end_ms: u64 },
    Participants { senders: BTreeSet<AccountId> },
    CrossConversation { inner: Box<ScopePolicy> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    mode: ScopeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<[u64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    senders: Option<BTreeSet<AccountId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inner: Option<Box<ScopePolicy>>,
}

impl TryFrom<RawPolicy> for ScopePolicy {
    type Error = ScopeError;

    fn try_from(raw: RawPolicy) -> Result<Self, Self::Error> {
        match raw.mode {
            ScopeMode::AllInConversation => Ok(ScopePolicy::AllInConversation),
            ScopeMode::LastN => ScopePolicy::last_n(raw.n.ok_or(ScopeError::MissingField {
                mode: "last_n",
                field: "n",
            })?),
            ScopeMode::TimeWindow => {
                let [s, e] = raw.window.ok_or(ScopeError::MissingField {
                    mode: "time_window",
                    field: "window",
                })?;
                ScopePolicy::time_window(s, e)
            }
            ScopeMode::Participants => Ok(ScopePolicy::Participants {
                senders: raw.senders.ok_or(ScopeError::MissingField {
                    mode: "participants",
                    field: "senders",
                })?,
            }),
            ScopeMode::CrossConversation => ScopePolicy::cross(*raw.inner.ok_or(
                ScopeError::MissingField {
                    mode: "cross_conversation",
                    field: "inner",
                },
            )?),
        }
    }
}

impl From<ScopePolicy> for RawPolicy {
    fn from(p: ScopePolicy) -> Self {
        let mut raw = RawPolicy {
            mode: p.mode(),
            n: None,
            window: None,
            senders: None,
            inner: None,
        };
        match p {
            ScopePolicy::AllInConversation => {}
            ScopePolicy::LastN { n } => raw.n = Some(n),
            ScopePolicy::TimeWindow { start_ms, end_ms } => raw.window = Some([start_ms, end_ms]),
            ScopePolicy::Participants { senders } => raw.senders = Some(senders),
            ScopePolicy::CrossConversation { inner } => raw.inner = Some(inner),
        }
        raw
    }
}

impl ScopePolicy {
    pub fn last_n(n: u32) -> Result<Self, ScopeError> {
        if n == 0 {
            return Err(ScopeError::ZeroN);
        }
        Ok(ScopePolicy::LastN { n })
    }

    pub fn time_window(start_ms: u64, end_ms: u64) -> Result<Self, ScopeError> {
        if start_ms > end_ms {
            return Err(ScopeError::InvertedWindow {
                start: start_ms,
                end: end_ms,
            });
        }
        Ok(ScopePolicy::TimeWindow { start_ms, end_ms })
    }

    pub fn participants(senders: impl IntoIterator<Item = AccountId>) -> Self {
        ScopePolicy::Participants {
            senders: senders.into_iter().collect(),
        }
    }

    pub fn cross(inner: ScopePolicy) -> Result<Self, ScopeError> {
        if matches!(inner, ScopePolicy::CrossConversation { .. }) {
            return Err(ScopeError::NestedCross);
        }
        Ok(ScopePolicy::CrossConversation {
            inner: Box::new(inner),
        })
    }

    pub fn mode(&self) -> ScopeMode {
        match self {
            ScopePolicy::AllInConversation => ScopeMode::AllInConversation,
            ScopePolicy::LastN { .. } => ScopeMode::LastN,
            ScopePolicy::TimeWindow { .. } => ScopeMode::TimeWindow,
            ScopePolicy::Participants { .. } => ScopeMode::Participants,
            ScopePolicy::CrossConversation { .. } => ScopeMode::CrossConversation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopePreset {
    pub name: String,
    pub policy: ScopePolicy,
}

pub fn shipped_presets() -> Vec<ScopePreset> {
    [("google-chat-50", 50), ("messenger-30", 30), ("whatsapp-5", 5)]
        .into_iter()
        .map(|(name, n)| ScopePreset {
            name: name.to_owned(),
            policy: ScopePolicy::LastN { n },
        })
        .collect()
}

pub fn preset(name: &str) -> Result<ScopePolicy, ScopeError> {
    shipped_presets()
        .into_iter()
        .find(|p| p.name == name)
        .map(|p| p.policy)
        .ok_or_else(|| ScopeError::UnknownPreset(name.to_owned()))
}

/// Applies a non-cross policy to one conversation's ordered messages.
fn filter_one<'a>(policy: &ScopePolicy, messages: &'a [Message]) -> Vec<&'a Message> {
    match policy {
        ScopePolicy::AllInConversation | ScopePolicy::CrossConversation { .. } => {
            messages.iter().collect()
        }
        ScopePolicy::LastN { n } => {
            let skip = messages.len().saturating_sub(*n as usize);
            messages[skip..].iter().collect()
        }
        ScopePolicy::TimeWindow { start_ms, end_ms } => messages
            .iter()
            .filter(|m| (*start_ms..=*end_ms).contains(&m.sent_at))
            .collect(),
        ScopePolicy::Participants { senders } => {
            messages.iter().filter(|m| senders.contains(&m.sender)).collect()
        }
    }
}

/// Selects the candidate messages of a report.
///
/// Messages within each conversation must already be ordered by
/// `(sent_at, msg_id)`. Plain policies are applied per conversation and
/// concatenated in input order. `cross_conversation` applies its inner policy
/// to every conversation in which all of `parties` participate and merges the
/// results by `(sent_at, msg_id)`.
pub fn apply_scope(
    policy: &ScopePolicy,
    conversations: &[(Conversation, Vec<Message>)],
    parties: &[AccountId],
) -> Vec<Message> {
    match policy {
        ScopePolicy::CrossConversation { inner } => {
            let mut out: Vec<&Message> = conversations
                .iter()
                .filter(|(c, _)| parties.iter().all(|p| c.has_participant(p)))
                .flat_map(|(_, msgs)| filter_one(inner, msgs))
                .collect();
            out.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
            out.into_iter().cloned().collect()
        }
        plain => conversations
            .iter()
            .flat_map(|(_, msgs)| filter_one(plain, msgs))
            .cloned()
            .collect(),
    }
}

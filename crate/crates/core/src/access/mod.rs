//! Access control over evidence: view-limited grants, identifier disclosure
//! policies, report-scoped pseudonyms and moderator tags.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AccountId, Role};

mod grants;

pub use grants::{AccessGrant, Denial, GrantId, GrantSet, ViewLimit};

pub const MAX_TAG_CHARS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("{0} does not hold a moderator role")]
    NotModerator(String),
    #[error("grant needs at least one grantee")]
    NoGrantees,
    #[error("view limit must be positive")]
    ZeroViews,
    #[error("tag label must be 1-{MAX_TAG_CHARS} characters")]
    BadLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyRole {
    Reporter,
    Reported,
    Bystander,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pseudonym {
    pub label: String,
    pub role: PartyRole,
}

/// Report-scoped labels. `Participant-1` is always the reporter and
/// `Participant-2` the reported party; labels are never renumbered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymTable {
    entries: Vec<(AccountId, Pseudonym)>,
}

impl PseudonymTable {
    pub fn new(reporter: &AccountId, reported: &AccountId) -> Self {
        let mut t = Self::default();
        t.assign(reporter, PartyRole::Reporter);
        t.assign(reported, PartyRole::Reported);
        t
    }

    /// Returns the existing label, or assigns the next ordinal.
    pub fn assign(&mut self, account: &AccountId, role: PartyRole) -> &Pseudonym {
        let idx = match self.entries.iter().position(|(a, _)| a == account) {
            Some(i) => i,
            None => {
                let label = format!("Participant-{}", self.entries.len() + 1);
                self.entries.push((account.clone(), Pseudonym { label, role }));
                self.entries.len() - 1
            }
        };
        &self.entries[idx].1
    }

    pub fn of(&self, account: &AccountId) -> Option<&Pseudonym> {
        self.entries.iter().find(|(a, _)| a == account).map(|(_, p)| p)
    }

    pub fn account(&self, label: &str) -> Option<&AccountId> {
        self.entries
            .iter()
            .find(|(_, p)| p.label == label)
            .map(|(a, _)| a)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AccountId, &Pseudonym)> {
        self.entries.iter().map(|(a, p)| (a, p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifierPolicy {
    Immediate,
    #[default]
    DelayedUntilDecision,
    SeniorOnly,
}

impl IdentifierPolicy {
    /// Whether a moderator holding `roles` sees raw account ids.
    pub fn reveals(self, roles: &BTreeSet<Role>, decided: bool) -> bool {
        match self {
            IdentifierPolicy::Immediate => true,
            IdentifierPolicy::DelayedUntilDecision => decided,
            IdentifierPolicy::SeniorOnly => roles.contains(&Role::SeniorModerator),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeratorTag {
    pub subject: AccountId,
    pub label: String,
    pub author: AccountId,
    pub created_at: u64,
}

/// Tags persist across reports; they are keyed by account and shown against
/// whatever pseudonym the subject has in the report being viewed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagStore {
    tags: Vec<ModeratorTag>,
}

impl TagStore {
    pub fn assign(
        &mut self,
        subject: AccountId,
        label: &str,
        author: AccountId,
        at: u64,
    ) -> Result<&ModeratorTag, AccessError> {
        let label = label.trim();
        let n = label.chars().count();
        if n == 0 || n > MAX_TAG_CHARS {
            return Err(AccessError::BadLabel);
        }
        let tag = ModeratorTag {
            subject,
            label: label.to_owned(),
            author,
            created_at: at,
        };
        if let Some(i) = self.tags.iter().position(|t| {
            t.subject == tag.subject && t.label == tag.label && t.author == tag.author
        }) {
            return Ok(&self.tags[i]);
        }
        self.tags.push(tag);
        Ok(self.tags.last().expect("just pushed"))
    }

    pub fn list(&self, subject: &AccountId) -> Vec<&ModeratorTag> {
        self.tags.iter().filter(|t| &t.subject == subject).collect()
    }
}

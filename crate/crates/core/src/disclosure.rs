//! Progressive disclosure requests and consent-gated bystander
//! cross-examination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minimize::LevelSpec;
use crate::model::{AccountId, MsgId, ReportId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DisclosureError {
    #[error("justification must not be empty")]
    EmptyJustification,
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("request names no targets")]
    NoTargets,
    #[error("finding shape {got} does not match invite involvement {expected}")]
    ShapeMismatch { expected: &'static str, got: &'static str },
    #[error("finding references no messages")]
    EmptyFinding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    Informational,
    Critical,
}

impl Criticality {
    pub fn default_consequence(self) -> &'static str {
        match self {
            Criticality::Critical => {
                "If you deny this request the report may be dismissed for non-disclosure."
            }
            Criticality::Informational => {
                "If you deny this request a note will record that the evidence was withheld."
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Pending,
    Granted,
    Denied,
    Withdrawn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseDecision {
    Grant,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosureRequest {
    pub request_id: String,
    pub report_id: ReportId,
    pub requester: AccountId,
    pub targets: Vec<MsgId>,
    /// Level the targets move to on grant; `full` when not given.
    pub level: LevelSpec,
    pub justification: String,
    pub criticality: Criticality,
    pub consequence_note: String,
    pub state: RequestState,
    pub opened_at: u64,
    pub resolved_at: Option<u64>,
}

impl DisclosureRequest {
    pub fn is_pending(&self) -> bool {
        self.state == RequestState::Pending
    }
}

pub fn check_justification(text: &str) -> Result<String, DisclosureError> {
    let t = text.trim();
    if t.is_empty() {
        Err(DisclosureError::EmptyJustification)
    } else {
        Ok(t.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consent {
    AwaitingReporter,
    ReporterApproved,
    ReporterDeclined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Involvement {
    YesNo,
    FlagSuspicious,
    DiscloseMessages,
}

impl Involvement {
    pub fn as_str(self) -> &'static str {
        match self {
            Involvement::YesNo => "yes_no",
            Involvement::FlagSuspicious => "flag_suspicious",
            Involvement::DiscloseMessages => "disclose_messages",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BystanderInvite {
    pub invite_id: String,
    pub report_id: ReportId,
    pub bystander: AccountId,
    pub requester: AccountId,
    pub involvement: Involvement,
    pub question: String,
    pub consent: Consent,
    pub created_at: u64,
    pub contacted_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disclosure {
    pub msg_id: MsgId,
    /// The bystander's own account of the message.
    #[serde(default)]
    pub account: String,
    /// Ask the platform to forward an attested full view instead of a
    /// description.
    #[serde(default)]
    pub forward: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FindingBody {
    YesNo { verdict: bool },
    Flag { flags: Vec<MsgId> },
    Disclose { disclosures: Vec<Disclosure> },
}

impl FindingBody {
    pub fn shape(&self) -> &'static str {
        match self {
            FindingBody::YesNo { .. } => Involvement::YesNo.as_str(),
            FindingBody::Flag { .. } => Involvement::FlagSuspicious.as_str(),
            FindingBody::Disclose { .. } => Involvement::DiscloseMessages.as_str(),
        }
    }

    pub fn message_ids(&self) -> Vec<&MsgId> {
        match self {
            FindingBody::YesNo { .. } => Vec::new(),
            FindingBody::Flag { flags } => flags.iter().collect(),
            FindingBody::Disclose { disclosures } => disclosures.iter().map(|d| &d.msg_id).collect(),
        }
    }

    pub fn validate(&self, involvement: Involvement) -> Result<(), DisclosureError> {
        if self.shape() != involvement.as_str() {
            return Err(DisclosureError::ShapeMismatch {
                expected: involvement.as_str(),
                got: self.shape(),
            });
        }
        match self {
            FindingBody::YesNo { .. } => Ok(()),
            _ if self.message_ids().is_empty() => Err(DisclosureError::EmptyFinding),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BystanderFinding {
    pub invite_id: String,
    pub body: FindingBody,
    pub submitted_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredibilityAnnotation {
    pub request_id: String,
    pub note: String,
    pub at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFlag {
    DismissibleForNondisclosure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Attested,
    Unattested,
    UnattestedTestimonial,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn justification_rules() {
        assert_eq!(check_justification("  "), Err(DisclosureError::EmptyJustification));
        assert_eq!(
            check_justification(" needed to establish who initiated ").unwrap(),
            "needed to establish who initiated"
        );
    }

    #[test]
    fn finding_shape_must_match() {
        let flag = FindingBody::Flag {
            flags: vec![MsgId::new("m5").unwrap(), MsgId::new("m6").unwrap()],
        };
        assert!(flag.validate(Involvement::FlagSuspicious).is_ok());
        assert!(matches!(
            flag.validate(Involvement::YesNo),
            Err(DisclosureError::ShapeMismatch { .. })
        ));
        let empty = FindingBody::Flag { flags: vec![] };
        assert_eq!(empty.validate(Involvement::FlagSuspicious), Err(DisclosureError::EmptyFinding));
        assert!(FindingBody::YesNo { verdict: true }.validate(Involvement::YesNo).is_ok());
    }

    #[test]
    fn finding_json() {
        let f: FindingBody =
            serde_json::from_str(r#"{"mode":"disclose","disclosures":[{"msg_id":"m6","account":"B insulted A"}]}"#)
                .unwrap();
        assert_eq!(f.shape(), "disclose_messages");
        assert_eq!(f.message_ids(), vec![&MsgId::new("m6").unwrap()]);
    }
}

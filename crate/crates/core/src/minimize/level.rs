use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AttributeName, QuestionId, RedactionCategory, RedactionSpan};

/// How much of a message is disclosed.
///
/// The reveal order is a partial order: `removed < metadata_only`, then the
/// three content-bearing levels `attributes`, `redacted` and `answer` are
/// mutually incomparable, and `attributes`, `redacted` sit below `full`.
/// An answer is not derivable from the body, so it is not below `full`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum VisibilityLevel {
    Removed,
    MetadataOnly,
    Attributes { names: BTreeSet<AttributeName> },
    Answer { question: QuestionId },
    Redacted { spans: Vec<RedactionSpan> },
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelKind {
    Removed,
    MetadataOnly,
    Attributes,
    Answer,
    Redacted,
    Full,
}

impl LevelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LevelKind::Removed => "removed",
            LevelKind::MetadataOnly => "metadata_only",
            LevelKind::Attributes => "attributes",
            LevelKind::Answer => "answer",
            LevelKind::Redacted => "redacted",
            LevelKind::Full => "full",
        }
    }
}

fn covered(spans: &[RedactionSpan]) -> BTreeSet<usize> {
    spans.iter().flat_map(|s| s.start..s.end).collect()
}

impl VisibilityLevel {
    pub fn kind(&self) -> LevelKind {
        match self {
            VisibilityLevel::Removed => LevelKind::Removed,
            VisibilityLevel::MetadataOnly => LevelKind::MetadataOnly,
            VisibilityLevel::Attributes { .. } => LevelKind::Attributes,
            VisibilityLevel::Answer { .. } => LevelKind::Answer,
            VisibilityLevel::Redacted { .. } => LevelKind::Redacted,
            VisibilityLevel::Full => LevelKind::Full,
        }
    }

    pub fn is_removed(&self) -> bool {
        matches!(self, VisibilityLevel::Removed)
    }

    /// `self ≤ other` in the reveal order.
    pub fn le(&self, other: &Self) -> bool {
        use VisibilityLevel::*;
        match (self, other) {
            (Removed, _) => true,
            (MetadataOnly, Removed) => false,
            (MetadataOnly, _) => true,
            (Attributes { names: a }, Attributes { names: b }) => a.is_subset(b),
            (Attributes { .. }, Full) => true,
            (Answer { question: a }, Answer { question: b }) => a == b,
            (Redacted { spans: a }, Redacted { spans: b }) => covered(b).is_subset(&covered(a)),
            (Redacted { .. }, Full) => true,
            (Full, Full) => true,
            _ => false,
        }
    }

    pub fn lt(&self, other: &Self) -> bool {
        self.le(other) && !other.le(self)
    }

    pub fn comparable(&self, other: &Self) -> bool {
        self.le(other) || other.le(self)
    }
}

/// A manually chosen span in a level request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SpanSpec {
    ManualReplacement {
        start: usize,
        end: usize,
        replacement: String,
    },
    ManualSelectedAutoLabel {
        start: usize,
        end: usize,
        category: RedactionCategory,
    },
}

impl SpanSpec {
    pub fn to_span(&self) -> RedactionSpan {
        match self {
            SpanSpec::ManualReplacement {
                start,
                end,
                replacement,
            } => RedactionSpan::manual(*start, *end, replacement.clone()),
            SpanSpec::ManualSelectedAutoLabel {
                start,
                end,
                category,
            } => RedactionSpan::labeled(*start, *end, *category),
        }
    }
}

/// The request form of a level: what a reporter or moderator asks for. It is
/// resolved against the message (auto-detection, labels) into a
/// [`VisibilityLevel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum LevelSpec {
    Removed,
    MetadataOnly,
    Attributes {
        names: BTreeSet<AttributeName>,
    },
    Answer {
        question: QuestionId,
    },
    Redacted {
        #[serde(default)]
        spans: Vec<SpanSpec>,
        #[serde(default)]
        auto: bool,
    },
    Full,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn red(spans: &[(usize, usize)]) -> VisibilityLevel {
        VisibilityLevel::Redacted {
            spans: spans.iter().map(|&(s, e)| RedactionSpan::auto(s, e)).collect(),
        }
    }

    #[test]
    fn chain_order() {
        use VisibilityLevel::*;
        let attrs = Attributes {
            names: BTreeSet::from([AttributeName::LengthChars]),
        };
        assert!(Removed.lt(&MetadataOnly));
        assert!(MetadataOnly.lt(&red(&[(0, 2)])));
        assert!(red(&[(0, 2)]).lt(&Full));
        assert!(MetadataOnly.lt(&attrs));
        assert!(attrs.lt(&Full));
        assert!(!attrs.comparable(&red(&[(0, 1)])));
        let ans = Answer {
            question: QuestionId::new("who-initiated").unwrap(),
        };
        assert!(MetadataOnly.lt(&ans));
        assert!(!ans.comparable(&Full));
    }

    #[test]
    fn fewer_redactions_reveal_more() {
        assert!(red(&[(0, 5)]).lt(&red(&[(1, 3)])));
        assert!(!red(&[(0, 2)]).comparable(&red(&[(3, 4)])));
    }

    #[test]
    fn level_spec_json() {
        let spec: LevelSpec = serde_json::from_str(
            r#"{"level":"redacted","spans":[{"mode":"manual_selected_auto_label","start":11,"end":20,"category":"home address"}]}"#,
        )
        .unwrap();
        let LevelSpec::Redacted { spans, auto } = spec else {
            panic!("wrong variant")
        };
        assert!(!auto);
        assert_eq!(spans[0].to_span().replacement, "[REDACTED: home address]");
    }
}

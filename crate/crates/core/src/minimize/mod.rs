//! Evidence minimization: turning a message into the view a moderator is
//! allowed to see.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{canonical_json, ItemContent, RenderedItem, SenderRef};
use crate::model::{AccountId, ConvId, Message, MsgId};

mod answer;
mod attributes;
mod level;
mod redact;

pub use answer::{Answerer, QuestionId, StubAnswerer};
pub use attributes::{
    AttributeName, AttributeValue, AttributeValues, LexiconSentiment, Sentiment,
    SentimentClassifier, SentimentLexicon,
};
pub use level::{LevelKind, LevelSpec, SpanSpec, VisibilityLevel};
pub use redact::{
    apply_redactions, default_detectors, uncovered_chars, validate_spans, DetectorPattern,
    DetectorSet, RedactionCategory, RedactionOrigin, RedactionSpan, AUTO_LABEL,
};

use answer::AnswerGate;
use attributes::AttributeProbe;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MinimizeError {
    #[error("redaction span [{start}, {end}) out of bounds for body of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("redaction spans {first:?} and {second:?} overlap")]
    OverlappingSpans {
        first: (usize, usize),
        second: (usize, usize),
    },
    #[error("replacement {0:?} does not match its redaction origin")]
    BadLabel(String),
    #[error("unknown question {0:?}")]
    UnknownQuestion(String),
    #[error("invalid detector pattern {0}")]
    BadPattern(String),
    #[error("invalid minimizer config: {0}")]
    Config(String),
}

/// Detector patterns, keyword lexicon, sentiment lexicon and the set of
/// questions the answer level accepts. Loadable from JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizerConfig {
    pub detectors: Vec<DetectorPattern>,
    pub keywords: Vec<String>,
    pub sentiment: SentimentLexicon,
    pub questions: Vec<QuestionId>,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        let words = |w: &[&str]| w.iter().map(|s| (*s).to_owned()).collect::<Vec<_>>();
        Self {
            detectors: default_detectors(),
            keywords: words(&["idiot", "stupid", "kill", "hate", "worthless", "ugly"]),
            sentiment: SentimentLexicon {
                positive: words(&["thanks", "thank", "great", "love", "nice", "good", "welcome"]),
                negative: words(&["idiot", "stupid", "hate", "worthless", "ugly", "shut", "loser"]),
            },
            questions: ["who-initiated", "threat-made", "personal-info-shared"]
                .iter()
                .map(|q| QuestionId::new(*q).expect("static id"))
                .collect(),
        }
    }
}

impl MinimizerConfig {
    pub fn from_json(text: &str) -> Result<Self, MinimizeError> {
        serde_json::from_str(text).map_err(|e| MinimizeError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Nothing,
    Attributes(AttributeValues),
    Answer { question: QuestionId, text: String },
    Redacted(String),
    Full(String),
}

/// The disclosed form of one message. `msg_ref`, `sender` and `sent_at` are
/// absent exactly when the level is `removed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimizedView {
    pub msg_ref: Option<MsgId>,
    pub level: VisibilityLevel,
    pub sender: Option<AccountId>,
    pub sent_at: Option<u64>,
    pub payload: Payload,
}

impl MinimizedView {
    pub fn removed() -> Self {
        Self {
            msg_ref: None,
            level: VisibilityLevel::Removed,
            sender: None,
            sent_at: None,
            payload: Payload::Nothing,
        }
    }

    /// Converts into a bundle item; removed views produce nothing.
    pub fn into_item(self, conversation: ConvId, sender: SenderRef) -> Option<RenderedItem> {
        let id = self.msg_ref?.to_string();
        let sent_at = self.sent_at?;
        let content = match (self.payload, self.level) {
            (Payload::Nothing, _) => ItemContent::MetadataOnly,
            (Payload::Attributes(attributes), _) => ItemContent::Attributes { attributes },
            (Payload::Answer { question, text }, _) => ItemContent::Answer {
                question,
                answer: text,
            },
            (Payload::Redacted(body), VisibilityLevel::Redacted { spans }) => {
                ItemContent::Redacted {
                    body,
                    redactions: spans,
                }
            }
            (Payload::Redacted(body), _) | (Payload::Full(body), _) => ItemContent::Full { body },
        };
        Some(RenderedItem {
            id,
            conversation,
            sender,
            sent_at,
            content,
        })
    }
}

/// An atomic disclosed fact, used to compare what two views reveal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fact {
    Sender(AccountId),
    SentAt(u64),
    Char { pos: usize, ch: char },
    Attribute { name: AttributeName, value: String },
    Answer { question: QuestionId, text: String },
}

pub struct Minimizer {
    config: MinimizerConfig,
    detectors: DetectorSet,
    probe: AttributeProbe,
    sentiment: Box<dyn SentimentClassifier>,
    answerer: AnswerGate,
}

impl std::fmt::Debug for Minimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Minimizer")
            .field("config", &self.config)
            .field("answerer", &self.answerer)
            .finish_non_exhaustive()
    }
}

impl Minimizer {
    pub fn new(config: MinimizerConfig) -> Result<Self, MinimizeError> {
        Ok(Self {
            detectors: DetectorSet::compile(&config.detectors)?,
            probe: AttributeProbe::new(&config.keywords),
            sentiment: Box::new(LexiconSentiment::new(&config.sentiment)),
            answerer: AnswerGate::new(Arc::new(StubAnswerer)),
            config,
        })
    }

    pub fn with_answerer(mut self, answerer: Arc<dyn Answerer>) -> Self {
        self.answerer = AnswerGate::new(answerer);
        self
    }

    pub fn with_sentiment(mut self, classifier: Box<dyn SentimentClassifier>) -> Self {
        self.sentiment = classifier;
        self
    }

    pub fn config(&self) -> &MinimizerConfig {
        &self.config
    }

    pub fn attributes(&self, body: &str) -> AttributeValues {
        self.probe.compute(body, self.sentiment.as_ref())
    }

    pub fn auto_redact(&self, m: &Message) -> Vec<RedactionSpan> {
        self.detectors.detect(&m.body)
    }

    pub fn answer_question(
        &self,
        messages: &[&Message],
        question: &QuestionId,
    ) -> Result<String, MinimizeError> {
        if !self.config.questions.contains(question) {
            return Err(MinimizeError::UnknownQuestion(question.to_string()));
        }
        Ok(self.answerer.answer(question, messages))
    }

    /// Resolves a requested level against a message: runs detectors for
    /// automatic redaction, expands labels, validates spans.
    pub fn resolve(&self, m: &Message, spec: &LevelSpec) -> Result<VisibilityLevel, MinimizeError> {
        let level = match spec {
            LevelSpec::Removed => VisibilityLevel::Removed,
            LevelSpec::MetadataOnly => VisibilityLevel::MetadataOnly,
            LevelSpec::Attributes { names } => VisibilityLevel::Attributes {
                names: names.clone(),
            },
            LevelSpec::Answer { question } => {
                if !self.config.questions.contains(question) {
                    return Err(MinimizeError::UnknownQuestion(question.to_string()));
                }
                VisibilityLevel::Answer {
                    question: question.clone(),
                }
            }
            LevelSpec::Redacted { spans, auto } => {
                let mut all: Vec<RedactionSpan> = spans.iter().map(SpanSpec::to_span).collect();
                if *auto {
                    all.extend(self.auto_redact(m));
                }
                let spans = validate_spans(&all, m.body.chars().count())?;
                VisibilityLevel::Redacted { spans }
            }
            LevelSpec::Full => VisibilityLevel::Full,
        };
        Ok(level)
    }

    pub fn minimize(
        &self,
        m: &Message,
        level: &VisibilityLevel,
    ) -> Result<Option<MinimizedView>, MinimizeError> {
        let payload = match level {
            VisibilityLevel::Removed => return Ok(None),
            VisibilityLevel::MetadataOnly => Payload::Nothing,
            VisibilityLevel::Attributes { names } => {
                let mut all = self.attributes(&m.body);
                all.retain(|k, _| names.contains(k));
                Payload::Attributes(all)
            }
            VisibilityLevel::Answer { question } => Payload::Answer {
                question: question.clone(),
                text: self.answer_question(&[m], question)?,
            },
            VisibilityLevel::Redacted { spans } => {
                let sorted = validate_spans(spans, m.body.chars().count())?;
                Payload::Redacted(apply_redactions(&m.body, &sorted))
            }
            VisibilityLevel::Full => Payload::Full(m.body.clone()),
        };
        let level = match level {
            VisibilityLevel::Redacted { spans } => VisibilityLevel::Redacted {
                spans: validate_spans(spans, m.body.chars().count())?,
            },
            other => other.clone(),
        };
        Ok(Some(MinimizedView {
            msg_ref: Some(m.msg_id.clone()),
            level,
            sender: Some(m.sender.clone()),
            sent_at: Some(m.sent_at),
            payload,
        }))
    }

    pub fn reveal_set(&self, view: &MinimizedView) -> BTreeSet<Fact> {
        let mut facts = BTreeSet::new();
        if view.level.is_removed() {
            return facts;
        }
        if let Some(sender) = &view.sender {
            facts.insert(Fact::Sender(sender.clone()));
        }
        if let Some(at) = view.sent_at {
            facts.insert(Fact::SentAt(at));
        }
        let attribute_facts = |values: &AttributeValues, facts: &mut BTreeSet<Fact>| {
            for (name, value) in values {
                let value = canonical_json(&serde_json::to_value(value).expect("serializable"));
                facts.insert(Fact::Attribute { name: *name, value });
            }
        };
        match (&view.payload, &view.level) {
            (Payload::Nothing, _) => {}
            (Payload::Attributes(values), _) => attribute_facts(values, &mut facts),
            (Payload::Answer { question, text }, _) => {
                facts.insert(Fact::Answer {
                    question: question.clone(),
                    text: text.clone(),
                });
            }
            (Payload::Redacted(body), VisibilityLevel::Redacted { spans }) => {
                for (pos, ch) in uncovered_chars(body, spans) {
                    facts.insert(Fact::Char { pos, ch });
                }
            }
            (Payload::Redacted(body), _) | (Payload::Full(body), _) => {
                for (pos, ch) in body.chars().enumerate() {
                    facts.insert(Fact::Char { pos, ch });
                }
                // Everything derivable from the body is disclosed with it.
                attribute_facts(&self.attributes(body), &mut facts);
            }
        }
        facts
    }
}

/// Renders levels for a sequence of messages, dropping removed ones.
pub fn render_views<'a>(
    minimizer: &Minimizer,
    entries: impl IntoIterator<Item = (&'a Message, &'a VisibilityLevel, SenderRef)>,
) -> Result<Vec<RenderedItem>, MinimizeError> {
    let mut out = Vec::new();
    for (m, level, sender) in entries {
        if let Some(view) = minimizer.minimize(m, level)? {
            out.extend(view.into_item(m.conversation_id.clone(), sender));
        }
    }
    Ok(out)
}

pub type LevelMap = BTreeMap<MsgId, VisibilityLevel>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::render_bundle_json;
    use crate::fixtures;
    use proptest::prelude::*;

    fn minimizer() -> Minimizer {
        Minimizer::new(MinimizerConfig::default()).unwrap()
    }

    #[test]
    fn full_is_identity() {
        let w = fixtures::world();
        let v = minimizer().minimize(w.message("m3"), &VisibilityLevel::Full).unwrap().unwrap();
        assert_eq!(v.payload, Payload::Full("meet me at 42 Elm St".into()));
    }

    #[test]
    fn manual_replacement_of_address() {
        let w = fixtures::world();
        let level = VisibilityLevel::Redacted {
            spans: vec![RedactionSpan::manual(11, 20, "my home address")],
        };
        let v = minimizer().minimize(w.message("m3"), &level).unwrap().unwrap();
        assert_eq!(v.payload, Payload::Redacted("meet me at my home address".into()));
    }

    #[test]
    fn attribute_subset_of_m3() {
        let w = fixtures::world();
        let m3 = w.message("m3");
        let level = VisibilityLevel::Attributes {
            names: BTreeSet::from([AttributeName::LengthChars, AttributeName::ContainsLink]),
        };
        let v = minimizer().minimize(m3, &level).unwrap().unwrap();
        // Oracle: count characters of the fixture body independently.
        let mut n = 0u64;
        for _ in m3.body.chars() {
            n += 1;
        }
        assert_eq!(n, 20);
        assert_eq!(
            v.payload,
            Payload::Attributes(BTreeMap::from([
                (AttributeName::LengthChars, AttributeValue::Count(n)),
                (AttributeName::ContainsLink, AttributeValue::Flag(false)),
            ]))
        );
    }

    #[test]
    fn removed_is_absent() {
        let w = fixtures::world();
        assert!(minimizer()
            .minimize(w.message("m5"), &VisibilityLevel::Removed)
            .unwrap()
            .is_none());
    }

    #[test]
    fn stub_answer_contract() {
        let w = fixtures::world();
        let mz = minimizer();
        let msgs = w.f1_messages();
        let refs: Vec<&Message> = msgs.iter().collect();
        let q = QuestionId::new("who-initiated").unwrap();
        assert_eq!(mz.answer_question(&refs, &q).unwrap(), "STUB-ANSWER(who-initiated)");
        let on_m3 = mz.answer_question(&[w.message("m3")], &q).unwrap();
        assert!(!on_m3.contains("42") && !on_m3.contains("Elm"));
        assert_eq!(
            mz.answer_question(&refs, &QuestionId::new("q-999").unwrap()),
            Err(MinimizeError::UnknownQuestion("q-999".into()))
        );
    }

    #[test]
    fn reveal_set_examples() {
        let w = fixtures::world();
        let mz = minimizer();
        let m3 = w.message("m3");
        let full = mz.minimize(m3, &VisibilityLevel::Full).unwrap().unwrap();
        let red = mz
            .minimize(
                m3,
                &VisibilityLevel::Redacted {
                    spans: vec![RedactionSpan::manual(11, 20, "my home address")],
                },
            )
            .unwrap()
            .unwrap();
        assert!(mz.reveal_set(&red).is_subset(&mz.reveal_set(&full)));
        assert!(mz.reveal_set(&MinimizedView::removed()).is_empty());
        let meta = mz.minimize(m3, &VisibilityLevel::MetadataOnly).unwrap().unwrap();
        assert_eq!(
            mz.reveal_set(&meta),
            BTreeSet::from([
                Fact::Sender(AccountId::new("acct-bob").unwrap()),
                Fact::SentAt(3000)
            ])
        );
    }

    #[test]
    fn resolve_auto_and_labels() {
        let w = fixtures::world();
        let mz = minimizer();
        let spec = LevelSpec::Redacted {
            spans: vec![],
            auto: true,
        };
        let level = mz.resolve(w.message("m3"), &spec).unwrap();
        let v = mz.minimize(w.message("m3"), &level).unwrap().unwrap();
        assert_eq!(v.payload, Payload::Redacted("meet me at [REDACTED]".into()));

        let spec = LevelSpec::Redacted {
            spans: vec![SpanSpec::ManualSelectedAutoLabel {
                start: 11,
                end: 20,
                category: RedactionCategory::HomeAddress,
            }],
            auto: false,
        };
        let level = mz.resolve(w.message("m3"), &spec).unwrap();
        let v = mz.minimize(w.message("m3"), &level).unwrap().unwrap();
        assert_eq!(
            v.payload,
            Payload::Redacted("meet me at [REDACTED: home address]".into())
        );
    }

    #[test]
    fn config_from_json() {
        let cfg = MinimizerConfig::from_json(
            r#"{"detectors":[{"name":"zip","pattern":"\\b\\d{5}\\b"}],"keywords":["jerk"]}"#,
        )
        .unwrap();
        assert_eq!(cfg.detectors.len(), 1);
        assert!(MinimizerConfig::from_json(r#"{"bogus":1}"#).is_err());
        let bad = MinimizerConfig {
            detectors: vec![DetectorPattern {
                name: "x".into(),
                pattern: "(".into(),
            }],
            ..MinimizerConfig::default()
        };
        assert!(matches!(Minimizer::new(bad), Err(MinimizeError::BadPattern(_))));
    }

    struct Counting(std::sync::atomic::AtomicUsize);
    impl Answerer for Counting {
        fn answer(&self, q: &QuestionId, _: &[&Message]) -> String {
            self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            format!("n/a {q}")
        }
        fn serialized(&self) -> bool {
            true
        }
    }

    #[test]
    fn serialized_answerer_is_used() {
        let w = fixtures::world();
        let counting = Arc::new(Counting(Default::default()));
        let mz = minimizer().with_answerer(counting.clone());
        let q = QuestionId::new("threat-made").unwrap();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| mz.answer_question(&[w.message("m1")], &q).unwrap());
            }
        });
        assert_eq!(counting.0.load(std::sync::atomic::Ordering::SeqCst), 4);
    }

    fn arb_body() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 é@.:/-]{0,40}"
    }

    fn arb_spans(len: usize) -> impl Strategy<Value = Vec<RedactionSpan>> {
        proptest::collection::btree_set(0..len.max(1), 0..=len.min(8)).prop_map(move |cuts| {
            let cuts: Vec<usize> = cuts.into_iter().filter(|&c| c <= len).collect();
            cuts.chunks(2)
                .filter(|c| c.len() == 2 && c[0] < c[1])
                .map(|c| RedactionSpan::manual(c[0], c[1], "<x>"))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn redaction_restores_original(
            (body, spans) in arb_body().prop_flat_map(|b| {
                let len = b.chars().count();
                (Just(b), arb_spans(len))
            })
        ) {
            let len = body.chars().count();
            let sorted = validate_spans(&spans, len).unwrap();
            let redacted = apply_redactions(&body, &sorted);
            // Undo: cut out each replacement and splice the original span text back.
            let original: Vec<char> = body.chars().collect();
            let out: Vec<char> = redacted.chars().collect();
            let mut rebuilt = String::new();
            let mut cursor = 0;
            let mut orig = 0;
            for s in &sorted {
                let keep = s.start - orig;
                rebuilt.extend(&out[cursor..cursor + keep]);
                cursor += keep + s.replacement.chars().count();
                rebuilt.extend(&original[s.start..s.end]);
                orig = s.end;
            }
            rebuilt.extend(&out[cursor..]);
            prop_assert_eq!(rebuilt, body);
        }

        #[test]
        fn attributes_are_deterministic(body in arb_body()) {
            let mz = minimizer();
            prop_assert_eq!(mz.attributes(&body), mz.attributes(&body));
        }
    }

    #[test]
    fn removed_leaves_no_trace_in_bundle() {
        let w = fixtures::world();
        let mz = minimizer();
        let msgs = w.f1_messages();
        let sender = |m: &Message| SenderRef::Account { account: m.sender.clone() };
        let with_removed: Vec<(&Message, VisibilityLevel)> = msgs
            .iter()
            .map(|m| {
                let l = if m.msg_id.as_str() == "m5" { VisibilityLevel::Removed } else { VisibilityLevel::Full };
                (m, l)
            })
            .collect();
        let a = render_views(&mz, with_removed.iter().map(|(m, l)| (*m, l, sender(m)))).unwrap();
        let full = VisibilityLevel::Full;
        let b = render_views(
            &mz,
            msgs.iter().filter(|m| m.msg_id.as_str() != "m5").map(|m| (m, &full, sender(m))),
        )
        .unwrap();
        assert_eq!(render_bundle_json(&a), render_bundle_json(&b));
    }
}

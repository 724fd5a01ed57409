use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::model::Message;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QuestionId(String);

impl QuestionId {
    pub fn new(id: impl Into<String>) -> Result<Self, String> {
        let id = id.into();
        if id.is_empty() || id.len() > 64 || !id.bytes().all(|b| b.is_ascii_graphic()) {
            return Err(format!("invalid question id {id:?}"));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for QuestionId {
    type Error = String;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<QuestionId> for String {
    fn from(q: QuestionId) -> Self {
        q.0
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Answers a targeted question about a set of messages without disclosing
/// them. Implementations that are not safe for concurrent calls return
/// `true` from [`Answerer::serialized`].
pub trait Answerer: Send + Sync {
    fn answer(&self, question: &QuestionId, messages: &[&Message]) -> String;

    fn serialized(&self) -> bool {
        false
    }
}

/// Default answerer: a canned reply that carries no message content.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubAnswerer;

impl Answerer for StubAnswerer {
    fn answer(&self, question: &QuestionId, _messages: &[&Message]) -> String {
        format!("STUB-ANSWER({question})")
    }
}

#[derive(Clone)]
pub(crate) struct AnswerGate {
    inner: Arc<dyn Answerer>,
    lock: Option<Arc<Mutex<()>>>,
}

impl AnswerGate {
    pub fn new(inner: Arc<dyn Answerer>) -> Self {
        let lock = inner.serialized().then(|| Arc::new(Mutex::new(())));
        Self { inner, lock }
    }

    pub fn answer(&self, question: &QuestionId, messages: &[&Message]) -> String {
        let _guard = self
            .lock
            .as_ref()
            .map(|l| l.lock().unwrap_or_else(|p| p.into_inner()));
        self.inner.answer(question, messages)
    }
}

impl fmt::Debug for AnswerGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnswerGate")
            .field("serialized", &self.lock.is_some())
            .finish()
    }
}

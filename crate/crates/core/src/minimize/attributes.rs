use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeName {
    LengthChars,
    ContainsLink,
    ContainsImageRef,
    KeywordHits,
    Sentiment,
}

impl AttributeName {
    pub const ALL: [AttributeName; 5] = [
        AttributeName::LengthChars,
        AttributeName::ContainsLink,
        AttributeName::ContainsImageRef,
        AttributeName::KeywordHits,
        AttributeName::Sentiment,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Count(u64),
    Flag(bool),
    Keywords(Vec<String>),
    Sentiment(Sentiment),
}

pub type AttributeValues = BTreeMap<AttributeName, AttributeValue>;

pub trait SentimentClassifier: Send + Sync {
    fn classify(&self, body: &str) -> Sentiment;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentLexicon {
    #[serde(default)]
    pub positive: Vec<String>,
    #[serde(default)]
    pub negative: Vec<String>,
}

/// Counts lexicon words: positives minus negatives, with a threshold of one
/// either way.
#[derive(Debug, Clone)]
pub struct LexiconSentiment {
    positive: BTreeSet<String>,
    negative: BTreeSet<String>,
}

impl LexiconSentiment {
    pub fn new(lexicon: &SentimentLexicon) -> Self {
        let lower = |v: &[String]| v.iter().map(|w| w.to_lowercase()).collect();
        Self {
            positive: lower(&lexicon.positive),
            negative: lower(&lexicon.negative),
        }
    }
}

impl SentimentClassifier for LexiconSentiment {
    fn classify(&self, body: &str) -> Sentiment {
        let score: i64 = tokens(body)
            .map(|t| {
                i64::from(self.positive.contains(&t)) - i64::from(self.negative.contains(&t))
            })
            .sum();
        match score {
            s if s >= 1 => Sentiment::Positive,
            s if s <= -1 => Sentiment::Negative,
            _ => Sentiment::Neutral,
        }
    }
}

pub(crate) fn tokens(body: &str) -> impl Iterator<Item = String> + '_ {
    body.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

pub(crate) struct AttributeProbe {
    link: Regex,
    image: Regex,
    keywords: Vec<String>,
}

impl AttributeProbe {
    pub fn new(keywords: &[String]) -> Self {
        Self {
            link: Regex::new(r"(?i)\b(?:https?://|www\.)\S+").expect("static pattern"),
            image: Regex::new(r"(?i)(?:\b\S+\.(?:png|jpe?g|gif|webp)\b|\[image\])")
                .expect("static pattern"),
            keywords: keywords.iter().map(|k| k.to_lowercase()).collect(),
        }
    }

    pub fn compute(&self, body: &str, sentiment: &dyn SentimentClassifier) -> AttributeValues {
        let words: BTreeSet<String> = tokens(body).collect();
        let mut hits: Vec<String> = Vec::new();
        for k in &self.keywords {
            if words.contains(k) && !hits.contains(k) {
                hits.push(k.clone());
            }
        }
        BTreeMap::from([
            (
                AttributeName::LengthChars,
                AttributeValue::Count(body.chars().count() as u64),
            ),
            (
                AttributeName::ContainsLink,
                AttributeValue::Flag(self.link.is_match(body)),
            ),
            (
                AttributeName::ContainsImageRef,
                AttributeValue::Flag(self.image.is_match(body)),
            ),
            (AttributeName::KeywordHits, AttributeValue::Keywords(hits)),
            (
                AttributeName::Sentiment,
                AttributeValue::Sentiment(sentiment.classify(body)),
            ),
        ])
    }
}

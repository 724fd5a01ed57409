use regex::Regex;
use serde::{Deserialize, Serialize};

use super::MinimizeError;

pub const AUTO_LABEL: &str = "[REDACTED]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedactionOrigin {
    AutoDetected,
    ManualSelectedAutoLabel,
    ManualReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RedactionCategory {
    #[serde(rename = "home address")]
    HomeAddress,
    #[serde(rename = "real name")]
    RealName,
    #[serde(rename = "phone number")]
    PhoneNumber,
    #[serde(rename = "other")]
    Other,
}

impl RedactionCategory {
    pub const ALL: [RedactionCategory; 4] = [
        RedactionCategory::HomeAddress,
        RedactionCategory::RealName,
        RedactionCategory::PhoneNumber,
        RedactionCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RedactionCategory::HomeAddress => "home address",
            RedactionCategory::RealName => "real name",
            RedactionCategory::PhoneNumber => "phone number",
            RedactionCategory::Other => "other",
        }
    }

    pub fn label(self) -> String {
        format!("[REDACTED: {}]", self.as_str())
    }
}

/// A replaced character range `[start, end)` of a message body, offsets in
/// characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RedactionSpan {
    pub start: usize,
    pub end: usize,
    pub replacement: String,
    pub origin: RedactionOrigin,
}

impl RedactionSpan {
    pub fn auto(start: usize, end: usize) -> Self {
        Self {
            start,
            end,
            replacement: AUTO_LABEL.to_owned(),
            origin: RedactionOrigin::AutoDetected,
        }
    }

    pub fn labeled(start: usize, end: usize, category: RedactionCategory) -> Self {
        Self {
            start,
            end,
            replacement: category.label(),
            origin: RedactionOrigin::ManualSelectedAutoLabel,
        }
    }

    pub fn manual(start: usize, end: usize, replacement: impl Into<String>) -> Self {
        Self {
            start,
            end,
            replacement: replacement.into(),
            origin: RedactionOrigin::ManualReplacement,
        }
    }
}

/// Checks bounds, overlap and label vocabulary; returns the spans sorted by
/// start offset.
pub fn validate_spans(
    spans: &[RedactionSpan],
    body_chars: usize,
) -> Result<Vec<RedactionSpan>, MinimizeError> {
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    for s in &sorted {
        if s.start >= s.end || s.end > body_chars {
            return Err(MinimizeError::SpanOutOfBounds {
                start: s.start,
                end: s.end,
                len: body_chars,
            });
        }
        let label_ok = match s.origin {
            RedactionOrigin::AutoDetected => s.replacement == AUTO_LABEL,
            RedactionOrigin::ManualSelectedAutoLabel => RedactionCategory::ALL
                .iter()
                .any(|c| c.label() == s.replacement),
            RedactionOrigin::ManualReplacement => true,
        };
        if !label_ok {
            return Err(MinimizeError::BadLabel(s.replacement.clone()));
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(MinimizeError::OverlappingSpans {
                first: (pair[0].start, pair[0].end),
                second: (pair[1].start, pair[1].end),
            });
        }
    }
    Ok(sorted)
}

/// Replaces each span left to right. Spans must already be validated.
pub fn apply_redactions(body: &str, sorted_spans: &[RedactionSpan]) -> String {
    let mut out = String::with_capacity(body.len());
    let mut spans = sorted_spans.iter().peekable();
    let mut chars = body.chars().enumerate();
    while let Some((i, c)) = chars.next() {
        match spans.peek() {
            Some(span) if span.start == i => {
                out.push_str(&span.replacement);
                // skip the remainder of the span
                for _ in i + 1..span.end {
                    chars.next();
                }
                spans.next();
            }
            _ => out.push(c),
        }
    }
    out
}

/// Walks a redacted body back onto original character positions, yielding
/// `(position, char)` for every character outside the spans.
pub fn uncovered_chars(redacted: &str, sorted_spans: &[RedactionSpan]) -> Vec<(usize, char)> {
    let out: Vec<char> = redacted.chars().collect();
    let mut facts = Vec::new();
    let mut orig = 0usize;
    let mut cursor = 0usize;
    for span in sorted_spans {
        while orig < span.start && cursor < out.len() {
            facts.push((orig, out[cursor]));
            orig += 1;
            cursor += 1;
        }
        cursor += span.replacement.chars().count();
        orig = span.end;
    }
    while cursor < out.len() {
        facts.push((orig, out[cursor]));
        orig += 1;
        cursor += 1;
    }
    facts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorPattern {
    pub name: String,
    pub pattern: String,
}

#[derive(Debug, Clone)]
pub struct DetectorSet {
    detectors: Vec<(String, Regex)>,
}

impl DetectorSet {
    pub fn compile(patterns: &[DetectorPattern]) -> Result<Self, MinimizeError> {
        let detectors = patterns
            .iter()
            .map(|p| {
                Regex::new(&p.pattern)
                    .map(|re| (p.name.clone(), re))
                    .map_err(|e| MinimizeError::BadPattern(format!("{}: {e}", p.name)))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { detectors })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.detectors.iter().map(|(n, _)| n.as_str())
    }

    /// Non-overlapping auto-detected spans in offset order. Among overlapping
    /// matches the earliest start wins, then the longest.
    pub fn detect(&self, body: &str) -> Vec<RedactionSpan> {
        let mut matches: Vec<(usize, usize)> = self
            .detectors
            .iter()
            .flat_map(|(_, re)| re.find_iter(body).map(|m| (m.start(), m.end())))
            .filter(|(s, e)| s < e)
            .collect();
        matches.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut spans = Vec::new();
        let mut taken_until = 0usize;
        for (s, e) in matches {
            if s < taken_until {
                continue;
            }
            taken_until = e;
            spans.push(RedactionSpan::auto(char_offset(body, s), char_offset(body, e)));
        }
        spans
    }
}

fn char_offset(body: &str, byte: usize) -> usize {
    body[..byte].chars().count()
}

pub fn default_detectors() -> Vec<DetectorPattern> {
    let p = |name: &str, pattern: &str| DetectorPattern {
        name: name.to_owned(),
        pattern: pattern.to_owned(),
    };
    vec![
        p(
            "street_address",
            r"\b\d{1,5}\s+(?:[A-Z][a-z]+\s+)+(?:St|Street|Ave|Avenue|Rd|Road|Blvd|Boulevard|Ln|Lane|Dr|Drive|Ct|Court|Way)\b\.?",
        ),
        p(
            "phone_number",
            r"(?:\+?\d{1,2}[\s.-])?(?:\(\d{3}\)\s?|\b\d{3}[\s.-])?\b\d{3}[\s.-]\d{4}\b",
        ),
        p("email", r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b"),
    ]
}

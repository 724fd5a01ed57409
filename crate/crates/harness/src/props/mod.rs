//! Seeded, counted property runs over the core library.
//!
//! Each run draws a fixed number of cases from a ChaCha stream and checks
//! them against an oracle written independently of the library code.

pub mod attest;
pub mod ephemeral;
pub mod minimize;
pub mod scope;

use std::fmt;

/// Outcome of one counted run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tally {
    pub cases: usize,
    pub violations: usize,
    /// The first violation, for diagnosis.
    pub first: Option<String>,
    /// Extra counters worth printing, such as boundary hits.
    pub notes: Vec<(String, usize)>,
}

impl Tally {
    pub fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.violations += 1;
            if self.first.is_none() {
                self.first = Some(what());
            }
        }
    }

    /// Records a violation without counting a case.
    pub fn violation(&mut self, what: impl FnOnce() -> String) {
        self.violations += 1;
        if self.first.is_none() {
            self.first = Some(what());
        }
    }

    pub fn note(&mut self, key: &str, by: usize) {
        match self.notes.iter_mut().find(|(k, _)| k == key) {
            Some((_, n)) => *n += by,
            None => self.notes.push((key.to_owned(), by)),
        }
    }

    pub fn noted(&self, key: &str) -> usize {
        self.notes.iter().find(|(k, _)| k == key).map_or(0, |(_, n)| *n)
    }

    /// Folds `other` into this tally.
    pub fn merge(&mut self, other: Tally) {
        self.cases += other.cases;
        self.violations += other.violations;
        if self.first.is_none() {
            self.first = other.first;
        }
        for (k, n) in other.notes {
            self.note(&k, n);
        }
    }

    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

impl fmt::Display for Tally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} cases, {} violations", self.cases, self.violations)?;
        for (k, n) in &self.notes {
            write!(f, ", {k}={n}")?;
        }
        if let Some(first) = &self.first {
            write!(f, "; first: {first}")?;
        }
        Ok(())
    }
}

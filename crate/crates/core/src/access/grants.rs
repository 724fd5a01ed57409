use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::AccessError;
use crate::model::{AccountId, ReportId};

pub type GrantId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewLimit {
    Unlimited,
    Remaining(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denial {
    NoGrant,
    Expired,
    Exhausted,
}

impl Denial {
    pub fn code(self) -> &'static str {
        match self {
            Denial::NoGrant => "no_grant",
            Denial::Expired => "grant_expired",
            Denial::Exhausted => "grant_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessGrant {
    pub grant_id: GrantId,
    pub report_id: ReportId,
    pub grantees: BTreeSet<AccountId>,
    /// Last instant at which the grant is usable.
    pub expires_at: Option<u64>,
    pub remaining_views: ViewLimit,
    pub revoked: bool,
    pub successful_fetches: u32,
}

impl AccessGrant {
    pub fn new(
        grant_id: GrantId,
        report_id: ReportId,
        grantees: BTreeSet<AccountId>,
        expires_at: Option<u64>,
        view_limit: Option<u32>,
    ) -> Result<Self, AccessError> {
        if grantees.is_empty() {
            return Err(AccessError::NoGrantees);
        }
        let remaining_views = match view_limit {
            Some(0) => return Err(AccessError::ZeroViews),
            Some(n) => ViewLimit::Remaining(n),
            None => ViewLimit::Unlimited,
        };
        Ok(Self {
            grant_id,
            report_id,
            grantees,
            expires_at,
            remaining_views,
            revoked: false,
            successful_fetches: 0,
        })
    }

    pub fn covers(&self, who: &AccountId) -> bool {
        !self.revoked && self.grantees.contains(who)
    }

    pub fn check(&self, now: u64) -> Result<(), Denial> {
        if self.revoked {
            return Err(Denial::NoGrant);
        }
        if self.expires_at.is_some_and(|e| now > e) {
            return Err(Denial::Expired);
        }
        if self.remaining_views == ViewLimit::Remaining(0) {
            return Err(Denial::Exhausted);
        }
        Ok(())
    }

    fn consume(&mut self) {
        if let ViewLimit::Remaining(n) = &mut self.remaining_views {
            *n -= 1;
        }
        self.successful_fetches += 1;
    }
}

/// The grants of one report. Selection and consumption are separate so a
/// view is only spent once rendering has succeeded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantSet {
    grants: Vec<AccessGrant>,
}

impl GrantSet {
    pub fn push(&mut self, grant: AccessGrant) {
        self.grants.push(grant);
    }

    pub fn iter(&self) -> impl Iterator<Item = &AccessGrant> {
        self.grants.iter()
    }

    pub fn get(&self, id: &str) -> Option<&AccessGrant> {
        self.grants.iter().find(|g| g.grant_id == id)
    }

    /// Picks the first usable grant covering `who`. When none is usable the
    /// denial names the most specific reason among covering grants.
    pub fn select(&self, who: &AccountId, now: u64) -> Result<GrantId, Denial> {
        let mut worst = Denial::NoGrant;
        for g in self.grants.iter().filter(|g| g.covers(who)) {
            match g.check(now) {
                Ok(()) => return Ok(g.grant_id.clone()),
                Err(d) => worst = worst.max(d),
            }
        }
        Err(worst)
    }

    pub fn consume(&mut self, id: &str) {
        if let Some(g) = self.grants.iter_mut().find(|g| g.grant_id == id) {
            g.consume();
        }
    }

    /// Revokes every live grant; returns how many changed.
    pub fn revoke_all(&mut self) -> usize {
        let mut n = 0;
        for g in &mut self.grants {
            if !g.revoked {
                g.revoked = true;
                n += 1;
            }
        }
        n
    }

    pub fn is_covered(&self, who: &AccountId) -> bool {
        self.grants.iter().any(|g| g.covers(who))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acct(s: &str) -> AccountId {
        AccountId::new(s).unwrap()
    }

    fn grant(id: &str, expires: Option<u64>, views: Option<u32>) -> AccessGrant {
        AccessGrant::new(
            id.into(),
            ReportId::new("R-1").unwrap(),
            BTreeSet::from([acct("acct-mod-1")]),
            expires,
            views,
        )
        .unwrap()
    }

    fn fetch(set: &mut GrantSet, who: &str, now: u64) -> Result<(), Denial> {
        let id = set.select(&acct(who), now)?;
        set.consume(&id);
        Ok(())
    }

    #[test]
    fn view_limit_two() {
        let mut set = GrantSet::default();
        set.push(grant("G-1", None, Some(2)));
        assert!(fetch(&mut set, "acct-mod-1", 1).is_ok());
        assert!(fetch(&mut set, "acct-mod-1", 2).is_ok());
        assert_eq!(fetch(&mut set, "acct-mod-1", 3), Err(Denial::Exhausted));
    }

    #[test]
    fn expiry_is_inclusive() {
        let mut set = GrantSet::default();
        set.push(grant("G-1", Some(100), None));
        assert!(fetch(&mut set, "acct-mod-1", 100).is_ok());
        assert_eq!(fetch(&mut set, "acct-mod-1", 101), Err(Denial::Expired));
    }

    #[test]
    fn unlimited_and_uncovered() {
        let mut set = GrantSet::default();
        set.push(grant("G-1", None, None));
        for t in 0..100 {
            assert!(fetch(&mut set, "acct-mod-1", t).is_ok());
        }
        assert_eq!(fetch(&mut set, "acct-mod-2", 1), Err(Denial::NoGrant));
        set.revoke_all();
        assert_eq!(fetch(&mut set, "acct-mod-1", 1), Err(Denial::NoGrant));
    }

    #[test]
    fn constructor_rejects_empty() {
        let r = AccessGrant::new("G".into(), ReportId::new("R").unwrap(), BTreeSet::new(), None, None);
        assert_eq!(r, Err(AccessError::NoGrantees));
        let r = AccessGrant::new(
            "G".into(),
            ReportId::new("R").unwrap(),
            BTreeSet::from([acct("a")]),
            None,
            Some(0),
        );
        assert_eq!(r, Err(AccessError::ZeroViews));
    }
}

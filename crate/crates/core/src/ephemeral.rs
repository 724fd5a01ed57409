//! Sliding-window buffers for ephemeral conversations. Segments stay
//! reportable inside the window and are hard-deleted outside it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{FrankTag, PlatformKey};
use crate::model::{b64, AccountId, ConvId, LengthPrefixed, SegId};

const SEGMENT_DOMAIN: &[u8] = b"segment:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EphemeralError {
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("segment captured at {captured_at} is in the future (now {now})")]
    FutureCapture { captured_at: u64, now: u64 },
    #[error("clock moved backwards from {last} to {now}")]
    ClockBackwards { last: u64, now: u64 },
    #[error("conversation {0} has no ephemeral buffer")]
    UnknownConversation(String),
    #[error("conversation {0} already has an ephemeral buffer")]
    AlreadyRegistered(String),
    #[error("segment {0} already exists")]
    DuplicateSegment(String),
    #[error("unknown segment {0}")]
    UnknownSegment(String),
    #[error("segments outside the reporting window: {0:?}")]
    WindowExpired(Vec<String>),
    #[error("payload of {len} bytes exceeds limit of {limit}")]
    Oversize { len: usize, limit: usize },
}

pub const MAX_PAYLOAD_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    Seconds,
    Messages,
}

/// `seconds(n)` keeps segments at most `n` seconds old; `messages(n)` keeps
/// the `n` most recent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawWindow", into = "RawWindow")]
pub struct EphemeralWindow {
    mode: WindowMode,
    n: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    mode: WindowMode,
    n: u32,
}

impl TryFrom<RawWindow> for EphemeralWindow {
    type Error = EphemeralError;
    fn try_from(raw: RawWindow) -> Result<Self, Self::Error> {
        Self::new(raw.mode, raw.n)
    }
}

impl From<EphemeralWindow> for RawWindow {
    fn from(w: EphemeralWindow) -> Self {
        RawWindow { mode: w.mode, n: w.n }
    }
}

impl EphemeralWindow {
    pub fn new(mode: WindowMode, n: u32) -> Result<Self, EphemeralError> {
        if n == 0 {
            return Err(EphemeralError::ZeroWindow);
        }
        Ok(Self { mode, n })
    }

    pub fn seconds(n: u32) -> Result<Self, EphemeralError> {
        Self::new(WindowMode::Seconds, n)
    }

    pub fn messages(n: u32) -> Result<Self, EphemeralError> {
        Self::new(WindowMode::Messages, n)
    }

    pub fn mode(&self) -> WindowMode {
        self.mode
    }

    pub fn n(&self) -> u32 {
        self.n
    }
}

/// A captured piece of an ephemeral stream, franked at capture time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EphemeralSegment {
    pub seg_id: SegId,
    pub conversation_id: ConvId,
    pub speaker: AccountId,
    pub captured_at: u64,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    pub frank_tag: FrankTag,
}

impl EphemeralSegment {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        LengthPrefixed::new()
            .bytes(self.seg_id.as_str().as_bytes())
            .bytes(self.conversation_id.as_str().as_bytes())
            .bytes(self.speaker.as_str().as_bytes())
            .u64(self.captured_at)
            .bytes(&self.payload)
            .finish()
    }

    fn mac(&self, key: &PlatformKey) -> hmac::Hmac<sha2::Sha256> {
        use hmac::Mac;
        let mut mac = key.mac();
        mac.update(SEGMENT_DOMAIN);
        mac.update(&self.canonical_bytes());
        mac
    }

    pub fn frank(&mut self, key: &PlatformKey) {
        use hmac::Mac;
        self.frank_tag = FrankTag(self.mac(key).finalize().into_bytes().into());
    }

    pub fn verify(&self, key: &PlatformKey) -> bool {
        use hmac::Mac;
        self.mac(key).verify_slice(&self.frank_tag.0).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    pub seg_id: SegId,
    pub purged_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentBuffer {
    window: EphemeralWindow,
    live: Vec<EphemeralSegment>,
    tombstones: Vec<Tombstone>,
    last_now: u64,
}

impl SegmentBuffer {
    pub fn new(window: EphemeralWindow) -> Self {
        Self {
            window,
            live: Vec::new(),
            tombstones: Vec::new(),
            last_now: 0,
        }
    }

    pub fn window(&self) -> EphemeralWindow {
        self.window
    }

    pub fn tombstones(&self) -> &[Tombstone] {
        &self.tombstones
    }

    pub fn live(&self) -> &[EphemeralSegment] {
        &self.live
    }

    fn in_window(&self, index: usize, seg: &EphemeralSegment, now: u64) -> bool {
        match self.window.mode {
            WindowMode::Seconds => now - seg.captured_at <= u64::from(self.window.n) * 1000,
            WindowMode::Messages => self.live.len() - index <= self.window.n as usize,
        }
    }

    fn tick(&mut self, now: u64) -> Result<(), EphemeralError> {
        if now < self.last_now {
            return Err(EphemeralError::ClockBackwards {
                last: self.last_now,
                now,
            });
        }
        self.last_now = now;
        Ok(())
    }

    fn purge(&mut self, now: u64) -> Vec<Tombstone> {
        let keep: Vec<bool> = self
            .live
            .iter()
            .enumerate()
            .map(|(i, s)| self.in_window(i, s, now))
            .collect();
        let mut purged = Vec::new();
        let mut kept = Vec::with_capacity(self.live.len());
        for (seg, keep) in std::mem::take(&mut self.live).into_iter().zip(keep) {
            if keep {
                kept.push(seg);
            } else {
                purged.push(Tombstone {
                    seg_id: seg.seg_id,
                    purged_at: now,
                });
            }
        }
        self.live = kept;
        self.tombstones.extend(purged.iter().cloned());
        purged
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInput {
    pub seg_id: SegId,
    pub speaker: AccountId,
    pub captured_at: u64,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppendOutcome {
    pub segment: EphemeralSegment,
    pub purged: Vec<Tombstone>,
}

/// All ephemeral buffers, keyed by conversation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EphemeralStore {
    buffers: BTreeMap<ConvId, SegmentBuffer>,
    index: BTreeMap<SegId, ConvId>,
}

impl EphemeralStore {
    pub fn register(&mut self, conv: ConvId, window: EphemeralWindow) -> Result<(), EphemeralError> {
        if self.buffers.contains_key(&conv) {
            return Err(EphemeralError::AlreadyRegistered(conv.to_string()));
        }
        self.buffers.insert(conv, SegmentBuffer::new(window));
        Ok(())
    }

    pub fn buffer(&self, conv: &ConvId) -> Option<&SegmentBuffer> {
        self.buffers.get(conv)
    }

    fn buffer_mut(&mut self, conv: &ConvId) -> Result<&mut SegmentBuffer, EphemeralError> {
        self.buffers
            .get_mut(conv)
            .ok_or_else(|| EphemeralError::UnknownConversation(conv.to_string()))
    }

    pub fn conversation_of(&self, seg: &SegId) -> Option<&ConvId> {
        self.index.get(seg)
    }

    /// Stores and franks a segment, then purges whatever the window no
    /// longer covers at `now`.
    pub fn append(
        &mut self,
        conv: &ConvId,
        input: SegmentInput,
        key: &PlatformKey,
        now: u64,
    ) -> Result<AppendOutcome, EphemeralError> {
        if input.captured_at > now {
            return Err(EphemeralError::FutureCapture {
                captured_at: input.captured_at,
                now,
            });
        }
        if input.payload.len() > MAX_PAYLOAD_BYTES {
            return Err(EphemeralError::Oversize {
                len: input.payload.len(),
                limit: MAX_PAYLOAD_BYTES,
            });
        }
        if self.index.contains_key(&input.seg_id) {
            return Err(EphemeralError::DuplicateSegment(input.seg_id.to_string()));
        }
        let buffer = self.buffer_mut(conv)?;
        buffer.tick(now)?;
        let mut segment = EphemeralSegment {
            seg_id: input.seg_id,
            conversation_id: conv.clone(),
            speaker: input.speaker,
            captured_at: input.captured_at,
            payload: input.payload,
            frank_tag: FrankTag::zero(),
        };
        segment.frank(key);
        let pos = buffer
            .live
            .partition_point(|s| (s.captured_at, &s.seg_id) < (segment.captured_at, &segment.seg_id));
        buffer.live.insert(pos, segment.clone());
        let purged = buffer.purge(now);
        self.index.insert(segment.seg_id.clone(), conv.clone());
        Ok(AppendOutcome { segment, purged })
    }

    /// Advances the buffer clock and purges expired segments.
    pub fn advance(&mut self, conv: &ConvId, now: u64) -> Result<Vec<Tombstone>, EphemeralError> {
        let buffer = self.buffer_mut(conv)?;
        buffer.tick(now)?;
        Ok(buffer.purge(now))
    }

    /// Advances every buffer to `now`, returning what was purged.
    pub fn advance_all(&mut self, now: u64) -> Vec<(ConvId, Tombstone)> {
        let mut out = Vec::new();
        for (conv, buffer) in &mut self.buffers {
            if buffer.tick(now).is_ok() {
                out.extend(buffer.purge(now).into_iter().map(|t| (conv.clone(), t)));
            }
        }
        out
    }

    /// Segments whose payload survives the window predicate at `now`, in
    /// capture order.
    pub fn reportable(&self, conv: &ConvId, now: u64) -> Result<Vec<EphemeralSegment>, EphemeralError> {
        let buffer = self
            .buffers
            .get(conv)
            .ok_or_else(|| EphemeralError::UnknownConversation(conv.to_string()))?;
        if now < buffer.last_now {
            return Err(EphemeralError::ClockBackwards {
                last: buffer.last_now,
                now,
            });
        }
        Ok(buffer
            .live
            .iter()
            .enumerate()
            .filter(|(i, s)| buffer.in_window(*i, s, now))
            .map(|(_, s)| s.clone())
            .collect())
    }

    /// Copies the named segments out for pinning into a report. Purges first,
    /// so a segment past its window is reported as expired.
    pub fn attach(&mut self, seg_ids: &[SegId], now: u64) -> Result<Vec<EphemeralSegment>, EphemeralError> {
        let mut convs: Vec<ConvId> = Vec::new();
        for id in seg_ids {
            let conv = self
                .index
                .get(id)
                .ok_or_else(|| EphemeralError::UnknownSegment(id.to_string()))?;
            if !convs.contains(conv) {
                convs.push(conv.clone());
            }
        }
        for conv in &convs {
            self.advance(conv, now)?;
        }
        let mut found = Vec::new();
        let mut expired = Vec::new();
        for id in seg_ids {
            let conv = &self.index[id];
            match self.buffers[conv].live.iter().find(|s| &s.seg_id == id) {
                Some(s) => found.push(s.clone()),
                None => expired.push(id.to_string()),
            }
        }
        if !expired.is_empty() {
            return Err(EphemeralError::WindowExpired(expired));
        }
        Ok(found)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn setup(window: EphemeralWindow) -> (EphemeralStore, ConvId, PlatformKey) {
        let mut store = EphemeralStore::default();
        let conv = ConvId::new("conv-v").unwrap();
        store.register(conv.clone(), window).unwrap();
        (store, conv, fixtures::key_ring().active().clone())
    }

    fn input(id: &str, at: u64) -> SegmentInput {
        SegmentInput {
            seg_id: SegId::new(id).unwrap(),
            speaker: AccountId::new("acct-bob").unwrap(),
            captured_at: at,
            payload: format!("audio:{id}").into_bytes(),
        }
    }

    fn live_ids(store: &EphemeralStore, conv: &ConvId, now: u64) -> Vec<String> {
        store
            .reportable(conv, now)
            .unwrap()
            .iter()
            .map(|s| s.seg_id.to_string())
            .collect()
    }

    #[test]
    fn seconds_window_purges_oldest() {
        let (mut store, conv, key) = setup(EphemeralWindow::seconds(30).unwrap());
        for t in 1..=35u64 {
            store.append(&conv, input(&format!("s{t}"), t * 1000), &key, t * 1000).unwrap();
        }
        let buf = store.buffer(&conv).unwrap();
        assert!(buf.tombstones().iter().any(|t| t.seg_id.as_str() == "s1"));
        assert!(!live_ids(&store, &conv, 35_000).contains(&"s1".to_owned()));
        assert!(live_ids(&store, &conv, 35_000).contains(&"s5".to_owned()));
    }

    #[test]
    fn messages_window_keeps_last_ten() {
        let (mut store, conv, key) = setup(EphemeralWindow::messages(10).unwrap());
        for i in 1..=12u64 {
            store.append(&conv, input(&format!("s{i:02}"), i), &key, i).unwrap();
        }
        let ids = live_ids(&store, &conv, 12);
        assert_eq!(ids, (3..=12).map(|i| format!("s{i:02}")).collect::<Vec<_>>());
    }

    #[test]
    fn single_append_is_present() {
        let (mut store, conv, key) = setup(EphemeralWindow::seconds(30).unwrap());
        store.append(&conv, input("a", 10), &key, 10).unwrap();
        let got = store.reportable(&conv, 10).unwrap();
        assert_eq!(got[0].payload, b"audio:a");
        assert!(got[0].verify(&key));
    }

    #[test]
    fn query_filters_by_age() {
        let (mut store, conv, key) = setup(EphemeralWindow::seconds(30).unwrap());
        store.append(&conv, input("a", 5_000), &key, 5_000).unwrap();
        store.append(&conv, input("b", 20_000), &key, 20_000).unwrap();
        assert_eq!(live_ids(&store, &conv, 40_000), vec!["b"]);
    }

    #[test]
    fn empty_and_unknown() {
        let (store, conv, _) = setup(EphemeralWindow::seconds(30).unwrap());
        assert!(store.reportable(&conv, 99).unwrap().is_empty());
        assert!(matches!(
            store.reportable(&ConvId::new("nope").unwrap(), 1),
            Err(EphemeralError::UnknownConversation(_))
        ));
    }

    #[test]
    fn boundary_is_inclusive() {
        let (mut store, conv, key) = setup(EphemeralWindow::seconds(30).unwrap());
        store.append(&conv, input("a", 10_000), &key, 10_000).unwrap();
        let now = 40_000;
        assert!(now - 10_000 <= 30 * 1000);
        assert_eq!(live_ids(&store, &conv, now), vec!["a"]);
        assert!(live_ids(&store, &conv, now + 1).is_empty());
    }

    #[test]
    fn future_capture_and_backwards_clock() {
        let (mut store, conv, key) = setup(EphemeralWindow::seconds(30).unwrap());
        assert!(matches!(
            store.append(&conv, input("a", 11), &key, 10),
            Err(EphemeralError::FutureCapture { .. })
        ));
        store.append(&conv, input("a", 10), &key, 10).unwrap();
        assert!(matches!(
            store.append(&conv, input("b", 5), &key, 9),
            Err(EphemeralError::ClockBackwards { .. })
        ));
    }

    #[test]
    fn attach_and_expiry() {
        let (mut store, conv, key) = setup(EphemeralWindow::seconds(30).unwrap());
        store.append(&conv, input("a", 0), &key, 0).unwrap();
        store.append(&conv, input("b", 20_000), &key, 20_000).unwrap();
        store.append(&conv, input("c", 25_000), &key, 25_000).unwrap();
        // At 30s: a is exactly 30s old and still reportable.
        let pinned = store.attach(&[SegId::new("a").unwrap(), SegId::new("b").unwrap()], 30_000).unwrap();
        assert_eq!(pinned.len(), 2);
        // Replayed by hand: c (25s) purges once now exceeds 55s.
        store.advance(&conv, 55_000).unwrap();
        assert_eq!(live_ids(&store, &conv, 55_000), vec!["c"]);
        store.advance(&conv, 55_001).unwrap();
        assert!(live_ids(&store, &conv, 55_001).is_empty());
        assert_eq!(
            store.attach(&[SegId::new("a").unwrap()], 55_001),
            Err(EphemeralError::WindowExpired(vec!["a".into()]))
        );
        assert_eq!(pinned[0].payload, b"audio:a");
    }

    #[test]
    fn window_json() {
        let w: EphemeralWindow = serde_json::from_str(r#"{"mode":"seconds","n":30}"#).unwrap();
        assert_eq!(w, EphemeralWindow::seconds(30).unwrap());
        assert!(serde_json::from_str::<EphemeralWindow>(r#"{"mode":"messages","n":0}"#).is_err());
    }

    #[derive(Debug, Clone)]
    enum Step {
        Append { dt: u64, back: u64 },
        Query { dt: u64 },
    }

    fn arb_steps() -> impl Strategy<Value = Vec<Step>> {
        proptest::collection::vec(
            prop_oneof![
                (0u64..8000, 0u64..4000).prop_map(|(dt, back)| Step::Append { dt, back }),
                (0u64..8000).prop_map(|dt| Step::Query { dt }),
            ],
            1..60,
        )
    }

    proptest! {
        #[test]
        fn purge_is_monotone(steps in arb_steps(), secs in 1u32..10) {
            let (mut store, conv, key) = setup(EphemeralWindow::seconds(secs).unwrap());
            let mut now = 0;
            let mut gone: Vec<String> = Vec::new();
            for (i, step) in steps.into_iter().enumerate() {
                match step {
                    Step::Append { dt, back } => {
                        now += dt;
                        let _ = store.append(&conv, input(&format!("s{i}"), now.saturating_sub(back)), &key, now);
                    }
                    Step::Query { dt } => {
                        now += dt;
                        store.advance(&conv, now).unwrap();
                    }
                }
                let live = live_ids(&store, &conv, now);
                prop_assert!(gone.iter().all(|g| !live.contains(g)));
                gone.extend(store.buffer(&conv).unwrap().tombstones().iter().map(|t| t.seg_id.to_string()));
            }
        }
    }
}

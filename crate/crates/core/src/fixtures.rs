//! Deterministic fixture world shared by tests, the service's
//! `--seed-fixtures` mode and the abuse harness.
//!
//! Accounts: `acct-alice` files reports, `acct-bob` is reported,
//! `acct-carol` shares Bob's display name, `acct-wendy` is a bystander.
//! `acct-mod-2` participates in `conv-f1` and is therefore conflicted there.

use std::collections::BTreeSet;

use crate::auth::{FrankTag, KeyRing, PlatformKey};
use crate::ephemeral::EphemeralWindow;
use crate::lifecycle::ModeratorProfile;
use crate::model::{AccountId, ConvId, Conversation, ConversationKind, Message, MsgId, Role, UserProfile};

pub const KEY_ID: &str = "k-fixture-1";
const KEY_HEX: &str = "6a09e667f3bcc908bb67ae8584caa73b3c6ef372fe94f82ba54ff53a5f1d36f1";

pub const ALICE: &str = "acct-alice";
pub const BOB: &str = "acct-bob";
pub const CAROL: &str = "acct-carol";
pub const WENDY: &str = "acct-wendy";
pub const MOD_1: &str = "acct-mod-1";
pub const MOD_2: &str = "acct-mod-2";
pub const MOD_3: &str = "acct-mod-3";
pub const SENIOR: &str = "acct-senior-1";
pub const PLATFORM: &str = "acct-platform-1";

pub const F1: &str = "conv-f1";
pub const F2: &str = "conv-f2";
pub const F3: &str = "conv-f3";
pub const V1: &str = "conv-v1";

pub fn key_ring() -> KeyRing {
    KeyRing::new(PlatformKey::from_hex(KEY_ID, KEY_HEX).expect("valid fixture key"))
}

/// Bearer tokens for the fixture accounts.
pub fn sessions() -> Vec<(String, AccountId)> {
    [ALICE, BOB, CAROL, WENDY, MOD_1, MOD_2, MOD_3, SENIOR, PLATFORM]
        .iter()
        .map(|a| (format!("token-{}", a.trim_start_matches("acct-")), acct(a)))
        .collect()
}

fn acct(s: &str) -> AccountId {
    AccountId::new(s).expect("fixture id")
}

pub fn blank_message(id: &str, conv: &str, sender: &str, sent_at: u64) -> Message {
    Message {
        msg_id: MsgId::new(id).expect("fixture id"),
        conversation_id: ConvId::new(conv).expect("fixture id"),
        sender: acct(sender),
        sent_at,
        body: String::new(),
        frank_tag: FrankTag::zero(),
        deleted: false,
        edited: false,
    }
}

pub struct World {
    pub profiles: Vec<UserProfile>,
    pub conversations: Vec<Conversation>,
    pub messages: Vec<Message>,
    pub moderators: Vec<(AccountId, ModeratorProfile)>,
    pub keys: KeyRing,
}

impl World {
    pub fn message(&self, id: &str) -> &Message {
        self.messages
            .iter()
            .find(|m| m.msg_id.as_str() == id)
            .unwrap_or_else(|| panic!("no fixture message {id}"))
    }

    pub fn profile(&self, id: &str) -> &UserProfile {
        self.profiles
            .iter()
            .find(|p| p.account_id.as_str() == id)
            .unwrap_or_else(|| panic!("no fixture profile {id}"))
    }

    pub fn messages_in(&self, conv: &ConvId) -> Vec<Message> {
        self.messages
            .iter()
            .filter(|m| &m.conversation_id == conv)
            .cloned()
            .collect()
    }

    pub fn f1_messages(&self) -> Vec<Message> {
        self.messages_in(&ConvId::new(F1).expect("fixture id"))
    }
}

fn profile(id: &str, display: &str, join: u64, roles: &[Role]) -> UserProfile {
    UserProfile {
        account_id: acct(id),
        display_name: display.to_owned(),
        avatar_ref: format!("avatar:{}", display.to_lowercase()),
        join_date: join,
        roles: roles.iter().copied().collect(),
    }
}

fn conversation(id: &str, kind: ConversationKind, members: &[&str]) -> Conversation {
    Conversation {
        conv_id: ConvId::new(id).expect("fixture id"),
        kind,
        participants: members.iter().map(|m| acct(m)).collect::<BTreeSet<_>>(),
        ephemeral_policy: None,
    }
}

pub fn world() -> World {
    let keys = key_ring();
    let member = [Role::Member];
    let community = [Role::CommunityModerator];
    let profiles = vec![
        profile(ALICE, "Alice", 100, &member),
        profile(BOB, "Bob", 100, &member),
        profile(CAROL, "Bob", 500, &member),
        profile(WENDY, "Wendy", 100, &member),
        profile(MOD_1, "Moss", 50, &community),
        profile(MOD_2, "Juniper", 50, &community),
        profile(MOD_3, "Fern", 50, &community),
        profile(SENIOR, "Ash", 10, &[Role::CommunityModerator, Role::SeniorModerator]),
        profile(PLATFORM, "Platform Desk", 1, &[Role::PlatformModerator]),
    ];

    let mut voice = conversation(V1, ConversationKind::PrivateGroup, &[ALICE, BOB, WENDY]);
    voice.ephemeral_policy = Some(EphemeralWindow::seconds(30).expect("positive"));
    let conversations = vec![
        conversation(F1, ConversationKind::PrivateGroup, &[ALICE, BOB, WENDY, MOD_2]),
        conversation(F2, ConversationKind::Direct, &[ALICE, BOB]),
        conversation(F3, ConversationKind::PublicChannel, &[ALICE, BOB, CAROL, WENDY]),
        voice,
    ];

    let mut messages = Vec::new();
    for i in 1..=12u64 {
        let sender = if i % 2 == 1 { BOB } else { ALICE };
        let mut m = blank_message(&format!("m{i}"), F1, sender, 1000 * i);
        m.body = match i {
            3 => "meet me at 42 Elm St".to_owned(),
            7 => "you are an idiot".to_owned(),
            _ => format!("body-{i}"),
        };
        messages.push(m);
    }
    let f2 = [
        ("d1", BOB, 21_000, "you again?"),
        ("d2", ALICE, 22_000, "please stop messaging me"),
        ("d3", BOB, 23_000, "you are stupid"),
    ];
    let f3 = [
        ("p1", BOB, 31_000, "welcome everyone"),
        ("p2", CAROL, 32_000, "Alice you are worthless"),
        ("p3", ALICE, 33_000, "please stop"),
        ("p4", CAROL, 34_000, "nobody wants you here"),
    ];
    for (conv, rows) in [(F2, &f2[..]), (F3, &f3[..])] {
        for (id, sender, at, body) in rows {
            let mut m = blank_message(id, conv, sender, *at);
            m.body = (*body).to_owned();
            messages.push(m);
        }
    }
    for m in &mut messages {
        m.frank_tag = keys.frank(m).expect("fixture fits bounds");
    }

    let moderators = [
        (MOD_1, 420, 311, &["consistency", "privacy"][..]),
        (MOD_2, 95, 40, &["fairness"][..]),
        (MOD_3, 1210, 2045, &["transparency"][..]),
        (SENIOR, 2900, 5120, &["due process", "privacy"][..]),
    ]
    .iter()
    .enumerate()
    .map(|(i, (id, tenure, reviewed, values))| {
        (
            acct(id),
            ModeratorProfile {
                handle: format!("mod-{}", i + 1),
                tenure_days: *tenure,
                reports_reviewed: *reviewed,
                endorsed_values: values.iter().map(|v| (*v).to_owned()).collect(),
            },
        )
    })
    .collect();

    World {
        profiles,
        conversations,
        messages,
        moderators,
        keys,
    }
}

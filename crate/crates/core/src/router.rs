//! Approved feedback storage and anonymized, recipient-scoped delivery.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{DraftId, MeetingId, RecordId, TeamId, UserId};
use crate::orchestrator::Team;

/// Text of the item the agent adds to every bundle on its own behalf.
pub const AGENT_DEFAULT_FEEDBACK: &str = "Looking at how the last meeting went, one thing that may be worth focusing on \
in the next one is ensuring everyone can participate.";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "user_id", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeedbackTarget {
    Everyone,
    Individual(UserId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub record_id: RecordId,
    pub author_id: UserId,
    pub team_id: TeamId,
    pub origin_meeting_id: MeetingId,
    /// Cycle of the origin meeting, kept so bundling needs no meeting lookup.
    pub origin_cycle: u32,
    pub draft_id: DraftId,
    pub text: String,
    pub target: FeedbackTarget,
    /// Meeting each recipient received this record in; set once per recipient.
    #[serde(default)]
    pub deliveries: BTreeMap<UserId, MeetingId>,
    pub created_at: i64,
}

impl FeedbackRecord {
    /// Recipients this record may ever be shown to.
    pub fn eligible_recipients(&self, team: &Team) -> Vec<UserId> {
        match &self.target {
            FeedbackTarget::Everyone => team
                .member_ids
                .iter()
                .filter(|m| **m != self.author_id)
                .cloned()
                .collect(),
            FeedbackTarget::Individual(r) => vec![r.clone()],
        }
    }

    pub fn is_for(&self, recipient: &UserId) -> bool {
        match &self.target {
            FeedbackTarget::Everyone => *recipient != self.author_id,
            FeedbackTarget::Individual(r) => r == recipient,
        }
    }
}

/// Checks the target rule for a record authored in `team`.
pub fn validate_target(team: &Team, author: &UserId, target: &FeedbackTarget) -> Result<()> {
    match target {
        FeedbackTarget::Everyone => Ok(()),
        FeedbackTarget::Individual(r) if r == author => {
            Err(Error::validation("feedback cannot target its own author"))
        }
        FeedbackTarget::Individual(r) if !team.is_member(r) => Err(Error::validation(format!(
            "recipient {r} is not a member of team {}",
            team.team_id
        ))),
        FeedbackTarget::Individual(_) => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeliveryScope {
    Everyone,
    ToYou,
    AgentDefault,
}

impl DeliveryScope {
    pub fn label(self) -> &'static str {
        match self {
            DeliveryScope::Everyone => "to everyone in the meeting",
            DeliveryScope::ToYou => "to you",
            DeliveryScope::AgentDefault => "from me",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleItem {
    pub text: String,
    pub scope: DeliveryScope,
}

impl BundleItem {
    pub fn agent_default() -> Self {
        Self {
            text: AGENT_DEFAULT_FEEDBACK.into(),
            scope: DeliveryScope::AgentDefault,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryBundle {
    pub recipient_id: UserId,
    pub meeting_id: MeetingId,
    pub items: Vec<BundleItem>,
}

impl DeliveryBundle {
    /// Feedback lines for the prompt, one per item, never naming anyone.
    pub fn render_items(&self) -> String {
        self.items
            .iter()
            .map(|i| format!("- [{}] {}", i.scope.label(), i.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Records due to `recipient` before the meeting at `next_cycle`, in creation order.
pub fn pending_records<'a>(
    records: impl IntoIterator<Item = &'a FeedbackRecord>,
    team_id: &TeamId,
    recipient: &UserId,
    next_cycle: u32,
) -> Vec<&'a FeedbackRecord> {
    let mut out: Vec<&FeedbackRecord> = records
        .into_iter()
        .filter(|r| &r.team_id == team_id && r.origin_cycle < next_cycle)
        .filter(|r| r.is_for(recipient) && !r.deliveries.contains_key(recipient))
        .collect();
    out.sort_by(|a, b| (a.created_at, &a.record_id).cmp(&(b.created_at, &b.record_id)));
    out
}

/// Builds a bundle from peer records plus the agent's default item.
pub fn assemble_bundle(recipient: &UserId, meeting: &MeetingId, records: &[&FeedbackRecord]) -> DeliveryBundle {
    let mut items: Vec<BundleItem> = records
        .iter()
        .map(|r| BundleItem {
            text: r.text.clone(),
            scope: match r.target {
                FeedbackTarget::Everyone => DeliveryScope::Everyone,
                FeedbackTarget::Individual(_) => DeliveryScope::ToYou,
            },
        })
        .collect();
    items.push(BundleItem::agent_default());
    DeliveryBundle {
        recipient_id: recipient.clone(),
        meeting_id: meeting.clone(),
        items,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeliveryStatus {
    /// No later meeting exists for the team yet.
    Undelivered,
    /// A later meeting exists but not every recipient has received it.
    Pending,
    Delivered,
}

/// Author's sidebar entry. Includes the target, never other authors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutgoingItem {
    pub record_id: RecordId,
    pub origin_meeting_id: MeetingId,
    pub text: String,
    pub target: FeedbackTarget,
    pub target_name: Option<String>,
    pub status: DeliveryStatus,
    pub undelivered: bool,
    pub created_at: i64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn team() -> Team {
        Team {
            team_id: "t".into(),
            name: "T".into(),
            member_ids: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    fn record(author: &str, target: FeedbackTarget, cycle: u32) -> FeedbackRecord {
        FeedbackRecord {
            record_id: format!("r{cycle}{author}").into(),
            author_id: author.into(),
            team_id: "t".into(),
            origin_meeting_id: "m0".into(),
            origin_cycle: cycle,
            draft_id: "d".into(),
            text: "x".into(),
            target,
            deliveries: BTreeMap::new(),
            created_at: 0,
        }
    }

    #[test]
    fn everyone_excludes_author() {
        let r = record("a", FeedbackTarget::Everyone, 0);
        assert_eq!(r.eligible_recipients(&team()), vec![UserId::from("b"), UserId::from("c")]);
    }

    #[test]
    fn target_rules() {
        let t = team();
        let a = UserId::from("a");
        assert!(validate_target(&t, &a, &FeedbackTarget::Individual("a".into())).is_err());
        assert!(validate_target(&t, &a, &FeedbackTarget::Individual("z".into())).is_err());
        assert!(validate_target(&t, &a, &FeedbackTarget::Individual("b".into())).is_ok());
    }

    #[test]
    fn bundle_always_has_default_item() {
        let b = assemble_bundle(&"b".into(), &"m1".into(), &[]);
        assert_eq!(b.items, vec![BundleItem::agent_default()]);
        let e = record("a", FeedbackTarget::Everyone, 0);
        let i = record("c", FeedbackTarget::Individual("b".into()), 0);
        let b = assemble_bundle(&"b".into(), &"m1".into(), &[&e, &i]);
        let scopes: Vec<_> = b.items.iter().map(|i| i.scope).collect();
        assert_eq!(
            scopes,
            vec![DeliveryScope::Everyone, DeliveryScope::ToYou, DeliveryScope::AgentDefault]
        );
    }

    #[test]
    fn pending_respects_cycle_and_prior_delivery() {
        let mut done = record("a", FeedbackTarget::Everyone, 0);
        done.deliveries.insert("b".into(), "m1".into());
        let later = record("a", FeedbackTarget::Everyone, 1);
        let fresh = record("c", FeedbackTarget::Everyone, 0);
        let all = [done, later, fresh];
        let got = pending_records(&all, &"t".into(), &"b".into(), 1);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].author_id, UserId::from("c"));
    }
}

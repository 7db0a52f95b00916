//! Teams, users, meetings and the per-user phase cycle.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::capture::{CaptureLog, MeetingStats};
use crate::error::{Error, Result};
use crate::ids::{MeetingId, TeamId, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub user_id: UserId,
    pub display_name: String,
    pub team_id: TeamId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Team {
    pub team_id: TeamId,
    pub name: String,
    pub member_ids: Vec<UserId>,
}

impl Team {
    pub fn is_member(&self, user: &UserId) -> bool {
        self.member_ids.contains(user)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Condition {
    Control,
    Treatment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MeetingState {
    Scheduled,
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meeting {
    pub meeting_id: MeetingId,
    pub team_id: TeamId,
    pub condition: Condition,
    pub state: MeetingState,
    pub cycle_index: u32,
    pub opened_at: Option<i64>,
    pub closed_at: Option<i64>,
    /// Members who pressed the acknowledgement button on the control message.
    #[serde(default)]
    pub acknowledged: BTreeSet<UserId>,
    #[serde(default)]
    pub capture: CaptureLog,
    pub stats: Option<MeetingStats>,
}

impl Meeting {
    pub fn duration_ms(&self) -> Option<u64> {
        match (self.opened_at, self.closed_at) {
            (Some(open), Some(close)) => Some(close.saturating_sub(open).max(0) as u64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    PreMeeting,
    InMeeting,
    PostMeeting,
}

impl Phase {
    pub const ORDER: [Phase; 3] = [Phase::PreMeeting, Phase::InMeeting, Phase::PostMeeting];

    pub fn next(self) -> Option<Phase> {
        match self {
            Phase::PreMeeting => Some(Phase::InMeeting),
            Phase::InMeeting => Some(Phase::PostMeeting),
            Phase::PostMeeting => None,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::PreMeeting => "PRE_MEETING",
            Phase::InMeeting => "IN_MEETING",
            Phase::PostMeeting => "POST_MEETING",
        })
    }
}

/// Latest phase record for a (user, meeting).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseState {
    pub user_id: UserId,
    pub meeting_id: MeetingId,
    pub phase: Phase,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub completed: bool,
    pub ts_ms: i64,
}

/// Ordered phase records for one (user, meeting). Records are appended in
/// `Phase::ORDER`; a record with `completed = false` marks a phase that was
/// skipped because the meeting moved on without the user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseHistory {
    pub records: Vec<PhaseRecord>,
}

impl PhaseHistory {
    pub fn last(&self) -> Option<&PhaseRecord> {
        self.records.last()
    }

    /// The phase that would be recorded next, if any remain.
    pub fn pending(&self) -> Option<Phase> {
        match self.last() {
            None => Some(Phase::PreMeeting),
            Some(rec) => rec.phase.next(),
        }
    }

    pub fn completed(&self, phase: Phase) -> bool {
        self.records.iter().any(|r| r.phase == phase && r.completed)
    }

    pub fn push(&mut self, phase: Phase, completed: bool, ts_ms: i64) {
        debug_assert_eq!(self.pending(), Some(phase));
        self.records.push(PhaseRecord {
            phase,
            completed,
            ts_ms,
        });
    }
}

pub fn validate_team_members(member_names: &[String]) -> Result<()> {
    if member_names.len() < 2 {
        return Err(Error::validation(format!(
            "a team needs at least 2 members, got {}",
            member_names.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for name in member_names {
        let trimmed = name.trim();
        if trimmed.is_empty() {
            return Err(Error::validation("member names must be non-empty"));
        }
        if !seen.insert(trimmed) {
            return Err(Error::validation(format!("duplicate member name {trimmed:?}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn member_validation() {
        assert!(validate_team_members(&names(&["A", "B", "C"])).is_ok());
        assert!(validate_team_members(&names(&["A"])).is_err());
        assert!(validate_team_members(&names(&["A", "A"])).is_err());
        assert!(validate_team_members(&names(&["A", " "])).is_err());
    }

    #[test]
    fn phase_history_ordering() {
        let mut h = PhaseHistory::default();
        assert_eq!(h.pending(), Some(Phase::PreMeeting));
        h.push(Phase::PreMeeting, false, 0);
        assert_eq!(h.pending(), Some(Phase::InMeeting));
        assert!(!h.completed(Phase::PreMeeting));
        h.push(Phase::InMeeting, true, 1);
        h.push(Phase::PostMeeting, true, 2);
        assert_eq!(h.pending(), None);
    }
}

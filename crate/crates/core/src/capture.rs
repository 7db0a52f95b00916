//! Voice-activity and presence capture, and per-participant aggregation.

use serde::{Deserialize, Serialize};

use crate::ids::{MeetingId, TeamId, UserId};
use crate::orchestrator::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VoiceEventKind {
    Join,
    Leave,
    SpeakStart,
    SpeakStop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceActivityEvent {
    pub meeting_id: MeetingId,
    pub user_id: UserId,
    pub kind: VoiceEventKind,
    /// Milliseconds since the meeting opened.
    pub ts_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapturedEvent {
    pub user_id: UserId,
    pub kind: VoiceEventKind,
    pub ts_ms: u64,
}

/// Events for one meeting in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureLog {
    pub events: Vec<CapturedEvent>,
}

impl CaptureLog {
    pub fn contains(&self, ev: &CapturedEvent) -> bool {
        self.events.iter().any(|e| e == ev)
    }

    pub fn push(&mut self, ev: CapturedEvent) {
        self.events.push(ev);
    }

    /// Events ordered by timestamp, ties kept in arrival order.
    pub fn ordered(&self) -> Vec<&CapturedEvent> {
        let mut out: Vec<&CapturedEvent> = self.events.iter().collect();
        out.sort_by_key(|e| e.ts_ms);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakingRecord {
    pub user_id: UserId,
    pub meeting_id: MeetingId,
    pub total_speaking_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttendanceRecord {
    pub user_id: UserId,
    pub meeting_id: MeetingId,
    pub present_ms: u64,
    pub joined: bool,
}

/// Finalized per-participant figures, flattened for the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantStats {
    pub user_id: UserId,
    pub total_speaking_ms: u64,
    pub present_ms: u64,
    pub joined: bool,
    /// False when the participant's stream had unmatched stops/leaves or
    /// speech without a join; metrics callers decide whether to exclude.
    pub data_complete: bool,
    /// SPEAK_STOP / LEAVE events that arrived with no open interval.
    pub ignored_events: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingStats {
    pub meeting_id: MeetingId,
    pub team_id: TeamId,
    pub condition: Condition,
    pub cycle_index: u32,
    pub duration_ms: u64,
    pub participants: Vec<ParticipantStats>,
}

impl MeetingStats {
    pub fn records(&self) -> Vec<(SpeakingRecord, AttendanceRecord)> {
        self.participants
            .iter()
            .map(|p| {
                (
                    SpeakingRecord {
                        user_id: p.user_id.clone(),
                        meeting_id: self.meeting_id.clone(),
                        total_speaking_ms: p.total_speaking_ms,
                    },
                    AttendanceRecord {
                        user_id: p.user_id.clone(),
                        meeting_id: self.meeting_id.clone(),
                        present_ms: p.present_ms,
                        joined: p.joined,
                    },
                )
            })
            .collect()
    }

    pub fn participant(&self, user: &UserId) -> Option<&ParticipantStats> {
        self.participants.iter().find(|p| &p.user_id == user)
    }
}

#[derive(Default)]
struct Interval {
    open_at: Option<u64>,
    total: u64,
    ignored: u32,
    seen_open: bool,
}

impl Interval {
    fn open(&mut self, ts: u64) {
        if self.open_at.is_none() {
            self.open_at = Some(ts);
            self.seen_open = true;
        }
    }

    fn close(&mut self, ts: u64) {
        match self.open_at.take() {
            Some(start) => self.total += ts - start,
            None => self.ignored += 1,
        }
    }

    fn finish(&mut self, end: u64) {
        if let Some(start) = self.open_at.take() {
            self.total += end - start;
        }
    }
}

/// Aggregates a meeting's capture log into per-member totals.
///
/// Timestamps past `duration_ms` are clamped to it. A second SPEAK_START
/// while speaking (or JOIN while present) is ignored; a SPEAK_STOP while
/// silent (or LEAVE while absent) is ignored and counted. Open intervals are
/// closed at the end of the meeting.
pub fn aggregate(log: &CaptureLog, members: &[UserId], duration_ms: u64) -> Vec<ParticipantStats> {
    let ordered = log.ordered();
    members
        .iter()
        .map(|member| {
            let mut speaking = Interval::default();
            let mut presence = Interval::default();
            for ev in ordered.iter().filter(|e| &e.user_id == member) {
                let ts = ev.ts_ms.min(duration_ms);
                match ev.kind {
                    VoiceEventKind::SpeakStart => speaking.open(ts),
                    VoiceEventKind::SpeakStop => speaking.close(ts),
                    VoiceEventKind::Join => presence.open(ts),
                    VoiceEventKind::Leave => presence.close(ts),
                }
            }
            speaking.finish(duration_ms);
            presence.finish(duration_ms);
            let joined = presence.seen_open;
            let ignored = speaking.ignored + presence.ignored;
            let data_complete = ignored == 0 && (joined || !speaking.seen_open);
            ParticipantStats {
                user_id: member.clone(),
                total_speaking_ms: speaking.total,
                present_ms: presence.total,
                joined,
                data_complete,
                ignored_events: ignored,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use VoiceEventKind::*;

    fn log(events: &[(&str, VoiceEventKind, u64)]) -> CaptureLog {
        CaptureLog {
            events: events
                .iter()
                .map(|(u, k, t)| CapturedEvent {
                    user_id: UserId::from(*u),
                    kind: *k,
                    ts_ms: *t,
                })
                .collect(),
        }
    }

    fn members(ids: &[&str]) -> Vec<UserId> {
        ids.iter().map(|s| UserId::from(*s)).collect()
    }

    #[test]
    fn single_interval() {
        let stats = aggregate(
            &log(&[("A", SpeakStart, 0), ("A", SpeakStop, 5000)]),
            &members(&["A"]),
            10_000,
        );
        assert_eq!(stats[0].total_speaking_ms, 5000);
    }

    #[test]
    fn absent_member_has_zero() {
        let stats = aggregate(&log(&[("A", Join, 0)]), &members(&["A", "B"]), 10_000);
        assert_eq!(stats[1].total_speaking_ms, 0);
        assert_eq!(stats[1].present_ms, 0);
        assert!(!stats[1].joined);
        assert_eq!(stats[0].present_ms, 10_000);
    }

    #[test]
    fn overlapping_speakers_counted_independently() {
        let stats = aggregate(
            &log(&[
                ("A", SpeakStart, 0),
                ("B", SpeakStart, 1000),
                ("A", SpeakStop, 3000),
                ("B", SpeakStop, 4000),
            ]),
            &members(&["A", "B"]),
            10_000,
        );
        assert_eq!(stats[0].total_speaking_ms, 3000);
        assert_eq!(stats[1].total_speaking_ms, 3000);
    }

    #[test]
    fn duplicate_start_and_stray_stop() {
        let stats = aggregate(
            &log(&[
                ("A", SpeakStart, 0),
                ("A", SpeakStart, 500),
                ("A", SpeakStop, 1000),
                ("A", SpeakStop, 2000),
            ]),
            &members(&["A"]),
            10_000,
        );
        assert_eq!(stats[0].total_speaking_ms, 1000);
        assert_eq!(stats[0].ignored_events, 1);
        assert!(!stats[0].data_complete);
    }

    #[test]
    fn unmatched_start_closes_at_end_and_late_events_clamp() {
        let stats = aggregate(
            &log(&[("A", Join, 100), ("A", SpeakStart, 9000), ("A", Leave, 20_000)]),
            &members(&["A"]),
            10_000,
        );
        assert_eq!(stats[0].total_speaking_ms, 1000);
        assert_eq!(stats[0].present_ms, 9900);
    }

    #[test]
    fn arrival_order_breaks_timestamp_ties() {
        // STOP then START at the same instant: the stop closes the first interval.
        let stats = aggregate(
            &log(&[
                ("A", SpeakStart, 0),
                ("A", SpeakStop, 100),
                ("A", SpeakStart, 100),
                ("A", SpeakStop, 300),
            ]),
            &members(&["A"]),
            1000,
        );
        assert_eq!(stats[0].total_speaking_ms, 300);
    }
}

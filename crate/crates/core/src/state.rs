//! Replicated service state and the events that change it.
//!
//! Every mutation is described by one [`Event`] carrying everything needed to
//! apply it: minted ids, timestamps and model output. Applying never fails and
//! never calls out, so replaying a log rebuilds the same state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::capture::{CapturedEvent, MeetingStats};
use crate::conversation::{
    ConversationKind, ConversationSession, ConversationState, DraftFeedback, DraftStatus, Goal, GoalStatus,
    Reflection, ReflectionStatus, TranscriptTurn,
};
use crate::ids::{Counters, DraftId, GoalId, MeetingId, RecordId, ReflectionId, SessionId, TeamId, UserId};
use crate::orchestrator::{Meeting, MeetingState, Phase, PhaseHistory, Team, User};
use crate::router::{DeliveryBundle, FeedbackRecord};

/// Opaque labelled numeric responses (Likert items, instrument scores).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub user_id: UserId,
    #[serde(default)]
    pub meeting_id: Option<MeetingId>,
    pub instrument: String,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub recorded_at: i64,
}

/// A bundle plus the records it consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltBundle {
    pub bundle: DeliveryBundle,
    pub record_ids: Vec<RecordId>,
}

/// What a handled message did besides appending turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEffect {
    None,
    PendingText { text: String },
    DraftCreated { draft: DraftFeedback },
    GoalProposed { goal: Goal },
    ReflectionDrafted { reflection: Reflection },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    TeamCreated {
        team: Team,
        users: Vec<User>,
    },
    MeetingScheduled {
        meeting: Meeting,
    },
    MeetingOpened {
        meeting_id: MeetingId,
        ts_ms: i64,
        /// Members whose PRE_MEETING is recorded as not completed.
        skipped: Vec<UserId>,
    },
    MeetingClosed {
        meeting_id: MeetingId,
        ts_ms: i64,
        stats: MeetingStats,
        skipped: Vec<UserId>,
    },
    ControlAcknowledged {
        meeting_id: MeetingId,
        user_id: UserId,
        ts_ms: i64,
    },
    PhaseAdvanced {
        meeting_id: MeetingId,
        user_id: UserId,
        phase: Phase,
        ts_ms: i64,
    },
    VoiceEventIngested {
        meeting_id: MeetingId,
        event: CapturedEvent,
    },
    SessionStarted {
        session: ConversationSession,
        #[serde(default)]
        bundle: Option<BuiltBundle>,
    },
    BundleBuilt {
        built: BuiltBundle,
    },
    MessageHandled {
        session_id: SessionId,
        turns: Vec<TranscriptTurn>,
        next: ConversationState,
        effect: SessionEffect,
        parse_warning: bool,
        degraded: bool,
    },
    DraftApproved {
        draft_id: DraftId,
        record: FeedbackRecord,
        turn: TranscriptTurn,
    },
    DraftDiscarded {
        draft_id: DraftId,
        turn: TranscriptTurn,
    },
    GoalAdopted {
        goal_id: GoalId,
        ts_ms: i64,
        turn: TranscriptTurn,
    },
    ReflectionApproved {
        reflection_id: ReflectionId,
        turn: TranscriptTurn,
    },
    QuestionnaireRecorded {
        response: QuestionnaireResponse,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::TeamCreated { .. } => "team_created",
            Event::MeetingScheduled { .. } => "meeting_scheduled",
            Event::MeetingOpened { .. } => "meeting_opened",
            Event::MeetingClosed { .. } => "meeting_closed",
            Event::ControlAcknowledged { .. } => "control_acknowledged",
            Event::PhaseAdvanced { .. } => "phase_advanced",
            Event::VoiceEventIngested { .. } => "voice_event_ingested",
            Event::SessionStarted { .. } => "session_started",
            Event::BundleBuilt { .. } => "bundle_built",
            Event::MessageHandled { .. } => "message_handled",
            Event::DraftApproved { .. } => "draft_approved",
            Event::DraftDiscarded { .. } => "draft_discarded",
            Event::GoalAdopted { .. } => "goal_adopted",
            Event::ReflectionApproved { .. } => "reflection_approved",
            Event::QuestionnaireRecorded { .. } => "questionnaire_recorded",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub counters: Counters,
    /// Sequence number of the last applied event.
    pub seq: u64,
    pub last_ts: i64,
    pub teams: BTreeMap<TeamId, Team>,
    pub users: BTreeMap<UserId, User>,
    pub meetings: BTreeMap<MeetingId, Meeting>,
    pub phases: BTreeMap<MeetingId, BTreeMap<UserId, PhaseHistory>>,
    pub sessions: BTreeMap<SessionId, ConversationSession>,
    pub drafts: BTreeMap<DraftId, DraftFeedback>,
    pub goals: BTreeMap<GoalId, Goal>,
    pub reflections: BTreeMap<ReflectionId, Reflection>,
    pub records: BTreeMap<RecordId, FeedbackRecord>,
    pub bundles: BTreeMap<MeetingId, BTreeMap<UserId, BuiltBundle>>,
    pub questionnaires: Vec<QuestionnaireResponse>,
}

impl State {
    pub fn team_meetings(&self, team: &TeamId) -> impl Iterator<Item = &Meeting> {
        let team = team.clone();
        self.meetings.values().filter(move |m| m.team_id == team)
    }

    pub fn find_session(&self, user: &UserId, meeting: &MeetingId, kind: ConversationKind) -> Option<&ConversationSession> {
        self.sessions
            .values()
            .find(|s| &s.user_id == user && &s.meeting_id == meeting && s.kind == kind)
    }

    pub fn phase_history(&self, meeting: &MeetingId, user: &UserId) -> PhaseHistory {
        self.phases
            .get(meeting)
            .and_then(|m| m.get(user))
            .cloned()
            .unwrap_or_default()
    }

    fn push_phase(&mut self, meeting: &MeetingId, user: &UserId, phase: Phase, completed: bool, ts: i64) {
        self.phases
            .entry(meeting.clone())
            .or_default()
            .entry(user.clone())
            .or_default()
            .push(phase, completed, ts);
    }

    fn session_mut(&mut self, id: &SessionId) -> &mut ConversationSession {
        self.sessions.get_mut(id).expect("event references a known session")
    }

    /// Applies one event. Events are produced only after validation, so a
    /// dangling reference here means the log itself is inconsistent.
    pub fn apply(&mut self, seq: u64, ts_ms: i64, event: &Event) {
        self.seq = seq;
        self.last_ts = self.last_ts.max(ts_ms);
        match event {
            Event::TeamCreated { team, users } => {
                self.counters.teams += 1;
                self.counters.users += users.len() as u64;
                self.teams.insert(team.team_id.clone(), team.clone());
                for u in users {
                    self.users.insert(u.user_id.clone(), u.clone());
                }
            }
            Event::MeetingScheduled { meeting } => {
                self.counters.meetings += 1;
                self.meetings.insert(meeting.meeting_id.clone(), meeting.clone());
            }
            Event::MeetingOpened {
                meeting_id,
                ts_ms,
                skipped,
            } => {
                let m = self.meetings.get_mut(meeting_id).expect("known meeting");
                m.state = MeetingState::Open;
                m.opened_at = Some(*ts_ms);
                for u in skipped {
                    self.push_phase(meeting_id, u, Phase::PreMeeting, false, *ts_ms);
                }
            }
            Event::MeetingClosed {
                meeting_id,
                ts_ms,
                stats,
                skipped,
            } => {
                let m = self.meetings.get_mut(meeting_id).expect("known meeting");
                m.state = MeetingState::Closed;
                m.closed_at = Some(*ts_ms);
                m.stats = Some(stats.clone());
                for u in skipped {
                    self.push_phase(meeting_id, u, Phase::InMeeting, false, *ts_ms);
                }
            }
            Event::ControlAcknowledged {
                meeting_id,
                user_id,
                ts_ms,
            } => {
                let m = self.meetings.get_mut(meeting_id).expect("known meeting");
                m.acknowledged.insert(user_id.clone());
                self.push_phase(meeting_id, user_id, Phase::PreMeeting, true, *ts_ms);
            }
            Event::PhaseAdvanced {
                meeting_id,
                user_id,
                phase,
                ts_ms,
            } => self.push_phase(meeting_id, user_id, *phase, true, *ts_ms),
            Event::VoiceEventIngested { meeting_id, event } => {
                let m = self.meetings.get_mut(meeting_id).expect("known meeting");
                m.capture.push(event.clone());
            }
            Event::SessionStarted { session, bundle } => {
                self.counters.sessions += 1;
                if let Some(built) = bundle {
                    self.record_bundle(built);
                }
                self.sessions.insert(session.session_id.clone(), session.clone());
            }
            Event::BundleBuilt { built } => self.record_bundle(built),
            Event::MessageHandled {
                session_id,
                turns,
                next,
                effect,
                parse_warning,
                degraded,
            } => {
                match effect {
                    SessionEffect::None => {}
                    SessionEffect::PendingText { text } => {
                        self.session_mut(session_id).pending_text = Some(text.clone());
                    }
                    SessionEffect::DraftCreated { draft } => {
                        self.counters.drafts += 1;
                        let previous = self.session_mut(session_id).pending_draft.replace(draft.draft_id.clone());
                        if let Some(old) = previous.and_then(|id| self.drafts.get_mut(&id)) {
                            if old.status == DraftStatus::Draft {
                                old.status = DraftStatus::Discarded;
                            }
                        }
                        self.session_mut(session_id).pending_text = None;
                        self.drafts.insert(draft.draft_id.clone(), draft.clone());
                    }
                    SessionEffect::GoalProposed { goal } => {
                        self.counters.goals += 1;
                        self.session_mut(session_id).pending_goal = Some(goal.goal_id.clone());
                        self.goals.insert(goal.goal_id.clone(), goal.clone());
                    }
                    SessionEffect::ReflectionDrafted { reflection } => {
                        self.counters.reflections += 1;
                        self.session_mut(session_id).pending_reflection = Some(reflection.reflection_id.clone());
                        self.reflections
                            .insert(reflection.reflection_id.clone(), reflection.clone());
                    }
                }
                let s = self.session_mut(session_id);
                s.transcript.extend(turns.iter().cloned());
                if *parse_warning {
                    s.parse_warnings += 1;
                }
                if *degraded {
                    s.degraded_replies += 1;
                }
                match (s.state, *next) {
                    // Leaving a proposal unadopted withdraws it.
                    (ConversationState::AwaitAdoption, ConversationState::GoalElicitation) => s.pending_goal = None,
                    // Completing abandons unsettled wording.
                    (_, ConversationState::Complete) => s.pending_text = None,
                    _ => {}
                }
                s.set_state(*next);
            }
            Event::DraftApproved { draft_id, record, turn } => {
                self.counters.records += 1;
                let d = self.drafts.get_mut(draft_id).expect("known draft");
                d.status = DraftStatus::Approved;
                let session_id = d.session_id.clone();
                self.records.insert(record.record_id.clone(), record.clone());
                let s = self.session_mut(&session_id);
                s.pending_draft = None;
                s.transcript.push(turn.clone());
                s.set_state(turn.state_after);
            }
            Event::DraftDiscarded { draft_id, turn } => {
                let d = self.drafts.get_mut(draft_id).expect("known draft");
                d.status = DraftStatus::Discarded;
                let session_id = d.session_id.clone();
                let s = self.session_mut(&session_id);
                s.pending_draft = None;
                s.transcript.push(turn.clone());
                s.set_state(turn.state_after);
            }
            Event::GoalAdopted { goal_id, ts_ms, turn } => {
                let g = self.goals.get_mut(goal_id).expect("known goal");
                g.status = GoalStatus::Adopted;
                g.adopted_at = Some(*ts_ms);
                let session_id = g.session_id.clone();
                let s = self.session_mut(&session_id);
                s.pending_goal = None;
                s.adopted_goals.push(goal_id.clone());
                s.transcript.push(turn.clone());
                s.set_state(turn.state_after);
            }
            Event::ReflectionApproved { reflection_id, turn } => {
                let r = self.reflections.get_mut(reflection_id).expect("known reflection");
                r.status = ReflectionStatus::Approved;
                let session_id = r.session_id.clone();
                let s = self.session_mut(&session_id);
                s.pending_reflection = None;
                s.transcript.push(turn.clone());
                s.set_state(turn.state_after);
            }
            Event::QuestionnaireRecorded { response } => self.questionnaires.push(response.clone()),
        }
    }

    fn record_bundle(&mut self, built: &BuiltBundle) {
        let recipient = &built.bundle.recipient_id;
        let meeting = &built.bundle.meeting_id;
        for id in &built.record_ids {
            if let Some(r) = self.records.get_mut(id) {
                r.deliveries.entry(recipient.clone()).or_insert_with(|| meeting.clone());
            }
        }
        self.bundles
            .entry(meeting.clone())
            .or_default()
            .insert(recipient.clone(), built.clone());
    }
}

//! The service facade: validates commands, records one event per mutation and
//! applies it to the in-memory state.

use std::path::Path;
use std::sync::OnceLock;
use std::time::{SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::capture::{aggregate, CapturedEvent, MeetingStats, VoiceActivityEvent};
use crate::conversation::{
    fallback_reply, plan_directive, ConversationKind, ConversationSession, ConversationState, DraftFeedback,
    DraftStatus, Goal, GoalSource, GoalStatus, PlannedEffect, Reflection, ReflectionStatus, TranscriptTurn,
    AFTER_APPROVAL_REPLY, AFTER_DISCARD_REPLY, AFTER_REFLECTION_REPLY,
};
use crate::error::{Error, Result};
use crate::ids::{DraftId, GoalId, MeetingId, RecordId, ReflectionId, SessionId, TeamId, UserId};
use crate::invariants::contains_word;
use crate::llm::template::{self, ADOPTED_GOAL, ATTENDANCE_SUMMARY, FEEDBACK_ITEMS, SPEAKING_SUMMARY};
use crate::llm::{Bindings, ChatRole, ChatTurn, Completion, Directive, Gateway};
use crate::orchestrator::{
    validate_team_members, Condition, Meeting, MeetingState, Phase, PhaseState, Team, User,
};
use crate::router::{
    assemble_bundle, pending_records, validate_target, DeliveryBundle, DeliveryStatus, FeedbackRecord,
    FeedbackTarget, OutgoingItem,
};
use crate::state::{BuiltBundle, Event, QuestionnaireResponse, SessionEffect, State};
use crate::store::{EventLog, RecoveryReport};

pub const DEFAULT_CONTROL_MESSAGE: &str = "Hi! Your meeting is coming up soon. I'll check in with you after the \
meeting to hear how it went and collect any feedback you'd like to share.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Clock {
    /// Wall clock, never running backwards relative to the log.
    System,
    /// Each event is `step_ms` after the previous one. Deterministic across restarts.
    Logical { step_ms: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorConfig {
    pub control_message: String,
    pub snapshot_every: u64,
    pub clock: Clock,
    pub fsync: bool,
    /// Keep every rendered prompt in memory for inspection.
    pub audit_prompts: bool,
}

impl Default for MediatorConfig {
    fn default() -> Self {
        Self {
            control_message: DEFAULT_CONTROL_MESSAGE.into(),
            snapshot_every: 100,
            clock: Clock::System,
            fsync: true,
            audit_prompts: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub session_id: SessionId,
    pub kind: ConversationKind,
    pub template_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageOutcome {
    pub session_id: SessionId,
    pub reply: String,
    pub state: ConversationState,
    pub effect: SessionEffect,
    /// The reply came from a canned fallback, not the model.
    pub degraded: bool,
    pub parse_warning: bool,
    /// Directives rejected as illegal for the state (0 to 2).
    pub rejected: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelEntry {
    pub goal: Goal,
    pub reflection: Option<Reflection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestAck {
    /// False for an exact duplicate that was acknowledged without change.
    pub recorded: bool,
}

pub struct Mediator {
    state: State,
    log: Option<EventLog>,
    gateway: Gateway,
    config: MediatorConfig,
    prompts: Vec<PromptRecord>,
    recovery: Option<RecoveryReport>,
}

/// Team member names (as whole words) or user ids (anywhere) in `text`.
pub fn mentioned_members<'a>(text: &str, members: impl IntoIterator<Item = &'a User>) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for u in members {
        if contains_word(text, &u.display_name) {
            out.push(u.display_name.clone());
        }
        if lower.contains(&u.user_id.as_str().to_lowercase()) {
            out.push(u.user_id.to_string());
        }
    }
    out
}

fn everyone_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(everyone|everybody|all|the team|team)$").expect("regex"))
}

fn share_label(duration: u64, total: u64, n: usize) -> &'static str {
    if duration == 0 {
        return "did not speak";
    }
    let ratio = duration as f64 * n as f64 / total as f64;
    if ratio > 1.5 {
        "spoke substantially more than an equal share"
    } else if ratio < 0.5 {
        "spoke substantially less than an equal share"
    } else {
        "spoke about an equal share"
    }
}

impl Mediator {
    pub fn in_memory(gateway: Gateway, config: MediatorConfig) -> Self {
        Self {
            state: State::default(),
            log: None,
            gateway,
            config,
            prompts: Vec::new(),
            recovery: None,
        }
    }

    /// Opens a persistent mediator, replaying whatever the directory holds.
    pub fn open(dir: &Path, gateway: Gateway, config: MediatorConfig) -> Result<Self> {
        let (mut log, state, report) = EventLog::open(dir, config.snapshot_every)?;
        log.set_fsync(config.fsync);
        tracing::info!(
            replayed = report.replayed,
            last_seq = report.last_seq,
            snapshot = ?report.snapshot_seq,
            "event log recovered"
        );
        Ok(Self {
            state,
            log: Some(log),
            gateway,
            config,
            prompts: Vec::new(),
            recovery: Some(report),
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn config(&self) -> &MediatorConfig {
        &self.config
    }

    pub fn recovery(&self) -> Option<&RecoveryReport> {
        self.recovery.as_ref()
    }

    pub fn prompts(&self) -> &[PromptRecord] {
        &self.prompts
    }

    pub fn control_message(&self) -> &str {
        &self.config.control_message
    }

    fn now(&self) -> i64 {
        match self.config.clock {
            Clock::System => {
                let wall = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_millis() as i64)
                    .unwrap_or(0);
                wall.max(self.state.last_ts)
            }
            Clock::Logical { step_ms } => self.state.last_ts + step_ms,
        }
    }

    fn commit(&mut self, ts_ms: i64, event: Event) -> Result<()> {
        let seq = self.state.seq + 1;
        if let Some(log) = self.log.as_mut() {
            log.append(ts_ms, &event)?;
        }
        self.state.apply(seq, ts_ms, &event);
        if let Some(log) = self.log.as_mut() {
            if let Err(e) = log.maybe_snapshot(&self.state) {
                tracing::warn!("snapshot failed: {e}");
            }
        }
        Ok(())
    }

    // ---- lookups ----

    pub fn team(&self, id: &TeamId) -> Result<&Team> {
        self.state.teams.get(id).ok_or_else(|| Error::not_found("team", id))
    }

    pub fn user(&self, id: &UserId) -> Result<&User> {
        self.state.users.get(id).ok_or_else(|| Error::not_found("user", id))
    }

    pub fn meeting(&self, id: &MeetingId) -> Result<&Meeting> {
        self.state.meetings.get(id).ok_or_else(|| Error::not_found("meeting", id))
    }

    pub fn session(&self, id: &SessionId) -> Result<&ConversationSession> {
        self.state.sessions.get(id).ok_or_else(|| Error::not_found("session", id))
    }

    fn members(&self, team: &TeamId) -> Vec<&User> {
        self.state
            .teams
            .get(team)
            .map(|t| t.member_ids.iter().filter_map(|u| self.state.users.get(u)).collect())
            .unwrap_or_default()
    }

    /// Looks up a meeting and checks `user` belongs to its team.
    fn member_meeting(&self, user: &UserId, meeting: &MeetingId) -> Result<(&User, &Meeting)> {
        let u = self.user(user)?;
        let m = self.meeting(meeting)?;
        if !self.team(&m.team_id)?.is_member(user) {
            return Err(Error::Authorization(format!("{user} is not a member of team {}", m.team_id)));
        }
        Ok((u, m))
    }

    // ---- session orchestrator ----

    pub fn create_team(&mut self, name: &str, member_names: &[String]) -> Result<Team> {
        validate_team_members(member_names)?;
        let team_id = TeamId::from_counter(self.state.counters.teams + 1);
        let users: Vec<User> = member_names
            .iter()
            .enumerate()
            .map(|(i, n)| User {
                user_id: UserId::from_counter(self.state.counters.users + 1 + i as u64),
                display_name: n.trim().to_owned(),
                team_id: team_id.clone(),
            })
            .collect();
        let team = Team {
            team_id,
            name: name.to_owned(),
            member_ids: users.iter().map(|u| u.user_id.clone()).collect(),
        };
        let ts = self.now();
        self.commit(
            ts,
            Event::TeamCreated {
                team: team.clone(),
                users,
            },
        )?;
        Ok(team)
    }

    pub fn schedule_meeting(&mut self, team_id: &TeamId, condition: Condition, cycle_index: u32) -> Result<Meeting> {
        self.team(team_id)?;
        let existing = self.state.team_meetings(team_id).count() as u32;
        if self.state.team_meetings(team_id).any(|m| m.cycle_index == cycle_index) {
            return Err(Error::Conflict(format!(
                "team {team_id} already has a meeting at cycle {cycle_index}"
            )));
        }
        if cycle_index != existing {
            return Err(Error::validation(format!(
                "cycle_index {cycle_index} would leave a gap; next cycle for team {team_id} is {existing}"
            )));
        }
        let meeting = Meeting {
            meeting_id: MeetingId::from_counter(self.state.counters.meetings + 1),
            team_id: team_id.clone(),
            condition,
            state: MeetingState::Scheduled,
            cycle_index,
            opened_at: None,
            closed_at: None,
            acknowledged: Default::default(),
            capture: Default::default(),
            stats: None,
        };
        let ts = self.now();
        self.commit(ts, Event::MeetingScheduled { meeting: meeting.clone() })?;
        Ok(meeting)
    }

    /// Opens a meeting at `at` (defaults to now). Members who have not
    /// completed PRE_MEETING have it recorded as not completed.
    pub fn open_meeting(&mut self, meeting_id: &MeetingId, at: Option<i64>) -> Result<Meeting> {
        let m = self.meeting(meeting_id)?;
        if m.state != MeetingState::Scheduled {
            return Err(Error::state(format!("meeting {meeting_id} is {:?}, not SCHEDULED", m.state)));
        }
        if let Some(earlier) = self
            .state
            .team_meetings(&m.team_id)
            .find(|o| o.cycle_index < m.cycle_index && o.state != MeetingState::Closed)
        {
            return Err(Error::state(format!(
                "meeting {} at cycle {} must close first",
                earlier.meeting_id, earlier.cycle_index
            )));
        }
        let skipped = self
            .team(&m.team_id)?
            .member_ids
            .iter()
            .filter(|u| self.state.phase_history(meeting_id, u).pending() == Some(Phase::PreMeeting))
            .cloned()
            .collect();
        let ts = at.unwrap_or_else(|| self.now());
        self.commit(
            ts,
            Event::MeetingOpened {
                meeting_id: meeting_id.clone(),
                ts_ms: ts,
                skipped,
            },
        )?;
        Ok(self.state.meetings[meeting_id].clone())
    }

    /// Closes a meeting and finalizes its speaking and attendance figures.
    pub fn close_meeting(&mut self, meeting_id: &MeetingId, at: Option<i64>) -> Result<Meeting> {
        let m = self.meeting(meeting_id)?;
        if m.state != MeetingState::Open {
            return Err(Error::state(format!("meeting {meeting_id} is {:?}, not OPEN", m.state)));
        }
        let opened = m.opened_at.unwrap_or_default();
        let ts = at.unwrap_or_else(|| self.now().max(opened));
        if ts < opened {
            return Err(Error::validation("closed_at would precede opened_at"));
        }
        let team = self.team(&m.team_id)?;
        let duration = (ts - opened) as u64;
        let stats = MeetingStats {
            meeting_id: meeting_id.clone(),
            team_id: m.team_id.clone(),
            condition: m.condition,
            cycle_index: m.cycle_index,
            duration_ms: duration,
            participants: aggregate(&m.capture, &team.member_ids, duration),
        };
        let skipped = team
            .member_ids
            .iter()
            .filter(|u| self.state.phase_history(meeting_id, u).pending() == Some(Phase::InMeeting))
            .cloned()
            .collect();
        self.commit(
            ts,
            Event::MeetingClosed {
                meeting_id: meeting_id.clone(),
                ts_ms: ts,
                stats,
                skipped,
            },
        )?;
        Ok(self.state.meetings[meeting_id].clone())
    }

    /// Records that a member read the control-condition message, completing PRE_MEETING.
    pub fn acknowledge_control(&mut self, user_id: &UserId, meeting_id: &MeetingId) -> Result<PhaseState> {
        let (_, m) = self.member_meeting(user_id, meeting_id)?;
        if m.condition != Condition::Control {
            return Err(Error::state("only CONTROL meetings have a pre-meeting message to acknowledge"));
        }
        let pending = self.state.phase_history(meeting_id, user_id).pending();
        if pending != Some(Phase::PreMeeting) {
            return Err(match pending {
                Some(p) => Error::pending(format!("PRE_MEETING already recorded; {p} is pending"), p),
                None => Error::state("all phases already recorded"),
            });
        }
        let ts = self.now();
        self.commit(
            ts,
            Event::ControlAcknowledged {
                meeting_id: meeting_id.clone(),
                user_id: user_id.clone(),
                ts_ms: ts,
            },
        )?;
        Ok(PhaseState {
            user_id: user_id.clone(),
            meeting_id: meeting_id.clone(),
            phase: Phase::PreMeeting,
            completed: true,
        })
    }

    /// Completes the user's next phase for the meeting, or explains what is pending.
    pub fn advance_phase(&mut self, user_id: &UserId, meeting_id: &MeetingId, target: Option<Phase>) -> Result<PhaseState> {
        let (_, m) = self.member_meeting(user_id, meeting_id)?;
        let Some(pending) = self.state.phase_history(meeting_id, user_id).pending() else {
            return Err(Error::state("all phases already recorded for this meeting"));
        };
        if let Some(t) = target {
            if t != pending {
                return Err(Error::pending(format!("cannot advance to {t}; {pending} is pending"), pending));
            }
        }
        match pending {
            Phase::PreMeeting => match m.condition {
                Condition::Treatment => {
                    let done = self
                        .state
                        .find_session(user_id, meeting_id, ConversationKind::Ihp)
                        .is_some_and(|s| s.is_complete());
                    if !done {
                        return Err(Error::pending(
                            "the pre-meeting conversation has not reached COMPLETE",
                            pending,
                        ));
                    }
                }
                Condition::Control => {
                    return Err(Error::pending("the pre-meeting message has not been acknowledged", pending))
                }
            },
            Phase::InMeeting => {
                if m.state != MeetingState::Open {
                    return Err(Error::pending(format!("meeting is {:?}, not OPEN", m.state), pending));
                }
            }
            Phase::PostMeeting => {
                if m.state != MeetingState::Closed {
                    return Err(Error::pending("meeting has not closed", pending));
                }
                let done = self
                    .state
                    .find_session(user_id, meeting_id, ConversationKind::Solicitation)
                    .is_some_and(|s| s.is_complete());
                if !done {
                    return Err(Error::pending(
                        "the post-meeting feedback conversation has not reached COMPLETE",
                        pending,
                    ));
                }
            }
        }
        let ts = self.now();
        self.commit(
            ts,
            Event::PhaseAdvanced {
                meeting_id: meeting_id.clone(),
                user_id: user_id.clone(),
                phase: pending,
                ts_ms: ts,
            },
        )?;
        Ok(PhaseState {
            user_id: user_id.clone(),
            meeting_id: meeting_id.clone(),
            phase: pending,
            completed: true,
        })
    }

    pub fn phase_state(&self, user_id: &UserId, meeting_id: &MeetingId) -> Option<PhaseState> {
        self.state
            .phase_history(meeting_id, user_id)
            .last()
            .map(|r| PhaseState {
                user_id: user_id.clone(),
                meeting_id: meeting_id.clone(),
                phase: r.phase,
                completed: r.completed,
            })
    }

    // ---- meeting capture ----

    pub fn ingest_event(&mut self, ev: &VoiceActivityEvent) -> Result<IngestAck> {
        let m = self.meeting(&ev.meeting_id)?;
        if m.state != MeetingState::Open {
            return Err(Error::state(format!("meeting {} is {:?}, not OPEN", ev.meeting_id, m.state)));
        }
        if !self.team(&m.team_id)?.is_member(&ev.user_id) {
            return Err(Error::Authorization(format!(
                "{} is not a member of team {}",
                ev.user_id, m.team_id
            )));
        }
        let captured = CapturedEvent {
            user_id: ev.user_id.clone(),
            kind: ev.kind,
            ts_ms: ev.ts_ms,
        };
        if m.capture.contains(&captured) {
            return Ok(IngestAck { recorded: false });
        }
        let ts = self.now();
        self.commit(
            ts,
            Event::VoiceEventIngested {
                meeting_id: ev.meeting_id.clone(),
                event: captured,
            },
        )?;
        Ok(IngestAck { recorded: true })
    }

    pub fn finalize_meeting_stats(&self, meeting_id: &MeetingId) -> Result<MeetingStats> {
        let m = self.meeting(meeting_id)?;
        match (&m.state, &m.stats) {
            (MeetingState::Closed, Some(stats)) => Ok(stats.clone()),
            _ => Err(Error::state(format!("meeting {meeting_id} is {:?}, not CLOSED", m.state))),
        }
    }

    // ---- prompt context ----

    fn solicitation_summaries(&self, stats: &MeetingStats) -> (String, String) {
        let total: u64 = stats.participants.iter().map(|p| p.total_speaking_ms).sum();
        let n = stats.participants.len();
        let name = |u: &UserId| {
            self.state
                .users
                .get(u)
                .map(|u| u.display_name.clone())
                .unwrap_or_else(|| u.to_string())
        };
        let speaking = if total == 0 {
            "no speech was captured in this meeting.".to_owned()
        } else {
            stats
                .participants
                .iter()
                .map(|p| format!("{} {}", name(&p.user_id), share_label(p.total_speaking_ms, total, n)))
                .collect::<Vec<_>>()
                .join("; ")
        };
        let (joined, absent): (Vec<_>, Vec<_>) = stats.participants.iter().partition(|p| p.joined);
        let mut attendance = Vec::new();
        if !joined.is_empty() {
            attendance.push(format!(
                "joined: {}",
                joined.iter().map(|p| name(&p.user_id)).collect::<Vec<_>>().join(", ")
            ));
        }
        if !absent.is_empty() {
            attendance.push(format!(
                "did not join: {}",
                absent.iter().map(|p| name(&p.user_id)).collect::<Vec<_>>().join(", ")
            ));
        }
        (speaking, attendance.join("; "))
    }

    /// Owner-only summary of the previous meeting; never names anyone.
    fn ihp_speaking_summary(&self, user: &UserId, meeting: &Meeting) -> String {
        let previous = self
            .state
            .team_meetings(&meeting.team_id)
            .filter(|m| m.cycle_index < meeting.cycle_index)
            .max_by_key(|m| m.cycle_index)
            .and_then(|m| m.stats.as_ref());
        let Some(stats) = previous else {
            return "no speaking data from a previous meeting is available.".into();
        };
        let total: u64 = stats.participants.iter().map(|p| p.total_speaking_ms).sum();
        match stats.participant(user) {
            Some(p) if total > 0 => format!(
                "the participant {} (their share of speaking time was about {:.0}% in a meeting of {}).",
                share_label(p.total_speaking_ms, total, stats.participants.len()),
                100.0 * p.total_speaking_ms as f64 / total as f64,
                stats.participants.len()
            ),
            Some(_) => "no speech was captured in the previous meeting.".into(),
            None => "the participant has no speaking data from the previous meeting.".into(),
        }
    }

    fn bindings(&self, session: &ConversationSession) -> Bindings {
        let mut b = Bindings::new();
        let meeting = &self.state.meetings[&session.meeting_id];
        match session.kind {
            ConversationKind::Solicitation => {
                let (speaking, attendance) = meeting
                    .stats
                    .as_ref()
                    .map(|s| self.solicitation_summaries(s))
                    .unwrap_or_default();
                b.insert(SPEAKING_SUMMARY.into(), speaking);
                b.insert(ATTENDANCE_SUMMARY.into(), attendance);
            }
            ConversationKind::Ihp => {
                let items = session
                    .context
                    .iter()
                    .map(|i| format!("- [{}] {}", i.scope.label(), i.text))
                    .collect::<Vec<_>>()
                    .join("\n");
                b.insert(FEEDBACK_ITEMS.into(), items);
                b.insert(SPEAKING_SUMMARY.into(), self.ihp_speaking_summary(&session.user_id, meeting));
                let goal = session
                    .adopted_goals
                    .last()
                    .and_then(|g| self.state.goals.get(g))
                    .map(|g| g.text.clone())
                    .unwrap_or_else(|| "(no goal adopted yet)".into());
                b.insert(ADOPTED_GOAL.into(), goal);
            }
        }
        b
    }

    fn call_model(
        &mut self,
        session: &ConversationSession,
        state: ConversationState,
        transcript: &[ChatTurn],
    ) -> Result<Completion> {
        let template_id = template::template_id(session.kind, state);
        let prompt = template::render_prompt(&template_id, &self.bindings(session))?;
        if self.config.audit_prompts {
            self.prompts.push(PromptRecord {
                session_id: session.session_id.clone(),
                kind: session.kind,
                template_id: template_id.clone(),
                prompt: prompt.clone(),
            });
        }
        self.gateway.complete_rendered(&template_id, prompt, transcript)
    }

    /// One agent turn whose directive is ignored (openers and post-button turns).
    fn scripted_turn(&mut self, session: &ConversationSession, state: ConversationState) -> (String, bool) {
        match self.call_model(session, state, &session.chat_transcript()) {
            Ok(c) if !c.agent.reply_text.trim().is_empty() => (c.agent.reply_text, false),
            Ok(_) => (fallback_reply(session.kind, state).to_owned(), true),
            Err(e) => {
                tracing::warn!(session = %session.session_id, "agent turn degraded: {e}");
                (fallback_reply(session.kind, state).to_owned(), true)
            }
        }
    }

    // ---- conversation engine ----

    fn new_session(&self, user: &UserId, meeting: &MeetingId, kind: ConversationKind, ts: i64) -> ConversationSession {
        ConversationSession {
            session_id: SessionId::from_counter(self.state.counters.sessions + 1),
            user_id: user.clone(),
            meeting_id: meeting.clone(),
            kind,
            state: ConversationState::Init,
            transcript: Vec::new(),
            created_at: ts,
            state_history: vec![ConversationState::Init],
            pending_text: None,
            pending_draft: None,
            pending_goal: None,
            adopted_goals: Vec::new(),
            pending_reflection: None,
            context: Vec::new(),
            parse_warnings: 0,
            degraded_replies: 0,
        }
    }

    pub fn start_solicitation(&mut self, user_id: &UserId, meeting_id: &MeetingId) -> Result<ConversationSession> {
        let (_, m) = self.member_meeting(user_id, meeting_id)?;
        if m.state != MeetingState::Closed || m.stats.is_none() {
            return Err(Error::state(format!(
                "meeting {meeting_id} is {:?}; feedback is collected once it has closed",
                m.state
            )));
        }
        if self
            .state
            .find_session(user_id, meeting_id, ConversationKind::Solicitation)
            .is_some()
        {
            return Err(Error::Conflict(format!(
                "{user_id} already has a feedback conversation for {meeting_id}"
            )));
        }
        let ts = self.now();
        let mut session = self.new_session(user_id, meeting_id, ConversationKind::Solicitation, ts);
        let (text, degraded) = self.scripted_turn(&session, ConversationState::Init);
        session.transcript.push(TranscriptTurn {
            role: ChatRole::Agent,
            text,
            state_after: ConversationState::Init,
            ts_ms: ts,
        });
        session.degraded_replies += degraded as u32;
        self.commit(
            ts,
            Event::SessionStarted {
                session: session.clone(),
                bundle: None,
            },
        )?;
        Ok(session)
    }

    pub fn start_ihp(&mut self, user_id: &UserId, meeting_id: &MeetingId) -> Result<ConversationSession> {
        let (_, m) = self.member_meeting(user_id, meeting_id)?;
        if m.condition != Condition::Treatment {
            return Err(Error::state("CONTROL meetings have no pre-meeting conversation"));
        }
        if m.state != MeetingState::Scheduled {
            return Err(Error::state(format!(
                "meeting {meeting_id} is {:?}; the pre-meeting conversation happens before it opens",
                m.state
            )));
        }
        if self.state.find_session(user_id, meeting_id, ConversationKind::Ihp).is_some() {
            return Err(Error::Conflict(format!(
                "{user_id} already has a pre-meeting conversation for {meeting_id}"
            )));
        }
        let (bundle, new_bundle) = match self.existing_bundle(user_id, meeting_id) {
            Some(b) => (b.bundle.clone(), None),
            None => {
                let built = self.prepare_bundle(user_id, meeting_id)?;
                (built.bundle.clone(), Some(built))
            }
        };
        let ts = self.now();
        let mut session = self.new_session(user_id, meeting_id, ConversationKind::Ihp, ts);
        session.context = bundle.items;
        session.set_state(ConversationState::PresentFeedback);
        let (text, degraded) = self.scripted_turn(&session, ConversationState::PresentFeedback);
        session.transcript.push(TranscriptTurn {
            role: ChatRole::Agent,
            text,
            state_after: ConversationState::PresentFeedback,
            ts_ms: ts,
        });
        session.degraded_replies += degraded as u32;
        self.commit(
            ts,
            Event::SessionStarted {
                session: session.clone(),
                bundle: new_bundle,
            },
        )?;
        Ok(session)
    }

    fn resolve_target(&self, session: &ConversationSession, raw: &str) -> std::result::Result<FeedbackTarget, String> {
        let raw = raw.trim();
        let meeting = &self.state.meetings[&session.meeting_id];
        let team = &self.state.teams[&meeting.team_id];
        let target = if everyone_re().is_match(raw) {
            FeedbackTarget::Everyone
        } else {
            let found = self.members(&team.team_id).into_iter().find(|u| {
                u.display_name.eq_ignore_ascii_case(raw) || u.user_id.as_str().eq_ignore_ascii_case(raw)
            });
            match found {
                Some(u) => FeedbackTarget::Individual(u.user_id.clone()),
                None => return Err(format!("target {raw:?} is not a member of the team")),
            }
        };
        validate_target(team, &session.user_id, &target).map_err(|e| e.to_string())?;
        Ok(target)
    }

    /// Plans a directive and applies the text rules that keep identities out
    /// of anything that travels to other people or into later prompts.
    fn plan(&self, session: &ConversationSession, directive: &Directive) -> std::result::Result<(ConversationState, PlannedEffect), String> {
        let plan = plan_directive(session, directive, |t| self.resolve_target(session, t))?;
        let team = &self.state.meetings[&session.meeting_id].team_id;
        let members = self.members(team);
        match &plan.effect {
            PlannedEffect::CreateDraft { text, .. } | PlannedEffect::SetPendingText(text) => {
                let names = mentioned_members(text, members.iter().copied());
                if !names.is_empty() {
                    return Err(format!(
                        "feedback must not name team members ({}); rephrase it without names",
                        names.join(", ")
                    ));
                }
            }
            PlannedEffect::ProposeGoal(text) => {
                let owner = self.state.users.get(&session.user_id).map(|u| u.display_name.as_str());
                let mut names = mentioned_members(text, members.iter().copied());
                names.retain(|n| Some(n.as_str()) != owner);
                if !names.is_empty() {
                    return Err(format!("goals must not name teammates ({})", names.join(", ")));
                }
            }
            PlannedEffect::None | PlannedEffect::DraftReflection(_) => {}
        }
        Ok((plan.next, plan.effect))
    }

    pub fn handle_user_message(&mut self, session_id: &SessionId, text: &str) -> Result<MessageOutcome> {
        let session = self.session(session_id)?.clone();
        if session.is_complete() {
            return Err(Error::state(format!("session {session_id} is COMPLETE")));
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::validation("message text must be non-empty"));
        }
        let ts = self.now();
        let state = session.state;
        let user_turn = TranscriptTurn {
            role: ChatRole::User,
            text: text.to_owned(),
            state_after: state,
            ts_ms: ts,
        };
        let mut transcript = session.chat_transcript();
        transcript.push(user_turn.chat_turn());

        let mut rejected = 0u32;
        let mut parse_warning = false;
        let mut outcome: Option<(String, ConversationState, PlannedEffect)> = None;
        let mut degraded = false;
        for attempt in 0..2 {
            match self.call_model(&session, state, &transcript) {
                Ok(c) => {
                    parse_warning |= c.agent.parse_warning.is_some();
                    match self.plan(&session, &c.agent.directive) {
                        Ok((next, effect)) if !c.agent.reply_text.trim().is_empty() => {
                            outcome = Some((c.agent.reply_text, next, effect));
                            break;
                        }
                        Ok(_) => {
                            rejected += 1;
                            transcript.push(ChatTurn::new(
                                ChatRole::System,
                                "Your last reply had no text for the participant. Reply again with a message.",
                            ));
                        }
                        Err(reason) => {
                            rejected += 1;
                            tracing::warn!(session = %session_id, attempt, "illegal directive: {reason}");
                            transcript.push(ChatTurn::new(
                                ChatRole::System,
                                format!(
                                    "Your last reply was not accepted: {reason}. Reply again using only the \
directives allowed in this step."
                                ),
                            ));
                        }
                    }
                }
                Err(e @ (Error::GatewayUnavailable(_) | Error::Provider { .. })) => {
                    tracing::warn!(session = %session_id, "model unavailable: {e}");
                    degraded = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let (reply, next, planned) = match outcome {
            Some(o) => o,
            None => {
                degraded = true;
                (fallback_reply(session.kind, state).to_owned(), state, PlannedEffect::None)
            }
        };

        let meeting_id = session.meeting_id.clone();
        let effect = match planned {
            PlannedEffect::None => SessionEffect::None,
            PlannedEffect::SetPendingText(text) => SessionEffect::PendingText { text },
            PlannedEffect::CreateDraft { text, target } => SessionEffect::DraftCreated {
                draft: DraftFeedback {
                    draft_id: DraftId::from_counter(self.state.counters.drafts + 1),
                    session_id: session_id.clone(),
                    author_id: session.user_id.clone(),
                    meeting_id,
                    text,
                    target,
                    status: DraftStatus::Draft,
                    warnings: Vec::new(),
                },
            },
            PlannedEffect::ProposeGoal(text) => SessionEffect::GoalProposed {
                goal: Goal {
                    goal_id: GoalId::from_counter(self.state.counters.goals + 1),
                    session_id: session_id.clone(),
                    user_id: session.user_id.clone(),
                    meeting_id,
                    source: if text_overlaps(&text, &user_turn.text) {
                        GoalSource::UserStated
                    } else {
                        GoalSource::AgentProposed
                    },
                    text,
                    status: GoalStatus::Proposed,
                    adopted_at: None,
                },
            },
            PlannedEffect::DraftReflection(text) => SessionEffect::ReflectionDrafted {
                reflection: Reflection {
                    reflection_id: ReflectionId::from_counter(self.state.counters.reflections + 1),
                    goal_id: session.adopted_goals.last().cloned().expect("reflection only after adoption"),
                    session_id: session_id.clone(),
                    text,
                    status: ReflectionStatus::Draft,
                },
            },
        };
        let agent_turn = TranscriptTurn {
            role: ChatRole::Agent,
            text: reply.clone(),
            state_after: next,
            ts_ms: ts,
        };
        self.commit(
            ts,
            Event::MessageHandled {
                session_id: session_id.clone(),
                turns: vec![user_turn, agent_turn],
                next,
                effect: effect.clone(),
                parse_warning,
                degraded,
            },
        )?;
        Ok(MessageOutcome {
            session_id: session_id.clone(),
            reply,
            state: next,
            effect,
            degraded,
            parse_warning,
            rejected,
        })
    }

    fn pending_draft(&self, draft_id: &DraftId) -> Result<(&DraftFeedback, &ConversationSession)> {
        let d = self.state.drafts.get(draft_id).ok_or_else(|| Error::not_found("draft", draft_id))?;
        if d.status != DraftStatus::Draft {
            return Err(Error::state(format!("draft {draft_id} is already {:?}", d.status)));
        }
        let s = self.session(&d.session_id)?;
        if s.kind != ConversationKind::Solicitation
            || s.state != ConversationState::AwaitApproval
            || s.pending_draft.as_ref() != Some(draft_id)
        {
            return Err(Error::state(format!("draft {draft_id} is not awaiting approval")));
        }
        Ok((d, s))
    }

    /// The explicit approval action: only this turns a draft into routed feedback.
    pub fn approve_feedback(&mut self, draft_id: &DraftId) -> Result<FeedbackRecord> {
        let (d, _) = self.pending_draft(draft_id)?;
        let meeting = self.meeting(&d.meeting_id)?;
        let team = self.team(&meeting.team_id)?;
        validate_target(team, &d.author_id, &d.target)?;
        let ts = self.now();
        let record = FeedbackRecord {
            record_id: RecordId::from_counter(self.state.counters.records + 1),
            author_id: d.author_id.clone(),
            team_id: team.team_id.clone(),
            origin_meeting_id: meeting.meeting_id.clone(),
            origin_cycle: meeting.cycle_index,
            draft_id: draft_id.clone(),
            text: d.text.clone(),
            target: d.target.clone(),
            deliveries: Default::default(),
            created_at: ts,
        };
        let turn = TranscriptTurn {
            role: ChatRole::Agent,
            text: AFTER_APPROVAL_REPLY.into(),
            state_after: ConversationState::Probing,
            ts_ms: ts,
        };
        self.commit(
            ts,
            Event::DraftApproved {
                draft_id: draft_id.clone(),
                record: record.clone(),
                turn,
            },
        )?;
        Ok(record)
    }

    pub fn discard_feedback(&mut self, draft_id: &DraftId) -> Result<DraftFeedback> {
        self.pending_draft(draft_id)?;
        let ts = self.now();
        let turn = TranscriptTurn {
            role: ChatRole::Agent,
            text: AFTER_DISCARD_REPLY.into(),
            state_after: ConversationState::Probing,
            ts_ms: ts,
        };
        self.commit(
            ts,
            Event::DraftDiscarded {
                draft_id: draft_id.clone(),
                turn,
            },
        )?;
        Ok(self.state.drafts[draft_id].clone())
    }

    /// The explicit adoption action; moves the conversation on to reflection.
    pub fn adopt_goal(&mut self, goal_id: &GoalId) -> Result<Goal> {
        let g = self.state.goals.get(goal_id).ok_or_else(|| Error::not_found("goal", goal_id))?;
        if g.status != GoalStatus::Proposed {
            return Err(Error::state(format!("goal {goal_id} is already {:?}", g.status)));
        }
        let s = self.session(&g.session_id)?;
        if s.state != ConversationState::AwaitAdoption || s.pending_goal.as_ref() != Some(goal_id) {
            return Err(Error::state(format!(
                "goal {goal_id} is not awaiting adoption (conversation is in {})",
                s.state.as_str()
            )));
        }
        let ts = self.now();
        let mut preview = s.clone();
        preview.adopted_goals.push(goal_id.clone());
        preview.state = ConversationState::TransgressionElicitation;
        let (text, _) = self.scripted_turn(&preview, ConversationState::TransgressionElicitation);
        let turn = TranscriptTurn {
            role: ChatRole::Agent,
            text,
            state_after: ConversationState::TransgressionElicitation,
            ts_ms: ts,
        };
        self.commit(
            ts,
            Event::GoalAdopted {
                goal_id: goal_id.clone(),
                ts_ms: ts,
                turn,
            },
        )?;
        Ok(self.state.goals[goal_id].clone())
    }

    pub fn approve_reflection(&mut self, reflection_id: &ReflectionId) -> Result<Reflection> {
        let r = self
            .state
            .reflections
            .get(reflection_id)
            .ok_or_else(|| Error::not_found("reflection", reflection_id))?;
        if r.status != ReflectionStatus::Draft {
            return Err(Error::state(format!("reflection {reflection_id} is already approved")));
        }
        let s = self.session(&r.session_id)?;
        if s.state != ConversationState::AwaitReflectionApproval || s.pending_reflection.as_ref() != Some(reflection_id)
        {
            return Err(Error::state(format!("reflection {reflection_id} is not awaiting approval")));
        }
        let ts = self.now();
        let turn = TranscriptTurn {
            role: ChatRole::Agent,
            text: AFTER_REFLECTION_REPLY.into(),
            state_after: ConversationState::Complete,
            ts_ms: ts,
        };
        self.commit(
            ts,
            Event::ReflectionApproved {
                reflection_id: reflection_id.clone(),
                turn,
            },
        )?;
        Ok(self.state.reflections[reflection_id].clone())
    }

    /// Adopted goals (with approved reflections) for one user's meeting panel.
    pub fn goal_panel(&self, user_id: &UserId, meeting_id: &MeetingId) -> Result<Vec<PanelEntry>> {
        self.user(user_id)?;
        self.meeting(meeting_id)?;
        Ok(self
            .state
            .goals
            .values()
            .filter(|g| &g.user_id == user_id && &g.meeting_id == meeting_id && g.status == GoalStatus::Adopted)
            .map(|g| PanelEntry {
                goal: g.clone(),
                reflection: self
                    .state
                    .reflections
                    .values()
                    .filter(|r| r.goal_id == g.goal_id && r.status == ReflectionStatus::Approved)
                    .last()
                    .cloned(),
            })
            .collect())
    }

    // ---- feedback router ----

    fn existing_bundle(&self, recipient: &UserId, meeting: &MeetingId) -> Option<&BuiltBundle> {
        self.state.bundles.get(meeting).and_then(|m| m.get(recipient))
    }

    fn prepare_bundle(&self, recipient: &UserId, meeting_id: &MeetingId) -> Result<BuiltBundle> {
        let m = self.meeting(meeting_id)?;
        let records = pending_records(self.state.records.values(), &m.team_id, recipient, m.cycle_index);
        Ok(BuiltBundle {
            bundle: assemble_bundle(recipient, meeting_id, &records),
            record_ids: records.iter().map(|r| r.record_id.clone()).collect(),
        })
    }

    /// Builds (once) the recipient's bundle for the meeting and marks its records delivered.
    pub fn build_delivery_bundle(&mut self, recipient: &UserId, meeting_id: &MeetingId) -> Result<DeliveryBundle> {
        self.member_meeting(recipient, meeting_id)?;
        if let Some(b) = self.existing_bundle(recipient, meeting_id) {
            return Ok(b.bundle.clone());
        }
        let built = self.prepare_bundle(recipient, meeting_id)?;
        let bundle = built.bundle.clone();
        let ts = self.now();
        self.commit(ts, Event::BundleBuilt { built })?;
        Ok(bundle)
    }

    /// The recipient's delivery view: the built bundle, or a preview that marks nothing.
    pub fn inbox(&self, recipient: &UserId, meeting_id: &MeetingId) -> Result<DeliveryBundle> {
        self.member_meeting(recipient, meeting_id)?;
        match self.existing_bundle(recipient, meeting_id) {
            Some(b) => Ok(b.bundle.clone()),
            None => Ok(self.prepare_bundle(recipient, meeting_id)?.bundle),
        }
    }

    /// The author's sidebar: their approved feedback with targets and delivery status.
    pub fn outgoing(&self, author: &UserId) -> Result<Vec<OutgoingItem>> {
        self.user(author)?;
        let mut items: Vec<OutgoingItem> = self
            .state
            .records
            .values()
            .filter(|r| &r.author_id == author)
            .map(|r| {
                let later = self
                    .state
                    .team_meetings(&r.team_id)
                    .any(|m| m.cycle_index > r.origin_cycle);
                let status = match self.state.teams.get(&r.team_id) {
                    _ if !later => DeliveryStatus::Undelivered,
                    Some(team) if r.eligible_recipients(team).iter().all(|u| r.deliveries.contains_key(u)) => {
                        DeliveryStatus::Delivered
                    }
                    _ => DeliveryStatus::Pending,
                };
                OutgoingItem {
                    record_id: r.record_id.clone(),
                    origin_meeting_id: r.origin_meeting_id.clone(),
                    text: r.text.clone(),
                    target_name: match &r.target {
                        FeedbackTarget::Individual(u) => self.state.users.get(u).map(|u| u.display_name.clone()),
                        FeedbackTarget::Everyone => None,
                    },
                    target: r.target.clone(),
                    status,
                    undelivered: status == DeliveryStatus::Undelivered,
                    created_at: r.created_at,
                }
            })
            .collect();
        items.sort_by(|a, b| (a.created_at, &a.record_id).cmp(&(b.created_at, &b.record_id)));
        Ok(items)
    }

    // ---- questionnaires ----

    pub fn record_questionnaire(&mut self, mut response: QuestionnaireResponse) -> Result<QuestionnaireResponse> {
        self.user(&response.user_id)?;
        if let Some(m) = &response.meeting_id {
            self.meeting(m)?;
        }
        if response.instrument.trim().is_empty() {
            return Err(Error::validation("instrument must be non-empty"));
        }
        if response.labels.is_empty() || response.labels.len() != response.values.len() {
            return Err(Error::validation("labels and values must be non-empty and of equal length"));
        }
        if response.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("values must be finite numbers"));
        }
        let ts = self.now();
        response.recorded_at = ts;
        self.commit(
            ts,
            Event::QuestionnaireRecorded {
                response: response.clone(),
            },
        )?;
        Ok(response)
    }
}

/// Rough check whether a goal restates the user's own words.
fn text_overlaps(goal: &str, user_text: &str) -> bool {
    let words = |s: &str| -> Vec<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.len() > 3)
            .map(str::to_lowercase)
            .collect()
    };
    let user = words(user_text);
    let goal = words(goal);
    !goal.is_empty() && goal.iter().filter(|w| user.contains(w)).count() * 2 >= goal.len()
}

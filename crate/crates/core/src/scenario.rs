//! Scripted end-to-end replay of a control meeting followed by a treatment
//! meeting, against the scripted mock provider.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::capture::{VoiceActivityEvent, VoiceEventKind};
use crate::conversation::{ConversationKind, ConversationState};
use crate::error::{Error, Result};
use crate::ids::{MeetingId, SessionId, TeamId, UserId};
use crate::invariants::check_invariants;
use crate::llm::{Gateway, GatewayConfig, MockScript, ScriptedMock, VirtualPacer};
use crate::mediator::{Clock, Mediator, MediatorConfig, PromptRecord};
use crate::metrics::{build_report, gini, Alternative, MetricsInput, MetricsReport};
use crate::orchestrator::{validate_team_members, Condition, Phase};
use crate::router::DeliveryScope;
use crate::state::State;
use crate::store::{RecoveryReport, EVENTS_FILE};

pub const REFERENCE_SCENARIO: &str = include_str!("../scenarios/reference.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTeam {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEvent {
    /// Member display name.
    pub user: String,
    pub kind: VoiceEventKind,
    pub ts_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeeting {
    pub condition: Condition,
    pub duration_ms: u64,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
    /// Pre-meeting conversation messages per member (TREATMENT only).
    #[serde(default)]
    pub pre_meeting: BTreeMap<String, Vec<String>>,
    /// Post-meeting feedback conversation messages per member.
    #[serde(default)]
    pub post_meeting: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub team: ScenarioTeam,
    pub mock_script: MockScript,
    pub meetings: Vec<ScenarioMeeting>,
}

impl Scenario {
    /// Parses and validates a scenario; errors name the offending path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::validation(format!("scenario at {}: {}", e.path(), e.inner())))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("scenario {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn reference() -> Self {
        Self::from_json(REFERENCE_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn validate(&self) -> Result<()> {
        validate_team_members(&self.team.members).map_err(|e| Error::validation(format!("team.members: {e}")))?;
        if self.meetings.is_empty() {
            return Err(Error::validation("meetings: at least one meeting is required"));
        }
        let member = |path: String, name: &str| -> Result<()> {
            if self.team.members.iter().any(|m| m == name) {
                Ok(())
            } else {
                Err(Error::validation(format!("{path}: {name:?} is not a team member")))
            }
        };
        for (i, m) in self.meetings.iter().enumerate() {
            if m.duration_ms == 0 {
                return Err(Error::validation(format!("meetings[{i}].duration_ms: must be positive")));
            }
            for (j, e) in m.events.iter().enumerate() {
                member(format!("meetings[{i}].events[{j}].user"), &e.user)?;
            }
            if m.condition == Condition::Control && !m.pre_meeting.is_empty() {
                return Err(Error::validation(format!(
                    "meetings[{i}].pre_meeting: CONTROL meetings have no pre-meeting conversation"
                )));
            }
            for name in m.pre_meeting.keys() {
                member(format!("meetings[{i}].pre_meeting"), name)?;
            }
            for name in m.post_meeting.keys() {
                member(format!("meetings[{i}].post_meeting"), name)?;
            }
            for (kind, map) in [("pre_meeting", &m.pre_meeting), ("post_meeting", &m.post_meeting)] {
                for (name, msgs) in map {
                    if let Some(k) = msgs.iter().position(|t| t.trim().is_empty()) {
                        return Err(Error::validation(format!("meetings[{i}].{kind}.{name}[{k}]: empty message")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One restart-safe unit of the replay. Steps refer to meetings by index and
/// members by position; ids are looked up from state when the step runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    CreateTeam,
    Schedule { meeting: usize },
    Acknowledge { meeting: usize, member: usize },
    StartIhp { meeting: usize, member: usize },
    Message { meeting: usize, member: usize, kind: ConversationKind, index: usize },
    RequireComplete { meeting: usize, member: usize, kind: ConversationKind },
    AdvancePhase { meeting: usize, member: usize, phase: Phase },
    Open { meeting: usize },
    Ingest { meeting: usize, event: usize },
    Close { meeting: usize },
    StartSolicitation { meeting: usize, member: usize },
}

pub fn plan_steps(s: &Scenario) -> Vec<Step> {
    let mut steps = vec![Step::CreateTeam];
    let members = s.team.members.len();
    let messages = |map: &BTreeMap<String, Vec<String>>, who: usize| {
        map.get(&s.team.members[who]).map(Vec::len).unwrap_or(0)
    };
    for (mi, m) in s.meetings.iter().enumerate() {
        steps.push(Step::Schedule { meeting: mi });
        for who in 0..members {
            match m.condition {
                Condition::Control => steps.push(Step::Acknowledge { meeting: mi, member: who }),
                Condition::Treatment => {
                    let kind = ConversationKind::Ihp;
                    steps.push(Step::StartIhp { meeting: mi, member: who });
                    for index in 0..messages(&m.pre_meeting, who) {
                        steps.push(Step::Message { meeting: mi, member: who, kind, index });
                    }
                    steps.push(Step::RequireComplete { meeting: mi, member: who, kind });
                    steps.push(Step::AdvancePhase { meeting: mi, member: who, phase: Phase::PreMeeting });
                }
            }
        }
        steps.push(Step::Open { meeting: mi });
        for who in 0..members {
            let joins = m
                .events
                .iter()
                .any(|e| e.user == s.team.members[who] && e.kind == VoiceEventKind::Join);
            if joins {
                steps.push(Step::AdvancePhase { meeting: mi, member: who, phase: Phase::InMeeting });
            }
        }
        for event in 0..m.events.len() {
            steps.push(Step::Ingest { meeting: mi, event });
        }
        steps.push(Step::Close { meeting: mi });
        for who in 0..members {
            let kind = ConversationKind::Solicitation;
            steps.push(Step::StartSolicitation { meeting: mi, member: who });
            for index in 0..messages(&m.post_meeting, who) {
                steps.push(Step::Message { meeting: mi, member: who, kind, index });
            }
            steps.push(Step::RequireComplete { meeting: mi, member: who, kind });
            steps.push(Step::AdvancePhase { meeting: mi, member: who, phase: Phase::PostMeeting });
        }
    }
    steps
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Persist to this directory; in memory when absent.
    pub data_dir: Option<PathBuf>,
    /// Simulate a crash after this many steps: drop the service, leave a torn
    /// line in the log, and recover from disk. Requires `data_dir`.
    pub crash_after: Option<usize>,
    pub snapshot_every: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeetingSummary {
    pub meeting_id: MeetingId,
    pub condition: Condition,
    pub cycle_index: u32,
    pub duration_ms: u64,
    pub speaking_ms: BTreeMap<String, u64>,
    pub gini: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: SessionId,
    pub user: String,
    pub meeting_id: MeetingId,
    pub kind: ConversationKind,
    pub final_state: ConversationState,
    pub turns: usize,
    pub context_scopes: Vec<DeliveryScope>,
    pub degraded_replies: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub ok: bool,
    pub violations: Vec<String>,
    pub steps: usize,
    pub events: u64,
    pub restarted_after: Option<usize>,
    pub recovery: Option<RecoveryReport>,
    pub meetings: Vec<MeetingSummary>,
    pub sessions: Vec<SessionSummary>,
    pub feedback_records: usize,
    pub metrics: MetricsReport,
    /// CRC-32 of the final state's JSON; equal runs give equal checksums.
    pub state_checksum: u32,
}

pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub state: State,
    pub prompts: Vec<PromptRecord>,
}

pub fn scenario_gateway(script: &MockScript) -> Gateway {
    Gateway::with_pacer(
        Arc::new(ScriptedMock::new(script.clone())),
        GatewayConfig::default(),
        Arc::new(VirtualPacer::default()),
    )
}

fn mediator_config(opts: &ReplayOptions) -> MediatorConfig {
    MediatorConfig {
        snapshot_every: opts.snapshot_every.unwrap_or(25),
        clock: Clock::Logical { step_ms: 1000 },
        fsync: false,
        audit_prompts: true,
        ..MediatorConfig::default()
    }
}

struct Driver<'a> {
    scenario: &'a Scenario,
}

impl Driver<'_> {
    fn team(&self, m: &Mediator) -> Result<TeamId> {
        m.state()
            .teams
            .values()
            .rev()
            .find(|t| t.name == self.scenario.team.name)
            .map(|t| t.team_id.clone())
            .ok_or_else(|| Error::not_found("team", &self.scenario.team.name))
    }

    fn user(&self, m: &Mediator, who: usize) -> Result<UserId> {
        let team = self.team(m)?;
        let name = &self.scenario.team.members[who];
        m.state().teams[&team]
            .member_ids
            .iter()
            .find(|u| m.state().users[*u].display_name == *name)
            .cloned()
            .ok_or_else(|| Error::not_found("user", name))
    }

    fn meeting(&self, m: &Mediator, index: usize) -> Result<MeetingId> {
        let team = self.team(m)?;
        m.state()
            .team_meetings(&team)
            .find(|mt| mt.cycle_index as usize == index)
            .map(|mt| mt.meeting_id.clone())
            .ok_or_else(|| Error::not_found("meeting", format!("cycle {index}")))
    }

    fn session(&self, m: &Mediator, meeting: usize, who: usize, kind: ConversationKind) -> Result<SessionId> {
        let (u, mt) = (self.user(m, who)?, self.meeting(m, meeting)?);
        m.state()
            .find_session(&u, &mt, kind)
            .map(|s| s.session_id.clone())
            .ok_or_else(|| Error::not_found("session", format!("{} {u} {mt}", kind.as_str())))
    }

    /// Presses whichever button the session is waiting on, as a participant would.
    fn press_buttons(&self, m: &mut Mediator, session: &SessionId) -> Result<()> {
        loop {
            let s = m.session(session)?.clone();
            match s.state {
                ConversationState::AwaitApproval => {
                    let draft = s.pending_draft.ok_or_else(|| Error::state("awaiting approval without draft"))?;
                    m.approve_feedback(&draft)?;
                }
                ConversationState::AwaitAdoption => {
                    let goal = s.pending_goal.ok_or_else(|| Error::state("awaiting adoption without goal"))?;
                    m.adopt_goal(&goal)?;
                }
                ConversationState::AwaitReflectionApproval => {
                    let r = s
                        .pending_reflection
                        .ok_or_else(|| Error::state("awaiting approval without reflection"))?;
                    m.approve_reflection(&r)?;
                }
                _ => return Ok(()),
            }
        }
    }

    fn run(&self, m: &mut Mediator, step: Step) -> Result<()> {
        let sc = self.scenario;
        match step {
            Step::CreateTeam => {
                m.create_team(&sc.team.name, &sc.team.members)?;
            }
            Step::Schedule { meeting } => {
                let team = self.team(m)?;
                m.schedule_meeting(&team, sc.meetings[meeting].condition, meeting as u32)?;
            }
            Step::Acknowledge { meeting, member } => {
                let (u, mt) = (self.user(m, member)?, self.meeting(m, meeting)?);
                m.acknowledge_control(&u, &mt)?;
            }
            Step::StartIhp { meeting, member } => {
                let (u, mt) = (self.user(m, member)?, self.meeting(m, meeting)?);
                m.start_ihp(&u, &mt)?;
            }
            Step::StartSolicitation { meeting, member } => {
                let (u, mt) = (self.user(m, member)?, self.meeting(m, meeting)?);
                m.start_solicitation(&u, &mt)?;
            }
            Step::Message {
                meeting,
                member,
                kind,
                index,
            } => {
                let session = self.session(m, meeting, member, kind)?;
                if m.session(&session)?.is_complete() {
                    return Ok(());
                }
                let map = match kind {
                    ConversationKind::Ihp => &sc.meetings[meeting].pre_meeting,
                    ConversationKind::Solicitation => &sc.meetings[meeting].post_meeting,
                };
                let text = &map[&sc.team.members[member]][index];
                m.handle_user_message(&session, text)?;
                self.press_buttons(m, &session)?;
            }
            Step::RequireComplete { meeting, member, kind } => {
                let session = self.session(m, meeting, member, kind)?;
                let s = m.session(&session)?;
                if !s.is_complete() {
                    return Err(Error::state(format!(
                        "protocol stall: {} conversation {session} for {} in meeting {} ended its script in {} \
(states visited: {})",
                        kind.as_str(),
                        sc.team.members[member],
                        meeting,
                        s.state.as_str(),
                        s.state_history.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" -> ")
                    )));
                }
            }
            Step::AdvancePhase { meeting, member, phase } => {
                let (u, mt) = (self.user(m, member)?, self.meeting(m, meeting)?);
                m.advance_phase(&u, &mt, Some(phase))?;
            }
            Step::Open { meeting } => {
                let mt = self.meeting(m, meeting)?;
                m.open_meeting(&mt, None)?;
            }
            Step::Ingest { meeting, event } => {
                let mt = self.meeting(m, meeting)?;
                let e = &sc.meetings[meeting].events[event];
                let who = sc.team.members.iter().position(|n| *n == e.user).expect("validated member");
                m.ingest_event(&VoiceActivityEvent {
                    meeting_id: mt,
                    user_id: self.user(m, who)?,
                    kind: e.kind,
                    ts_ms: e.ts_ms,
                })?;
            }
            Step::Close { meeting } => {
                let mt = self.meeting(m, meeting)?;
                let opened = m.meeting(&mt)?.opened_at.unwrap_or_default();
                m.close_meeting(&mt, Some(opened + sc.meetings[meeting].duration_ms as i64))?;
            }
        }
        Ok(())
    }
}

fn open_mediator(scenario: &Scenario, opts: &ReplayOptions) -> Result<Mediator> {
    let gateway = scenario_gateway(&scenario.mock_script);
    match &opts.data_dir {
        Some(dir) => Mediator::open(dir, gateway, mediator_config(opts)),
        None => Ok(Mediator::in_memory(gateway, mediator_config(opts))),
    }
}

/// Runs the scenario and returns the report together with the final state.
pub fn run_scenario(scenario: &Scenario, opts: &ReplayOptions) -> Result<ScenarioRun> {
    scenario.validate()?;
    if opts.crash_after.is_some() && opts.data_dir.is_none() {
        return Err(Error::validation("a simulated crash needs a data directory"));
    }
    let driver = Driver { scenario };
    let steps = plan_steps(scenario);
    let mut mediator = open_mediator(scenario, opts)?;
    if mediator.state().seq != 0 {
        return Err(Error::validation("replay needs an empty data directory"));
    }
    let mut prompts = Vec::new();
    let mut recovery = None;
    for (i, step) in steps.iter().enumerate() {
        if opts.crash_after == Some(i) {
            prompts.extend_from_slice(mediator.prompts());
            drop(mediator);
            let dir = opts.data_dir.as_ref().expect("checked above");
            let mut f = OpenOptions::new().append(true).open(dir.join(EVENTS_FILE))?;
            f.write_all(b"{\"seq\":")?;
            drop(f);
            mediator = open_mediator(scenario, opts)?;
            recovery = mediator.recovery().cloned();
        }
        driver
            .run(&mut mediator, *step)
            .map_err(|e| match e {
                Error::State { message, pending } if message.starts_with("protocol stall") => {
                    Error::State { message, pending }
                }
                other => Error::State {
                    message: format!("step {i} ({step:?}) failed: {other}"),
                    pending: None,
                },
            })?;
    }
    prompts.extend_from_slice(mediator.prompts());

    let state = mediator.state().clone();
    let violations = check_invariants(&state, &prompts);
    let report = build_scenario_report(scenario, &state, violations, steps.len(), opts.crash_after, recovery);
    Ok(ScenarioRun { report, state, prompts })
}

pub fn replay_study(scenario: &Scenario, opts: &ReplayOptions) -> Result<ScenarioReport> {
    run_scenario(scenario, opts).map(|r| r.report)
}

fn build_scenario_report(
    scenario: &Scenario,
    state: &State,
    violations: Vec<String>,
    steps: usize,
    restarted_after: Option<usize>,
    recovery: Option<RecoveryReport>,
) -> ScenarioReport {
    let name = |u: &UserId| state.users.get(u).map(|u| u.display_name.clone()).unwrap_or_default();
    let team = state
        .teams
        .values()
        .rev()
        .find(|t| t.name == scenario.team.name)
        .map(|t| t.team_id.clone());
    let mut meetings: Vec<MeetingSummary> = state
        .meetings
        .values()
        .filter(|m| Some(&m.team_id) == team.as_ref())
        .filter_map(|m| m.stats.as_ref())
        .map(|s| {
            let durations: Vec<f64> = s
                .participants
                .iter()
                .filter(|p| p.joined && p.data_complete)
                .map(|p| p.total_speaking_ms as f64)
                .collect();
            MeetingSummary {
                meeting_id: s.meeting_id.clone(),
                condition: s.condition,
                cycle_index: s.cycle_index,
                duration_ms: s.duration_ms,
                speaking_ms: s
                    .participants
                    .iter()
                    .map(|p| (name(&p.user_id), p.total_speaking_ms))
                    .collect(),
                gini: gini(&durations).ok(),
            }
        })
        .collect();
    meetings.sort_by_key(|m| m.cycle_index);
    let sessions = state
        .sessions
        .values()
        .map(|s| SessionSummary {
            session_id: s.session_id.clone(),
            user: name(&s.user_id),
            meeting_id: s.meeting_id.clone(),
            kind: s.kind,
            final_state: s.state,
            turns: s.transcript.len(),
            context_scopes: s.context.iter().map(|i| i.scope).collect(),
            degraded_replies: s.degraded_replies,
        })
        .collect();
    let input = MetricsInput {
        meetings: state.meetings.values().filter_map(|m| m.stats.clone()).collect(),
        paired_samples: Vec::new(),
    };
    let state_json = serde_json::to_string(state).expect("state serializes");
    ScenarioReport {
        ok: violations.is_empty(),
        violations,
        steps,
        events: state.seq,
        restarted_after,
        recovery,
        meetings,
        sessions,
        feedback_records: state.records.len(),
        metrics: build_report(&input, Alternative::TreatmentLess, false),
        state_checksum: crc32fast::hash(state_json.as_bytes()),
    }
}

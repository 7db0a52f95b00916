//! The two agent conversation protocols as explicit state machines.
//!
//! The engine owns the state. The model only proposes a [`Directive`]; a
//! directive that is not legal in the current state is rejected before it
//! can move anything. Approval of drafts, adoption of goals and approval of
//! reflections happen only through explicit button operations.

use serde::{Deserialize, Serialize};

use crate::ids::{DraftId, GoalId, MeetingId, ReflectionId, SessionId, UserId};
use crate::llm::{ChatRole, ChatTurn, Directive};
use crate::router::{BundleItem, FeedbackTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConversationKind {
    Solicitation,
    Ihp,
}

impl ConversationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConversationKind::Solicitation => "solicitation",
            ConversationKind::Ihp => "ihp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConversationState {
    Init,
    Probing,
    Drafting,
    Targeting,
    AwaitApproval,
    PresentFeedback,
    GoalElicitation,
    AwaitAdoption,
    TransgressionElicitation,
    AwaitReflectionApproval,
    Complete,
}

impl ConversationState {
    pub fn as_str(self) -> &'static str {
        use ConversationState::*;
        match self {
            Init => "INIT",
            Probing => "PROBING",
            Drafting => "DRAFTING",
            Targeting => "TARGETING",
            AwaitApproval => "AWAIT_APPROVAL",
            PresentFeedback => "PRESENT_FEEDBACK",
            GoalElicitation => "GOAL_ELICITATION",
            AwaitAdoption => "AWAIT_ADOPTION",
            TransgressionElicitation => "TRANSGRESSION_ELICITATION",
            AwaitReflectionApproval => "AWAIT_REFLECTION_APPROVAL",
            Complete => "COMPLETE",
        }
    }
}

use ConversationState as S;

const SOLICITATION_EDGES: &[(S, S)] = &[
    (S::Init, S::Probing),
    (S::Init, S::Drafting),
    (S::Init, S::AwaitApproval),
    (S::Init, S::Complete),
    (S::Probing, S::Drafting),
    (S::Probing, S::AwaitApproval),
    (S::Probing, S::Complete),
    (S::Drafting, S::Targeting),
    (S::Drafting, S::AwaitApproval),
    (S::Drafting, S::Complete),
    (S::Targeting, S::Drafting),
    (S::Targeting, S::AwaitApproval),
    (S::Targeting, S::Complete),
    (S::AwaitApproval, S::Probing),
];

const IHP_EDGES: &[(S, S)] = &[
    (S::Init, S::PresentFeedback),
    (S::PresentFeedback, S::GoalElicitation),
    (S::PresentFeedback, S::AwaitAdoption),
    (S::GoalElicitation, S::AwaitAdoption),
    (S::AwaitAdoption, S::GoalElicitation),
    (S::AwaitAdoption, S::TransgressionElicitation),
    (S::TransgressionElicitation, S::AwaitReflectionApproval),
    (S::AwaitReflectionApproval, S::Complete),
];

/// Declared transition graph (self-loops are implicit: staying put is always allowed).
pub fn transition_edges(kind: ConversationKind) -> &'static [(ConversationState, ConversationState)] {
    match kind {
        ConversationKind::Solicitation => SOLICITATION_EDGES,
        ConversationKind::Ihp => IHP_EDGES,
    }
}

pub fn is_legal_transition(kind: ConversationKind, from: ConversationState, to: ConversationState) -> bool {
    from == to || transition_edges(kind).contains(&(from, to))
}

pub fn states(kind: ConversationKind) -> &'static [ConversationState] {
    match kind {
        ConversationKind::Solicitation => &[S::Init, S::Probing, S::Drafting, S::Targeting, S::AwaitApproval, S::Complete],
        ConversationKind::Ihp => &[
            S::Init,
            S::PresentFeedback,
            S::GoalElicitation,
            S::AwaitAdoption,
            S::TransgressionElicitation,
            S::AwaitReflectionApproval,
            S::Complete,
        ],
    }
}

/// True when `path` (consecutive duplicates allowed) walks the declared graph.
pub fn is_valid_path(kind: ConversationKind, path: &[ConversationState]) -> bool {
    path.first().is_none_or(|s| *s == S::Init)
        && path.iter().all(|s| states(kind).contains(s))
        && path.windows(2).all(|w| is_legal_transition(kind, w[0], w[1]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub role: ChatRole,
    pub text: String,
    pub state_after: ConversationState,
    pub ts_ms: i64,
}

impl TranscriptTurn {
    pub fn chat_turn(&self) -> ChatTurn {
        ChatTurn::new(self.role, self.text.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationSession {
    pub session_id: SessionId,
    pub user_id: UserId,
    pub meeting_id: MeetingId,
    pub kind: ConversationKind,
    pub state: ConversationState,
    pub transcript: Vec<TranscriptTurn>,
    pub created_at: i64,
    /// Every state the session has been in, without consecutive repeats.
    pub state_history: Vec<ConversationState>,
    /// Untargeted wording being settled during solicitation.
    pub pending_text: Option<String>,
    pub pending_draft: Option<DraftId>,
    pub pending_goal: Option<GoalId>,
    pub adopted_goals: Vec<GoalId>,
    pub pending_reflection: Option<ReflectionId>,
    /// Anonymized feedback the IHP conversation is grounded in.
    pub context: Vec<BundleItem>,
    pub parse_warnings: u32,
    pub degraded_replies: u32,
}

impl ConversationSession {
    pub fn is_complete(&self) -> bool {
        self.state == S::Complete
    }

    pub fn chat_transcript(&self) -> Vec<ChatTurn> {
        self.transcript.iter().map(TranscriptTurn::chat_turn).collect()
    }

    pub fn set_state(&mut self, next: ConversationState) {
        if self.state != next {
            self.state = next;
            self.state_history.push(next);
        }
    }

    /// One JSON object per line: `{"role","text","state_after","ts_ms"}`.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for turn in &self.transcript {
            out.push_str(&serde_json::to_string(turn).expect("turn serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DraftStatus {
    Draft,
    Approved,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftFeedback {
    pub draft_id: DraftId,
    pub session_id: SessionId,
    pub author_id: UserId,
    pub meeting_id: MeetingId,
    pub text: String,
    pub target: FeedbackTarget,
    pub status: DraftStatus,
    /// Lint findings, e.g. teammate names appearing in the text.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GoalStatus {
    Proposed,
    Adopted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GoalSource {
    AgentProposed,
    UserStated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub goal_id: GoalId,
    pub session_id: SessionId,
    pub user_id: UserId,
    pub meeting_id: MeetingId,
    pub text: String,
    pub status: GoalStatus,
    pub source: GoalSource,
    pub adopted_at: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReflectionStatus {
    Draft,
    Approved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub reflection_id: ReflectionId,
    pub goal_id: GoalId,
    pub session_id: SessionId,
    pub text: String,
    pub status: ReflectionStatus,
}

/// What a legal directive does to the session, before ids are minted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlannedEffect {
    None,
    SetPendingText(String),
    CreateDraft { text: String, target: FeedbackTarget },
    ProposeGoal(String),
    DraftReflection(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub next: ConversationState,
    pub effect: PlannedEffect,
}

/// Decides what `directive` does in `session`'s current state.
///
/// `resolve_target` maps the directive's target string to a recipient,
/// returning an error message when it names nobody eligible.
pub fn plan_directive(
    session: &ConversationSession,
    directive: &Directive,
    resolve_target: impl Fn(&str) -> Result<FeedbackTarget, String>,
) -> Result<Plan, String> {
    let state = session.state;
    let plan = |next, effect| Ok(Plan { next, effect });
    let illegal = || {
        Err(format!(
            "{} is not allowed in {} {}",
            directive.name(),
            session.kind.as_str(),
            state.as_str()
        ))
    };
    match session.kind {
        ConversationKind::Solicitation => match (state, directive) {
            (S::Complete, _) => illegal(),
            (S::Init | S::Probing, Directive::None) => plan(S::Probing, PlannedEffect::None),
            (S::Drafting, Directive::None) => plan(S::Targeting, PlannedEffect::None),
            (S::Targeting | S::AwaitApproval, Directive::None) => plan(state, PlannedEffect::None),
            (S::Init | S::Probing | S::Drafting | S::Targeting, Directive::DraftFeedback { text, target: None }) => {
                plan(S::Drafting, PlannedEffect::SetPendingText(text.clone()))
            }
            (_, Directive::DraftFeedback { text, target: Some(t) }) => {
                let target = resolve_target(t)?;
                plan(
                    S::AwaitApproval,
                    PlannedEffect::CreateDraft {
                        text: text.clone(),
                        target,
                    },
                )
            }
            (S::Init | S::Probing | S::Drafting | S::Targeting, Directive::MarkComplete) => {
                plan(S::Complete, PlannedEffect::None)
            }
            _ => illegal(),
        },
        ConversationKind::Ihp => match (state, directive) {
            (S::PresentFeedback, Directive::None) => plan(S::GoalElicitation, PlannedEffect::None),
            (S::GoalElicitation, Directive::None) => plan(S::GoalElicitation, PlannedEffect::None),
            (S::AwaitAdoption, Directive::None) => plan(S::GoalElicitation, PlannedEffect::None),
            (S::PresentFeedback | S::GoalElicitation | S::AwaitAdoption, Directive::ProposeGoal { text }) => {
                plan(S::AwaitAdoption, PlannedEffect::ProposeGoal(text.clone()))
            }
            (S::TransgressionElicitation | S::AwaitReflectionApproval, Directive::None) => {
                plan(state, PlannedEffect::None)
            }
            (S::TransgressionElicitation | S::AwaitReflectionApproval, Directive::DraftReflection { text }) => plan(
                S::AwaitReflectionApproval,
                PlannedEffect::DraftReflection(text.clone()),
            ),
            _ => illegal(),
        },
    }
}

/// Canned replies used when the model cannot be relied on for a turn.
pub fn fallback_reply(kind: ConversationKind, state: ConversationState) -> &'static str {
    match (kind, state) {
        (ConversationKind::Solicitation, S::Init) => {
            "Thanks for taking a moment after the meeting. Did everyone get a fair chance to contribute today?"
        }
        (ConversationKind::Solicitation, S::AwaitApproval) => {
            "Your draft is ready. You can approve it or discard it with the buttons whenever you like."
        }
        (ConversationKind::Solicitation, _) => {
            "Sorry, I lost my train of thought for a moment. Could you say a bit more about how the meeting went?"
        }
        (ConversationKind::Ihp, S::Init | S::PresentFeedback) => {
            "Before your next meeting, here is some feedback I'd like to share with you. How does it land for you?"
        }
        (ConversationKind::Ihp, S::AwaitAdoption) => {
            "Take your time. If the proposed goal feels right, you can adopt it with the button."
        }
        (ConversationKind::Ihp, S::TransgressionElicitation) => {
            "Thinking about this goal, can you recall a recent meeting where things didn't quite go that way?"
        }
        (ConversationKind::Ihp, S::AwaitReflectionApproval) => {
            "Your reflection is ready. You can approve it with the button when it feels accurate."
        }
        (ConversationKind::Ihp, _) => {
            "Sorry, I lost my train of thought for a moment. What would you like to focus on in the next meeting?"
        }
    }
}

pub const AFTER_APPROVAL_REPLY: &str =
    "Thanks, I'll pass that along in my own words before the next meeting. Is there anything else you'd like to share?";
pub const AFTER_DISCARD_REPLY: &str = "No problem, I've set that aside. Is there anything else on your mind about the meeting?";
pub const AFTER_REFLECTION_REPLY: &str =
    "Thank you for reflecting on that. Your goal and reflection will stay in the side panel during the meeting.";

#[cfg(test)]
mod tests {
    use super::*;

    fn session(kind: ConversationKind, state: ConversationState) -> ConversationSession {
        ConversationSession {
            session_id: "s".into(),
            user_id: "u".into(),
            meeting_id: "m".into(),
            kind,
            state,
            transcript: vec![],
            created_at: 0,
            state_history: vec![S::Init],
            pending_text: None,
            pending_draft: None,
            pending_goal: None,
            adopted_goals: vec![],
            pending_reflection: None,
            context: vec![],
            parse_warnings: 0,
            degraded_replies: 0,
        }
    }

    fn everyone(_: &str) -> Result<FeedbackTarget, String> {
        Ok(FeedbackTarget::Everyone)
    }

    #[test]
    fn goal_statement_moves_to_await_adoption() {
        let s = session(ConversationKind::Ihp, S::GoalElicitation);
        let plan = plan_directive(&s, &Directive::ProposeGoal { text: "g".into() }, everyone).unwrap();
        assert_eq!(plan.next, S::AwaitAdoption);
    }

    #[test]
    fn declining_returns_to_goal_elicitation() {
        let s = session(ConversationKind::Ihp, S::AwaitAdoption);
        assert_eq!(plan_directive(&s, &Directive::None, everyone).unwrap().next, S::GoalElicitation);
    }

    #[test]
    fn reflection_only_after_adoption() {
        for state in [S::PresentFeedback, S::GoalElicitation, S::AwaitAdoption] {
            let s = session(ConversationKind::Ihp, state);
            assert!(plan_directive(&s, &Directive::DraftReflection { text: "r".into() }, everyone).is_err());
        }
        let s = session(ConversationKind::Ihp, S::TransgressionElicitation);
        let plan = plan_directive(&s, &Directive::DraftReflection { text: "r".into() }, everyone).unwrap();
        assert_eq!(plan.next, S::AwaitReflectionApproval);
    }

    #[test]
    fn solicitation_rejects_goal_directives_and_bad_targets() {
        let s = session(ConversationKind::Solicitation, S::Probing);
        assert!(plan_directive(&s, &Directive::ProposeGoal { text: "g".into() }, everyone).is_err());
        let d = Directive::DraftFeedback {
            text: "t".into(),
            target: Some("me".into()),
        };
        assert!(plan_directive(&s, &d, |_| Err("self".into())).is_err());
        assert_eq!(plan_directive(&s, &d, everyone).unwrap().next, S::AwaitApproval);
    }

    #[test]
    fn await_approval_cannot_complete() {
        let s = session(ConversationKind::Solicitation, S::AwaitApproval);
        assert!(plan_directive(&s, &Directive::MarkComplete, everyone).is_err());
    }

    #[test]
    fn every_planned_move_is_a_declared_edge() {
        let directives = [
            Directive::None,
            Directive::MarkComplete,
            Directive::ProposeGoal { text: "g".into() },
            Directive::DraftReflection { text: "r".into() },
            Directive::DraftFeedback {
                text: "t".into(),
                target: None,
            },
            Directive::DraftFeedback {
                text: "t".into(),
                target: Some("everyone".into()),
            },
        ];
        for kind in [ConversationKind::Solicitation, ConversationKind::Ihp] {
            for &state in states(kind) {
                for d in &directives {
                    if let Ok(plan) = plan_directive(&session(kind, state), d, everyone) {
                        assert!(is_legal_transition(kind, state, plan.next), "{kind:?} {state:?} {d:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn path_validation() {
        let k = ConversationKind::Ihp;
        assert!(is_valid_path(k, &[S::Init, S::PresentFeedback, S::AwaitAdoption, S::TransgressionElicitation]));
        assert!(!is_valid_path(k, &[S::Init, S::PresentFeedback, S::TransgressionElicitation]));
        assert!(!is_valid_path(k, &[S::Init, S::Probing]));
    }
}

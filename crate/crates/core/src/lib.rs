//! Core of the meeting feedback mediator.
//!
//! A team meets repeatedly. After each meeting an agent privately asks every
//! member for feedback; approved feedback is routed anonymously to its
//! recipients and presented before the next meeting in a short goal-setting
//! and reflection conversation. Speaking time is captured during meetings and
//! compared across control and treatment conditions.
//!
//! [`Mediator`] is the entry point. All state changes go through it and are
//! recorded as events, so a log directory can be replayed into the same state.

pub mod capture;
pub mod conversation;
pub mod error;
pub mod ids;
pub mod invariants;
pub mod llm;
pub mod mediator;
pub mod metrics;
pub mod orchestrator;
pub mod router;
pub mod scenario;
pub mod state;
pub mod store;

pub use capture::{aggregate, CaptureLog, CapturedEvent, MeetingStats, ParticipantStats, VoiceActivityEvent, VoiceEventKind};
pub use conversation::{ConversationKind, ConversationSession, ConversationState, DraftFeedback, Goal, Reflection};
pub use error::{Error, Result};
pub use ids::{DraftId, GoalId, MeetingId, RecordId, ReflectionId, SessionId, TeamId, UserId};
pub use mediator::{Clock, Mediator, MediatorConfig, MessageOutcome};
pub use orchestrator::{Condition, Meeting, MeetingState, Phase, PhaseState, Team, User};
pub use router::{BundleItem, DeliveryBundle, DeliveryScope, FeedbackRecord, FeedbackTarget};
pub use state::{Event, QuestionnaireResponse, State};

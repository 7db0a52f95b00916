//! Random operation sequences against a provider that misbehaves on purpose.

use std::sync::{Arc, Mutex};

use mediator_core::invariants::check_invariants;
use mediator_core::llm::{
    format_reply, ChatProvider, ChatRequest, Directive, Gateway, GatewayConfig, ProviderError, VirtualPacer,
};
use mediator_core::{
    Condition, ConversationKind, DeliveryScope, Mediator, MeetingId, MeetingState, UserId, VoiceActivityEvent,
    VoiceEventKind,
};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

/// Display names unlikely to appear by accident in any canned text.
pub const NAMES: [&str; 4] = ["Zephyrine", "Balthazar", "Ottoline", "Quillon"];

pub struct AdversarialProvider {
    rng: Mutex<StdRng>,
    names: Vec<String>,
    ids: Vec<String>,
}

impl AdversarialProvider {
    pub fn new(seed: u64, names: &[&str]) -> Self {
        Self {
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
            names: names.iter().map(|s| s.to_string()).collect(),
            ids: (1..=names.len()).map(|i| UserId::from_counter(i as u64).to_string()).collect(),
        }
    }

    fn text(&self, rng: &mut StdRng) -> String {
        let name = self.names.choose(rng).unwrap();
        let id = self.ids.choose(rng).unwrap();
        match rng.random_range(0..14) {
            0 => format!("{name} should listen more."),
            1 => format!("Ask {id} before deciding."),
            2 => format!("speak less, {}", name.to_lowercase()),
            3 => format!("Thanks {}!", name.to_uppercase()),
            4 => String::new(),
            5 => "  ".into(),
            6 | 7 => "Let each point finish before replying.".into(),
            8 | 9 => "Invite quieter voices in early.".into(),
            10 => "Make sure everyone gets a turn.".into(),
            _ => "Keep updates short.".into(),
        }
    }

    fn target(&self, rng: &mut StdRng) -> Option<String> {
        match rng.random_range(0..7) {
            0 => None,
            1 => Some("everyone".into()),
            2 => Some("nobody in particular".into()),
            3 => Some(self.ids.choose(rng).unwrap().clone()),
            4 => Some(self.names.choose(rng).unwrap().to_lowercase()),
            _ => Some(self.names.choose(rng).unwrap().clone()),
        }
    }

    fn directive(&self, rng: &mut StdRng, template: &str) -> Directive {
        let cooperative = rng.random_bool(0.6);
        let kinds: &[u8] = if !cooperative {
            &[0, 1, 2, 3, 4]
        } else if template.starts_with("solicitation.await") {
            &[0]
        } else if template.starts_with("solicitation.") {
            &[0, 1, 1, 1, 1, 4]
        } else if template.ends_with("present_feedback") || template.contains("goal") || template.contains("adoption") {
            &[0, 2, 2]
        } else {
            &[0, 3, 3]
        };
        match kinds.choose(rng).unwrap() {
            0 => Directive::None,
            1 => Directive::DraftFeedback {
                text: self.text(rng),
                target: self.target(rng),
            },
            2 => Directive::ProposeGoal { text: self.text(rng) },
            3 => Directive::DraftReflection { text: self.text(rng) },
            _ => Directive::MarkComplete,
        }
    }
}

impl ChatProvider for AdversarialProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let mut rng = self.rng.lock().unwrap();
        let roll = rng.random_range(0..100);
        let prose = match rng.random_range(0..4) {
            0 => String::new(),
            1 => self.text(&mut rng),
            _ => "Thanks, tell me more.".into(),
        };
        Ok(match roll {
            0..=4 => return Err(ProviderError::Transient("connection reset".into())),
            5..=6 => {
                return Err(ProviderError::Fatal {
                    code: "400".into(),
                    message: "bad request".into(),
                })
            }
            7..=11 => format!("{prose}\n```directive\n{{\"kind\": \"PROPOSE_GOAL\"\n```"),
            12..=14 => format!("{prose}\n```directive\n{{\"kind\": \"TELEPORT\"}}\n```"),
            _ => format_reply(&prose, &self.directive(&mut rng, &request.template_id)),
        })
    }
}

#[derive(Debug, Default, Clone)]
pub struct FuzzOutcome {
    pub operations: usize,
    pub violations: Vec<String>,
    pub bundles: usize,
    pub bundles_with_default: usize,
    pub ihp_prompts: usize,
    pub sessions: usize,
    pub records: usize,
    pub drafts: usize,
    pub goals_adopted: usize,
    pub completed_sessions: usize,
    pub closed_meetings: usize,
}

struct World {
    users: Vec<UserId>,
    meetings: Vec<MeetingId>,
}

fn pick<'a, T>(rng: &mut StdRng, items: &'a [T]) -> Option<&'a T> {
    items.choose(rng)
}

fn random_op(m: &mut Mediator, w: &World, rng: &mut StdRng) {
    let user = pick(rng, &w.users).unwrap().clone();
    let meeting = pick(rng, &w.meetings).unwrap().clone();
    let st = m.state();
    // Mostly act on things that are waiting for an action, sometimes on anything.
    let live = rng.random_bool(0.85);
    let sessions: Vec<_> = st
        .sessions
        .values()
        .filter(|s| !live || !s.is_complete())
        .map(|s| s.session_id.clone())
        .collect();
    let drafts: Vec<_> = match live {
        true => st.sessions.values().filter_map(|s| s.pending_draft.clone()).collect(),
        false => st.drafts.keys().cloned().collect(),
    };
    let goals: Vec<_> = match live {
        true => st.sessions.values().filter_map(|s| s.pending_goal.clone()).collect(),
        false => st.goals.keys().cloned().collect(),
    };
    let reflections: Vec<_> = match live {
        true => st.sessions.values().filter_map(|s| s.pending_reflection.clone()).collect(),
        false => st.reflections.keys().cloned().collect(),
    };
    let open_next = w
        .meetings
        .iter()
        .find(|id| st.meetings[*id].state != MeetingState::Closed)
        .cloned();
    let _ = match rng.random_range(0..100) {
        0..=4 => open_next.map(|id| m.open_meeting(&id, None).map(|_| ())).unwrap_or(Ok(())),
        5..=7 => open_next.map(|id| m.close_meeting(&id, None).map(|_| ())).unwrap_or(Ok(())),
        8..=9 => m.acknowledge_control(&user, &meeting).map(|_| ()),
        10..=12 => m.advance_phase(&user, &meeting, None).map(|_| ()),
        13..=16 => {
            let kinds = [
                VoiceEventKind::Join,
                VoiceEventKind::Leave,
                VoiceEventKind::SpeakStart,
                VoiceEventKind::SpeakStop,
            ];
            m.ingest_event(&VoiceActivityEvent {
                meeting_id: meeting,
                user_id: user,
                kind: *kinds.choose(rng).unwrap(),
                ts_ms: rng.random_range(0..10_000),
            })
            .map(|_| ())
        }
        17..=21 => m.start_solicitation(&user, &meeting).map(|_| ()),
        22..=25 => m.start_ihp(&user, &meeting).map(|_| ()),
        26..=74 => match pick(rng, &sessions) {
            Some(s) => {
                let texts = ["hello", "it went fine", "everyone should speak", "I remember a lapse", "no"];
                m.handle_user_message(s, texts.choose(rng).unwrap()).map(|_| ())
            }
            None => Ok(()),
        },
        75..=82 => pick(rng, &drafts).map(|d| m.approve_feedback(d).map(|_| ())).unwrap_or(Ok(())),
        83..=85 => pick(rng, &drafts).map(|d| m.discard_feedback(d).map(|_| ())).unwrap_or(Ok(())),
        86..=91 => pick(rng, &goals).map(|g| m.adopt_goal(g).map(|_| ())).unwrap_or(Ok(())),
        92..=95 => pick(rng, &reflections)
            .map(|r| m.approve_reflection(r).map(|_| ()))
            .unwrap_or(Ok(())),
        _ => m.build_delivery_bundle(&user, &meeting).map(|_| ()),
    };
}

/// Runs one random sequence of `ops` operations and checks every invariant.
pub fn run_sequence(seed: u64, ops: usize) -> FuzzOutcome {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    let members = rng.random_range(2..=NAMES.len());
    let names = &NAMES[..members];
    let gateway = Gateway::with_pacer(
        Arc::new(AdversarialProvider::new(seed, names)),
        GatewayConfig::default(),
        Arc::new(VirtualPacer::default()),
    );
    let mut m = Mediator::in_memory(gateway, super::config());
    let team = m
        .create_team("Fuzz", &names.iter().map(|s| s.to_string()).collect::<Vec<_>>())
        .unwrap();
    let mut meetings = Vec::new();
    for (i, c) in [Condition::Control, Condition::Treatment, Condition::Treatment].into_iter().enumerate() {
        meetings.push(m.schedule_meeting(&team.team_id, c, i as u32).unwrap().meeting_id);
    }
    let world = World {
        users: team.member_ids.clone(),
        meetings,
    };
    for _ in 0..ops {
        random_op(&mut m, &world, &mut rng);
    }

    let st = m.state();
    let bundles: Vec<_> = st.bundles.values().flat_map(|b| b.values()).collect();
    FuzzOutcome {
        operations: ops,
        violations: check_invariants(st, m.prompts()),
        bundles: bundles.len(),
        bundles_with_default: bundles
            .iter()
            .filter(|b| b.bundle.items.iter().filter(|i| i.scope == DeliveryScope::AgentDefault).count() == 1)
            .count(),
        ihp_prompts: m.prompts().iter().filter(|p| p.kind == ConversationKind::Ihp).count(),
        sessions: st.sessions.len(),
        records: st.records.len(),
        drafts: st.drafts.len(),
        goals_adopted: st.goals.values().filter(|g| g.adopted_at.is_some()).count(),
        completed_sessions: st.sessions.values().filter(|s| s.is_complete()).count(),
        closed_meetings: st.meetings.values().filter(|m| m.state == MeetingState::Closed).count(),
    }
}

#![allow(dead_code)]

pub mod fuzz;
pub mod oracles;

use std::sync::Arc;

use mediator_core::llm::{Directive, Gateway, GatewayConfig, MockEntry, MockScript, ScriptedMock, VirtualPacer};
use mediator_core::{
    Clock, Condition, Mediator, MediatorConfig, MeetingId, TeamId, UserId, VoiceActivityEvent, VoiceEventKind,
};

pub fn entry(template: &str, pattern: Option<&str>, reply: &str, directive: Option<Directive>) -> MockEntry {
    MockEntry {
        template: template.into(),
        turn: None,
        pattern: pattern.map(String::from),
        reply: reply.into(),
        directive,
        raw: None,
    }
}

pub fn gateway(script: MockScript) -> Gateway {
    Gateway::with_pacer(
        Arc::new(ScriptedMock::new(script)),
        GatewayConfig::default(),
        Arc::new(VirtualPacer::default()),
    )
}

pub fn config() -> MediatorConfig {
    MediatorConfig {
        clock: Clock::Logical { step_ms: 10 },
        fsync: false,
        audit_prompts: true,
        ..MediatorConfig::default()
    }
}

pub fn mediator(entries: Vec<MockEntry>) -> Mediator {
    let script = MockScript {
        entries,
        fallback: Some(entry("*", None, "Go on.", None)),
    };
    Mediator::in_memory(gateway(script), config())
}

pub struct Team {
    pub team: TeamId,
    pub users: Vec<UserId>,
    pub control: MeetingId,
    pub treatment: MeetingId,
}

/// Team {names}, cycle 0 CONTROL and cycle 1 TREATMENT scheduled.
pub fn team(m: &mut Mediator, names: &[&str]) -> Team {
    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let team = m.create_team("Team", &names).unwrap();
    let control = m.schedule_meeting(&team.team_id, Condition::Control, 0).unwrap();
    let treatment = m.schedule_meeting(&team.team_id, Condition::Treatment, 1).unwrap();
    Team {
        users: team.member_ids.clone(),
        team: team.team_id,
        control: control.meeting_id,
        treatment: treatment.meeting_id,
    }
}

/// Opens and closes the control meeting with one interval of speech per member.
pub fn run_control(m: &mut Mediator, t: &Team) {
    for u in &t.users {
        m.acknowledge_control(u, &t.control).unwrap();
    }
    m.open_meeting(&t.control, Some(0)).unwrap();
    for (i, u) in t.users.iter().enumerate() {
        for (kind, ts) in [
            (VoiceEventKind::Join, 0),
            (VoiceEventKind::SpeakStart, 1000 * i as u64),
            (VoiceEventKind::SpeakStop, 1000 * i as u64 + 500),
        ] {
            m.ingest_event(&VoiceActivityEvent {
                meeting_id: t.control.clone(),
                user_id: u.clone(),
                kind,
                ts_ms: ts,
            })
            .unwrap();
        }
    }
    m.close_meeting(&t.control, Some(60_000)).unwrap();
}

//! Whole-state protocol checks used by the replay harness and the fuzz suite.

use std::collections::BTreeSet;

use crate::conversation::{is_valid_path, ConversationKind, ConversationState, DraftStatus, GoalStatus};
use crate::mediator::PromptRecord;
use crate::orchestrator::{Condition, Phase, User};
use crate::router::DeliveryScope;
use crate::state::State;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Case-insensitive whole-word search, with `\b` semantics at each end of
/// `needle` that is a word character.
pub fn contains_word(haystack: &str, needle: &str) -> bool {
    let needle = needle.trim().to_lowercase();
    if needle.is_empty() {
        return false;
    }
    let hay = haystack.to_lowercase();
    let first_word = needle.chars().next().is_some_and(is_word_char);
    let last_word = needle.chars().next_back().is_some_and(is_word_char);
    hay.match_indices(&needle).any(|(i, m)| {
        let before = hay[..i].chars().next_back();
        let after = hay[i + m.len()..].chars().next();
        (!first_word || !before.is_some_and(is_word_char)) && (!last_word || !after.is_some_and(is_word_char))
    })
}

/// Identifiers of `users` found in `text`: user ids as substrings, display
/// names as whole words (both case-insensitive).
pub fn identity_leaks<'a>(text: &str, users: impl IntoIterator<Item = &'a User>) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for u in users {
        if lower.contains(&u.user_id.as_str().to_lowercase()) {
            out.push(u.user_id.to_string());
        }
        if contains_word(text, &u.display_name) {
            out.push(u.display_name.clone());
        }
    }
    out
}

fn team_users<'a>(state: &'a State, team: &crate::ids::TeamId) -> Vec<&'a User> {
    state
        .teams
        .get(team)
        .map(|t| t.member_ids.iter().filter_map(|u| state.users.get(u)).collect())
        .unwrap_or_default()
}

/// Returns one message per violated property; empty means all hold.
pub fn check_invariants(state: &State, prompts: &[PromptRecord]) -> Vec<String> {
    let mut v = Vec::new();

    for s in state.sessions.values() {
        if !is_valid_path(s.kind, &s.state_history) {
            v.push(format!("transition: session {} walked {:?}", s.session_id, s.state_history));
        }
        let mut turn_path = vec![ConversationState::Init];
        turn_path.extend(s.transcript.iter().map(|t| t.state_after));
        if !is_valid_path(s.kind, &turn_path) {
            v.push(format!("transition: session {} transcript states are not a path", s.session_id));
        }
        if s.state_history.last() != Some(&s.state) {
            v.push(format!("transition: session {} history does not end in its state", s.session_id));
        }

        let Some(meeting) = state.meetings.get(&s.meeting_id) else {
            v.push(format!("session {} references unknown meeting", s.session_id));
            continue;
        };
        if s.kind == ConversationKind::Ihp {
            if meeting.condition == Condition::Control {
                v.push(format!("condition: IHP session {} in CONTROL meeting", s.session_id));
            }
            let first_adoption = s
                .adopted_goals
                .iter()
                .filter_map(|g| state.goals.get(g).and_then(|g| g.adopted_at))
                .min();
            let reflective = s.transcript.iter().position(|t| {
                matches!(
                    t.state_after,
                    ConversationState::TransgressionElicitation
                        | ConversationState::AwaitReflectionApproval
                        | ConversationState::Complete
                )
            });
            if let Some(i) = reflective {
                match first_adoption {
                    Some(at) if at <= s.transcript[i].ts_ms => {}
                    _ => v.push(format!("ordering: session {} reflects before adopting a goal", s.session_id)),
                }
            }
            let defaults = s.context.iter().filter(|i| i.scope == DeliveryScope::AgentDefault).count();
            if defaults != 1 {
                v.push(format!("default: session {} context has {defaults} agent items", s.session_id));
            }
        }
    }

    for r in state.reflections.values() {
        if !state.goals.get(&r.goal_id).is_some_and(|g| g.status == GoalStatus::Adopted) {
            v.push(format!("ordering: reflection {} without an adopted goal", r.reflection_id));
        }
    }
    for g in state.goals.values() {
        if (g.status == GoalStatus::Adopted) != g.adopted_at.is_some() {
            v.push(format!("goal {} adoption time inconsistent", g.goal_id));
        }
    }

    let approved: BTreeSet<_> = state
        .drafts
        .values()
        .filter(|d| d.status == DraftStatus::Approved)
        .map(|d| d.draft_id.clone())
        .collect();
    let routed: Vec<_> = state.records.values().map(|r| r.draft_id.clone()).collect();
    let routed_set: BTreeSet<_> = routed.iter().cloned().collect();
    if routed.len() != routed_set.len() || routed_set != approved {
        v.push(format!(
            "gating: {} records vs {} approved drafts",
            routed.len(),
            approved.len()
        ));
    }
    for r in state.records.values() {
        let Some(team) = state.teams.get(&r.team_id) else {
            continue;
        };
        let eligible = r.eligible_recipients(team);
        if r.deliveries.keys().any(|u| !eligible.contains(u)) {
            v.push(format!("access: record {} delivered outside its recipients", r.record_id));
        }
    }

    for (meeting_id, per_user) in &state.bundles {
        let Some(meeting) = state.meetings.get(meeting_id) else {
            continue;
        };
        let users = team_users(state, &meeting.team_id);
        for (recipient, built) in per_user {
            let defaults = built
                .bundle
                .items
                .iter()
                .filter(|i| i.scope == DeliveryScope::AgentDefault)
                .count();
            if defaults != 1 {
                v.push(format!("default: bundle for {recipient} in {meeting_id} has {defaults} agent items"));
            }
            let payload = serde_json::to_string(&built.bundle.items).unwrap_or_default();
            let leaks = identity_leaks(&payload, users.iter().copied());
            if !leaks.is_empty() {
                v.push(format!("anonymity: bundle for {recipient} in {meeting_id} mentions {leaks:?}"));
            }
            for id in &built.record_ids {
                if !state.records.get(id).is_some_and(|r| r.is_for(recipient)) {
                    v.push(format!("access: record {id} bundled for {recipient}"));
                }
            }
        }
    }

    for p in prompts.iter().filter(|p| p.kind == ConversationKind::Ihp) {
        let Some(s) = state.sessions.get(&p.session_id) else {
            continue;
        };
        let Some(meeting) = state.meetings.get(&s.meeting_id) else {
            continue;
        };
        let owner = state.users.get(&s.user_id);
        let mut leaks = identity_leaks(&p.prompt, team_users(state, &meeting.team_id));
        leaks.retain(|l| owner.is_none_or(|o| *l != o.display_name));
        if !leaks.is_empty() {
            v.push(format!("anonymity: prompt {} for {} mentions {leaks:?}", p.template_id, s.session_id));
        }
    }

    for (meeting, per_user) in &state.phases {
        for (user, history) in per_user {
            let phases: Vec<Phase> = history.records.iter().map(|r| r.phase).collect();
            if phases[..] != Phase::ORDER[..phases.len().min(3)] || phases.len() > 3 {
                v.push(format!("phases: {user} in {meeting} recorded {phases:?}"));
            }
        }
    }

    v
}

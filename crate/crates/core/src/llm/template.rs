//! System-prompt templates, one per conversation state.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::conversation::{ConversationKind, ConversationState};
use crate::error::{Error, Result};

pub const FEEDBACK_ITEMS: &str = "feedback_items";
pub const SPEAKING_SUMMARY: &str = "speaking_summary";
pub const ATTENDANCE_SUMMARY: &str = "attendance_summary";
pub const ADOPTED_GOAL: &str = "adopted_goal";

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub kind: ConversationKind,
    pub state: ConversationState,
    pub body: String,
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for cap in placeholder_re().captures_iter(&self.body) {
            let name = cap[1].to_owned();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("placeholder regex"))
}

const SOLICITATION_PREAMBLE: &str = "\
You are a friendly meeting assistant who checks in privately with each participant after a team meeting. \
Your purpose is to help the team's meetings become more inclusive by collecting feedback that you will pass on, \
in your own voice, before the next meeting. Present anything you share as your own observation; never phrase it \
as something a colleague told you, and never reveal who gave which feedback. Keep replies short and warm.

Data from the meeting that just ended:
- Speaking time: {speaking_summary}
- Attendance: {attendance_summary}
";

const IHP_PREAMBLE: &str = "\
You are a friendly meeting assistant talking privately with a participant shortly before their team's next meeting. \
You guide a short goal-setting and reflection conversation. The participant chooses their own goal: you may suggest \
goals, but never push one on them. You do not know who wrote any piece of feedback and must never guess or speculate \
about it. Present the feedback as things you noticed and are passing on. If the participant tries to rush, gently \
invite them to slow down and think it through.

Feedback for this participant (scope in brackets):
{feedback_items}

From the previous meeting: {speaking_summary}
";

const OUTPUT_CONTRACT: &str = "
Output format: write your reply to the participant as plain conversational text. Then end with exactly one fenced \
block labelled `directive` that contains a single JSON object, for example:
```directive
{\"kind\": \"NONE\"}
```
Directives allowed in this step: ";

fn solicitation_step(state: ConversationState) -> (&'static str, &'static str) {
    use ConversationState::*;
    match state {
        Init => (
            "Open the conversation. Thank the participant, mention in general terms how participation looked, and \
ask an inclusion-focused question, such as whether everyone had a fair chance to contribute.",
            "NONE.",
        ),
        Probing => (
            "Explore the participant's experience, starting with inclusion (who spoke, who may have been left out, \
how ideas were received) and widening to other aspects of the meeting if needed. When the participant has something \
worth sharing, turn it into a short, constructive piece of feedback written in your own voice, without naming the \
participant you are talking to.",
            "NONE to keep talking; DRAFT_FEEDBACK with \"text\" and no \"target\" to propose wording; DRAFT_FEEDBACK \
with \"text\" and \"target\" (\"everyone\" or a teammate's name) when both are clear; MARK_COMPLETE when the \
participant has nothing (more) to share.",
        ),
        Drafting => (
            "You proposed wording for a piece of feedback. Refine it with the participant until they are happy with \
it, then ask whether it is meant for everyone or for one person.",
            "NONE; DRAFT_FEEDBACK without \"target\" for revised wording; DRAFT_FEEDBACK with \"text\" and \"target\" \
once the recipient is clear.",
        ),
        Targeting => (
            "Ask whether the feedback is for everyone in the meeting or for one specific person.",
            "NONE; DRAFT_FEEDBACK with \"text\" and \"target\".",
        ),
        AwaitApproval => (
            "A draft is waiting for the participant to approve or discard it using the buttons on screen. Nothing is \
sent unless they approve it. Answer questions, or revise the draft if asked.",
            "NONE; DRAFT_FEEDBACK with \"text\" and \"target\" to replace the pending draft.",
        ),
        _ => ("", "NONE."),
    }
}

fn ihp_step(state: ConversationState) -> (&'static str, &'static str) {
    use ConversationState::*;
    match state {
        Init | PresentFeedback => (
            "Share the feedback above briefly and kindly, then ask how it resonates with the participant.",
            "NONE; PROPOSE_GOAL with \"text\" if the participant already states a goal.",
        ),
        GoalElicitation => (
            "Ask what the participant would like to focus on in the upcoming meeting, grounded in the feedback. When \
they state or agree to a goal, restate it as one concise sentence and propose it. The participant adopts a goal by \
pressing a button; agreement in chat is not adoption.",
            "NONE; PROPOSE_GOAL with \"text\".",
        ),
        AwaitAdoption => (
            "You proposed a goal. It is adopted only when the participant presses the adopt button. If they decline \
or want changes, accept that without pressure and offer an alternative or keep exploring.",
            "NONE; PROPOSE_GOAL with \"text\" for an alternative proposal.",
        ),
        TransgressionElicitation => (
            "The participant adopted this goal: {adopted_goal}\nAsk them to recall a specific recent time when their \
own behaviour in a meeting did not live up to this goal, and what happened. If the answer is vague, ask them to \
think of a concrete moment. When they describe a real instance, summarise it in their voice as a short reflection.",
            "NONE; DRAFT_REFLECTION with \"text\".",
        ),
        AwaitReflectionApproval => (
            "Adopted goal: {adopted_goal}\nA reflection is waiting for the participant to approve it with the button \
on screen. Revise it if they ask.",
            "NONE; DRAFT_REFLECTION with \"text\" to replace the pending reflection.",
        ),
        _ => ("", "NONE."),
    }
}

pub fn template_id(kind: ConversationKind, state: ConversationState) -> String {
    format!("{}.{}", kind.as_str(), state.as_str().to_ascii_lowercase())
}

fn build_registry() -> BTreeMap<String, PromptTemplate> {
    use ConversationState::*;
    let mut out = BTreeMap::new();
    let solicitation = [Init, Probing, Drafting, Targeting, AwaitApproval];
    for state in solicitation {
        let (step, allowed) = solicitation_step(state);
        let body = format!("{SOLICITATION_PREAMBLE}\nCurrent step: {step}\n{OUTPUT_CONTRACT}{allowed}\n");
        let t = PromptTemplate {
            template_id: template_id(ConversationKind::Solicitation, state),
            kind: ConversationKind::Solicitation,
            state,
            body,
        };
        out.insert(t.template_id.clone(), t);
    }
    let ihp = [
        PresentFeedback,
        GoalElicitation,
        AwaitAdoption,
        TransgressionElicitation,
        AwaitReflectionApproval,
    ];
    for state in ihp {
        let (step, allowed) = ihp_step(state);
        let body = format!("{IHP_PREAMBLE}\nCurrent step: {step}\n{OUTPUT_CONTRACT}{allowed}\n");
        let t = PromptTemplate {
            template_id: template_id(ConversationKind::Ihp, state),
            kind: ConversationKind::Ihp,
            state,
            body,
        };
        out.insert(t.template_id.clone(), t);
    }
    out
}

pub fn registry() -> &'static BTreeMap<String, PromptTemplate> {
    static REGISTRY: OnceLock<BTreeMap<String, PromptTemplate>> = OnceLock::new();
    REGISTRY.get_or_init(build_registry)
}

pub fn template(template_id: &str) -> Result<&'static PromptTemplate> {
    registry()
        .get(template_id)
        .ok_or_else(|| Error::not_found("template", template_id))
}

/// Substitutes every `{placeholder}` in the template body. Bound values are
/// inserted verbatim and never re-scanned.
pub fn render_prompt(template_id: &str, bindings: &Bindings) -> Result<String> {
    render_body(&template(template_id)?.body, bindings)
}

pub fn render_body(body: &str, bindings: &Bindings) -> Result<String> {
    let mut missing: Vec<String> = Vec::new();
    for cap in placeholder_re().captures_iter(body) {
        let name = &cap[1];
        if !bindings.contains_key(name) && !missing.iter().any(|m| m == name) {
            missing.push(name.to_owned());
        }
    }
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "missing prompt bindings: {}",
            missing.join(", ")
        )));
    }
    Ok(placeholder_re()
        .replace_all(body, |cap: &regex::Captures<'_>| bindings[&cap[1]].clone())
        .into_owned())
}

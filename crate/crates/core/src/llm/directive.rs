//! The structured block an agent reply may end with.
//!
//! Replies are free prose optionally followed by a fenced block:
//!
//! ````text
//! Sounds like a good direction. Would you like to adopt this goal?
//!
//! ```directive
//! {"kind": "PROPOSE_GOAL", "text": "Make sure everyone gets a chance to speak"}
//! ```
//! ````
//!
//! Only the last block counts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Directive {
    None,
    DraftFeedback {
        text: String,
        /// `"everyone"`, or a teammate's display name or user id. Absent while
        /// the wording is still being settled.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
    },
    ProposeGoal {
        text: String,
    },
    DraftReflection {
        text: String,
    },
    MarkComplete,
}

impl Directive {
    pub fn name(&self) -> &'static str {
        match self {
            Directive::None => "NONE",
            Directive::DraftFeedback { .. } => "DRAFT_FEEDBACK",
            Directive::ProposeGoal { .. } => "PROPOSE_GOAL",
            Directive::DraftReflection { .. } => "DRAFT_REFLECTION",
            Directive::MarkComplete => "MARK_COMPLETE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDirective {
    pub directive: Directive,
    pub reply_text: String,
    /// Set when the structured block was missing or could not be parsed.
    pub parse_warning: Option<String>,
}

const FENCE: &str = "```";
const LABELS: [&str; 2] = ["directive", "json"];

/// Splits a raw model reply into prose and directive.
pub fn parse_reply(raw: &str) -> AgentDirective {
    let Some((start, body, end)) = last_block(raw) else {
        return AgentDirective {
            directive: Directive::None,
            reply_text: raw.trim().to_owned(),
            parse_warning: Some("reply has no directive block".into()),
        };
    };
    let prose = format!("{}{}", &raw[..start], &raw[end..]).trim().to_owned();
    match serde_json::from_str::<Directive>(body.trim()) {
        Ok(directive) if directive_text_ok(&directive) => AgentDirective {
            directive,
            reply_text: prose,
            parse_warning: None,
        },
        Ok(_) => AgentDirective {
            directive: Directive::None,
            reply_text: prose,
            parse_warning: Some("directive text is empty".into()),
        },
        Err(e) => AgentDirective {
            directive: Directive::None,
            reply_text: prose,
            parse_warning: Some(format!("malformed directive block: {e}")),
        },
    }
}

fn directive_text_ok(d: &Directive) -> bool {
    match d {
        Directive::DraftFeedback { text, .. }
        | Directive::ProposeGoal { text }
        | Directive::DraftReflection { text } => !text.trim().is_empty(),
        Directive::None | Directive::MarkComplete => true,
    }
}

/// Byte range of the last labelled fenced block and its body.
fn last_block(raw: &str) -> Option<(usize, &str, usize)> {
    let mut found = None;
    let mut search = 0;
    while let Some(rel) = raw[search..].find(FENCE) {
        let open = search + rel;
        let after = &raw[open + FENCE.len()..];
        let line_end = after.find('\n').unwrap_or(after.len());
        let label = after[..line_end].trim();
        if LABELS.contains(&label) {
            let body_start = open + FENCE.len() + line_end;
            if let Some(close_rel) = raw[body_start..].find(FENCE) {
                let close = body_start + close_rel;
                found = Some((open, &raw[body_start..close], close + FENCE.len()));
                search = close + FENCE.len();
                continue;
            }
            break;
        }
        search = open + FENCE.len();
    }
    found
}

/// Renders prose plus a directive block in the format [`parse_reply`] reads.
pub fn format_reply(reply_text: &str, directive: &Directive) -> String {
    let block = serde_json::to_string(directive).expect("directive serializes");
    format!("{reply_text}\n\n```directive\n{block}\n```\n")
}

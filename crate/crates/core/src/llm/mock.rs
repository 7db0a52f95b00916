//! Deterministic scripted provider for offline runs.
//!
//! A script is a list of entries keyed by template id and user-turn index,
//! optionally narrowed by a case-insensitive substring of the last user
//! message. The first matching entry answers; otherwise the fallback does.
//!
//! ```json
//! {
//!   "entries": [
//!     {"template": "ihp.goal_elicitation", "match": "everyone",
//!      "reply": "Shall we make that your goal?",
//!      "directive": {"kind": "PROPOSE_GOAL", "text": "ensure everyone speaks"}}
//!   ],
//!   "fallback": {"reply": "Tell me more."}
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::directive::{format_reply, Directive};
use super::{ChatProvider, ChatRequest, ProviderError};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MockEntry {
    /// Exact template id, a prefix ending in `*` (e.g. `"ihp.*"`), or `"*"`.
    #[serde(default = "any")]
    pub template: String,
    #[serde(default)]
    pub turn: Option<usize>,
    #[serde(default, rename = "match")]
    pub pattern: Option<String>,
    #[serde(default)]
    pub reply: String,
    #[serde(default)]
    pub directive: Option<Directive>,
    /// Returned verbatim instead of `reply` + `directive`.
    #[serde(default)]
    pub raw: Option<String>,
}

fn any() -> String {
    "*".into()
}

impl MockEntry {
    fn matches(&self, request: &ChatRequest) -> bool {
        let template_ok = match self.template.strip_suffix('*') {
            Some(prefix) => request.template_id.starts_with(prefix),
            None => self.template == request.template_id,
        };
        let turn_ok = self.turn.is_none_or(|t| t == request.turn_index);
        let pattern_ok = match &self.pattern {
            None => true,
            Some(p) => request
                .last_user_message()
                .is_some_and(|m| m.to_lowercase().contains(&p.to_lowercase())),
        };
        template_ok && turn_ok && pattern_ok
    }

    fn render(&self) -> String {
        match &self.raw {
            Some(raw) => raw.clone(),
            None => format_reply(&self.reply, self.directive.as_ref().unwrap_or(&Directive::None)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub entries: Vec<MockEntry>,
    #[serde(default)]
    pub fallback: Option<MockEntry>,
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation(format!("mock script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("mock script {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedMock {
    script: MockScript,
}

impl ScriptedMock {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl ChatProvider for ScriptedMock {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let entry = self
            .script
            .entries
            .iter()
            .find(|e| e.matches(request))
            .or(self.script.fallback.as_ref());
        Ok(match entry {
            Some(e) => e.render(),
            None => format_reply("I see. Could you tell me a bit more?", &Directive::None),
        })
    }

    fn key(&self) -> &str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{parse_reply, ChatRole, ChatTurn};

    fn request(template: &str, user_msgs: &[&str]) -> ChatRequest {
        ChatRequest {
            template_id: template.into(),
            turn_index: user_msgs.len(),
            system_prompt: String::new(),
            transcript: user_msgs.iter().map(|m| ChatTurn::new(ChatRole::User, *m)).collect(),
            temperature: 0.0,
        }
    }

    fn script() -> MockScript {
        MockScript::from_json(
            r#"{
              "entries": [
                {"template": "ihp.goal_elicitation", "match": "everyone",
                 "reply": "Shall we make that your goal?",
                 "directive": {"kind": "PROPOSE_GOAL", "text": "ensure everyone speaks"}},
                {"template": "ihp.*", "turn": 0, "reply": "Hello there."},
                {"template": "solicitation.probing", "raw": "no block at all"}
              ],
              "fallback": {"reply": "Go on."}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn adopt_goal_scenario_echoes_script() {
        let mock = ScriptedMock::new(script());
        let raw = mock
            .chat(&request("ihp.goal_elicitation", &["I want EVERYONE to talk"]))
            .unwrap();
        let parsed = parse_reply(&raw);
        assert_eq!(
            parsed.directive,
            Directive::ProposeGoal {
                text: "ensure everyone speaks".into()
            }
        );
    }

    #[test]
    fn prefix_turn_fallback_and_raw() {
        let mock = ScriptedMock::new(script());
        assert!(mock.chat(&request("ihp.present_feedback", &[])).unwrap().starts_with("Hello there."));
        assert!(mock.chat(&request("ihp.present_feedback", &["x"])).unwrap().starts_with("Go on."));
        let raw = mock.chat(&request("solicitation.probing", &["x"])).unwrap();
        assert_eq!(raw, "no block at all");
        assert!(parse_reply(&raw).parse_warning.is_some());
    }

    #[test]
    fn same_request_same_reply() {
        let mock = ScriptedMock::new(script());
        let r = request("ihp.goal_elicitation", &["everyone"]);
        assert_eq!(mock.chat(&r).unwrap(), mock.chat(&r).unwrap());
    }
}

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{validate_plan, TaskError};
use crate::dno::ContactPlan;
use crate::kinematics::VertexCatalog;

pub const ENV_URL: &str = "MOTIONPRIOR_LLM_URL";
pub const ENV_MODEL: &str = "MOTIONPRIOR_LLM_MODEL";
pub const ENV_KEY: &str = "MOTIONPRIOR_LLM_KEY";
pub const ENV_TIMEOUT: &str = "MOTIONPRIOR_LLM_TIMEOUT_SECS";

/// Recorded replies, all planned for 60-frame sequences.
pub const FIXTURE_NAMES: [&str; 3] = ["clap", "touch_head", "hands_on_hips"];

pub fn fixture_reply(name: &str) -> Option<&'static str> {
    match name {
        "clap" => Some(include_str!("../../fixtures/llm/clap.txt")),
        "touch_head" => Some(include_str!("../../fixtures/llm/touch_head.txt")),
        "hands_on_hips" => Some(include_str!("../../fixtures/llm/hands_on_hips.txt")),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.into(),
            content: content.into(),
        }
    }
}

/// Anything that turns a conversation into the assistant's next reply.
pub trait ChatTransport {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TaskError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: usize,
}

impl LlmConfig {
    pub const DEFAULT_ATTEMPTS: usize = 3;

    /// Reads the endpoint URL, model name, key and timeout from the
    /// environment; URL and model are required.
    pub fn from_env() -> Result<Self, TaskError> {
        let need = |k: &str| {
            std::env::var(k).map_err(|_| TaskError::EndpointError {
                detail: format!("{k} is not set"),
                raw: None,
            })
        };
        let timeout = std::env::var(ENV_TIMEOUT)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(60);
        Ok(LlmConfig {
            url: need(ENV_URL)?,
            model: need(ENV_MODEL)?,
            api_key: std::env::var(ENV_KEY).ok(),
            timeout: Duration::from_secs(timeout),
            max_attempts: Self::DEFAULT_ATTEMPTS,
        })
    }
}

/// Chat-completion client over HTTP with JSON bodies.
pub struct HttpTransport {
    config: LlmConfig,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(config: LlmConfig) -> Result<Self, TaskError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| TaskError::EndpointError {
                detail: e.to_string(),
                raw: None,
            })?;
        Ok(HttpTransport { config, client })
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TaskError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": 0,
        });
        let mut req = self.client.post(&self.config.url).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let fail = |detail: String, raw: Option<String>| TaskError::EndpointError { detail, raw };
        let resp = req.send().map_err(|e| fail(e.to_string(), None))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| fail(e.to_string(), None))?;
        if !status.is_success() {
            return Err(fail(format!("HTTP {status}"), Some(text)));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| fail(format!("response is not JSON: {e}"), Some(text.clone())))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| fail("response has no choices[0].message.content".into(), Some(text)))
    }
}

/// Plays back canned replies in order, repeating the last one.
pub struct FixtureTransport {
    replies: Vec<String>,
    calls: Mutex<usize>,
}

impl FixtureTransport {
    pub fn new(replies: Vec<String>) -> Self {
        FixtureTransport {
            replies,
            calls: Mutex::new(0),
        }
    }

    pub fn named(name: &str) -> Result<Self, TaskError> {
        let reply = fixture_reply(name).ok_or_else(|| TaskError::EndpointError {
            detail: format!("no fixture named {name:?}; available: {}", FIXTURE_NAMES.join(", ")),
            raw: None,
        })?;
        Ok(Self::new(vec![reply.to_string()]))
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().expect("fixture lock")
    }
}

impl ChatTransport for FixtureTransport {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, TaskError> {
        let mut calls = self.calls.lock().expect("fixture lock");
        let reply = self
            .replies
            .get(*calls)
            .or(self.replies.last())
            .cloned()
            .ok_or_else(|| TaskError::EndpointError {
                detail: "fixture has no replies".into(),
                raw: None,
            })?;
        *calls += 1;
        Ok(reply)
    }
}

const SYSTEM_PROMPT: &str = "You plan self-contact for a character animation. \
Given an instruction, decide which labelled body-surface points must touch and at which frame. \
Reply with a single JSON object and nothing else, of the form \
{\"triples\": [{\"a\": LABEL, \"b\": LABEL, \"frame\": INTEGER}]}. \
Use only labels from the provided list, never pair a label with itself, \
and keep every frame in [0, FRAMES).";

const EXAMPLES: [(&str, &str); 2] = [
    (
        "Instruction: scratch the top of your head with the left hand.\nFrames: 60",
        r#"{"triples": [{"a": "left_index_tip", "b": "head_top", "frame": 30}, {"a": "left_index_tip", "b": "head_top", "frame": 40}]}"#,
    ),
    (
        "Instruction: tap your right knee twice.\nFrames: 60",
        r#"{"triples": [{"a": "right_palm", "b": "right_knee_front", "frame": 20}, {"a": "right_palm", "b": "right_knee_front", "frame": 40}]}"#,
    ),
];

/// System message with schema and labels, worked examples, then the request.
pub fn build_prompt(instruction: &str, catalog: &VertexCatalog, frames: usize) -> Vec<ChatMessage> {
    let labels: Vec<&str> = catalog.labels().collect();
    let mut messages = vec![ChatMessage::new(
        "system",
        format!(
            "{}\nFRAMES = {frames}.\nLabels: {}",
            SYSTEM_PROMPT.replace("FRAMES", &frames.to_string()),
            labels.join(", ")
        ),
    )];
    for (q, a) in EXAMPLES {
        messages.push(ChatMessage::new("user", q));
        messages.push(ChatMessage::new("assistant", a));
    }
    messages.push(ChatMessage::new("user", format!("Instruction: {instruction}\nFrames: {frames}")));
    messages
}

/// The first complete JSON object embedded in `reply`.
pub fn extract_json(reply: &str) -> Option<serde_json::Value> {
    reply.char_indices().filter(|(_, c)| *c == '{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&reply[i..]).into_iter::<serde_json::Value>();
        match stream.next() {
            Some(Ok(v @ serde_json::Value::Object(_))) => Some(v),
            _ => None,
        }
    })
}

fn interpret(reply: &str, catalog: &VertexCatalog, frames: usize) -> Result<ContactPlan, String> {
    let value = extract_json(reply).ok_or("reply contains no JSON object")?;
    let plan: ContactPlan = serde_json::from_value(value).map_err(|e| format!("JSON does not match the schema: {e}"))?;
    if plan.is_empty() {
        return Err("plan has no triples".into());
    }
    validate_plan(&plan, catalog, frames).map_err(|v| {
        v.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    })?;
    let mut seen = std::collections::HashSet::new();
    Ok(ContactPlan {
        triples: plan.triples.into_iter().filter(|t| seen.insert(t.clone())).collect(),
    })
}

/// Asks `transport` for a contact plan, feeding validation errors back
/// for up to `max_attempts` replies in total.
pub fn llm_plan(
    instruction: &str,
    catalog: &VertexCatalog,
    frames: usize,
    transport: &dyn ChatTransport,
    max_attempts: usize,
) -> Result<ContactPlan, TaskError> {
    let mut messages = build_prompt(instruction, catalog, frames);
    let mut last = (String::new(), String::from("no attempts made"));
    for attempt in 1..=max_attempts.max(1) {
        let reply = transport.complete(&messages)?;
        match interpret(&reply, catalog, frames) {
            Ok(plan) => return Ok(plan),
            Err(reason) => {
                log::warn!("plan attempt {attempt} rejected: {reason}");
                messages.push(ChatMessage::new("assistant", reply.clone()));
                messages.push(ChatMessage::new(
                    "user",
                    format!("That reply is invalid ({reason}). Reply again with only the corrected JSON object."),
                ));
                last = (reply, reason);
            }
        }
    }
    Err(TaskError::InvalidPlanAfterRetries {
        attempts: max_attempts.max(1),
        reason: last.1,
        raw: last.0,
    })
}

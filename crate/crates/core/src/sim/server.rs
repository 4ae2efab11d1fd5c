use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::crypto::SignedToolDefinition;

/// A nested call a tool makes while it runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedCall {
    pub tool_id: String,
    pub action: String,
    pub resource: String,
    #[serde(default)]
    pub scopes: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

/// Scripted execution of a tool. Effects are markers such as
/// `EXFILTRATE(target)`; nothing is ever actually performed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Behavior {
    #[serde(default)]
    pub payload: Value,
    #[serde(default)]
    pub effects: Vec<String>,
    #[serde(default)]
    pub calls: Vec<NestedCall>,
}

impl Behavior {
    pub fn returning(payload: Value) -> Self {
        Self {
            payload,
            ..Self::default()
        }
    }

    pub fn with_effect(mut self, effect: impl Into<String>) -> Self {
        self.effects.push(effect.into());
        self
    }

    pub fn calling(mut self, call: NestedCall) -> Self {
        self.calls.push(call);
        self
    }
}

/// An MCP-style server. Hosted envelopes may be forged or broken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimServer {
    pub server_id: String,
    #[serde(default)]
    pub tools: Vec<SignedToolDefinition>,
    #[serde(default)]
    pub behaviors: BTreeMap<String, Behavior>,
}

impl SimServer {
    pub fn new(server_id: &str) -> Self {
        Self {
            server_id: server_id.to_string(),
            tools: Vec::new(),
            behaviors: BTreeMap::new(),
        }
    }

    pub fn host(mut self, sd: SignedToolDefinition, behavior: Behavior) -> Self {
        self.replace(sd, Some(behavior));
        self
    }

    /// Swaps the hosted definition for the same tool id (or adds it).
    pub fn replace(&mut self, sd: SignedToolDefinition, behavior: Option<Behavior>) {
        let id = sd.definition.id.clone();
        match self.tools.iter_mut().find(|t| t.definition.id == id) {
            Some(slot) => *slot = sd,
            None => self.tools.push(sd),
        }
        if let Some(b) = behavior {
            self.behaviors.insert(id, b);
        }
    }

    /// The listTools response, passed through the wire format.
    pub fn list_tools(&self) -> Vec<SignedToolDefinition> {
        self.tools.iter().map(wire).collect()
    }

    pub fn fetch(&self, tool_id: &str) -> Option<SignedToolDefinition> {
        self.tools.iter().find(|t| t.definition.id == tool_id).map(wire)
    }

    pub fn behavior(&self, tool_id: &str) -> Behavior {
        self.behaviors.get(tool_id).cloned().unwrap_or_default()
    }
}

fn wire(sd: &SignedToolDefinition) -> SignedToolDefinition {
    let text = serde_json::to_string(sd).expect("envelope serializes");
    serde_json::from_str(&text).expect("envelope round-trips")
}

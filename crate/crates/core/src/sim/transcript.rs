use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diff::ChangeReport;
use crate::model::SemVer;

/// One transcript line. Field order is fixed so transcripts diff cleanly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Invocation request id; `None` for discovery events.
    pub request: Option<u64>,
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Discovered {
        server_id: String,
        tool_id: String,
        version: SemVer,
        key_id: String,
    },
    Verified {
        server_id: String,
        tool_id: String,
        version: SemVer,
        provider_id: String,
        key_id: String,
        outcome: String,
    },
    Rejected {
        server_id: String,
        tool_id: String,
        reason: String,
    },
    Prompted {
        tool_id: String,
        prompt: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        report: Option<ChangeReport>,
    },
    Approved {
        tool_id: String,
        version: SemVer,
        granted: BTreeSet<String>,
    },
    TokenChecked {
        tool_id: String,
        jti: String,
    },
    PolicyChecked {
        principal: String,
        action: String,
        resource: String,
        determining_rules: Vec<String>,
    },
    StackChecked {
        caller: Option<String>,
        tool_id: String,
        depth: usize,
    },
    Invoked {
        server_id: String,
        tool_id: String,
        version: SemVer,
        caller: Option<String>,
    },
    Result {
        tool_id: String,
        payload: Value,
        effects: Vec<String>,
    },
    Denied {
        tool_id: String,
        stage: Stage,
        reason: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Discovered { .. } => "DISCOVERED",
            EventKind::Verified { .. } => "VERIFIED",
            EventKind::Rejected { .. } => "REJECTED",
            EventKind::Prompted { .. } => "PROMPTED",
            EventKind::Approved { .. } => "APPROVED",
            EventKind::TokenChecked { .. } => "TOKEN_CHECKED",
            EventKind::PolicyChecked { .. } => "POLICY_CHECKED",
            EventKind::StackChecked { .. } => "STACK_CHECKED",
            EventKind::Invoked { .. } => "INVOKED",
            EventKind::Result { .. } => "RESULT",
            EventKind::Denied { .. } => "DENIED",
        }
    }
}

/// Pipeline stage that produced a denial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Lookup,
    Consent,
    Approval,
    Token,
    Scope,
    Entitlement,
    Policy,
    Stack,
    Host,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("stage serializes");
        f.write_str(v.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("request {request}: INVOKED at seq {seq} without a prior {missing}")]
pub struct InvariantViolation {
    pub request: u64,
    pub seq: u64,
    pub missing: &'static str,
}

impl Transcript {
    pub fn push(&mut self, request: Option<u64>, tick: u64, tag: Option<String>, kind: EventKind) -> &Event {
        let seq = self.events.len() as u64;
        self.events.push(Event {
            seq,
            request,
            tick,
            tag,
            kind,
        });
        self.events.last().expect("just pushed")
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn since(&self, seq: usize) -> &[Event] {
        &self.events[seq.min(self.events.len())..]
    }

    /// Line-delimited JSON, one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { events })
    }

    /// Every INVOKED must follow VERIFIED, TOKEN_CHECKED, POLICY_CHECKED and
    /// STACK_CHECKED events with the same request id.
    pub fn check_invariant(&self) -> Result<(), InvariantViolation> {
        const REQUIRED: [&str; 4] = ["VERIFIED", "TOKEN_CHECKED", "POLICY_CHECKED", "STACK_CHECKED"];
        let mut seen: BTreeMap<u64, BTreeSet<&'static str>> = BTreeMap::new();
        for e in &self.events {
            let Some(req) = e.request else { continue };
            let name = e.kind.name();
            if name == "INVOKED" {
                let have = seen.get(&req);
                if let Some(missing) = REQUIRED.iter().find(|r| !have.is_some_and(|h| h.contains(*r))) {
                    return Err(InvariantViolation {
                        request: req,
                        seq: e.seq,
                        missing,
                    });
                }
            }
            seen.entry(req).or_default().insert(name);
        }
        Ok(())
    }

    pub fn invoked_requests(&self) -> BTreeSet<u64> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Invoked { .. }))
            .filter_map(|e| e.request)
            .collect()
    }

    /// Tagged requests that reached INVOKED.
    pub fn invoked_tags(&self) -> BTreeSet<String> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Invoked { .. }))
            .filter_map(|e| e.tag.clone())
            .collect()
    }

    pub fn denials(&self) -> impl Iterator<Item = (&Event, Stage, &str)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Denied { stage, reason, .. } => Some((e, *stage, reason.as_str())),
            _ => None,
        })
    }

    pub fn events_tagged<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| e.tag.as_deref() == Some(tag))
    }
}

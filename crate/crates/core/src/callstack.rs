//! Per-session verification of nested tool calls.
//!
//! Each attempted call is checked against a [`CallStackPolicy`] in a fixed
//! order: rate limit, depth, circularity, blocked chains, allowlisted chains,
//! privilege escalation. The first violation decides the verdict. Calls with
//! no caller (root calls) skip the three chain checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    ChainBlocked,
    ChainNotAllowlisted,
    DepthExceeded,
    CircularCall,
    PrivilegeEscalation,
    RateLimited,
}

impl Violation {
    pub fn as_str(self) -> &'static str {
        match self {
            Violation::ChainBlocked => "CHAIN_BLOCKED",
            Violation::ChainNotAllowlisted => "CHAIN_NOT_ALLOWLISTED",
            Violation::DepthExceeded => "DEPTH_EXCEEDED",
            Violation::CircularCall => "CIRCULAR_CALL",
            Violation::PrivilegeEscalation => "PRIVILEGE_ESCALATION",
            Violation::RateLimited => "RATE_LIMITED",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    pub max_calls: u32,
    /// Window length in logical ticks.
    pub window: u64,
}

/// `(caller_id, callee_id)`
pub type Chain = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallStackPolicy {
    pub max_depth: u32,
    /// When non-empty, only these caller/callee pairs may chain.
    #[serde(default)]
    pub allowed_chains: BTreeSet<Chain>,
    #[serde(default)]
    pub blocked_chains: BTreeSet<Chain>,
    #[serde(default)]
    pub allow_reentrancy: bool,
    /// Pairs allowed to call a callee with scopes beyond the caller's.
    #[serde(default)]
    pub permitted_elevations: BTreeSet<Chain>,
    #[serde(default)]
    pub rate_limits: BTreeMap<String, RateLimit>,
    /// Violation classes that are recorded but do not block.
    #[serde(default)]
    pub log_only: BTreeSet<Violation>,
}

impl Default for CallStackPolicy {
    fn default() -> Self {
        Self {
            max_depth: 8,
            allowed_chains: BTreeSet::new(),
            blocked_chains: BTreeSet::new(),
            allow_reentrancy: false,
            permitted_elevations: BTreeSet::new(),
            rate_limits: BTreeMap::new(),
            log_only: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallStackError {
    #[error("invalid call-stack policy: {0}")]
    InvalidPolicy(String),
    #[error("caller {given:?} is not the current stack top {top:?}")]
    CallerMismatch {
        given: Option<String>,
        top: Option<String>,
    },
    #[error("cannot pop {given:?}: stack top is {top:?}")]
    StackMismatch { given: String, top: Option<String> },
}

impl CallStackPolicy {
    pub fn validate(&self) -> Result<(), CallStackError> {
        let invalid = |m: String| Err(CallStackError::InvalidPolicy(m));
        if self.max_depth < 1 {
            return invalid("max_depth must be at least 1".into());
        }
        if let Some(c) = self.allowed_chains.intersection(&self.blocked_chains).next() {
            return invalid(format!("chain {c:?} is both allowed and blocked"));
        }
        if self.log_only.contains(&Violation::DepthExceeded) {
            return invalid("DEPTH_EXCEEDED cannot be log-only".into());
        }
        if let Some((tool, _)) = self.rate_limits.iter().find(|(_, r)| r.window == 0) {
            return invalid(format!("rate limit window for {tool:?} must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub tool_id: String,
    pub granted_scopes: BTreeSet<String>,
    pub entered_at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CallVerdict {
    Allow {
        /// Log-only violations observed while allowing the call.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        logged: Vec<Violation>,
    },
    Block { violation: Violation },
}

impl CallVerdict {
    pub fn is_allow(&self) -> bool {
        matches!(self, CallVerdict::Allow { .. })
    }

    pub fn violation(&self) -> Option<Violation> {
        match self {
            CallVerdict::Block { violation } => Some(*violation),
            CallVerdict::Allow { .. } => None,
        }
    }
}

/// One line of the violation log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub tick: u64,
    pub session_id: String,
    pub caller: Option<String>,
    pub callee: String,
    pub violation: Violation,
    /// False for log-only classes.
    pub enforced: bool,
}

/// Call stack of one logical execution context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSession {
    session_id: String,
    policy: CallStackPolicy,
    stack: Vec<Frame>,
    call_log: Vec<(String, u64)>,
    clock: u64,
    violations: Vec<ViolationRecord>,
}

pub fn begin_session(session_id: &str, policy: CallStackPolicy) -> Result<CallSession, CallStackError> {
    CallSession::new(session_id, policy)
}

impl CallSession {
    pub fn new(session_id: &str, policy: CallStackPolicy) -> Result<Self, CallStackError> {
        policy.validate()?;
        Ok(Self {
            session_id: session_id.to_string(),
            policy,
            stack: Vec::new(),
            call_log: Vec::new(),
            clock: 0,
            violations: Vec::new(),
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn policy(&self) -> &CallStackPolicy {
        &self.policy
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn stack(&self) -> &[Frame] {
        &self.stack
    }

    pub fn top(&self) -> Option<&Frame> {
        self.stack.last()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn call_log(&self) -> &[(String, u64)] {
        &self.call_log
    }

    pub fn violations(&self) -> &[ViolationRecord] {
        &self.violations
    }

    /// Allowed calls of `tool_id` still inside its rate window.
    pub fn calls_in_window(&self, tool_id: &str, window: u64) -> usize {
        self.call_log
            .iter()
            .filter(|(t, tick)| t == tool_id && tick + window > self.clock)
            .count()
    }

    fn first_violations(&self, caller: Option<&Frame>, callee: &str, callee_scopes: &BTreeSet<String>) -> Vec<Violation> {
        let p = &self.policy;
        let mut found = Vec::new();
        if let Some(rl) = p.rate_limits.get(callee) {
            if self.calls_in_window(callee, rl.window) >= rl.max_calls as usize {
                found.push(Violation::RateLimited);
            }
        }
        if self.stack.len() + 1 > p.max_depth as usize {
            found.push(Violation::DepthExceeded);
        }
        if !p.allow_reentrancy && self.stack.iter().any(|f| f.tool_id == callee) {
            found.push(Violation::CircularCall);
        }
        if let Some(frame) = caller {
            let chain = (frame.tool_id.clone(), callee.to_string());
            if p.blocked_chains.contains(&chain) {
                found.push(Violation::ChainBlocked);
            }
            if !p.allowed_chains.is_empty() && !p.allowed_chains.contains(&chain) {
                found.push(Violation::ChainNotAllowlisted);
            }
            if !callee_scopes.is_subset(&frame.granted_scopes)
                && !p.permitted_elevations.contains(&chain)
            {
                found.push(Violation::PrivilegeEscalation);
            }
        }
        found
    }

    /// Checks and, when allowed, pushes a call. The caller's scopes are taken
    /// from its frame on the stack; `caller` must name the current top.
    pub fn push_call(
        &mut self,
        caller: Option<&str>,
        callee: &str,
        callee_scopes: &BTreeSet<String>,
    ) -> Result<CallVerdict, CallStackError> {
        let top = self.stack.last();
        if caller != top.map(|f| f.tool_id.as_str()) {
            return Err(CallStackError::CallerMismatch {
                given: caller.map(String::from),
                top: top.map(|f| f.tool_id.clone()),
            });
        }
        let found = self.first_violations(top, callee, callee_scopes);
        let mut logged = Vec::new();
        for v in found {
            let enforced = !self.policy.log_only.contains(&v);
            self.violations.push(ViolationRecord {
                tick: self.clock,
                session_id: self.session_id.clone(),
                caller: caller.map(String::from),
                callee: callee.to_string(),
                violation: v,
                enforced,
            });
            if enforced {
                return Ok(CallVerdict::Block { violation: v });
            }
            logged.push(v);
        }
        self.stack.push(Frame {
            tool_id: callee.to_string(),
            granted_scopes: callee_scopes.clone(),
            entered_at_tick: self.clock,
        });
        self.call_log.push((callee.to_string(), self.clock));
        Ok(CallVerdict::Allow { logged })
    }

    pub fn pop_call(&mut self, tool_id: &str) -> Result<(), CallStackError> {
        match self.stack.last() {
            Some(f) if f.tool_id == tool_id => {
                self.stack.pop();
                Ok(())
            }
            other => Err(CallStackError::StackMismatch {
                given: tool_id.to_string(),
                top: other.map(|f| f.tool_id.clone()),
            }),
        }
    }

    /// Advances the logical clock and forgets calls that left every window.
    pub fn advance_clock(&mut self, ticks: u64) {
        if ticks == 0 {
            return;
        }
        self.clock += ticks;
        let now = self.clock;
        let limits = &self.policy.rate_limits;
        self.call_log
            .retain(|(tool, tick)| limits.get(tool).is_some_and(|rl| tick + rl.window > now));
    }
}

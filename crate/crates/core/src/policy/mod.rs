//! Embedded policy decision point.
//!
//! Rules are `PERMIT` or `FORBID` over principal, action and resource
//! patterns plus an optional context condition. A request is allowed iff at
//! least one permit matches and no forbid matches; no match means deny.
//! Policy documents are only loaded after their signatures verify.

mod condition;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize};

pub use condition::{
    eval_condition, flatten_context, AttrValue, CompareOp, Condition, ConditionParseError,
    ConditionTypeError, Context,
};

use crate::canonical::{to_canonical_bytes, CanonicalError};
use crate::crypto::{SignedPolicyDocument, TrustStore, VerificationResult};
use crate::model::SemVer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Effect {
    Permit,
    Forbid,
}

/// Exact string, or a prefix when the pattern ends with `*`.
pub fn pattern_matches(pattern: &str, value: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => value.starts_with(prefix),
        None => pattern == value,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub rule_id: String,
    pub effect: Effect,
    pub principal: String,
    pub action: String,
    pub resource: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

impl PolicyRule {
    pub fn new(
        rule_id: &str,
        effect: Effect,
        principal: &str,
        action: &str,
        resource: &str,
    ) -> Self {
        Self {
            rule_id: rule_id.to_string(),
            effect,
            principal: principal.to_string(),
            action: action.to_string(),
            resource: resource.to_string(),
            condition: None,
        }
    }

    pub fn when(mut self, condition: Condition) -> Self {
        self.condition = Some(condition);
        self
    }

    fn scope_matches(&self, req: &AuthorizationRequest) -> bool {
        pattern_matches(&self.principal, &req.principal)
            && pattern_matches(&self.action, &req.action)
            && pattern_matches(&self.resource, &req.resource)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub policy_store_id: String,
    pub version: SemVer,
    pub author_provider_id: String,
    pub rules: Vec<PolicyRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyDocumentError {
    #[error("policy_store_id must not be empty")]
    EmptyStoreId,
    #[error("duplicate rule id {0:?}")]
    DuplicateRuleId(String),
    #[error("rule {0:?} has an empty matcher")]
    EmptyMatcher(String),
    #[error("rule {rule_id:?}: {error}")]
    StaticType {
        rule_id: String,
        error: ConditionTypeError,
    },
}

impl PolicyDocument {
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        to_canonical_bytes(self)
    }

    pub fn validate(&self, mode: PolicyMode) -> Result<(), PolicyDocumentError> {
        if self.policy_store_id.is_empty() {
            return Err(PolicyDocumentError::EmptyStoreId);
        }
        let mut ids = BTreeSet::new();
        for r in &self.rules {
            if !ids.insert(r.rule_id.as_str()) {
                return Err(PolicyDocumentError::DuplicateRuleId(r.rule_id.clone()));
            }
            if r.principal.is_empty() || r.action.is_empty() || r.resource.is_empty() {
                return Err(PolicyDocumentError::EmptyMatcher(r.rule_id.clone()));
            }
            if mode == PolicyMode::Strict {
                if let Some(error) = r
                    .condition
                    .as_ref()
                    .and_then(|c| c.static_type_errors().into_iter().next())
                {
                    return Err(PolicyDocumentError::StaticType {
                        rule_id: r.rule_id.clone(),
                        error,
                    });
                }
            }
        }
        Ok(())
    }
}

/// How condition type errors are handled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Type errors at evaluation make the rule not match.
    #[default]
    Lenient,
    /// Additionally reject documents with statically detectable type errors.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuthorizationRequest {
    pub principal: String,
    pub action: String,
    pub resource: String,
    #[serde(default)]
    pub context: Context,
}

#[derive(Deserialize)]
struct RawRequest {
    principal: String,
    action: String,
    resource: String,
    #[serde(default)]
    context: Option<serde_json::Value>,
}

impl<'de> Deserialize<'de> for AuthorizationRequest {
    /// Accepts either a flat dotted map or nested objects for `context`.
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawRequest::deserialize(d)?;
        let context = match raw.context {
            None => Context::new(),
            Some(v) => flatten_context(&v).map_err(serde::de::Error::custom)?,
        };
        Ok(Self {
            principal: raw.principal,
            action: raw.action,
            resource: raw.resource,
            context,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub allowed: bool,
    /// Every matching rule, permit and forbid alike, in evaluation order.
    pub determining_rules: Vec<String>,
    pub reason: String,
    /// Condition type errors encountered (rule id and message).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRef {
    pub policy_store_id: String,
    pub version: SemVer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub policy_store_id: String,
    pub version: SemVer,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: Vec<DocumentRef>,
    pub rejected: Vec<Rejection>,
    pub superseded: Vec<DocumentRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("no policy document could be loaded ({} rejected)", .report.rejected.len())]
    EmptyStore { report: LoadReport },
}

/// Verified policy documents keyed by `policy_store_id`. Immutable once
/// built; reloading produces a new value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyStore {
    docs: BTreeMap<String, PolicyDocument>,
}

/// Verifies and loads signed documents. Among documents sharing a
/// `policy_store_id` the highest version wins (later input on a tie).
pub fn load_policy_store(
    docs: &[SignedPolicyDocument],
    ts: &TrustStore,
    mode: PolicyMode,
) -> Result<(PolicyStore, LoadReport), PolicyError> {
    let mut report = LoadReport::default();
    let mut store = PolicyStore::default();
    for spd in docs {
        let doc = &spd.definition;
        let doc_ref = DocumentRef {
            policy_store_id: doc.policy_store_id.clone(),
            version: doc.version,
        };
        let rejected = |reason: String| Rejection {
            policy_store_id: doc.policy_store_id.clone(),
            version: doc.version,
            reason,
        };
        if let VerificationResult::Invalid { reason } = spd.verify(ts) {
            report.rejected.push(rejected(reason.to_string()));
            continue;
        }
        if let Err(e) = doc.validate(mode) {
            report.rejected.push(rejected(e.to_string()));
            continue;
        }
        match store.docs.get(&doc.policy_store_id) {
            Some(existing) if existing.version > doc.version => {
                report.superseded.push(doc_ref);
            }
            Some(existing) => {
                report.superseded.push(DocumentRef {
                    policy_store_id: existing.policy_store_id.clone(),
                    version: existing.version,
                });
                store.docs.insert(doc.policy_store_id.clone(), doc.clone());
            }
            None => {
                store.docs.insert(doc.policy_store_id.clone(), doc.clone());
            }
        }
    }
    report.loaded = store
        .docs
        .values()
        .map(|d| DocumentRef {
            policy_store_id: d.policy_store_id.clone(),
            version: d.version,
        })
        .collect();
    if store.docs.is_empty() {
        return Err(PolicyError::EmptyStore { report });
    }
    Ok((store, report))
}

impl PolicyStore {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn documents(&self) -> impl Iterator<Item = &PolicyDocument> {
        self.docs.values()
    }

    pub fn get(&self, policy_store_id: &str) -> Option<&PolicyDocument> {
        self.docs.get(policy_store_id)
    }

    /// Evaluates against every loaded document.
    pub fn is_authorized(&self, req: &AuthorizationRequest) -> Decision {
        decide(self.docs.values().flat_map(|d| &d.rules), req)
    }

    /// Evaluates against one document only; an unknown id denies.
    pub fn is_authorized_in(&self, policy_store_id: &str, req: &AuthorizationRequest) -> Decision {
        match self.docs.get(policy_store_id) {
            Some(doc) => decide(doc.rules.iter(), req),
            None => Decision {
                allowed: false,
                determining_rules: Vec::new(),
                reason: format!("unknown policy store {policy_store_id:?} (default deny)"),
                errors: Vec::new(),
            },
        }
    }
}

pub fn is_authorized(store: &PolicyStore, req: &AuthorizationRequest) -> Decision {
    store.is_authorized(req)
}

/// Forbid overrides permit; no matching permit means deny.
pub fn decide<'a>(rules: impl Iterator<Item = &'a PolicyRule>, req: &AuthorizationRequest) -> Decision {
    if req.principal.is_empty() || req.action.is_empty() || req.resource.is_empty() {
        return Decision {
            allowed: false,
            determining_rules: Vec::new(),
            reason: "invalid request: principal, action and resource must be non-empty".into(),
            errors: Vec::new(),
        };
    }
    let mut matched = Vec::new();
    let mut permits = Vec::new();
    let mut forbids = Vec::new();
    let mut errors = Vec::new();
    for rule in rules {
        if !rule.scope_matches(req) {
            continue;
        }
        let applies = match &rule.condition {
            None => true,
            Some(c) => match eval_condition(c, &req.context) {
                Ok(b) => b,
                Err(e) => {
                    errors.push(format!("{}: {e}", rule.rule_id));
                    false
                }
            },
        };
        if !applies {
            continue;
        }
        matched.push(rule.rule_id.clone());
        match rule.effect {
            Effect::Permit => permits.push(rule.rule_id.as_str()),
            Effect::Forbid => forbids.push(rule.rule_id.as_str()),
        }
    }
    let (allowed, reason) = if !forbids.is_empty() {
        (false, format!("forbidden by {}", forbids.join(", ")))
    } else if !permits.is_empty() {
        (true, format!("permitted by {}", permits.join(", ")))
    } else {
        (false, "no matching permit (default deny)".to_string())
    };
    Decision {
        allowed,
        determining_rules: matched,
        reason,
        errors,
    }
}

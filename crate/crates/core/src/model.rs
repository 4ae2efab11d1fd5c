//! Tool definition data model.
//!
//! A [`ToolDefinition`] is the document a provider signs. Everything that the
//! rest of the crate hashes, verifies or diffs is derived from it.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::canonical::{self, CanonicalError, ContentHash};

/// Semantic version `major.minor.patch`, ordered numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemVer {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
}

impl SemVer {
    pub const fn new(major: u64, minor: u64, patch: u64) -> Self {
        Self {
            major,
            minor,
            patch,
        }
    }
}

/// Total order on versions: `(major, minor, patch)` compared numerically.
pub fn compare_versions(a: &SemVer, b: &SemVer) -> Ordering {
    a.major
        .cmp(&b.major)
        .then(a.minor.cmp(&b.minor))
        .then(a.patch.cmp(&b.patch))
}

impl fmt::Display for SemVer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid version string {0:?}, expected MAJOR.MINOR.PATCH")]
pub struct ParseVersionError(pub String);

impl FromStr for SemVer {
    type Err = ParseVersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseVersionError(s.to_string());
        let mut parts = s.split('.');
        let mut next = || -> Result<u64, ParseVersionError> {
            let p = parts.next().ok_or_else(err)?;
            // "01" is rejected so that Display/FromStr round-trip exactly.
            if p.is_empty() || (p.len() > 1 && p.starts_with('0')) || !p.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            p.parse().map_err(|_| err())
        };
        let v = SemVer::new(next()?, next()?, next()?);
        if parts.next().is_some() {
            return Err(err());
        }
        Ok(v)
    }
}

/// The provider-authored description of a tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolDefinition {
    pub id: String,
    pub name: String,
    pub description: String,
    pub provider_id: String,
    pub version: SemVer,
    pub input_schema: serde_json::Value,
    pub output_schema: serde_json::Value,
    #[serde(deserialize_with = "deserialize_unique_set")]
    pub permissions: BTreeSet<String>,
    #[serde(default, deserialize_with = "deserialize_unique_set")]
    pub required_caller_entitlements: BTreeSet<String>,
    #[serde(default)]
    pub api_contract_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DefinitionError {
    #[error("tool id must be non-empty and contain no whitespace: {0:?}")]
    InvalidId(String),
    #[error("api_contract_hash must be 64 lowercase hex characters: {0:?}")]
    InvalidContractHash(String),
}

impl ToolDefinition {
    /// Minimal definition with empty schemas and no permissions; handy for
    /// fixtures and builders.
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        provider_id: impl Into<String>,
        version: SemVer,
    ) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            description: String::new(),
            provider_id: provider_id.into(),
            version,
            input_schema: serde_json::json!({"type": "object"}),
            output_schema: serde_json::json!({"type": "object"}),
            permissions: BTreeSet::new(),
            required_caller_entitlements: BTreeSet::new(),
            api_contract_hash: None,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_permissions<I, S>(mut self, scopes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.permissions = scopes.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_entitlements<I, S>(mut self, scopes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.required_caller_entitlements = scopes.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), DefinitionError> {
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(DefinitionError::InvalidId(self.id.clone()));
        }
        if let Some(h) = &self.api_contract_hash {
            let ok = h.len() == 64 && h.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
            if !ok {
                return Err(DefinitionError::InvalidContractHash(h.clone()));
            }
        }
        Ok(())
    }

    /// Deterministic byte encoding used for hashing and signing.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        canonical_encode(self)
    }

    pub fn content_hash(&self) -> Result<ContentHash, CanonicalError> {
        content_hash(self)
    }

    /// `provider::tool_id@version`, the principal string presented to the
    /// policy engine.
    pub fn principal(&self) -> String {
        format!("{}::{}@{}", self.provider_id, self.id, self.version)
    }
}

/// Canonical JSON encoding of a definition. Validates invariants first.
pub fn canonical_encode(def: &ToolDefinition) -> Result<Vec<u8>, CanonicalError> {
    def.validate()?;
    canonical::to_canonical_bytes(def)
}

/// Parses canonical (or any JSON) bytes back into a validated definition.
pub fn decode_definition(bytes: &[u8]) -> Result<ToolDefinition, CanonicalError> {
    let def: ToolDefinition = serde_json::from_slice(bytes)?;
    def.validate()?;
    Ok(def)
}

/// SHA-256 over [`canonical_encode`].
pub fn content_hash(def: &ToolDefinition) -> Result<ContentHash, CanonicalError> {
    Ok(ContentHash::of(&canonical_encode(def)?))
}

/// Rejects arrays with repeated entries instead of silently collapsing them.
pub(crate) fn deserialize_unique_set<'de, D>(d: D) -> Result<BTreeSet<String>, D::Error>
where
    D: Deserializer<'de>,
{
    let items = Vec::<String>::deserialize(d)?;
    let len = items.len();
    let set: BTreeSet<String> = items.into_iter().collect();
    if set.len() != len {
        return Err(serde::de::Error::custom("duplicate entry in scope set"));
    }
    Ok(set)
}

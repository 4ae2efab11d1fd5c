//! Colon-delimited scope strings and coverage checks.
//!
//! A held scope may end in a single `*` segment, which covers any scope that
//! shares the preceding segments and has at least one more segment:
//! `fs:read:*` covers `fs:read:documents` and `fs:read:documents:tax`, but
//! not `fs:read`. A `*` anywhere else is malformed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScopeError {
    #[error("malformed scope {0:?}: empty segment")]
    EmptySegment(String),
    #[error("malformed scope {0:?}: '*' is only allowed as the whole last segment")]
    MisplacedWildcard(String),
}

/// Checks the scope grammar.
pub fn validate_scope(scope: &str) -> Result<(), ScopeError> {
    let segments: Vec<&str> = scope.split(':').collect();
    let last = segments.len() - 1;
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(ScopeError::EmptySegment(scope.to_string()));
        }
        if seg.contains('*') && (i != last || *seg != "*") {
            return Err(ScopeError::MisplacedWildcard(scope.to_string()));
        }
    }
    Ok(())
}

/// Whether the held scope (possibly a wildcard pattern) covers `needed`.
/// Both arguments must already be valid.
pub fn scope_covers(held: &str, needed: &str) -> bool {
    if held == needed {
        return true;
    }
    match held.strip_suffix('*') {
        // `prefix` keeps its trailing ':' (or is empty for a bare "*").
        Some(prefix) if prefix.is_empty() || prefix.ends_with(':') => {
            needed.len() > prefix.len() && needed.starts_with(prefix)
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Adherence {
    Pass,
    Fail { missing: BTreeSet<String> },
}

impl Adherence {
    pub fn is_pass(&self) -> bool {
        matches!(self, Adherence::Pass)
    }
}

/// `Pass` iff every scope the action needs is covered by some token scope.
pub fn check_scope_adherence(
    action_scopes: &BTreeSet<String>,
    token_scopes: &BTreeSet<String>,
) -> Result<Adherence, ScopeError> {
    for s in action_scopes.iter().chain(token_scopes) {
        validate_scope(s)?;
    }
    let missing: BTreeSet<String> = action_scopes
        .iter()
        .filter(|need| !token_scopes.iter().any(|held| scope_covers(held, need)))
        .cloned()
        .collect();
    Ok(if missing.is_empty() {
        Adherence::Pass
    } else {
        Adherence::Fail { missing }
    })
}

//! Compact signed tokens binding an issuer, a tool identity and version, and
//! a scope set.
//!
//! Wire format: `base64url(header) "." base64url(claims) "." base64url(sig)`,
//! unpadded, where the signature is Ed25519 over the first two segments
//! joined by `.`. Header and claims are canonical JSON.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_bytes;
use crate::crypto::{KeyPair, TrustStore};
use crate::model::{SemVer, ToolDefinition};
use crate::scope::{check_scope_adherence, validate_scope, Adherence, ScopeError};

pub const TOKEN_ALG: &str = "EdDSA";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenHeader {
    pub alg: String,
    pub kid: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolClaims {
    pub iss: String,
    pub sub: String,
    pub iat: u64,
    pub exp: u64,
    pub tool_id: String,
    /// `M.m.p`
    pub tool_version: String,
    #[serde(deserialize_with = "crate::model::deserialize_unique_set")]
    pub scopes: BTreeSet<String>,
    pub jti: String,
}

/// A parsed token together with its exact wire form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolToken {
    pub header: TokenHeader,
    pub claims: ToolClaims,
    pub signature: Vec<u8>,
    compact: String,
}

impl ToolToken {
    pub fn as_str(&self) -> &str {
        &self.compact
    }

    /// Splits and decodes a compact token. Structural problems are reported as
    /// `BadSignature` since nothing in a malformed token can be trusted.
    pub fn parse(compact: &str) -> Result<Self, TokenError> {
        let parts: Vec<&str> = compact.split('.').collect();
        let [h, c, s] = parts.as_slice() else {
            return Err(TokenError::BadSignature);
        };
        let decode = |seg: &str| URL_SAFE_NO_PAD.decode(seg).map_err(|_| TokenError::BadSignature);
        let header: TokenHeader =
            serde_json::from_slice(&decode(h)?).map_err(|_| TokenError::BadSignature)?;
        let claims: ToolClaims =
            serde_json::from_slice(&decode(c)?).map_err(|_| TokenError::BadSignature)?;
        Ok(Self {
            header,
            claims,
            signature: decode(s)?,
            compact: compact.to_string(),
        })
    }

    fn signing_input(&self) -> &str {
        let cut = self.compact.rfind('.').unwrap_or(self.compact.len());
        &self.compact[..cut]
    }
}

impl fmt::Display for ToolToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.compact)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IssueError {
    #[error("invalid claims: {0}")]
    InvalidClaims(String),
}

/// Why a token was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenError {
    #[error("UNTRUSTED_ISSUER")]
    UntrustedIssuer,
    #[error("BAD_SIGNATURE")]
    BadSignature,
    #[error("EXPIRED")]
    Expired,
    #[error("TOOL_BINDING_MISMATCH")]
    ToolBindingMismatch,
    #[error("REVOKED")]
    Revoked,
}

impl TokenError {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenError::UntrustedIssuer => "UNTRUSTED_ISSUER",
            TokenError::BadSignature => "BAD_SIGNATURE",
            TokenError::Expired => "EXPIRED",
            TokenError::ToolBindingMismatch => "TOOL_BINDING_MISMATCH",
            TokenError::Revoked => "REVOKED",
        }
    }
}

/// The tool a token is expected to be bound to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolBinding {
    pub tool_id: String,
    pub tool_version: SemVer,
}

impl ToolBinding {
    pub fn of(def: &ToolDefinition) -> Self {
        Self {
            tool_id: def.id.clone(),
            tool_version: def.version,
        }
    }
}

/// Mints a token signed by the issuer key (test identity provider).
pub fn issue_token(idp_key: &KeyPair, claims: &ToolClaims) -> Result<ToolToken, IssueError> {
    let invalid = |m: &str| Err(IssueError::InvalidClaims(m.to_string()));
    if claims.iat > claims.exp {
        return invalid("iat must not be after exp");
    }
    if claims.iss.is_empty() || claims.jti.is_empty() || claims.tool_id.is_empty() {
        return invalid("iss, jti and tool_id must be non-empty");
    }
    if claims.tool_version.parse::<SemVer>().is_err() {
        return invalid("tool_version must be MAJOR.MINOR.PATCH");
    }
    if let Some(e) = claims.scopes.iter().find_map(|s| validate_scope(s).err()) {
        return Err(IssueError::InvalidClaims(e.to_string()));
    }
    let header = TokenHeader {
        alg: TOKEN_ALG.to_string(),
        kid: idp_key.key_id().to_string(),
    };
    let canon = |r: Result<Vec<u8>, _>| {
        r.map(|b| URL_SAFE_NO_PAD.encode(b))
            .map_err(|e: crate::canonical::CanonicalError| IssueError::InvalidClaims(e.to_string()))
    };
    let signing_input = format!(
        "{}.{}",
        canon(to_canonical_bytes(&header))?,
        canon(to_canonical_bytes(claims))?
    );
    let signature = idp_key.sign(signing_input.as_bytes()).to_vec();
    let compact = format!("{signing_input}.{}", URL_SAFE_NO_PAD.encode(&signature));
    Ok(ToolToken {
        header,
        claims: claims.clone(),
        signature,
        compact,
    })
}

/// Checks issuer trust, signature, expiry (`now >= exp` is expired), tool
/// binding (skipped when `expected` is `None`) and revocation, in that order.
pub fn validate_token(
    token: &str,
    issuers: &TrustStore,
    expected: Option<&ToolBinding>,
    now: u64,
    revoked: &RevocationList,
) -> Result<ToolClaims, TokenError> {
    let tok = ToolToken::parse(token)?;
    let key = issuers
        .issuer_key(&tok.claims.iss, &tok.header.kid)
        .map_err(|_| TokenError::UntrustedIssuer)?;
    if tok.header.alg != TOKEN_ALG || !key.verify(tok.signing_input().as_bytes(), &tok.signature) {
        return Err(TokenError::BadSignature);
    }
    if now >= tok.claims.exp {
        return Err(TokenError::Expired);
    }
    if let Some(b) = expected {
        if tok.claims.tool_id != b.tool_id || tok.claims.tool_version != b.tool_version.to_string() {
            return Err(TokenError::ToolBindingMismatch);
        }
    }
    if revoked.contains(&tok.claims.jti) {
        return Err(TokenError::Revoked);
    }
    Ok(tok.claims)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EntitlementError {
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Scope(#[from] ScopeError),
}

/// Whether the caller's (user) token carries every entitlement the tool
/// requires. A present token is always validated first so that expiry and
/// trust failures surface before the entitlement comparison.
pub fn check_caller_entitlements(
    def: &ToolDefinition,
    user_token: Option<&str>,
    issuers: &TrustStore,
    now: u64,
    revoked: &RevocationList,
) -> Result<Adherence, EntitlementError> {
    let claims = user_token
        .map(|t| validate_token(t, issuers, None, now, revoked))
        .transpose()?;
    let held = claims.map(|c| c.scopes).unwrap_or_default();
    Ok(check_scope_adherence(&def.required_caller_entitlements, &held)?)
}

/// Revoked token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationList {
    jtis: BTreeSet<String>,
}

impl RevocationList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, jti: &str) -> bool {
        self.jtis.contains(jti)
    }

    /// Returns false if the id was already present.
    pub fn revoke(&mut self, jti: impl Into<String>) -> bool {
        self.jtis.insert(jti.into())
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.jtis.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.jtis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jtis.is_empty()
    }

    /// One jti per line; blank lines ignored. A missing file is an empty list.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        if !path.exists() {
            return Ok(Self::new());
        }
        let text = std::fs::read_to_string(path)?;
        Ok(Self {
            jtis: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for j in &self.jtis {
            out.push_str(j);
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

impl FromIterator<String> for RevocationList {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        Self {
            jtis: iter.into_iter().collect(),
        }
    }
}

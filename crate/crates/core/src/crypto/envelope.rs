use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::b64;
use super::keys::{Algorithm, KeyPair};
use super::trust::TrustStore;
use crate::canonical::{CanonicalError, ContentHash};
use crate::model::{self, ToolDefinition};
use crate::policy::PolicyDocument;

/// A document that can be wrapped in a signature envelope.
pub trait Signable: Serialize + DeserializeOwned + Clone {
    fn canonical_bytes(&self) -> Result<Vec<u8>, CanonicalError>;
    /// Provider id whose keys may sign this document.
    fn signer_id(&self) -> &str;
}

impl Signable for ToolDefinition {
    fn canonical_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        model::canonical_encode(self)
    }

    fn signer_id(&self) -> &str {
        &self.provider_id
    }
}

impl Signable for PolicyDocument {
    fn canonical_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        self.canonical_bytes()
    }

    fn signer_id(&self) -> &str {
        &self.author_provider_id
    }
}

/// Detached signature over the canonical bytes of `definition`.
///
/// `algorithm` and `signature` are kept loosely typed so that a tampered or
/// foreign envelope still parses and fails verification with a reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: DeserializeOwned"))]
pub struct SignedEnvelope<T> {
    pub definition: T,
    pub key_id: String,
    pub algorithm: String,
    #[serde(with = "b64")]
    pub signature: Vec<u8>,
    pub signed_bytes_hash: ContentHash,
}

pub type SignedToolDefinition = SignedEnvelope<ToolDefinition>;
pub type SignedPolicyDocument = SignedEnvelope<PolicyDocument>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InvalidReason {
    UnknownProvider,
    UnknownKey,
    RevokedKey,
    BadSignature,
    HashMismatch,
}

impl InvalidReason {
    pub fn as_str(self) -> &'static str {
        match self {
            InvalidReason::UnknownProvider => "UNKNOWN_PROVIDER",
            InvalidReason::UnknownKey => "UNKNOWN_KEY",
            InvalidReason::RevokedKey => "REVOKED_KEY",
            InvalidReason::BadSignature => "BAD_SIGNATURE",
            InvalidReason::HashMismatch => "HASH_MISMATCH",
        }
    }
}

impl std::fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerificationResult {
    VerifiedBy { provider_id: String, key_id: String },
    Invalid { reason: InvalidReason },
}

impl VerificationResult {
    pub fn is_verified(&self) -> bool {
        matches!(self, VerificationResult::VerifiedBy { .. })
    }

    pub fn invalid_reason(&self) -> Option<InvalidReason> {
        match self {
            VerificationResult::Invalid { reason } => Some(*reason),
            VerificationResult::VerifiedBy { .. } => None,
        }
    }
}

impl<T: Signable> SignedEnvelope<T> {
    pub fn sign(document: T, pair: &KeyPair) -> Result<Self, CanonicalError> {
        let bytes = document.canonical_bytes()?;
        Ok(Self {
            signature: pair.sign(&bytes).to_vec(),
            signed_bytes_hash: ContentHash::of(&bytes),
            key_id: pair.key_id().to_string(),
            algorithm: pair.algorithm().as_str().to_string(),
            definition: document,
        })
    }

    /// Checks, in order: signer known, key known, key active, signature over
    /// the canonical bytes, recorded hash.
    pub fn verify(&self, ts: &TrustStore) -> VerificationResult {
        let provider = self.definition.signer_id();
        let invalid = |reason| VerificationResult::Invalid { reason };
        let key = match ts.provider_key(provider, &self.key_id) {
            Ok(k) => k,
            Err(reason) => return invalid(reason),
        };
        if self.algorithm != Algorithm::Ed25519.as_str() {
            return invalid(InvalidReason::BadSignature);
        }
        let Ok(bytes) = self.definition.canonical_bytes() else {
            return invalid(InvalidReason::BadSignature);
        };
        if !key.verify(&bytes, &self.signature) {
            return invalid(InvalidReason::BadSignature);
        }
        if ContentHash::of(&bytes) != self.signed_bytes_hash {
            return invalid(InvalidReason::HashMismatch);
        }
        VerificationResult::VerifiedBy {
            provider_id: provider.to_string(),
            key_id: self.key_id.clone(),
        }
    }
}

pub fn sign_definition(
    def: &ToolDefinition,
    pair: &KeyPair,
) -> Result<SignedToolDefinition, CanonicalError> {
    SignedEnvelope::sign(def.clone(), pair)
}

pub fn verify_signed_definition(sd: &SignedToolDefinition, ts: &TrustStore) -> VerificationResult {
    sd.verify(ts)
}

pub fn sign_policy(
    doc: &PolicyDocument,
    pair: &KeyPair,
) -> Result<SignedPolicyDocument, CanonicalError> {
    SignedEnvelope::sign(doc.clone(), pair)
}

pub fn verify_policy(spd: &SignedPolicyDocument, ts: &TrustStore) -> VerificationResult {
    spd.verify(ts)
}

//! Ed25519 keys, the local trust store, and detached-signature envelopes.

mod envelope;
mod keys;
mod trust;

pub use envelope::{
    sign_definition, sign_policy, verify_policy, verify_signed_definition, InvalidReason, Signable,
    SignedEnvelope, SignedPolicyDocument, SignedToolDefinition, VerificationResult,
};
pub use keys::{generate_keypair, Algorithm, KeyError, KeyPair, KeyPairFile, PublicKey};
pub use trust::{KeyStatus, TrustError, TrustStore, TrustedKey};

pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ed25519,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ed25519 => "ed25519",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("key id must not be empty")]
    EmptyKeyId,
    #[error("invalid key material: {0}")]
    InvalidKey(String),
}

/// Ed25519 verifying key; serialized as standard base64.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KeyError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| KeyError::InvalidKey(format!("expected 32 bytes, got {}", bytes.len())))?;
        VerifyingKey::from_bytes(&arr)
            .map(PublicKey)
            .map_err(|e| KeyError::InvalidKey(e.to_string()))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn to_base64(&self) -> String {
        STANDARD.encode(self.to_bytes())
    }

    pub fn from_base64(s: &str) -> Result<Self, KeyError> {
        let raw = STANDARD
            .decode(s)
            .map_err(|e| KeyError::InvalidKey(e.to_string()))?;
        Self::from_bytes(&raw)
    }

    /// Strict verification; a malformed signature simply fails.
    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        self.0.verify_strict(message, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_base64())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_base64(&s).map_err(serde::de::Error::custom)
    }
}

/// A named Ed25519 signing key. The private seed only ever leaves this type
/// through [`KeyPairFile`].
#[derive(Clone)]
pub struct KeyPair {
    key_id: String,
    signing: SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("key_id", &self.key_id)
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

/// Fresh random key pair.
pub fn generate_keypair(key_id: &str) -> Result<KeyPair, KeyError> {
    KeyPair::generate(key_id)
}

impl KeyPair {
    pub fn generate(key_id: &str) -> Result<Self, KeyError> {
        if key_id.is_empty() {
            return Err(KeyError::EmptyKeyId);
        }
        Ok(Self {
            key_id: key_id.to_string(),
            signing: SigningKey::generate(&mut OsRng),
        })
    }

    /// Deterministic key pair from a 32-byte seed (used by the simulator).
    pub fn from_seed(key_id: &str, seed: [u8; 32]) -> Result<Self, KeyError> {
        if key_id.is_empty() {
            return Err(KeyError::EmptyKeyId);
        }
        Ok(Self {
            key_id: key_id.to_string(),
            signing: SigningKey::from_bytes(&seed),
        })
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn algorithm(&self) -> Algorithm {
        Algorithm::Ed25519
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key())
    }

    pub fn sign(&self, message: &[u8]) -> [u8; 64] {
        self.signing.sign(message).to_bytes()
    }

    pub fn to_file(&self) -> KeyPairFile {
        KeyPairFile {
            key_id: self.key_id.clone(),
            algorithm: Algorithm::Ed25519,
            public_key: self.public_key().to_base64(),
            private_key: STANDARD.encode(self.signing.to_bytes()),
        }
    }

    pub fn from_file(file: &KeyPairFile) -> Result<Self, KeyError> {
        let seed = STANDARD
            .decode(&file.private_key)
            .map_err(|e| KeyError::InvalidKey(e.to_string()))?;
        let seed: [u8; 32] = seed
            .as_slice()
            .try_into()
            .map_err(|_| KeyError::InvalidKey("private key must be a 32-byte seed".into()))?;
        let pair = Self::from_seed(&file.key_id, seed)?;
        if pair.public_key().to_base64() != file.public_key {
            return Err(KeyError::InvalidKey(
                "public key does not match private seed".into(),
            ));
        }
        Ok(pair)
    }
}

/// On-disk key pair document written by `keygen`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPairFile {
    pub key_id: String,
    pub algorithm: Algorithm,
    pub public_key: String,
    pub private_key: String,
}

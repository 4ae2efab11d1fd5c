use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::envelope::InvalidReason;
use super::keys::{Algorithm, PublicKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KeyStatus {
    Active,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustedKey {
    pub key_id: String,
    pub algorithm: Algorithm,
    pub public_key: PublicKey,
    pub status: KeyStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrustError {
    #[error("key {key_id:?} already registered for {owner:?}")]
    DuplicateKey { owner: String, key_id: String },
    #[error("no key {key_id:?} registered for {owner:?}")]
    NotFound { owner: String, key_id: String },
}

/// Explicitly provisioned keys for tool providers (definition and policy
/// signers) and token issuers.
///
/// Updates are copy-on-write: every mutating method returns a new store and
/// leaves `self` untouched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustStore {
    #[serde(default)]
    pub providers: BTreeMap<String, Vec<TrustedKey>>,
    #[serde(default)]
    pub issuers: BTreeMap<String, Vec<TrustedKey>>,
}

fn add(
    map: &BTreeMap<String, Vec<TrustedKey>>,
    owner: &str,
    key_id: &str,
    public_key: PublicKey,
) -> Result<BTreeMap<String, Vec<TrustedKey>>, TrustError> {
    let mut map = map.clone();
    let keys = map.entry(owner.to_string()).or_default();
    if keys.iter().any(|k| k.key_id == key_id) {
        return Err(TrustError::DuplicateKey {
            owner: owner.to_string(),
            key_id: key_id.to_string(),
        });
    }
    keys.push(TrustedKey {
        key_id: key_id.to_string(),
        algorithm: Algorithm::Ed25519,
        public_key,
        status: KeyStatus::Active,
    });
    Ok(map)
}

fn revoke(
    map: &BTreeMap<String, Vec<TrustedKey>>,
    owner: &str,
    key_id: &str,
) -> Result<BTreeMap<String, Vec<TrustedKey>>, TrustError> {
    let mut map = map.clone();
    let key = map
        .get_mut(owner)
        .and_then(|keys| keys.iter_mut().find(|k| k.key_id == key_id))
        .ok_or_else(|| TrustError::NotFound {
            owner: owner.to_string(),
            key_id: key_id.to_string(),
        })?;
    key.status = KeyStatus::Revoked;
    Ok(map)
}

fn resolve<'a>(
    map: &'a BTreeMap<String, Vec<TrustedKey>>,
    owner: &str,
    key_id: &str,
    unknown_owner: InvalidReason,
) -> Result<&'a PublicKey, InvalidReason> {
    let keys = map.get(owner).ok_or(unknown_owner)?;
    let key = keys
        .iter()
        .find(|k| k.key_id == key_id)
        .ok_or(InvalidReason::UnknownKey)?;
    match key.status {
        KeyStatus::Active => Ok(&key.public_key),
        KeyStatus::Revoked => Err(InvalidReason::RevokedKey),
    }
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_provider_key(
        &self,
        provider_id: &str,
        key_id: &str,
        public_key: PublicKey,
    ) -> Result<Self, TrustError> {
        Ok(Self {
            providers: add(&self.providers, provider_id, key_id, public_key)?,
            issuers: self.issuers.clone(),
        })
    }

    pub fn with_issuer_key(
        &self,
        issuer: &str,
        key_id: &str,
        public_key: PublicKey,
    ) -> Result<Self, TrustError> {
        Ok(Self {
            providers: self.providers.clone(),
            issuers: add(&self.issuers, issuer, key_id, public_key)?,
        })
    }

    /// Marks a provider key revoked. Revoking an already revoked key is a no-op.
    pub fn revoke_key(&self, provider_id: &str, key_id: &str) -> Result<Self, TrustError> {
        Ok(Self {
            providers: revoke(&self.providers, provider_id, key_id)?,
            issuers: self.issuers.clone(),
        })
    }

    pub fn revoke_issuer_key(&self, issuer: &str, key_id: &str) -> Result<Self, TrustError> {
        Ok(Self {
            providers: self.providers.clone(),
            issuers: revoke(&self.issuers, issuer, key_id)?,
        })
    }

    /// Active provider key, or the reason it cannot be used.
    pub fn provider_key(&self, provider_id: &str, key_id: &str) -> Result<&PublicKey, InvalidReason> {
        resolve(&self.providers, provider_id, key_id, InvalidReason::UnknownProvider)
    }

    /// Active issuer key, or the reason it cannot be used.
    pub fn issuer_key(&self, issuer: &str, key_id: &str) -> Result<&PublicKey, InvalidReason> {
        resolve(&self.issuers, issuer, key_id, InvalidReason::UnknownProvider)
    }

    /// Union of two stores; `other` wins on conflicting key ids.
    pub fn merged(&self, other: &TrustStore) -> Self {
        fn merge(
            a: &BTreeMap<String, Vec<TrustedKey>>,
            b: &BTreeMap<String, Vec<TrustedKey>>,
        ) -> BTreeMap<String, Vec<TrustedKey>> {
            let mut out = a.clone();
            for (owner, keys) in b {
                let entry = out.entry(owner.clone()).or_default();
                for k in keys {
                    entry.retain(|e| e.key_id != k.key_id);
                    entry.push(k.clone());
                }
            }
            out
        }
        Self {
            providers: merge(&self.providers, &other.providers),
            issuers: merge(&self.issuers, &other.issuers),
        }
    }

    /// `(owner, key_id)` of every revoked provider or issuer key.
    pub fn revoked_keys(&self) -> Vec<(String, String)> {
        self.providers
            .iter()
            .chain(&self.issuers)
            .flat_map(|(owner, keys)| {
                keys.iter()
                    .filter(|k| k.status == KeyStatus::Revoked)
                    .map(move |k| (owner.clone(), k.key_id.clone()))
            })
            .collect()
    }

    /// Checks that key ids are unique per owner (used after loading a file).
    pub fn validate(&self) -> Result<(), TrustError> {
        for (owner, keys) in self.providers.iter().chain(&self.issuers) {
            let mut seen = BTreeSet::new();
            for k in keys {
                if !seen.insert(&k.key_id) {
                    return Err(TrustError::DuplicateKey {
                        owner: owner.clone(),
                        key_id: k.key_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

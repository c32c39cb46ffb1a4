//! Message signing seam.
//!
//! Real deployments would use registered validator keys; the simulation
//! needs only a pluggable interface plus a keyed default so that
//! signature checks are real (tampered payloads fail) without any key
//! distribution machinery.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::rng::derive_seed;

/// Signs and verifies validator messages.
pub trait MessageSigner: Send + Sync {
    /// Returns the signature, or `None` if `signer_id` has no key.
    fn sign(&self, signer_id: &str, payload: &[u8]) -> Option<Vec<u8>>;
    fn verify(&self, signer_id: &str, payload: &[u8], signature: &[u8]) -> bool;
}

/// Keyed signer: each signature is sha256(key || payload) with per-identity
/// keys derived from a master seed.
pub struct KeyedSigner {
    keys: BTreeMap<String, [u8; 32]>,
}

impl KeyedSigner {
    pub fn new(master_seed: u64, identities: impl IntoIterator<Item = String>) -> Self {
        let keys = identities
            .into_iter()
            .map(|id| {
                let key = derive_seed(master_seed, &["signer-key", &id]);
                (id, key)
            })
            .collect();
        Self { keys }
    }

    fn digest(key: &[u8; 32], payload: &[u8]) -> Vec<u8> {
        let mut hasher = Sha256::new();
        hasher.update(key);
        hasher.update(payload);
        hasher.finalize().to_vec()
    }
}

impl MessageSigner for KeyedSigner {
    fn sign(&self, signer_id: &str, payload: &[u8]) -> Option<Vec<u8>> {
        self.keys.get(signer_id).map(|key| Self::digest(key, payload))
    }

    fn verify(&self, signer_id: &str, payload: &[u8], signature: &[u8]) -> bool {
        match self.keys.get(signer_id) {
            Some(key) => Self::digest(key, payload) == signature,
            None => false,
        }
    }
}

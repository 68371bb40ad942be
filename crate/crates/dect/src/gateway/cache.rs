//! Content-addressed response cache: one JSON file per completed request.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Hex SHA-256 content address of a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(pub String);

/// The request identity stored beside each cached response. The prompt is
/// represented by its own hash so entries stay small.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub provider: String,
    pub model: String,
    pub template: String,
    pub prompt_sha256: String,
    pub temperature: f64,
    pub seed: u64,
}

impl Fingerprint {
    pub fn key(&self) -> CacheKey {
        let mut hasher = Sha256::new();
        for part in [
            self.provider.as_str(),
            self.model.as_str(),
            self.template.as_str(),
            self.prompt_sha256.as_str(),
        ] {
            hasher.update(part.as_bytes());
            hasher.update([0x1f]);
        }
        hasher.update(self.temperature.to_bits().to_le_bytes());
        hasher.update(self.seed.to_le_bytes());
        CacheKey(hex::encode(hasher.finalize()))
    }
}

pub fn sha256_hex(data: &str) -> String {
    hex::encode(Sha256::digest(data.as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    fingerprint: Fingerprint,
    text: String,
}

/// Directory-backed cache. Writes go through a temp file and an atomic rename
/// so concurrent writers of the same key cannot interleave.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.0))
    }

    /// Returns the cached response text, verifying that the stored fingerprint
    /// still hashes to the file's own key.
    pub fn lookup(&self, key: &CacheKey) -> Result<Option<String>, GatewayError> {
        let path = self.entry_path(key);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let entry: CacheEntry = serde_json::from_str(&raw).map_err(|e| GatewayError::CacheCorrupt {
            path: path.display().to_string(),
            detail: format!("invalid JSON: {e}"),
        })?;
        if entry.fingerprint.key() != *key {
            return Err(GatewayError::CacheCorrupt {
                path: path.display().to_string(),
                detail: "fingerprint hash mismatch".to_string(),
            });
        }
        Ok(Some(entry.text))
    }

    pub fn store(&self, key: &CacheKey, fingerprint: Fingerprint, text: &str) -> Result<(), GatewayError> {
        let entry = CacheEntry {
            fingerprint,
            text: text.to_string(),
        };
        let json = serde_json::to_string(&entry).expect("cache entry serializes");
        let final_path = self.entry_path(key);
        let tmp_path = self.dir.join(format!(
            ".{}.{}.tmp",
            key.0,
            std::process::id()
        ));
        fs::write(&tmp_path, json)?;
        fs::rename(&tmp_path, &final_path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fp() -> Fingerprint {
        Fingerprint {
            provider: "mock".into(),
            model: "mock-1".into(),
            template: "ATOM_DISTILL".into(),
            prompt_sha256: sha256_hex("a prompt"),
            temperature: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn lookup_roundtrip_and_corruption_detection() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = fp().key();
        assert!(cache.lookup(&key).unwrap().is_none());
        cache.store(&key, fp(), "- atom one").unwrap();
        assert_eq!(cache.lookup(&key).unwrap().unwrap(), "- atom one");

        // Tamper with the stored fingerprint: lookup must flag corruption.
        let path = dir.path().join(format!("{}.json", key.0));
        let mut entry: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        entry["fingerprint"]["seed"] = serde_json::json!(99);
        std::fs::write(&path, entry.to_string()).unwrap();
        assert!(matches!(
            cache.lookup(&key),
            Err(GatewayError::CacheCorrupt { .. })
        ));
    }

    proptest! {
        // Changing any single fingerprint component changes the content address.
        #[test]
        fn key_depends_on_every_component(
            provider in "[a-z]{1,8}",
            model in "[a-z0-9-]{1,8}",
            prompt in ".{0,40}",
            temperature in 0.0f64..4.0,
            seed in proptest::num::u64::ANY,
        ) {
            let base = Fingerprint {
                provider,
                model,
                template: "LSLP_GENERATE".into(),
                prompt_sha256: sha256_hex(&prompt),
                temperature,
                seed,
            };
            let key = base.key();

            let mut other = base.clone();
            other.provider.push('x');
            prop_assert_ne!(base.key(), other.key());

            let mut other = base.clone();
            other.model.push('y');
            prop_assert_ne!(key.clone(), other.key());

            let mut other = base.clone();
            other.template = "MIMIC_GENERATE".into();
            prop_assert_ne!(key.clone(), other.key());

            let mut other = base.clone();
            other.prompt_sha256 = sha256_hex(&format!("{prompt}!"));
            prop_assert_ne!(key.clone(), other.key());

            let mut other = base.clone();
            other.temperature += 0.5;
            prop_assert_ne!(key.clone(), other.key());

            let mut other = base.clone();
            other.seed = other.seed.wrapping_add(1);
            prop_assert_ne!(key.clone(), other.key());
        }
    }
}

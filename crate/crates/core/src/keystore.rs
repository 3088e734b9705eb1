//! Demo keystore: plaintext identity seeds in `<dir>/<label>.seed`.
//!
//! INSECURE. Seeds are stored unencrypted for desk-scale demos only.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::crypto::{generate_identity, Address, Identity};

const BANNER: &str = "# INSECURE demo key. Never use for real patient data.\n";

#[derive(Debug, thiserror::Error)]
pub enum KeystoreError {
    #[error("keystore io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed key file {0}")]
    Malformed(PathBuf),
    #[error("invalid key label {0:?}")]
    BadLabel(String),
}

#[derive(Clone, Debug)]
struct Entry {
    label: String,
    seed: Vec<u8>,
    identity: Identity,
}

/// Identities by address, optionally backed by a directory.
#[derive(Clone, Debug, Default)]
pub struct Keystore {
    dir: Option<PathBuf>,
    entries: BTreeMap<Address, Entry>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> KeystoreError + '_ {
    move |source| KeystoreError::Io { path: path.to_path_buf(), source }
}

impl Keystore {
    pub fn in_memory() -> Keystore {
        Keystore::default()
    }

    /// Loads every `*.seed` file in `dir`, creating the directory if needed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Keystore, KeystoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut ks = Keystore { dir: Some(dir.clone()), entries: BTreeMap::new() };
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "seed"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let line = text.lines().find(|l| !l.starts_with('#') && !l.trim().is_empty());
            let seed = line
                .and_then(|l| hex::decode(l.trim()).ok())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| KeystoreError::Malformed(path.clone()))?;
            let label = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            ks.insert_entry(label, seed);
        }
        Ok(ks)
    }

    fn insert_entry(&mut self, label: String, seed: Vec<u8>) -> Identity {
        let identity = generate_identity(&seed).expect("seed checked non-empty");
        self.entries.insert(identity.address(), Entry { label, seed, identity: identity.clone() });
        identity
    }

    /// Returns the identity stored under `label`, deriving and persisting it
    /// from `seed` when absent.
    pub fn get_or_create(&mut self, label: &str, seed: &[u8]) -> Result<Identity, KeystoreError> {
        if let Some(e) = self.entries.values().find(|e| e.label == label) {
            return Ok(e.identity.clone());
        }
        if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(KeystoreError::BadLabel(label.to_string()));
        }
        if seed.is_empty() {
            return Err(KeystoreError::BadLabel(label.to_string()));
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{label}.seed"));
            fs::write(&path, format!("{BANNER}{}\n", hex::encode(seed))).map_err(io_err(&path))?;
        }
        Ok(self.insert_entry(label.to_string(), seed.to_vec()))
    }

    /// Adds a random identity under `label`.
    pub fn create_random(&mut self, label: &str) -> Result<Identity, KeystoreError> {
        let seed: [u8; 32] = rand::random();
        self.get_or_create(label, &seed)
    }

    /// Registers an identity that is never written to disk.
    pub fn insert_ephemeral(&mut self, label: &str, identity: Identity) {
        self.entries.insert(identity.address(), Entry { label: label.to_string(), seed: Vec::new(), identity });
    }

    pub fn get(&self, address: &Address) -> Option<&Identity> {
        self.entries.get(address).map(|e| &e.identity)
    }

    pub fn by_label(&self, label: &str) -> Option<&Identity> {
        self.entries.values().find(|e| e.label == label).map(|e| &e.identity)
    }

    pub fn labels(&self) -> impl Iterator<Item = (&str, Address)> {
        self.entries.values().map(|e| (e.label.as_str(), e.identity.address()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_seed(&self, address: &Address) -> bool {
        self.entries.get(address).is_some_and(|e| !e.seed.is_empty())
    }
}

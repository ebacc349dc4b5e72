//! Untrusted persistence for sealed model containers.
//!
//! Nothing here touches key material: storage only frames bytes. Integrity
//! and rollback are enforced by the AEAD in [`crate::crypto`].
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OMG1"
//! 4       4     model_version  u32
//! 8       16    nonce
//! 24      12    iv
//! 36      4     ciphertext length N  u32
//! 40      N     ciphertext
//! 40+N    16    tag
//! ```
//!
//! Bytes 0..24 are the AEAD associated data.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::crypto::{Nonce, IV_LEN, NONCE_LEN, TAG_LEN};

pub const CONTAINER_MAGIC: &[u8; 4] = b"OMG1";
pub const HEADER_LEN: usize = 4 + 4 + NONCE_LEN + IV_LEN + 4;
/// Storage slot the enclave uses for its sealed model.
pub const MODEL_SLOT: &str = "model.omg";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad container magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("container truncated: {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after container")]
    Trailing(usize),
    #[error("no sealed container in storage slot {0:?}")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Associated data of a container: what rollback detection is keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerMeta {
    pub model_version: u32,
    pub nonce: Nonce,
}

impl ContainerMeta {
    pub fn associated_data(&self) -> [u8; 24] {
        let mut ad = [0u8; 24];
        ad[..4].copy_from_slice(CONTAINER_MAGIC);
        ad[4..8].copy_from_slice(&self.model_version.to_le_bytes());
        ad[8..].copy_from_slice(self.nonce.as_bytes());
        ad
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedModelContainer {
    pub meta: ContainerMeta,
    pub iv: [u8; IV_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl SealedModelContainer {
    pub fn model_version(&self) -> u32 {
        self.meta.model_version
    }

    pub fn nonce(&self) -> Nonce {
        self.meta.nonce
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(&self.meta.associated_data());
        out.extend_from_slice(&self.iv);
        let len = u32::try_from(self.ciphertext.len()).expect("model larger than 4 GiB");
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    /// Validates magic and lengths only.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 4 {
            return Err(StoreError::Truncated("magic"));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != CONTAINER_MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::Truncated("header"));
        }
        let model_version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let nonce = Nonce(bytes[8..24].try_into().unwrap());
        let iv = bytes[24..36].try_into().unwrap();
        let ct_len = u32::from_le_bytes(bytes[36..40].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() < ct_len {
            return Err(StoreError::Truncated("ciphertext"));
        }
        if body.len() < ct_len + TAG_LEN {
            return Err(StoreError::Truncated("tag"));
        }
        if body.len() > ct_len + TAG_LEN {
            return Err(StoreError::Trailing(body.len() - ct_len - TAG_LEN));
        }
        Ok(Self {
            meta: ContainerMeta { model_version, nonce },
            iv,
            ciphertext: body[..ct_len].to_vec(),
            tag: body[ct_len..].try_into().unwrap(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("rollback detected: container has version {found_version} / nonce {found_nonce}, expected version {expected_version} / nonce {expected_nonce}")]
pub struct RollbackDetected {
    pub found_version: u32,
    pub found_nonce: Nonce,
    pub expected_version: u32,
    pub expected_nonce: Nonce,
}

/// Cheap pre-decryption check of the unauthenticated header. Advisory only:
/// a forged header passes here and still fails to unseal.
pub fn check_freshness(
    c: &SealedModelContainer,
    expected_nonce: &Nonce,
    expected_version: u32,
) -> Result<(), RollbackDetected> {
    if c.meta.nonce == *expected_nonce && c.meta.model_version == expected_version {
        Ok(())
    } else {
        Err(RollbackDetected {
            found_version: c.meta.model_version,
            found_nonce: c.meta.nonce,
            expected_version,
            expected_nonce: *expected_nonce,
        })
    }
}

/// Whole-file atomic write: temp file in the same directory, then rename.
pub fn write_container(path: &Path, c: &SealedModelContainer) -> Result<(), StoreError> {
    write_atomic(path, &c.to_bytes())?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<SealedModelContainer, StoreError> {
    SealedModelContainer::from_bytes(&fs::read(path)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Byte-level storage the host OS controls. Implementations must expose
/// everything they hold through [`UntrustedStorage::dump`] so tests can scan
/// it the way an adversary would.
pub trait UntrustedStorage: Send {
    fn put(&mut self, slot: &str, bytes: &[u8]) -> io::Result<()>;
    fn get(&self, slot: &str) -> io::Result<Option<Vec<u8>>>;
    fn dump(&self) -> io::Result<Vec<(String, Vec<u8>)>>;
}

/// Directory-backed storage; one file per slot.
#[derive(Debug, Clone)]
pub struct DirStorage {
    root: PathBuf,
}

impl DirStorage {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path_of(&self, slot: &str) -> PathBuf {
        self.root.join(slot)
    }
}

impl UntrustedStorage for DirStorage {
    fn put(&mut self, slot: &str, bytes: &[u8]) -> io::Result<()> {
        write_atomic(&self.path_of(slot), bytes)
    }

    fn get(&self, slot: &str) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.path_of(slot)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn dump(&self) -> io::Result<Vec<(String, Vec<u8>)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                out.push((entry.file_name().to_string_lossy().into_owned(), fs::read(entry.path())?));
            }
        }
        out.sort();
        Ok(out)
    }
}

/// In-memory storage. Clones share the same backing map, so a test can keep
/// a handle and play the OS while the enclave host owns another.
#[derive(Debug, Clone, Default)]
pub struct MemStorage {
    slots: Arc<Mutex<BTreeMap<String, Vec<u8>>>>,
}

impl MemStorage {
    pub fn new() -> Self {
        Self::default()
    }
}

impl UntrustedStorage for MemStorage {
    fn put(&mut self, slot: &str, bytes: &[u8]) -> io::Result<()> {
        self.slots.lock().unwrap().insert(slot.to_owned(), bytes.to_vec());
        Ok(())
    }

    fn get(&self, slot: &str) -> io::Result<Option<Vec<u8>>> {
        Ok(self.slots.lock().unwrap().get(slot).cloned())
    }

    fn dump(&self) -> io::Result<Vec<(String, Vec<u8>)>> {
        Ok(self.slots.lock().unwrap().iter().map(|(k, v)| (k.clone(), v.clone())).collect())
    }
}

pub fn store_container(storage: &mut dyn UntrustedStorage, c: &SealedModelContainer) -> Result<(), StoreError> {
    storage.put(MODEL_SLOT, &c.to_bytes())?;
    Ok(())
}

pub fn load_container(storage: &dyn UntrustedStorage) -> Result<SealedModelContainer, StoreError> {
    let bytes = storage.get(MODEL_SLOT)?.ok_or_else(|| StoreError::Missing(MODEL_SLOT.into()))?;
    SealedModelContainer::from_bytes(&bytes)
}

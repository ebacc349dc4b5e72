//! On-disk device identity: `platform.key` (hex seed) and `root.cert`.

use std::fs;
use std::path::{Path, PathBuf};

use omg_core::crypto::{derive_enclave_keypair, measure, Certificate, PlatformIdentity};
use omg_core::enclave::Sanctuary;
use omg_core::protocol::EnclavePk;
use rand::rngs::OsRng;

use crate::error::CliError;

pub const KEY_FILE: &str = "platform.key";
pub const CERT_FILE: &str = "root.cert";

pub fn key_path(dir: &Path) -> PathBuf {
    dir.join(KEY_FILE)
}

pub fn cert_path(dir: &Path) -> PathBuf {
    dir.join(CERT_FILE)
}

/// Creates a platform identity in `dir`. `seed` pins it for reproducible setups.
pub fn init(dir: &Path, seed: Option<[u8; 32]>) -> Result<PlatformIdentity, CliError> {
    let identity = match seed {
        Some(s) => PlatformIdentity::from_seed(s),
        None => PlatformIdentity::generate(&mut OsRng)?,
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("create {}", dir.display()), e))?;
    let key = key_path(dir);
    fs::write(&key, hex::encode(identity.seed().as_slice())).map_err(|e| CliError::io(format!("write {}", key.display()), e))?;
    let cert = cert_path(dir);
    fs::write(&cert, identity.cert().to_bytes()).map_err(|e| CliError::io(format!("write {}", cert.display()), e))?;
    Ok(identity)
}

pub fn parse_seed(text: &str) -> Result<[u8; 32], CliError> {
    let bytes = hex::decode(text.trim()).map_err(|e| CliError::Usage(format!("platform seed: {e}")))?;
    bytes.try_into().map_err(|_| CliError::Usage("platform seed must be 32 bytes of hex".into()))
}

pub fn load_identity(dir: &Path) -> Result<PlatformIdentity, CliError> {
    let key = key_path(dir);
    let text = fs::read_to_string(&key).map_err(|e| CliError::io(format!("read {}", key.display()), e))?;
    Ok(PlatformIdentity::from_seed(parse_seed(&text)?))
}

pub fn load_platform(dir: &Path) -> Result<Sanctuary, CliError> {
    load_identity(dir).map(Sanctuary::new)
}

/// Accepts either a platform directory or a certificate file.
pub fn load_root_cert(path: &Path) -> Result<Certificate, CliError> {
    let file = if path.is_dir() { cert_path(path) } else { path.to_path_buf() };
    let bytes = fs::read(&file).map_err(|e| CliError::io(format!("read {}", file.display()), e))?;
    Ok(Certificate::from_bytes(&bytes)?)
}

/// The key pair an enclave built from `image` gets on this platform.
pub fn enclave_pk(identity: &PlatformIdentity, image: &[u8]) -> EnclavePk {
    derive_enclave_keypair(identity, &measure(image)).pk_bytes()
}

pub fn parse_pk(text: &str) -> Result<EnclavePk, CliError> {
    let bytes = hex::decode(text.trim()).map_err(|e| CliError::Usage(format!("enclave public key: {e}")))?;
    bytes.try_into().map_err(|_| CliError::Usage("enclave public key must be 32 bytes of hex".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_roundtrips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let id = init(dir.path(), Some([7; 32])).unwrap();
        let loaded = load_identity(dir.path()).unwrap();
        assert_eq!(loaded.public_key(), id.public_key());
        assert_eq!(load_root_cert(dir.path()).unwrap(), *id.cert());
        assert_eq!(load_root_cert(&cert_path(dir.path())).unwrap(), *id.cert());
    }

    #[test]
    fn bad_seed_is_usage_error() {
        assert!(matches!(parse_seed("abcd"), Err(CliError::Usage(_))));
        assert!(matches!(parse_pk("zz"), Err(CliError::Usage(_))));
    }
}

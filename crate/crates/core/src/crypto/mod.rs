//! Key material, measurement, attestation, key derivation and authenticated
//! encryption.
//!
//! Primitives: SHA-256 for measurements, Ed25519 for certificates and
//! attestation signatures, HKDF-SHA256 for key derivation and AES-256-GCM
//! for sealing. Model keys are wrapped for an enclave by converting its
//! Ed25519 public key to X25519 and running an ephemeral-static
//! Diffie-Hellman exchange (see [`wrap`]).

mod aead;
mod attestation;
mod cert;
pub mod wrap;

use std::fmt;
use std::str::FromStr;

use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

pub use aead::{seal_model, seal_model_with_rng, unseal_model, AeadError, IV_LEN, TAG_LEN};
pub use attestation::{sign_attestation, verify_attestation, AttestationRejection, AttestationReport};
pub use cert::{derive_enclave_keypair, CertRole, Certificate, EnclaveKeyPair, PlatformIdentity, SignatureScheme};
pub use wrap::{unwrap_model_key, wrap_model_key, WrappedKey};

use crate::tlv::TlvError;

pub const MEASUREMENT_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const MODEL_KEY_LEN: usize = 32;

/// HKDF `info` for the model key. Changing it invalidates every sealed container.
pub const MODEL_KEY_INFO: &[u8] = b"OMG-model-key-v1";
const ENCLAVE_KEY_INFO: &[u8] = b"OMG-enclave-keypair-v1";

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("entropy source failed: {0}")]
    Entropy(String),
    #[error("malformed public key ({0} bytes, expected 32)")]
    MalformedPublicKey(usize),
    #[error("public key is not a valid curve point")]
    InvalidPublicKey,
    #[error("malformed encoding: {0}")]
    Encoding(#[from] TlvError),
    #[error("unsupported signature scheme {0}")]
    UnsupportedScheme(u8),
    #[error("unknown certificate role {0}")]
    UnknownRole(u8),
    #[error("key exchange produced a degenerate shared secret")]
    DegenerateSharedSecret,
    #[error(transparent)]
    Aead(#[from] AeadError),
}

/// SHA-256 digest of an enclave's initial memory image.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Measurement(pub [u8; MEASUREMENT_LEN]);

impl Measurement {
    pub fn as_bytes(&self) -> &[u8; MEASUREMENT_LEN] {
        &self.0
    }
}

impl fmt::Debug for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Measurement({})", hex::encode(self.0))
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Measurement {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; MEASUREMENT_LEN];
        hex::decode_to_slice(s.trim(), &mut out)?;
        Ok(Self(out))
    }
}

pub fn measure(code_blob: &[u8]) -> Measurement {
    Measurement(Sha256::digest(code_blob).into())
}

/// Freshness value. Used both as attestation challenge and as the vendor's
/// per-version model-key salt.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Result<Self, CryptoError> {
        let mut n = [0u8; NONCE_LEN];
        rng.try_fill_bytes(&mut n).map_err(|e| CryptoError::Entropy(e.to_string()))?;
        Ok(Self(n))
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", hex::encode(self.0))
    }
}

impl fmt::Display for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// Symmetric model-encryption key bound to one enclave public key and one
/// vendor nonce. Wiped on drop.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct ModelKey([u8; MODEL_KEY_LEN]);

impl ModelKey {
    pub fn from_bytes(bytes: [u8; MODEL_KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; MODEL_KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ModelKey(..)")
    }
}

/// `HKDF-SHA256(ikm = pk, salt = n, info = "OMG-model-key-v1")`.
pub fn derive_model_key(pk: &[u8], n: &Nonce) -> Result<ModelKey, CryptoError> {
    if pk.len() != PUBLIC_KEY_LEN {
        return Err(CryptoError::MalformedPublicKey(pk.len()));
    }
    let hk = Hkdf::<Sha256>::new(Some(n.as_bytes()), pk);
    let mut okm = [0u8; MODEL_KEY_LEN];
    hk.expand(MODEL_KEY_INFO, &mut okm).expect("32 bytes is a valid HKDF-SHA256 length");
    Ok(ModelKey(okm))
}

fn hkdf_32(ikm: &[u8], salt: &[u8], info: &[u8]) -> [u8; 32] {
    let hk = Hkdf::<Sha256>::new(Some(salt), ikm);
    let mut okm = [0u8; 32];
    hk.expand(info, &mut okm).expect("32 bytes is a valid HKDF-SHA256 length");
    okm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    #[test]
    fn empty_blob_matches_published_vector() {
        assert_eq!(
            measure(b"").to_string(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn measurement_deterministic_and_bit_sensitive() {
        let blob: Vec<u8> = (0..=255u8).cycle().take(1000).collect();
        assert_eq!(measure(&blob), measure(&blob));
        let mut flipped = blob.clone();
        flipped[500] ^= 0x01;
        assert_ne!(measure(&blob), measure(&flipped));
    }

    #[test]
    fn measurement_hex_roundtrip() {
        let m = measure(b"abc");
        assert_eq!(m.to_string().parse::<Measurement>().unwrap(), m);
    }

    #[test]
    fn model_key_deterministic_and_nonce_sensitive() {
        let pk = [7u8; 32];
        let n1 = Nonce([1; 16]);
        let n2 = Nonce([2; 16]);
        assert_eq!(derive_model_key(&pk, &n1).unwrap(), derive_model_key(&pk, &n1).unwrap());
        assert_ne!(derive_model_key(&pk, &n1).unwrap(), derive_model_key(&pk, &n2).unwrap());
    }

    #[test]
    fn model_key_rejects_malformed_pk() {
        assert!(matches!(
            derive_model_key(&[0u8; 31], &Nonce::default()),
            Err(CryptoError::MalformedPublicKey(31))
        ));
    }

    #[test]
    fn distinct_random_nonces_give_distinct_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut pk = [0u8; 32];
        rng.fill_bytes(&mut pk);
        let mut seen = HashSet::new();
        for _ in 0..1000 {
            let a = Nonce::random(&mut rng).unwrap();
            let b = Nonce::random(&mut rng).unwrap();
            assert_ne!(a, b);
            let ka = derive_model_key(&pk, &a).unwrap();
            let kb = derive_model_key(&pk, &b).unwrap();
            assert_ne!(ka, kb);
            assert!(seen.insert(*ka.as_bytes()));
            assert!(seen.insert(*kb.as_bytes()));
        }
    }

    #[test]
    fn model_key_debug_hides_material() {
        let k = derive_model_key(&[0u8; 32], &Nonce::default()).unwrap();
        assert_eq!(format!("{k:?}"), "ModelKey(..)");
    }
}

//! Hybrid public-key encryption of a model key to an attested enclave.
//!
//! The enclave's Ed25519 public key is mapped to its X25519 (Montgomery)
//! form. The sender picks an ephemeral scalar `e`, publishes `E = e·G`, and
//! both sides derive `HKDF-SHA256(ikm = e·PK, salt = E ‖ PK_x25519,
//! info = "OMG-key-wrap-v1")` as the AES-256-GCM wrapping key. Only the
//! holder of the enclave secret key can recompute the shared point, so the
//! channel is exactly as strong as the attestation that vouched for PK.

use curve25519_dalek::montgomery::MontgomeryPoint;
use ed25519_dalek::VerifyingKey;
use rand::{CryptoRng, RngCore};
use zeroize::Zeroizing;

use super::aead::{decrypt, encrypt};
use super::{hkdf_32, AeadError, CryptoError, EnclaveKeyPair, ModelKey, IV_LEN, MODEL_KEY_LEN, PUBLIC_KEY_LEN, TAG_LEN};

const WRAP_INFO: &[u8] = b"OMG-key-wrap-v1";

/// `ephemeral_pk (32) ‖ iv (12) ‖ ciphertext (32) ‖ tag (16)` on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedKey {
    pub ephemeral_pk: [u8; 32],
    pub iv: [u8; IV_LEN],
    pub ciphertext: [u8; MODEL_KEY_LEN],
    pub tag: [u8; TAG_LEN],
}

pub const WRAPPED_KEY_LEN: usize = 32 + IV_LEN + MODEL_KEY_LEN + TAG_LEN;

impl WrappedKey {
    pub fn to_bytes(&self) -> [u8; WRAPPED_KEY_LEN] {
        let mut out = [0u8; WRAPPED_KEY_LEN];
        out[..32].copy_from_slice(&self.ephemeral_pk);
        out[32..44].copy_from_slice(&self.iv);
        out[44..76].copy_from_slice(&self.ciphertext);
        out[76..].copy_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != WRAPPED_KEY_LEN {
            return None;
        }
        Some(Self {
            ephemeral_pk: b[..32].try_into().unwrap(),
            iv: b[32..44].try_into().unwrap(),
            ciphertext: b[44..76].try_into().unwrap(),
            tag: b[76..].try_into().unwrap(),
        })
    }
}

fn wrapping_key(shared: &MontgomeryPoint, eph: &[u8; 32], recipient: &[u8; 32]) -> Result<Zeroizing<[u8; 32]>, CryptoError> {
    // Low-order recipient points collapse the shared secret to zero.
    if shared.as_bytes().iter().all(|&b| b == 0) {
        return Err(CryptoError::DegenerateSharedSecret);
    }
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph);
    salt[32..].copy_from_slice(recipient);
    Ok(Zeroizing::new(hkdf_32(shared.as_bytes(), &salt, WRAP_INFO)))
}

/// Encrypts `key` to the enclave public key `enclave_pk`. `aad` binds the
/// wrapped key to its context (nonce, model version, session).
pub fn wrap_model_key<R: RngCore + CryptoRng>(
    enclave_pk: &[u8; PUBLIC_KEY_LEN],
    key: &ModelKey,
    aad: &[u8],
    rng: &mut R,
) -> Result<WrappedKey, CryptoError> {
    let recipient = VerifyingKey::from_bytes(enclave_pk)
        .map_err(|_| CryptoError::InvalidPublicKey)?
        .to_montgomery();
    let mut eph_secret = Zeroizing::new([0u8; 32]);
    let mut iv = [0u8; IV_LEN];
    rng.try_fill_bytes(eph_secret.as_mut()).map_err(|e| CryptoError::Entropy(e.to_string()))?;
    rng.try_fill_bytes(&mut iv).map_err(|e| CryptoError::Entropy(e.to_string()))?;

    let eph_pk = MontgomeryPoint::mul_base_clamped(*eph_secret).to_bytes();
    let shared = recipient.mul_clamped(*eph_secret);
    let wk = wrapping_key(&shared, &eph_pk, recipient.as_bytes())?;
    let (ct, tag) = encrypt(&wk, &iv, aad, key.as_bytes());
    Ok(WrappedKey {
        ephemeral_pk: eph_pk,
        iv,
        ciphertext: ct.try_into().expect("GCM preserves length"),
        tag,
    })
}

pub fn unwrap_model_key(kp: &EnclaveKeyPair, wrapped: &WrappedKey, aad: &[u8]) -> Result<ModelKey, CryptoError> {
    let own = kp.signing_key().verifying_key().to_montgomery();
    let scalar = Zeroizing::new(kp.signing_key().to_scalar_bytes());
    let shared = MontgomeryPoint(wrapped.ephemeral_pk).mul_clamped(*scalar);
    let wk = wrapping_key(&shared, &wrapped.ephemeral_pk, own.as_bytes())?;
    let pt = Zeroizing::new(decrypt(&wk, &wrapped.iv, aad, &wrapped.ciphertext, &wrapped.tag)?);
    let bytes: [u8; MODEL_KEY_LEN] = pt.as_slice().try_into().map_err(|_| AeadError::AuthenticationFailed)?;
    Ok(ModelKey::from_bytes(bytes))
}

use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes256Gcm, KeyInit, Nonce as GcmNonce, Tag};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use super::{CryptoError, ModelKey};
use crate::modelstore::{ContainerMeta, SealedModelContainer};

pub const IV_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AeadError {
    #[error("authentication failed (tampered data, wrong key or stale nonce)")]
    AuthenticationFailed,
}

pub(crate) fn encrypt(
    key: &[u8; 32],
    iv: &[u8; IV_LEN],
    aad: &[u8],
    plaintext: &[u8],
) -> (Vec<u8>, [u8; TAG_LEN]) {
    let cipher = Aes256Gcm::new(key.into());
    let mut buf = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(GcmNonce::from_slice(iv), aad, &mut buf)
        .expect("payload within AES-GCM length limit");
    (buf, tag.into())
}

pub(crate) fn decrypt(
    key: &[u8; 32],
    iv: &[u8; IV_LEN],
    aad: &[u8],
    ciphertext: &[u8],
    tag: &[u8; TAG_LEN],
) -> Result<Vec<u8>, AeadError> {
    let cipher = Aes256Gcm::new(key.into());
    let mut buf = ciphertext.to_vec();
    cipher
        .decrypt_in_place_detached(GcmNonce::from_slice(iv), aad, &mut buf, Tag::from_slice(tag))
        .map_err(|_| AeadError::AuthenticationFailed)?;
    Ok(buf)
}

/// Seals `model` under `k` with a fresh random IV from the OS.
pub fn seal_model(k: &ModelKey, model: &[u8], meta: ContainerMeta) -> Result<SealedModelContainer, CryptoError> {
    seal_model_with_rng(k, model, meta, &mut OsRng)
}

/// As [`seal_model`], drawing the IV from `rng`. The container header
/// (magic, version, nonce) is bound as associated data.
pub fn seal_model_with_rng<R: RngCore + CryptoRng>(
    k: &ModelKey,
    model: &[u8],
    meta: ContainerMeta,
    rng: &mut R,
) -> Result<SealedModelContainer, CryptoError> {
    let mut iv = [0u8; IV_LEN];
    rng.try_fill_bytes(&mut iv).map_err(|e| CryptoError::Entropy(e.to_string()))?;
    let (ciphertext, tag) = encrypt(k.as_bytes(), &iv, &meta.associated_data(), model);
    Ok(SealedModelContainer { meta, iv, ciphertext, tag })
}

pub fn unseal_model(k: &ModelKey, sealed: &SealedModelContainer) -> Result<Vec<u8>, AeadError> {
    decrypt(
        k.as_bytes(),
        &sealed.iv,
        &sealed.meta.associated_data(),
        &sealed.ciphertext,
        &sealed.tag,
    )
}

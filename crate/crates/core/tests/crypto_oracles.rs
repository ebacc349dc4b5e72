mod oracle;

use hkdf::Hkdf;
use omg_core::crypto::{derive_model_key, seal_model_with_rng, unseal_model, Nonce};
use omg_core::modelstore::{check_freshness, ContainerMeta, SealedModelContainer};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::Sha256;

// RFC 5869 appendix A.1.
const RFC_IKM: [u8; 22] = [0x0b; 22];
const RFC_SALT: [u8; 13] = [0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c];
const RFC_INFO: [u8; 10] = [0xf0, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9];
const RFC_OKM: &str = "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865";

#[test]
fn oracle_and_hkdf_crate_reproduce_rfc_vector() {
    assert_eq!(hex::encode(oracle::hkdf_sha256(&RFC_IKM, &RFC_SALT, &RFC_INFO, 42)), RFC_OKM);
    let mut okm = [0u8; 42];
    Hkdf::<Sha256>::new(Some(&RFC_SALT), &RFC_IKM).expand(&RFC_INFO, &mut okm).unwrap();
    assert_eq!(hex::encode(okm), RFC_OKM);
}

#[test]
fn model_key_is_hkdf_of_pk_salted_with_nonce() {
    for seed in 0u8..8 {
        let pk = [seed.wrapping_mul(37); 32];
        let n = Nonce([seed ^ 0x5A; 16]);
        let k = derive_model_key(&pk, &n).unwrap();
        assert_eq!(k.as_bytes().to_vec(), oracle::hkdf_sha256(&pk, &n.0, b"OMG-model-key-v1", 32));
    }
}

fn small_sealed() -> (omg_core::crypto::ModelKey, Vec<u8>) {
    let key = derive_model_key(&[3; 32], &Nonce([9; 16])).unwrap();
    let meta = ContainerMeta { model_version: 4, nonce: Nonce([9; 16]) };
    let model: Vec<u8> = (0..120u8).collect();
    let sealed = seal_model_with_rng(&key, &model, meta, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    (key, sealed.to_bytes())
}

#[test]
fn every_single_byte_mutation_fails_to_unseal() {
    let (key, bytes) = small_sealed();
    assert!(bytes.len() <= 256, "{} bytes", bytes.len());
    let honest = SealedModelContainer::from_bytes(&bytes).unwrap();
    assert_eq!(unseal_model(&key, &honest).unwrap(), (0..120u8).collect::<Vec<_>>());
    let mut attempts = 0;
    for pos in 0..bytes.len() {
        for delta in 1..=255u8 {
            let mut m = bytes.clone();
            m[pos] ^= delta;
            attempts += 1;
            if let Ok(c) = SealedModelContainer::from_bytes(&m) {
                assert!(unseal_model(&key, &c).is_err(), "mutation at {pos} by {delta:#04x} unsealed");
            }
        }
    }
    assert_eq!(attempts, bytes.len() * 255);
}

#[test]
fn old_container_does_not_open_under_the_rotated_key() {
    let pk = [5u8; 32];
    let (n_old, n_new) = (Nonce([1; 16]), Nonce([2; 16]));
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let old_key = derive_model_key(&pk, &n_old).unwrap();
    let new_key = derive_model_key(&pk, &n_new).unwrap();
    let old = seal_model_with_rng(&old_key, b"model v1", ContainerMeta { model_version: 1, nonce: n_old }, &mut rng).unwrap();
    assert!(unseal_model(&new_key, &old).is_err());
    assert!(check_freshness(&old, &n_new, 2).is_err());
    // Relabelling the old container with the new nonce breaks its tag instead.
    let mut relabelled = old.clone();
    relabelled.meta = ContainerMeta { model_version: 2, nonce: n_new };
    assert!(check_freshness(&relabelled, &n_new, 2).is_ok());
    assert!(unseal_model(&new_key, &relabelled).is_err());
}

// Computed independently with Python's `cryptography` package (HKDF + AESGCM).
const KAT_KEY: &str = "b6aec1c3fda23dce7717b3203d03e1fb995d4e5c61514850b0dd6beb531007c7";
const KAT_CONTAINER: &str = "4f4d473101000000222222222222222222222222222222223333333333333333333333330c00000066ca13dc7c06184da9522c0af5dd4b08b7ded85a71d1e8ce933827af";

#[test]
fn container_known_answer() {
    let n = Nonce([0x22; 16]);
    let k = derive_model_key(&[0x11; 32], &n).unwrap();
    assert_eq!(hex::encode(k.as_bytes()), KAT_KEY);
    let meta = ContainerMeta { model_version: 1, nonce: n };
    let sealed = SealedModelContainer::from_bytes(&hex::decode(KAT_CONTAINER).unwrap()).unwrap();
    assert_eq!(sealed.meta, meta);
    assert_eq!(sealed.iv, [0x33; 12]);
    assert_eq!(unseal_model(&k, &sealed).unwrap(), b"TCV1 example");
    assert_eq!(hex::encode(sealed.to_bytes()), KAT_CONTAINER);
}

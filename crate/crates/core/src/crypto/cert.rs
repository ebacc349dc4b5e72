use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};

use super::{hkdf_32, CryptoError, Measurement, ENCLAVE_KEY_INFO, PUBLIC_KEY_LEN};
use crate::tlv::{TlvReader, TlvWriter};

const T_SCHEME: u8 = 0x01;
const T_ROLE: u8 = 0x02;
const T_SUBJECT: u8 = 0x03;
const T_ISSUER: u8 = 0x04;
const T_MEASUREMENT: u8 = 0x05;
const T_SIGNATURE: u8 = 0x06;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SignatureScheme {
    Ed25519 = 1,
}

impl TryFrom<u8> for SignatureScheme {
    type Error = CryptoError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Self::Ed25519),
            other => Err(CryptoError::UnsupportedScheme(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CertRole {
    Platform = 1,
    Enclave = 2,
}

impl TryFrom<u8> for CertRole {
    type Error = CryptoError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Self::Platform),
            2 => Ok(Self::Enclave),
            other => Err(CryptoError::UnknownRole(other)),
        }
    }
}

/// Self-describing certificate binding a subject key to an issuer key.
///
/// Enclave certificates also carry the measurement the key was derived for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub scheme: SignatureScheme,
    pub role: CertRole,
    pub subject_pk: [u8; PUBLIC_KEY_LEN],
    pub issuer_pk: [u8; PUBLIC_KEY_LEN],
    pub measurement: Option<Measurement>,
    pub signature: [u8; 64],
}

impl Certificate {
    fn write_tbs(&self, w: &mut TlvWriter) {
        w.put_u8(T_SCHEME, self.scheme as u8)
            .put_u8(T_ROLE, self.role as u8)
            .put(T_SUBJECT, &self.subject_pk)
            .put(T_ISSUER, &self.issuer_pk);
        if let Some(m) = &self.measurement {
            w.put(T_MEASUREMENT, m.as_bytes());
        }
    }

    /// The signed portion: every field except the signature.
    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        self.write_tbs(&mut w);
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        self.write_tbs(&mut w);
        w.put(T_SIGNATURE, &self.signature);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = TlvReader::new(bytes);
        let cert = Self::read(&mut r)?;
        r.finish()?;
        Ok(cert)
    }

    pub(crate) fn read(r: &mut TlvReader<'_>) -> Result<Self, CryptoError> {
        let scheme = SignatureScheme::try_from(r.expect_u8(T_SCHEME)?)?;
        let role = CertRole::try_from(r.expect_u8(T_ROLE)?)?;
        let subject_pk = r.expect_array(T_SUBJECT)?;
        let issuer_pk = r.expect_array(T_ISSUER)?;
        let measurement = match r.peek_tag() {
            Some(T_MEASUREMENT) => Some(Measurement(r.expect_array(T_MEASUREMENT)?)),
            _ => None,
        };
        let signature = r.expect_array(T_SIGNATURE)?;
        Ok(Self { scheme, role, subject_pk, issuer_pk, measurement, signature })
    }

    fn sign(mut self, issuer: &SigningKey) -> Self {
        self.issuer_pk = issuer.verifying_key().to_bytes();
        self.signature = issuer.sign(&self.tbs_bytes()).to_bytes();
        self
    }

    /// True when `issuer_pk` names `issuer` and the signature verifies under it.
    pub fn is_signed_by(&self, issuer_pk: &[u8; PUBLIC_KEY_LEN]) -> bool {
        if &self.issuer_pk != issuer_pk {
            return false;
        }
        let Ok(key) = VerifyingKey::from_bytes(issuer_pk) else {
            return false;
        };
        key.verify_strict(&self.tbs_bytes(), &Signature::from_bytes(&self.signature)).is_ok()
    }

    pub fn is_self_signed(&self) -> bool {
        self.subject_pk == self.issuer_pk && self.is_signed_by(&self.subject_pk)
    }
}

/// Device trust root: a self-signed platform certificate and its key.
pub struct PlatformIdentity {
    cert: Certificate,
    signing_key: SigningKey,
}

impl fmt::Debug for PlatformIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlatformIdentity")
            .field("public_key", &hex::encode(self.cert.subject_pk))
            .finish_non_exhaustive()
    }
}

impl PlatformIdentity {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Result<Self, CryptoError> {
        let mut seed = zeroize::Zeroizing::new([0u8; 32]);
        rng.try_fill_bytes(seed.as_mut()).map_err(|e| CryptoError::Entropy(e.to_string()))?;
        Ok(Self::from_seed(*seed))
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing_key = SigningKey::from_bytes(&seed);
        let pk = signing_key.verifying_key().to_bytes();
        let cert = Certificate {
            scheme: SignatureScheme::Ed25519,
            role: CertRole::Platform,
            subject_pk: pk,
            issuer_pk: pk,
            measurement: None,
            signature: [0; 64],
        }
        .sign(&signing_key);
        Self { cert, signing_key }
    }

    pub fn cert(&self) -> &Certificate {
        &self.cert
    }

    pub fn public_key(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.cert.subject_pk
    }

    /// Secret seed, for persisting the identity to a device key file.
    pub fn seed(&self) -> zeroize::Zeroizing<[u8; 32]> {
        zeroize::Zeroizing::new(self.signing_key.to_bytes())
    }
}

/// Per-enclave key pair. The secret half never leaves this struct in
/// serialized form.
pub struct EnclaveKeyPair {
    pk: VerifyingKey,
    sk: SigningKey,
    cert: Certificate,
}

impl fmt::Debug for EnclaveKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnclaveKeyPair")
            .field("pk", &hex::encode(self.pk.as_bytes()))
            .finish_non_exhaustive()
    }
}

impl EnclaveKeyPair {
    pub fn pk_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.pk.to_bytes()
    }

    pub fn cert(&self) -> &Certificate {
        &self.cert
    }

    pub(crate) fn signing_key(&self) -> &SigningKey {
        &self.sk
    }
}

/// Deterministic in (platform secret, measurement): the same enclave image on
/// the same device always gets the same key pair.
pub fn derive_enclave_keypair(platform: &PlatformIdentity, m: &Measurement) -> EnclaveKeyPair {
    let secret = zeroize::Zeroizing::new(hkdf_32(
        &platform.signing_key.to_bytes(),
        m.as_bytes(),
        ENCLAVE_KEY_INFO,
    ));
    let sk = SigningKey::from_bytes(&secret);
    let pk = sk.verifying_key();
    let cert = Certificate {
        scheme: SignatureScheme::Ed25519,
        role: CertRole::Enclave,
        subject_pk: pk.to_bytes(),
        issuer_pk: [0; PUBLIC_KEY_LEN],
        measurement: Some(*m),
        signature: [0; 64],
    }
    .sign(&platform.signing_key);
    EnclaveKeyPair { pk, sk, cert }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::measure;

    #[test]
    fn fixed_seed_is_deterministic() {
        let a = PlatformIdentity::from_seed([3; 32]);
        let b = PlatformIdentity::from_seed([3; 32]);
        assert_eq!(a.cert(), b.cert());
        assert_ne!(a.public_key(), PlatformIdentity::from_seed([4; 32]).public_key());
    }

    #[test]
    fn generate_uses_rng() {
        use rand::SeedableRng;
        let mut r1 = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let mut r2 = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let a = PlatformIdentity::generate(&mut r1).unwrap();
        let b = PlatformIdentity::generate(&mut r2).unwrap();
        assert_eq!(a.public_key(), b.public_key());
        assert_ne!(a.public_key(), PlatformIdentity::generate(&mut r1).unwrap().public_key());
    }

    #[test]
    fn platform_cert_is_self_signed() {
        let p = PlatformIdentity::from_seed([9; 32]);
        assert!(p.cert().is_self_signed());
        let mut forged = p.cert().clone();
        forged.subject_pk[0] ^= 1;
        assert!(!forged.is_self_signed());
    }

    #[test]
    fn enclave_keypair_deterministic_and_chained() {
        let p = PlatformIdentity::from_seed([1; 32]);
        let m1 = measure(b"enclave one");
        let m2 = measure(b"enclave two");
        let a = derive_enclave_keypair(&p, &m1);
        let b = derive_enclave_keypair(&p, &m1);
        let c = derive_enclave_keypair(&p, &m2);
        assert_eq!(a.pk_bytes(), b.pk_bytes());
        assert_ne!(a.pk_bytes(), c.pk_bytes());
        assert!(a.cert().is_signed_by(&p.public_key()));
        assert_eq!(a.cert().measurement, Some(m1));
        let other = PlatformIdentity::from_seed([2; 32]);
        assert!(!a.cert().is_signed_by(&other.public_key()));
    }

    #[test]
    fn cert_encoding_roundtrip() {
        let p = PlatformIdentity::from_seed([1; 32]);
        let kp = derive_enclave_keypair(&p, &measure(b"x"));
        for cert in [p.cert(), kp.cert()] {
            assert_eq!(&Certificate::from_bytes(&cert.to_bytes()).unwrap(), cert);
        }
    }

    #[test]
    fn debug_output_omits_secrets() {
        let p = PlatformIdentity::from_seed([0xAB; 32]);
        let s = format!("{p:?}");
        assert!(!s.contains(&hex::encode([0xABu8; 32])));
    }
}

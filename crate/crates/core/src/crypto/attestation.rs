use ed25519_dalek::{Signature, Signer, VerifyingKey};
use thiserror::Error;

use super::{Certificate, CertRole, CryptoError, EnclaveKeyPair, Measurement, Nonce, PUBLIC_KEY_LEN};
use crate::tlv::{TlvReader, TlvWriter};

const T_MEASUREMENT: u8 = 0x10;
const T_PK: u8 = 0x11;
const T_NONCE: u8 = 0x12;
const T_SIGNATURE: u8 = 0x13;
const T_CERT: u8 = 0x14;

/// Signed statement binding a measurement and an enclave public key to a
/// verifier-chosen nonce. Carries the enclave certificate so a verifier
/// holding only the platform root can check the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReport {
    pub measurement: Measurement,
    pub enclave_pk: [u8; PUBLIC_KEY_LEN],
    pub nonce: Nonce,
    pub signature: [u8; 64],
    pub enclave_cert: Certificate,
}

impl AttestationReport {
    /// `measurement ‖ enclave_pk ‖ nonce`, 80 bytes.
    pub fn signed_payload(&self) -> [u8; 80] {
        payload(&self.measurement, &self.enclave_pk, &self.nonce)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put(T_MEASUREMENT, self.measurement.as_bytes())
            .put(T_PK, &self.enclave_pk)
            .put(T_NONCE, self.nonce.as_bytes())
            .put(T_SIGNATURE, &self.signature)
            .put(T_CERT, &self.enclave_cert.to_bytes());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = TlvReader::new(bytes);
        let measurement = Measurement(r.expect_array(T_MEASUREMENT)?);
        let enclave_pk = r.expect_array(T_PK)?;
        let nonce = Nonce(r.expect_array(T_NONCE)?);
        let signature = r.expect_array(T_SIGNATURE)?;
        let enclave_cert = Certificate::from_bytes(r.expect(T_CERT)?)?;
        r.finish()?;
        Ok(Self { measurement, enclave_pk, nonce, signature, enclave_cert })
    }
}

fn payload(m: &Measurement, pk: &[u8; PUBLIC_KEY_LEN], n: &Nonce) -> [u8; 80] {
    let mut out = [0u8; 80];
    out[..32].copy_from_slice(m.as_bytes());
    out[32..64].copy_from_slice(pk);
    out[64..].copy_from_slice(n.as_bytes());
    out
}

pub fn sign_attestation(kp: &EnclaveKeyPair, m: &Measurement, n: &Nonce) -> AttestationReport {
    let pk = kp.pk_bytes();
    let signature = kp.signing_key().sign(&payload(m, &pk, n)).to_bytes();
    AttestationReport {
        measurement: *m,
        enclave_pk: pk,
        nonce: *n,
        signature,
        enclave_cert: kp.cert().clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AttestationRejection {
    #[error("enclave certificate does not chain to the platform root")]
    BadChain,
    #[error("attestation signature is invalid")]
    BadSignature,
    #[error("measurement does not match the expected enclave image")]
    MeasurementMismatch,
}

/// Accepts iff the enclave certificate chains to `root`, the report signature
/// verifies under the certified key, and the measurement equals `expected`.
/// Checks run in that order; the first failure is reported.
pub fn verify_attestation(
    report: &AttestationReport,
    root: &Certificate,
    expected: &Measurement,
) -> Result<(), AttestationRejection> {
    let cert = &report.enclave_cert;
    let chained = root.role == CertRole::Platform
        && root.is_self_signed()
        && cert.role == CertRole::Enclave
        && cert.subject_pk == report.enclave_pk
        && cert.measurement == Some(report.measurement)
        && cert.is_signed_by(&root.subject_pk);
    if !chained {
        return Err(AttestationRejection::BadChain);
    }

    let key = VerifyingKey::from_bytes(&report.enclave_pk)
        .map_err(|_| AttestationRejection::BadSignature)?;
    key.verify_strict(&report.signed_payload(), &Signature::from_bytes(&report.signature))
        .map_err(|_| AttestationRejection::BadSignature)?;

    if &report.measurement != expected {
        return Err(AttestationRejection::MeasurementMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_enclave_keypair, measure, PlatformIdentity};

    fn fixture() -> (PlatformIdentity, EnclaveKeyPair, Measurement, AttestationReport) {
        let platform = PlatformIdentity::from_seed([42; 32]);
        let m = measure(b"sanctuary app image");
        let kp = derive_enclave_keypair(&platform, &m);
        let report = sign_attestation(&kp, &m, &Nonce([5; 16]));
        (platform, kp, m, report)
    }

    #[test]
    fn roundtrip_accepts() {
        let (platform, _, m, report) = fixture();
        assert_eq!(verify_attestation(&report, platform.cert(), &m), Ok(()));
    }

    #[test]
    fn wrong_expected_measurement_rejected() {
        let (platform, _, _, report) = fixture();
        assert_eq!(
            verify_attestation(&report, platform.cert(), &measure(b"other")),
            Err(AttestationRejection::MeasurementMismatch)
        );
    }

    #[test]
    fn every_single_signature_byte_flip_rejected() {
        let (platform, _, m, report) = fixture();
        for i in 0..64 {
            for bit in 0..8 {
                let mut bad = report.clone();
                bad.signature[i] ^= 1 << bit;
                assert_eq!(
                    verify_attestation(&bad, platform.cert(), &m),
                    Err(AttestationRejection::BadSignature),
                    "byte {i} bit {bit}"
                );
            }
        }
    }

    #[test]
    fn resigned_under_foreign_platform_is_bad_chain() {
        let (platform, _, m, _) = fixture();
        let rogue = PlatformIdentity::from_seed([7; 32]);
        let rogue_kp = derive_enclave_keypair(&rogue, &m);
        let report = sign_attestation(&rogue_kp, &m, &Nonce([5; 16]));
        assert_eq!(
            verify_attestation(&report, platform.cert(), &m),
            Err(AttestationRejection::BadChain)
        );
    }

    #[test]
    fn nonce_and_pk_are_signed() {
        let (platform, _, m, report) = fixture();
        let mut bad = report.clone();
        bad.nonce.0[0] ^= 1;
        assert_eq!(
            verify_attestation(&bad, platform.cert(), &m),
            Err(AttestationRejection::BadSignature)
        );
        let mut bad = report;
        bad.enclave_pk[0] ^= 1;
        assert_eq!(
            verify_attestation(&bad, platform.cert(), &m),
            Err(AttestationRejection::BadChain)
        );
    }

    #[test]
    fn encoding_roundtrip() {
        let (_, _, _, report) = fixture();
        assert_eq!(AttestationReport::from_bytes(&report.to_bytes()).unwrap(), report);
    }
}

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use zeroize::Zeroizing;

use super::message::{DenyReason, MessageBody, ProtocolMessage, Purpose, SessionId, StoredModel};
use super::{key_release_aad, ErrorCode, ProtocolError};
use crate::crypto::{
    derive_model_key, seal_model_with_rng, verify_attestation, wrap_model_key, AttestationRejection, AttestationReport,
    Certificate, Measurement, ModelKey, Nonce, PUBLIC_KEY_LEN,
};
use crate::modelstore::{ContainerMeta, SealedModelContainer};

pub type EnclavePk = [u8; PUBLIC_KEY_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LicenseRecord {
    pub authorized: bool,
    pub current_nonce: Nonce,
    pub model_version: u32,
}

/// One re-sealed container produced by [`VendorState::rotate_model`].
#[derive(Debug, Clone)]
pub struct Rotation {
    pub pk: EnclavePk,
    pub nonce: Nonce,
    pub container: SealedModelContainer,
}

/// The model vendor V. `K_U` is never stored; it is re-derived from the
/// license record whenever it is needed.
pub struct VendorState {
    license_db: BTreeMap<EnclavePk, LicenseRecord>,
    model_plaintext: Zeroizing<Vec<u8>>,
    model_version: u32,
    expected_measurement: Measurement,
    trusted_roots: Vec<Certificate>,
    authorize_new: bool,
    rng: ChaCha20Rng,
}

impl std::fmt::Debug for VendorState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VendorState")
            .field("licenses", &self.license_db.len())
            .field("model_version", &self.model_version)
            .field("expected_measurement", &self.expected_measurement)
            .finish_non_exhaustive()
    }
}

impl VendorState {
    pub fn new(model: Vec<u8>, expected_measurement: Measurement, trusted_root: Certificate) -> Self {
        Self::with_rng(model, expected_measurement, trusted_root, ChaCha20Rng::from_entropy())
    }

    /// Deterministic nonces and IVs, for reproducible tests.
    pub fn with_seed(model: Vec<u8>, expected_measurement: Measurement, trusted_root: Certificate, seed: u64) -> Self {
        Self::with_rng(model, expected_measurement, trusted_root, ChaCha20Rng::seed_from_u64(seed))
    }

    fn with_rng(model: Vec<u8>, expected_measurement: Measurement, trusted_root: Certificate, rng: ChaCha20Rng) -> Self {
        Self {
            license_db: BTreeMap::new(),
            model_plaintext: Zeroizing::new(model),
            model_version: 1,
            expected_measurement,
            trusted_roots: vec![trusted_root],
            authorize_new: true,
            rng,
        }
    }

    /// Whether enclaves registered from now on start with an active license.
    pub fn set_authorize_new(&mut self, yes: bool) {
        self.authorize_new = yes;
    }

    pub fn trust_root(&mut self, root: Certificate) {
        self.trusted_roots.push(root);
    }

    pub fn expected_measurement(&self) -> &Measurement {
        &self.expected_measurement
    }

    pub fn model_version(&self) -> u32 {
        self.model_version
    }

    pub fn license(&self, pk: &EnclavePk) -> Option<&LicenseRecord> {
        self.license_db.get(pk)
    }

    pub fn enclaves(&self) -> impl Iterator<Item = &EnclavePk> {
        self.license_db.keys()
    }

    fn fresh_nonce(&mut self) -> Nonce {
        let mut n = [0u8; 16];
        self.rng.fill_bytes(&mut n);
        Nonce(n)
    }

    /// Accepts a report iff it chains to a trusted platform root and
    /// carries the expected measurement.
    pub fn verify_report(&self, report: &AttestationReport) -> Result<(), AttestationRejection> {
        for root in &self.trusted_roots {
            match verify_attestation(report, root, &self.expected_measurement) {
                Err(AttestationRejection::BadChain) => continue,
                other => return other,
            }
        }
        Err(AttestationRejection::BadChain)
    }

    /// Adds an attested enclave to the license database with a fresh nonce.
    pub fn register(&mut self, pk: EnclavePk) -> LicenseRecord {
        if let Some(rec) = self.license_db.get(&pk) {
            return *rec;
        }
        let rec = LicenseRecord { authorized: self.authorize_new, current_nonce: self.fresh_nonce(), model_version: self.model_version };
        self.license_db.insert(pk, rec);
        rec
    }

    fn model_key(pk: &EnclavePk, rec: &LicenseRecord) -> ModelKey {
        derive_model_key(pk, &rec.current_nonce).expect("32-byte pk")
    }

    /// The model sealed for `pk` under its current nonce.
    pub fn provision(&mut self, pk: &EnclavePk) -> Result<SealedModelContainer, ProtocolError> {
        let rec = *self.license_db.get(pk).ok_or(ProtocolError::UnknownEnclave)?;
        let key = Self::model_key(pk, &rec);
        let meta = ContainerMeta { model_version: rec.model_version, nonce: rec.current_nonce };
        Ok(seal_model_with_rng(&key, &self.model_plaintext, meta, &mut self.rng)?)
    }

    /// `KEY_RELEASE` with `K_U` encrypted to `pk`, or `KEY_DENIED`.
    pub fn authorize(&mut self, pk: &EnclavePk, session: SessionId) -> Result<MessageBody, ProtocolError> {
        let rec = *self.license_db.get(pk).ok_or(ProtocolError::UnknownEnclave)?;
        if !rec.authorized {
            return Ok(MessageBody::KeyDenied { reason: DenyReason::Revoked });
        }
        let key = Self::model_key(pk, &rec);
        let aad = key_release_aad(session, &rec.current_nonce, rec.model_version);
        let wrapped = wrap_model_key(pk, &key, &aad, &mut self.rng)?;
        Ok(MessageBody::KeyRelease { wrapped, nonce: rec.current_nonce, version: rec.model_version })
    }

    pub fn revoke(&mut self, pk: &EnclavePk) -> Result<(), ProtocolError> {
        self.set_authorized(pk, false)
    }

    pub fn grant(&mut self, pk: &EnclavePk) -> Result<(), ProtocolError> {
        self.set_authorized(pk, true)
    }

    fn set_authorized(&mut self, pk: &EnclavePk, authorized: bool) -> Result<(), ProtocolError> {
        let rec = self.license_db.get_mut(pk).ok_or(ProtocolError::UnknownEnclave)?;
        rec.authorized = authorized;
        Ok(())
    }

    /// Replaces the model, bumps the version and gives every licensed enclave
    /// a fresh nonce, so every earlier container becomes undecryptable.
    pub fn rotate_model(&mut self, new_model: Vec<u8>) -> Result<Vec<Rotation>, ProtocolError> {
        self.model_plaintext = Zeroizing::new(new_model);
        self.model_version += 1;
        let pks: Vec<EnclavePk> = self.license_db.keys().copied().collect();
        let mut out = Vec::with_capacity(pks.len());
        for pk in pks {
            let nonce = self.fresh_nonce();
            let version = self.model_version;
            let rec = self.license_db.get_mut(&pk).expect("listed");
            rec.current_nonce = nonce;
            rec.model_version = version;
            out.push(Rotation { pk, nonce, container: self.provision(&pk)? });
        }
        Ok(out)
    }

    fn error(session: SessionId, code: ErrorCode, detail: impl Into<String>) -> ProtocolMessage {
        ProtocolMessage::new(session, MessageBody::Error { code: code as u16, detail: detail.into() })
    }

    /// Advances one vendor-side session by one incoming message.
    pub fn handle(&mut self, session: &mut VendorSession, msg: &ProtocolMessage) -> ProtocolMessage {
        let sid = msg.header.session;
        if let MessageBody::LicenseControl { pk, authorized } = &msg.body {
            return match self.set_authorized(pk, *authorized) {
                Ok(()) => ProtocolMessage::new(sid, MessageBody::Ack),
                Err(e) => Self::error(sid, ErrorCode::from(&e), e.to_string()),
            };
        }
        let state = std::mem::replace(&mut session.state, SessionState::Done);
        match (state, &msg.body) {
            (SessionState::AwaitHello, MessageBody::Hello { purpose, stored }) => {
                session.id = Some(sid);
                let challenge = self.fresh_nonce();
                session.state = SessionState::AwaitReport { purpose: *purpose, stored: stored.clone(), challenge };
                ProtocolMessage::new(sid, MessageBody::Challenge { nonce: challenge })
            }
            (SessionState::AwaitReport { purpose, stored, challenge }, MessageBody::AttestReport { report }) => {
                if session.id != Some(sid) {
                    return Self::error(sid, ErrorCode::Protocol, "session id changed mid-session");
                }
                if report.nonce != challenge {
                    return Self::error(sid, ErrorCode::AttestationRejected, "report does not answer the challenge");
                }
                if let Err(why) = self.verify_report(report) {
                    log::info!("session={sid} attestation rejected: {why}");
                    return Self::error(sid, ErrorCode::AttestationRejected, why.to_string());
                }
                let pk = report.enclave_pk;
                let body = match purpose {
                    Purpose::Provision => {
                        let rec = self.register(pk);
                        let current = StoredModel { version: rec.model_version, nonce: rec.current_nonce };
                        if stored.as_ref() == Some(&current) {
                            Ok(MessageBody::UpToDate { version: rec.model_version, nonce: rec.current_nonce })
                        } else {
                            self.provision(&pk).map(|container| MessageBody::ProvisionModel { container })
                        }
                    }
                    Purpose::Initialize => self.authorize(&pk, sid),
                };
                match body {
                    Ok(body) => ProtocolMessage::new(sid, body),
                    Err(e) => Self::error(sid, ErrorCode::from(&e), e.to_string()),
                }
            }
            (state, _) => {
                session.state = state;
                Self::error(sid, ErrorCode::Protocol, format!("unexpected {} in this session state", msg.kind()))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
enum SessionState {
    #[default]
    AwaitHello,
    AwaitReport {
        purpose: Purpose,
        stored: Option<StoredModel>,
        challenge: Nonce,
    },
    Done,
}

/// Per-connection vendor state: `Hello → Challenge → AttestReport → answer`.
#[derive(Debug, Clone, Default)]
pub struct VendorSession {
    id: Option<SessionId>,
    state: SessionState,
}

impl VendorSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_done(&self) -> bool {
        self.state == SessionState::Done
    }
}

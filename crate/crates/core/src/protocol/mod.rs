//! The three-phase provisioning protocol between the model vendor V, the
//! enclave and the user U.
//!
//! ```text
//! preparation     E→U  boot report (U verifies, verdict logged)
//!                 E→V  HELLO{provision, stored?}   V→E  CHALLENGE{c}
//!                 E→V  ATTEST_REPORT(c)            V→E  PROVISION_MODEL | UP_TO_DATE | ERROR
//! initialization  E→V  HELLO{initialize}           V→E  CHALLENGE{c}
//!                 E→V  ATTEST_REPORT(c)            V→E  KEY_RELEASE | KEY_DENIED | ERROR
//! operation       U→E  QUERY                       E→U  RESULT | ERROR
//! ```
//!
//! `K_U` travels wrapped to the attested enclave key, so the channel is only
//! as strong as the attestation that produced that key.

mod app;
mod message;
mod net;
mod transcript;
mod vendor;

use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::audio::{read_wav_file, AudioClip, AudioError};
use crate::crypto::{verify_attestation, AttestationRejection, AttestationReport, Certificate, CryptoError, Measurement, Nonce};
use crate::enclave::{EnclaveError, EnclaveInstance, EnclaveState, RegionKind, Sanctuary, SimulatedPeripheral};
use crate::inference::{Classification, InferenceError};
use crate::modelstore::{RollbackDetected, StoreError, UntrustedStorage};

pub use app::{HostRequest, HostResponse, OmgApp, Phase, QueryInput};
pub use message::{
    frame, read_frame, recv, send, write_frame, CodecError, DenyReason, Header, MessageBody, MessageKind, ProtocolMessage,
    Purpose, QuerySource, SessionId, StoredModel, MAX_FRAME_LEN, PROTOCOL_VERSION,
};
pub use net::{query_enclave, set_license, serve_queries, TcpLink, VendorServer};
pub use transcript::{Direction, SessionTranscript, TranscriptEntry, LINK_LATENCY_US};
pub use vendor::{EnclavePk, LicenseRecord, Rotation, VendorSession, VendorState};

/// Codes carried in `ERROR` messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    Protocol = 1,
    Codec = 2,
    AttestationRejected = 3,
    UnknownEnclave = 4,
    LicenseDenied = 5,
    Rollback = 6,
    UnsealFailed = 7,
    WrongPhase = 8,
    EmptyPeripheral = 9,
    Audio = 10,
    Internal = 11,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("attestation rejected: {0}")]
    AttestationRejected(String),
    #[error("license denied: {0}")]
    LicenseDenied(DenyReason),
    #[error("unknown enclave")]
    UnknownEnclave,
    #[error(transparent)]
    Rollback(#[from] RollbackDetected),
    #[error("sealed model failed to authenticate (tampered or rolled back)")]
    UnsealFailed,
    #[error("{op} not allowed in phase {phase}")]
    WrongPhase { op: &'static str, phase: Phase },
    #[error("peripheral has no pending input")]
    EmptyPeripheral,
    #[error("expected {expected}, got {found}")]
    Unexpected { expected: &'static str, found: MessageKind },
    #[error("peer error {code}: {detail}")]
    Remote { code: u16, detail: String },
    #[error("message dropped in transit")]
    Dropped,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Enclave(EnclaveError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Model(#[from] InferenceError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

impl From<&ProtocolError> for ErrorCode {
    fn from(e: &ProtocolError) -> Self {
        match e {
            ProtocolError::AttestationRejected(_) => Self::AttestationRejected,
            ProtocolError::LicenseDenied(_) => Self::LicenseDenied,
            ProtocolError::UnknownEnclave => Self::UnknownEnclave,
            ProtocolError::Rollback(_) => Self::Rollback,
            ProtocolError::UnsealFailed => Self::UnsealFailed,
            ProtocolError::WrongPhase { .. } => Self::WrongPhase,
            ProtocolError::EmptyPeripheral => Self::EmptyPeripheral,
            ProtocolError::Unexpected { .. } | ProtocolError::Dropped => Self::Protocol,
            ProtocolError::Remote { code, .. } => ErrorCode::from_u16(*code).unwrap_or(Self::Internal),
            ProtocolError::Codec(_) => Self::Codec,
            ProtocolError::Audio(_) => Self::Audio,
            ProtocolError::Enclave(_)
            | ProtocolError::Store(_)
            | ProtocolError::Crypto(_)
            | ProtocolError::Model(_) => Self::Internal,
        }
    }
}

impl ErrorCode {
    fn from_u16(v: u16) -> Option<Self> {
        use ErrorCode::*;
        [Protocol, Codec, AttestationRejected, UnknownEnclave, LicenseDenied, Rollback, UnsealFailed, WrongPhase, EmptyPeripheral, Audio, Internal]
            .into_iter()
            .find(|c| *c as u16 == v)
    }
}

impl ProtocolError {
    /// Rebuilds the typed error a peer reported in an `ERROR` message.
    pub fn from_remote(code: u16, detail: String) -> Self {
        match ErrorCode::from_u16(code) {
            Some(ErrorCode::AttestationRejected) => Self::AttestationRejected(detail),
            Some(ErrorCode::UnknownEnclave) => Self::UnknownEnclave,
            Some(ErrorCode::UnsealFailed) => Self::UnsealFailed,
            Some(ErrorCode::EmptyPeripheral) => Self::EmptyPeripheral,
            _ => Self::Remote { code, detail },
        }
    }

    pub fn to_message(&self, session: SessionId) -> ProtocolMessage {
        ProtocolMessage::new(session, MessageBody::Error { code: ErrorCode::from(self) as u16, detail: self.to_string() })
    }
}

/// Associated data binding a wrapped `K_U` to its session, nonce and version.
pub fn key_release_aad(session: SessionId, nonce: &Nonce, version: u32) -> [u8; 28] {
    let mut aad = [0u8; 28];
    aad[..8].copy_from_slice(&session.0);
    aad[8..24].copy_from_slice(nonce.as_bytes());
    aad[24..].copy_from_slice(&version.to_le_bytes());
    aad
}

/// What an on-path adversary does with one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tamper {
    Pass,
    Drop,
    Replace(Vec<u8>),
}

/// Network adversary between the enclave host and the vendor.
pub trait Adversary: Send {
    fn intercept(&mut self, direction: Direction, frame: &[u8]) -> Tamper;
}

/// Request/response transport from the enclave host to V.
pub trait VendorLink {
    /// Starts a new vendor session (fresh connection or session state).
    fn begin(&mut self) -> Result<(), ProtocolError>;

    /// Sends `msg`, returns V's reply. Both directions are recorded in
    /// `transcript` with the bytes that actually crossed the link.
    fn exchange(&mut self, msg: &ProtocolMessage, transcript: &mut SessionTranscript) -> Result<ProtocolMessage, ProtocolError>;
}

/// Vendor reached by function call, with an optional adversary on the path.
pub struct InProcessLink {
    vendor: Arc<Mutex<VendorState>>,
    session: VendorSession,
    adversary: Option<Box<dyn Adversary>>,
    vendor_transcript: SessionTranscript,
}

impl InProcessLink {
    pub fn new(vendor: Arc<Mutex<VendorState>>) -> Self {
        Self { vendor, session: VendorSession::new(), adversary: None, vendor_transcript: SessionTranscript::new() }
    }

    pub fn with_adversary(mut self, adversary: Box<dyn Adversary>) -> Self {
        self.adversary = Some(adversary);
        self
    }

    /// V's own view of every session on this link.
    pub fn vendor_transcript(&self) -> &SessionTranscript {
        &self.vendor_transcript
    }

    fn intercept(&mut self, dir: Direction, bytes: Vec<u8>) -> Option<Vec<u8>> {
        match self.adversary.as_mut().map(|a| a.intercept(dir, &bytes)) {
            None | Some(Tamper::Pass) => Some(bytes),
            Some(Tamper::Drop) => None,
            Some(Tamper::Replace(b)) => Some(b),
        }
    }
}

impl VendorLink for InProcessLink {
    fn begin(&mut self) -> Result<(), ProtocolError> {
        self.session = VendorSession::new();
        Ok(())
    }

    fn exchange(&mut self, msg: &ProtocolMessage, transcript: &mut SessionTranscript) -> Result<ProtocolMessage, ProtocolError> {
        let wire = self.intercept(Direction::EnclaveToVendor, msg.encode());
        transcript.record(Direction::EnclaveToVendor, msg, wire.clone().unwrap_or_default());
        let wire = wire.ok_or(ProtocolError::Dropped)?;
        let reply = match ProtocolMessage::decode(&wire) {
            Ok(req) => {
                self.vendor_transcript.record(Direction::EnclaveToVendor, &req, wire.clone());
                self.vendor.lock().unwrap().handle(&mut self.session, &req)
            }
            Err(e) => ProtocolError::Codec(e).to_message(msg.header.session),
        };
        let reply_wire = reply.encode();
        self.vendor_transcript.record(Direction::VendorToEnclave, &reply, reply_wire.clone());
        let delivered = self.intercept(Direction::VendorToEnclave, reply_wire);
        transcript.record(Direction::VendorToEnclave, &reply, delivered.clone().unwrap_or_default());
        Ok(ProtocolMessage::decode(&delivered.ok_or(ProtocolError::Dropped)?)?)
    }
}

/// The user U. Checks the enclave's boot report; the verdict is recorded but
/// does not gate the vendor flow.
#[derive(Debug, Clone)]
pub struct UserClient {
    root: Certificate,
    expected: Measurement,
    verdicts: Vec<Result<(), AttestationRejection>>,
}

impl UserClient {
    pub fn new(root: Certificate, expected: Measurement) -> Self {
        Self { root, expected, verdicts: Vec::new() }
    }

    pub fn check(&mut self, report: &AttestationReport, challenge: &Nonce) -> Result<(), AttestationRejection> {
        // Verifying over U's own challenge makes a replayed report fail its signature.
        let fresh = AttestationReport { nonce: *challenge, ..report.clone() };
        let verdict = verify_attestation(&fresh, &self.root, &self.expected);
        log::info!("user attestation verdict: {verdict:?}");
        self.verdicts.push(verdict);
        verdict
    }

    pub fn verdicts(&self) -> &[Result<(), AttestationRejection>] {
        &self.verdicts
    }
}

/// Normal-world host process that owns one OMG enclave.
pub struct EnclaveHost {
    enclave: EnclaveInstance<OmgApp>,
    boot_report: AttestationReport,
    boot_nonce: Nonce,
    transcript: SessionTranscript,
    user_session: SessionId,
    rng: ChaCha20Rng,
}

impl std::fmt::Debug for EnclaveHost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnclaveHost").field("enclave", &self.enclave).finish_non_exhaustive()
    }
}

impl EnclaveHost {
    /// Sets up and boots an OMG enclave from `code` on `core`.
    pub fn launch(
        platform: &Sanctuary,
        code: &[u8],
        core: usize,
        storage: Box<dyn UntrustedStorage>,
    ) -> Result<Self, ProtocolError> {
        let enclave = platform.setup(code, core, OmgApp::new(storage))?;
        Self::boot(enclave, ChaCha20Rng::from_entropy())
    }

    /// Boots an enclave left in `SETUP` (possibly after a pre-boot patch).
    pub fn boot(mut enclave: EnclaveInstance<OmgApp>, mut rng: ChaCha20Rng) -> Result<Self, ProtocolError> {
        let mut n = [0u8; 16];
        rng.fill_bytes(&mut n);
        let boot_nonce = Nonce(n);
        let boot_report = enclave.boot(&boot_nonce)?;
        let mut s = [0u8; 8];
        rng.fill_bytes(&mut s);
        Ok(Self { enclave, boot_report, boot_nonce, transcript: SessionTranscript::new(), user_session: SessionId(s), rng })
    }

    pub fn boot_report(&self) -> &AttestationReport {
        &self.boot_report
    }

    pub fn enclave(&self) -> &EnclaveInstance<OmgApp> {
        &self.enclave
    }

    /// Direct access for adversarial tests playing the OS.
    pub fn enclave_mut(&mut self) -> &mut EnclaveInstance<OmgApp> {
        &mut self.enclave
    }

    pub fn phase(&self) -> Phase {
        self.enclave.app().phase()
    }

    pub fn transcript(&self) -> &SessionTranscript {
        &self.transcript
    }

    pub fn attach_microphone(&mut self, mic: SimulatedPeripheral) {
        self.enclave.attach_peripheral(mic);
    }

    pub fn microphone_mut(&mut self) -> Option<&mut SimulatedPeripheral> {
        self.enclave.peripheral_mut()
    }

    /// Everything the normal world can read from this enclave's memory.
    pub fn os_visible_memory(&self) -> Vec<Vec<u8>> {
        self.enclave.os_visible_memory()
    }

    pub fn os_read(&self, region: RegionKind) -> Result<Vec<u8>, crate::enclave::AccessDenied> {
        self.enclave.os_read_memory(region)
    }

    fn fresh_session(&mut self) -> SessionId {
        let mut s = [0u8; 8];
        self.rng.fill_bytes(&mut s);
        SessionId(s)
    }

    fn call(&mut self, req: HostRequest) -> Result<HostResponse, ProtocolError> {
        if self.enclave.state() == EnclaveState::Parked {
            self.enclave.resume()?;
        }
        self.enclave.execute(req)?
    }

    fn park(&mut self) {
        if self.enclave.state() == EnclaveState::Executing {
            if let Err(e) = self.enclave.park() {
                log::warn!("park failed: {e}");
            }
        }
    }

    pub fn teardown(&mut self) -> Result<(), ProtocolError> {
        self.enclave.teardown()?;
        Ok(())
    }

    fn attest(&mut self, challenge: Nonce) -> Result<AttestationReport, ProtocolError> {
        match self.call(HostRequest::Attest(challenge))? {
            HostResponse::Report(r) => Ok(r),
            _ => unreachable!("attest answers with a report"),
        }
    }

    fn stored_model(&mut self) -> Result<Option<StoredModel>, ProtocolError> {
        match self.call(HostRequest::StoredModel)? {
            HostResponse::Stored(s) => Ok(s),
            _ => unreachable!("stored-model query answers with stored"),
        }
    }

    /// `HELLO → CHALLENGE → ATTEST_REPORT → reply`.
    fn attested_session(
        &mut self,
        link: &mut dyn VendorLink,
        purpose: Purpose,
    ) -> Result<(SessionId, ProtocolMessage), ProtocolError> {
        link.begin()?;
        let sid = self.fresh_session();
        let stored = self.stored_model()?;
        let hello = ProtocolMessage::new(sid, MessageBody::Hello { purpose, stored });
        let challenge = match link.exchange(&hello, &mut self.transcript)?.body {
            MessageBody::Challenge { nonce } => nonce,
            MessageBody::Error { code, detail } => return Err(ProtocolError::from_remote(code, detail)),
            other => return Err(unexpected("CHALLENGE", other)),
        };
        let report = self.attest(challenge)?;
        let reply = link.exchange(&ProtocolMessage::new(sid, MessageBody::AttestReport { report }), &mut self.transcript)?;
        if reply.header.session != sid {
            return Err(ProtocolError::Remote { code: ErrorCode::Protocol as u16, detail: "session id mismatch".into() });
        }
        Ok((sid, reply))
    }
}

fn unexpected(expected: &'static str, body: MessageBody) -> ProtocolError {
    ProtocolError::Unexpected { expected, found: ProtocolMessage::new(SessionId::default(), body).kind() }
}

/// Result of a completed preparation phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prepared {
    pub model_version: u32,
    pub nonce: Nonce,
    /// False when provisioning was skipped because the stored model is current.
    pub provisioned: bool,
    pub user_accepted: bool,
}

/// Phase I: attest to U and V, receive the sealed model, store it.
pub fn run_preparation(
    link: &mut dyn VendorLink,
    host: &mut EnclaveHost,
    user: &mut UserClient,
) -> Result<Prepared, ProtocolError> {
    if !matches!(host.enclave.state(), EnclaveState::Booted | EnclaveState::Executing | EnclaveState::Parked) {
        return Err(EnclaveError::WrongState { op: "run_preparation", state: host.enclave.state() }.into());
    }
    let user_msg = ProtocolMessage::new(host.user_session, MessageBody::AttestReport { report: host.boot_report.clone() });
    host.transcript.record(Direction::EnclaveToUser, &user_msg, user_msg.encode());
    let user_accepted = user.check(&host.boot_report, &host.boot_nonce).is_ok();

    let (_, reply) = host.attested_session(link, Purpose::Provision)?;
    let result = match reply.body {
        MessageBody::ProvisionModel { container } => {
            let prepared = Prepared {
                model_version: container.meta.model_version,
                nonce: container.meta.nonce,
                provisioned: true,
                user_accepted,
            };
            host.call(HostRequest::StoreModel(container))?;
            prepared
        }
        MessageBody::UpToDate { version, nonce } => {
            host.call(HostRequest::AcceptUpToDate { version, nonce })?;
            Prepared { model_version: version, nonce, provisioned: false, user_accepted }
        }
        MessageBody::Error { code, detail } => return Err(ProtocolError::from_remote(code, detail)),
        other => return Err(unexpected("PROVISION_MODEL", other)),
    };
    Ok(result)
}

/// Phase II: obtain `K_U` from V and decrypt the stored model inside the enclave.
pub fn run_initialization(link: &mut dyn VendorLink, host: &mut EnclaveHost) -> Result<(), ProtocolError> {
    if host.phase() == Phase::Preparation {
        return Err(ProtocolError::WrongPhase { op: "initialization", phase: host.phase() });
    }
    let (sid, reply) = host.attested_session(link, Purpose::Initialize)?;
    match reply.body {
        MessageBody::KeyRelease { wrapped, nonce, version } => {
            host.call(HostRequest::ReleaseKey { wrapped, nonce, version, session: sid })?;
            Ok(())
        }
        MessageBody::KeyDenied { reason } => Err(ProtocolError::LicenseDenied(reason)),
        MessageBody::Error { code, detail } => Err(ProtocolError::from_remote(code, detail)),
        other => Err(unexpected("KEY_RELEASE", other)),
    }
}

/// Phase III: one query. The enclave is parked again afterwards.
pub fn handle_query(host: &mut EnclaveHost, input: QueryInput) -> Result<Classification, ProtocolError> {
    let source = match &input {
        QueryInput::Clip(c) => QuerySource::Inline(c.clone()),
        QueryInput::Peripheral => QuerySource::Peripheral,
    };
    let query = ProtocolMessage::new(host.user_session, MessageBody::Query { source });
    host.transcript.record(Direction::UserToEnclave, &query, query.encode());
    let before = host.enclave.ledger().simulated_us();
    let outcome = host.call(HostRequest::Query(input));
    host.transcript.advance(host.enclave.ledger().simulated_us() - before);
    host.park();
    let reply = match &outcome {
        Ok(HostResponse::Classified(c)) => {
            ProtocolMessage::new(host.user_session, MessageBody::Result { label: c.label.clone(), score: c.score })
        }
        Ok(_) => unreachable!("query answers with a classification"),
        Err(e) => e.to_message(host.user_session),
    };
    host.transcript.record(Direction::EnclaveToUser, &reply, reply.encode());
    match outcome? {
        HostResponse::Classified(c) => Ok(c),
        _ => unreachable!(),
    }
}

/// Resolves a wire query source on the host side.
pub fn resolve_query(source: QuerySource) -> Result<QueryInput, ProtocolError> {
    Ok(match source {
        QuerySource::Inline(clip) => QueryInput::Clip(clip),
        QuerySource::Reference(path) => QueryInput::Clip(read_wav_file(std::path::Path::new(&path))?),
        QuerySource::Peripheral => QueryInput::Peripheral,
    })
}

impl From<AudioClip> for QueryInput {
    fn from(c: AudioClip) -> Self {
        Self::Clip(c)
    }
}

use std::fmt;
use std::ops::Range;

use zeroize::Zeroizing;

use super::message::StoredModel;
use super::{key_release_aad, ProtocolError, SessionId};
use crate::audio::{make_fingerprint, AudioClip};
use crate::crypto::{unseal_model, unwrap_model_key, AttestationReport, Nonce, WrappedKey};
use crate::enclave::{EnclaveApp, EnclaveEnv, EnclaveError};
use crate::inference::{classify, load_model, Classification, TinyConvModel};
use crate::modelstore::{check_freshness, load_container, store_container, ContainerMeta, RollbackDetected, SealedModelContainer, UntrustedStorage};

/// Enclave-side protocol phase.
///
/// `Initialized` means preparation finished: a sealed model is on untrusted
/// storage and the enclave waits for `K_U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Preparation,
    Initialized,
    Operation,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Preparation => "PREPARATION",
            Self::Initialized => "INITIALIZED",
            Self::Operation => "OPERATION",
        })
    }
}

#[derive(Debug, Clone)]
pub enum QueryInput {
    Clip(AudioClip),
    /// Read through the secure-world peripheral path.
    Peripheral,
}

#[derive(Debug, Clone)]
pub enum HostRequest {
    Attest(Nonce),
    StoredModel,
    StoreModel(SealedModelContainer),
    AcceptUpToDate { version: u32, nonce: Nonce },
    ReleaseKey { wrapped: WrappedKey, nonce: Nonce, version: u32, session: SessionId },
    Query(QueryInput),
}

#[derive(Debug, Clone)]
pub enum HostResponse {
    Report(AttestationReport),
    Stored(Option<StoredModel>),
    Done,
    Classified(Classification),
}

/// The OMG Sanctuary App: holds the decrypted model only while in
/// `Operation`, with the plaintext kept in the private heap.
pub struct OmgApp {
    storage: Box<dyn UntrustedStorage>,
    phase: Phase,
    last_seen: Option<ContainerMeta>,
    model: Option<TinyConvModel<f32>>,
    model_bytes: Option<Range<usize>>,
}

impl fmt::Debug for OmgApp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OmgApp").field("phase", &self.phase).field("last_seen", &self.last_seen).finish_non_exhaustive()
    }
}

impl OmgApp {
    pub fn new(storage: Box<dyn UntrustedStorage>) -> Self {
        Self { storage, phase: Phase::Preparation, last_seen: None, model: None, model_bytes: None }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn has_model(&self) -> bool {
        self.model.is_some()
    }

    fn drop_model(&mut self, env: Option<&mut EnclaveEnv<'_>>) {
        if let Some(mut m) = self.model.take() {
            m.conv_weights_mut().fill(0.0);
            m.fc_weights_mut().fill(0.0);
        }
        if let (Some(env), Some(_)) = (env, self.model_bytes.take()) {
            env.wipe_private_heap();
        }
        self.model_bytes = None;
    }

    fn release_key(
        &mut self,
        env: &mut EnclaveEnv<'_>,
        wrapped: &WrappedKey,
        nonce: Nonce,
        version: u32,
        session: SessionId,
    ) -> Result<(), ProtocolError> {
        if self.phase == Phase::Preparation {
            return Err(ProtocolError::WrongPhase { op: "key release", phase: self.phase });
        }
        let container = load_container(self.storage.as_ref())?;
        check_freshness(&container, &nonce, version)?;
        if let Some(seen) = self.last_seen {
            if version < seen.model_version {
                return Err(RollbackDetected {
                    found_version: version,
                    found_nonce: nonce,
                    expected_version: seen.model_version,
                    expected_nonce: seen.nonce,
                }
                .into());
            }
        }
        let key = unwrap_model_key(env.keypair(), wrapped, &key_release_aad(session, &nonce, version))?;
        let plaintext = Zeroizing::new(unseal_model(&key, &container).map_err(|_| ProtocolError::UnsealFailed)?);
        self.drop_model(Some(env));
        let range = env.store_private(&plaintext);
        let model = load_model::<f32>(env.private_bytes(range.clone()))?;
        self.model = Some(model);
        self.model_bytes = Some(range);
        self.last_seen = Some(container.meta);
        self.phase = Phase::Operation;
        Ok(())
    }

    fn query(&mut self, env: &mut EnclaveEnv<'_>, input: QueryInput) -> Result<Classification, ProtocolError> {
        let Some(model) = self.model.as_ref().filter(|_| self.phase == Phase::Operation) else {
            return Err(ProtocolError::WrongPhase { op: "query", phase: self.phase });
        };
        let clip = match input {
            QueryInput::Peripheral => env.world_switch_read()?,
            QueryInput::Clip(clip) => {
                env.load_input(&clip)?;
                clip
            }
        };
        let fp = make_fingerprint(&clip)?;
        let result = classify(&fp, model)?;
        env.publish(format!("label={} score={:.6}", result.label, result.score).as_bytes());
        Ok(result)
    }

    fn dispatch(&mut self, env: &mut EnclaveEnv<'_>, req: HostRequest) -> Result<HostResponse, ProtocolError> {
        match req {
            HostRequest::Attest(n) => Ok(HostResponse::Report(env.attest(&n))),
            HostRequest::StoredModel => {
                let stored = match load_container(self.storage.as_ref()) {
                    Ok(c) => Some(StoredModel { version: c.meta.model_version, nonce: c.meta.nonce }),
                    Err(_) => None,
                };
                Ok(HostResponse::Stored(stored))
            }
            HostRequest::StoreModel(c) => {
                store_container(self.storage.as_mut(), &c)?;
                self.last_seen = Some(c.meta);
                self.drop_model(Some(env));
                self.phase = Phase::Initialized;
                Ok(HostResponse::Done)
            }
            HostRequest::AcceptUpToDate { version, nonce } => {
                self.last_seen = Some(ContainerMeta { model_version: version, nonce });
                if self.phase == Phase::Preparation {
                    self.phase = Phase::Initialized;
                }
                Ok(HostResponse::Done)
            }
            HostRequest::ReleaseKey { wrapped, nonce, version, session } => {
                self.release_key(env, &wrapped, nonce, version, session).map(|()| HostResponse::Done)
            }
            HostRequest::Query(input) => self.query(env, input).map(HostResponse::Classified),
        }
    }
}

impl EnclaveApp for OmgApp {
    type Request = HostRequest;
    type Response = Result<HostResponse, ProtocolError>;

    fn handle(&mut self, env: &mut EnclaveEnv<'_>, req: HostRequest) -> Self::Response {
        self.dispatch(env, req)
    }

    fn wipe(&mut self) {
        self.drop_model(None);
        self.last_seen = None;
        self.phase = Phase::Preparation;
    }
}

impl From<EnclaveError> for ProtocolError {
    fn from(e: EnclaveError) -> Self {
        match e {
            EnclaveError::EmptyPeripheral => Self::EmptyPeripheral,
            other => Self::Enclave(other),
        }
    }
}

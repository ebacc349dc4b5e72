use std::io;

use omg_core::audio::AudioError;
use omg_core::crypto::CryptoError;
use omg_core::inference::InferenceError;
use omg_core::modelstore::StoreError;
use omg_core::protocol::{CodecError, ErrorCode, ProtocolError};
use thiserror::Error;

/// Process exit codes. Kept in sync with the table in `docs/exit-codes.md`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitCode {
    Ok = 0,
    Usage = 2,
    Io = 3,
    AudioFormat = 4,
    LicenseDenied = 5,
    AttestationRejected = 6,
    Integrity = 7,
    Protocol = 8,
    AttackFailed = 9,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("invalid key material: {0}")]
    Crypto(#[from] CryptoError),
    #[error("invalid model: {0}")]
    Model(#[from] InferenceError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{failed} of {total} attack scenarios were not defended")]
    AttackFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Self::Io { context: context.into(), source }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Self::Usage(_) => ExitCode::Usage,
            Self::Io { .. } => ExitCode::Io,
            Self::Audio(AudioError::Io(_)) => ExitCode::Io,
            Self::Audio(_) => ExitCode::AudioFormat,
            Self::Crypto(_) | Self::Model(_) => ExitCode::Integrity,
            Self::Protocol(e) => protocol_exit_code(e),
            Self::AttackFailed { .. } => ExitCode::AttackFailed,
        }
    }
}

fn protocol_exit_code(e: &ProtocolError) -> ExitCode {
    match e {
        ProtocolError::Audio(AudioError::Io(_)) => return ExitCode::Io,
        ProtocolError::Store(StoreError::Io(_)) => return ExitCode::Io,
        ProtocolError::Store(_) => return ExitCode::Integrity,
        ProtocolError::Codec(CodecError::Io(_) | CodecError::Closed) => return ExitCode::Protocol,
        _ => {}
    }
    match ErrorCode::from(e) {
        ErrorCode::LicenseDenied => ExitCode::LicenseDenied,
        ErrorCode::AttestationRejected => ExitCode::AttestationRejected,
        ErrorCode::Rollback | ErrorCode::UnsealFailed => ExitCode::Integrity,
        ErrorCode::Audio => ExitCode::AudioFormat,
        _ => ExitCode::Protocol,
    }
}

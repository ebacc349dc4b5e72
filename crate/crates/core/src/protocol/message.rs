//! Wire messages. Every message is a TLV body
//! `01 version(u16) · 02 session_id([8]) · 03 kind(u8) · body fields…`,
//! framed on a stream with a 4-byte little-endian length prefix.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::audio::AudioClip;
use crate::crypto::{AttestationReport, CryptoError, Nonce, WrappedKey, PUBLIC_KEY_LEN};
use crate::modelstore::{SealedModelContainer, StoreError};
use crate::tlv::{TlvError, TlvReader, TlvWriter};

pub const PROTOCOL_VERSION: u16 = 1;
/// Upper bound on a single frame; a sealed tiny_conv model is ~215 KB.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

const TAG_VERSION: u8 = 0x01;
const TAG_SESSION: u8 = 0x02;
const TAG_KIND: u8 = 0x03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SessionId(pub [u8; 8]);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub session: SessionId,
}

impl Header {
    pub fn new(session: SessionId) -> Self {
        Self { version: PROTOCOL_VERSION, session }
    }
}

/// Why a session was opened with the vendor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Provision = 1,
    Initialize = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[repr(u8)]
pub enum DenyReason {
    #[error("license revoked")]
    Revoked = 1,
    #[error("license not granted")]
    NotGranted = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuerySource {
    Inline(AudioClip),
    /// Path the enclave host reads on the user's behalf.
    Reference(String),
    Peripheral,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredModel {
    pub version: u32,
    pub nonce: Nonce,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    Hello { purpose: Purpose, stored: Option<StoredModel> },
    Challenge { nonce: Nonce },
    AttestReport { report: AttestationReport },
    ProvisionModel { container: SealedModelContainer },
    UpToDate { version: u32, nonce: Nonce },
    KeyRelease { wrapped: WrappedKey, nonce: Nonce, version: u32 },
    KeyDenied { reason: DenyReason },
    Query { source: QuerySource },
    Result { label: String, score: f64 },
    Error { code: u16, detail: String },
    LicenseControl { pk: [u8; PUBLIC_KEY_LEN], authorized: bool },
    Ack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    Challenge = 2,
    AttestReport = 3,
    ProvisionModel = 4,
    UpToDate = 5,
    KeyRelease = 6,
    KeyDenied = 7,
    Query = 8,
    Result = 9,
    Error = 10,
    LicenseControl = 11,
    Ack = 12,
}

impl MessageKind {
    const ALL: [Self; 12] = [
        Self::Hello,
        Self::Challenge,
        Self::AttestReport,
        Self::ProvisionModel,
        Self::UpToDate,
        Self::KeyRelease,
        Self::KeyDenied,
        Self::Query,
        Self::Result,
        Self::Error,
        Self::LicenseControl,
        Self::Ack,
    ];

    fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Hello => "HELLO",
            Self::Challenge => "CHALLENGE",
            Self::AttestReport => "ATTEST_REPORT",
            Self::ProvisionModel => "PROVISION_MODEL",
            Self::UpToDate => "UP_TO_DATE",
            Self::KeyRelease => "KEY_RELEASE",
            Self::KeyDenied => "KEY_DENIED",
            Self::Query => "QUERY",
            Self::Result => "RESULT",
            Self::Error => "ERROR",
            Self::LicenseControl => "LICENSE_CONTROL",
            Self::Ack => "ACK",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Tlv(#[from] TlvError),
    #[error("unsupported protocol version {0}")]
    Version(u16),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("invalid value {value} for {field}")]
    BadValue { field: &'static str, value: u64 },
    #[error("embedded report: {0}")]
    Report(#[from] CryptoError),
    #[error("embedded container: {0}")]
    Container(#[from] StoreError),
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(usize),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    pub header: Header,
    pub body: MessageBody,
}

impl ProtocolMessage {
    pub fn new(session: SessionId, body: MessageBody) -> Self {
        Self { header: Header::new(session), body }
    }

    pub fn kind(&self) -> MessageKind {
        match &self.body {
            MessageBody::Hello { .. } => MessageKind::Hello,
            MessageBody::Challenge { .. } => MessageKind::Challenge,
            MessageBody::AttestReport { .. } => MessageKind::AttestReport,
            MessageBody::ProvisionModel { .. } => MessageKind::ProvisionModel,
            MessageBody::UpToDate { .. } => MessageKind::UpToDate,
            MessageBody::KeyRelease { .. } => MessageKind::KeyRelease,
            MessageBody::KeyDenied { .. } => MessageKind::KeyDenied,
            MessageBody::Query { .. } => MessageKind::Query,
            MessageBody::Result { .. } => MessageKind::Result,
            MessageBody::Error { .. } => MessageKind::Error,
            MessageBody::LicenseControl { .. } => MessageKind::LicenseControl,
            MessageBody::Ack => MessageKind::Ack,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put_u16(TAG_VERSION, self.header.version);
        w.put(TAG_SESSION, &self.header.session.0);
        w.put_u8(TAG_KIND, self.kind() as u8);
        match &self.body {
            MessageBody::Hello { purpose, stored } => {
                w.put_u8(0x10, *purpose as u8);
                if let Some(s) = stored {
                    w.put_u32(0x11, s.version);
                    w.put(0x12, s.nonce.as_bytes());
                }
            }
            MessageBody::Challenge { nonce } => {
                w.put(0x10, nonce.as_bytes());
            }
            MessageBody::AttestReport { report } => {
                w.put(0x10, &report.to_bytes());
            }
            MessageBody::ProvisionModel { container } => {
                w.put(0x10, &container.to_bytes());
            }
            MessageBody::UpToDate { version, nonce } => {
                w.put_u32(0x10, *version);
                w.put(0x11, nonce.as_bytes());
            }
            MessageBody::KeyRelease { wrapped, nonce, version } => {
                w.put(0x10, &wrapped.to_bytes());
                w.put(0x11, nonce.as_bytes());
                w.put_u32(0x12, *version);
            }
            MessageBody::KeyDenied { reason } => {
                w.put_u8(0x10, *reason as u8);
            }
            MessageBody::Query { source } => match source {
                QuerySource::Inline(clip) => {
                    w.put_u8(0x10, 0);
                    w.put_u32(0x11, clip.sample_rate);
                    w.put(0x12, &clip.to_pcm_bytes());
                }
                QuerySource::Reference(path) => {
                    w.put_u8(0x10, 1);
                    w.put_str(0x11, path);
                }
                QuerySource::Peripheral => {
                    w.put_u8(0x10, 2);
                }
            },
            MessageBody::Result { label, score } => {
                w.put_str(0x10, label);
                w.put_u64(0x11, score.to_bits());
            }
            MessageBody::Error { code, detail } => {
                w.put_u16(0x10, *code);
                w.put_str(0x11, detail);
            }
            MessageBody::LicenseControl { pk, authorized } => {
                w.put(0x10, pk);
                w.put_u8(0x11, u8::from(*authorized));
            }
            MessageBody::Ack => {}
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = TlvReader::new(bytes);
        let version = r.expect_u16(TAG_VERSION)?;
        if version != PROTOCOL_VERSION {
            return Err(CodecError::Version(version));
        }
        let session = SessionId(r.expect_array(TAG_SESSION)?);
        let kind_byte = r.expect_u8(TAG_KIND)?;
        let kind = MessageKind::from_u8(kind_byte).ok_or(CodecError::UnknownKind(kind_byte))?;
        let body = match kind {
            MessageKind::Hello => {
                let purpose = match r.expect_u8(0x10)? {
                    1 => Purpose::Provision,
                    2 => Purpose::Initialize,
                    v => return Err(CodecError::BadValue { field: "purpose", value: v.into() }),
                };
                let stored = if r.peek_tag() == Some(0x11) {
                    let version = r.expect_u32(0x11)?;
                    Some(StoredModel { version, nonce: Nonce(r.expect_array(0x12)?) })
                } else {
                    None
                };
                MessageBody::Hello { purpose, stored }
            }
            MessageKind::Challenge => MessageBody::Challenge { nonce: Nonce(r.expect_array(0x10)?) },
            MessageKind::AttestReport => {
                MessageBody::AttestReport { report: AttestationReport::from_bytes(r.expect(0x10)?)? }
            }
            MessageKind::ProvisionModel => {
                MessageBody::ProvisionModel { container: SealedModelContainer::from_bytes(r.expect(0x10)?)? }
            }
            MessageKind::UpToDate => {
                let version = r.expect_u32(0x10)?;
                MessageBody::UpToDate { version, nonce: Nonce(r.expect_array(0x11)?) }
            }
            MessageKind::KeyRelease => {
                let raw = r.expect(0x10)?;
                let wrapped = WrappedKey::from_bytes(raw)
                    .ok_or(CodecError::BadValue { field: "wrapped key length", value: raw.len() as u64 })?;
                let nonce = Nonce(r.expect_array(0x11)?);
                MessageBody::KeyRelease { wrapped, nonce, version: r.expect_u32(0x12)? }
            }
            MessageKind::KeyDenied => {
                let reason = match r.expect_u8(0x10)? {
                    1 => DenyReason::Revoked,
                    2 => DenyReason::NotGranted,
                    v => return Err(CodecError::BadValue { field: "deny reason", value: v.into() }),
                };
                MessageBody::KeyDenied { reason }
            }
            MessageKind::Query => {
                let source = match r.expect_u8(0x10)? {
                    0 => {
                        let rate = r.expect_u32(0x11)?;
                        let pcm = r.expect(0x12)?;
                        if pcm.len() % 2 != 0 {
                            return Err(CodecError::BadValue { field: "pcm length", value: pcm.len() as u64 });
                        }
                        let samples = pcm.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
                        QuerySource::Inline(AudioClip::new(samples, rate))
                    }
                    1 => QuerySource::Reference(r.expect_str(0x11)?.to_owned()),
                    2 => QuerySource::Peripheral,
                    v => return Err(CodecError::BadValue { field: "query source", value: v.into() }),
                };
                MessageBody::Query { source }
            }
            MessageKind::Result => {
                let label = r.expect_str(0x10)?.to_owned();
                MessageBody::Result { label, score: f64::from_bits(r.expect_u64(0x11)?) }
            }
            MessageKind::Error => {
                let code = r.expect_u16(0x10)?;
                MessageBody::Error { code, detail: r.expect_str(0x11)?.to_owned() }
            }
            MessageKind::LicenseControl => {
                let pk = r.expect_array(0x10)?;
                let authorized = match r.expect_u8(0x11)? {
                    0 => false,
                    1 => true,
                    v => return Err(CodecError::BadValue { field: "authorized", value: v.into() }),
                };
                MessageBody::LicenseControl { pk, authorized }
            }
            MessageKind::Ack => MessageBody::Ack,
        };
        r.finish()?;
        Ok(Self { header: Header { version, session }, body })
    }
}

/// Length-prefixes `body` for a byte stream.
pub fn frame(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    out
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    w.write_all(&frame(body))?;
    w.flush()
}

/// Reads one frame. A clean EOF before the length prefix is `Closed`.
pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, CodecError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(CodecError::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(CodecError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(body)
}

pub fn send(w: &mut impl Write, msg: &ProtocolMessage) -> io::Result<()> {
    write_frame(w, &msg.encode())
}

pub fn recv(r: &mut impl Read) -> Result<ProtocolMessage, CodecError> {
    ProtocolMessage::decode(&read_frame(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_enclave_keypair, measure, sign_attestation, PlatformIdentity};
    use crate::modelstore::ContainerMeta;
    use proptest::prelude::*;

    fn sample_messages() -> Vec<MessageBody> {
        let platform = PlatformIdentity::from_seed([2; 32]);
        let m = measure(b"code");
        let kp = derive_enclave_keypair(&platform, &m);
        let report = sign_attestation(&kp, &m, &Nonce([3; 16]));
        let meta = ContainerMeta { model_version: 4, nonce: Nonce([5; 16]) };
        let container = SealedModelContainer { meta, iv: [6; 12], ciphertext: vec![7; 33], tag: [8; 16] };
        let wrapped = WrappedKey { ephemeral_pk: [9; 32], iv: [10; 12], ciphertext: [11; 32], tag: [12; 16] };
        vec![
            MessageBody::Hello { purpose: Purpose::Provision, stored: None },
            MessageBody::Hello { purpose: Purpose::Initialize, stored: Some(StoredModel { version: 3, nonce: Nonce([1; 16]) }) },
            MessageBody::Challenge { nonce: Nonce([13; 16]) },
            MessageBody::AttestReport { report },
            MessageBody::ProvisionModel { container },
            MessageBody::UpToDate { version: 2, nonce: Nonce([14; 16]) },
            MessageBody::KeyRelease { wrapped, nonce: Nonce([15; 16]), version: 9 },
            MessageBody::KeyDenied { reason: DenyReason::Revoked },
            MessageBody::Query { source: QuerySource::Inline(AudioClip::new(vec![1, -2, 300], 16_000)) },
            MessageBody::Query { source: QuerySource::Reference("clips/yes.wav".into()) },
            MessageBody::Query { source: QuerySource::Peripheral },
            MessageBody::Result { label: "yes".into(), score: 0.875 },
            MessageBody::Error { code: 6, detail: "attestation rejected".into() },
            MessageBody::LicenseControl { pk: [16; 32], authorized: false },
            MessageBody::Ack,
        ]
    }

    #[test]
    fn every_message_roundtrips_byte_exact() {
        for body in sample_messages() {
            let msg = ProtocolMessage::new(SessionId([0xAB; 8]), body);
            let bytes = msg.encode();
            let back = ProtocolMessage::decode(&bytes).unwrap();
            assert_eq!(back, msg);
            assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn header_prefix_is_fixed() {
        let msg = ProtocolMessage::new(SessionId([1, 2, 3, 4, 5, 6, 7, 8]), MessageBody::Ack);
        assert_eq!(
            msg.encode(),
            [
                0x01, 2, 0, 0, 0, 1, 0, // version 1
                0x02, 8, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, // session
                0x03, 1, 0, 0, 0, 12, // kind ACK
            ]
        );
    }

    #[test]
    fn wrong_version_and_kind_rejected() {
        let mut bytes = ProtocolMessage::new(SessionId::default(), MessageBody::Ack).encode();
        bytes[5] = 2;
        assert!(matches!(ProtocolMessage::decode(&bytes), Err(CodecError::Version(2))));
        let mut bytes = ProtocolMessage::new(SessionId::default(), MessageBody::Ack).encode();
        *bytes.last_mut().unwrap() = 99;
        assert!(matches!(ProtocolMessage::decode(&bytes), Err(CodecError::UnknownKind(99))));
    }

    #[test]
    fn trailing_field_rejected() {
        let mut bytes = ProtocolMessage::new(SessionId::default(), MessageBody::Ack).encode();
        bytes.extend_from_slice(&[0x10, 0, 0, 0, 0]);
        assert!(matches!(ProtocolMessage::decode(&bytes), Err(CodecError::Tlv(TlvError::Trailing(_)))));
    }

    #[test]
    fn framing_roundtrip_and_eof() {
        let mut buf = Vec::new();
        for body in sample_messages() {
            send(&mut buf, &ProtocolMessage::new(SessionId([7; 8]), body)).unwrap();
        }
        let mut cur = io::Cursor::new(buf);
        for body in sample_messages() {
            assert_eq!(recv(&mut cur).unwrap().body, body);
        }
        assert!(matches!(recv(&mut cur), Err(CodecError::Closed)));
        let mut huge = io::Cursor::new((MAX_FRAME_LEN as u32 + 1).to_le_bytes().to_vec());
        assert!(matches!(read_frame(&mut huge), Err(CodecError::FrameTooLarge(_))));
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = ProtocolMessage::decode(&bytes);
        }

        #[test]
        fn single_byte_corruption_never_panics(idx in any::<prop::sample::Index>(), b in any::<u8>(), which in 0usize..15) {
            let msg = ProtocolMessage::new(SessionId([1; 8]), sample_messages().swap_remove(which));
            let mut bytes = msg.encode();
            let i = idx.index(bytes.len());
            bytes[i] = b;
            if let Ok(decoded) = ProtocolMessage::decode(&bytes) {
                prop_assert_eq!(decoded.encode(), bytes);
            }
        }
    }
}

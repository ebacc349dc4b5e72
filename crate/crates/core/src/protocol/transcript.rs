use std::fmt;

use super::message::ProtocolMessage;

/// Simulated one-way link latency added per transcript entry.
pub const LINK_LATENCY_US: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    EnclaveToVendor,
    VendorToEnclave,
    EnclaveToUser,
    UserToEnclave,
}

impl Direction {
    pub fn involves_vendor(self) -> bool {
        matches!(self, Self::EnclaveToVendor | Self::VendorToEnclave)
    }

    fn code(self) -> &'static str {
        match self {
            Self::EnclaveToVendor => "E->V",
            Self::VendorToEnclave => "V->E",
            Self::EnclaveToUser => "E->U",
            Self::UserToEnclave => "U->E",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub message: ProtocolMessage,
    pub at_us: u64,
    /// Exact bytes that crossed the link, after any adversarial rewrite.
    pub wire: Vec<u8>,
}

impl fmt::Display for TranscriptEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t_us={} dir={} session={} kind={} bytes={}",
            self.at_us,
            self.direction.code(),
            self.message.header.session,
            self.message.kind(),
            self.wire.len()
        )
    }
}

/// Append-only record of one principal's view of a protocol run.
#[derive(Debug, Clone, Default)]
pub struct SessionTranscript {
    entries: Vec<TranscriptEntry>,
    clock_us: u64,
}

impl SessionTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, direction: Direction, message: &ProtocolMessage, wire: Vec<u8>) {
        self.clock_us += LINK_LATENCY_US;
        self.entries.push(TranscriptEntry { direction, message: message.clone(), at_us: self.clock_us, wire });
    }

    /// Adds simulated time spent outside the link (e.g. world switches).
    pub fn advance(&mut self, us: u64) {
        self.clock_us += us;
    }

    pub fn now_us(&self) -> u64 {
        self.clock_us
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Line-delimited export, one `key=value` record per entry.
    pub fn to_lines(&self) -> String {
        self.entries.iter().map(|e| format!("{e}\n")).collect()
    }
}

use std::collections::VecDeque;
use std::path::Path;

use crate::audio::{read_wav_file, AudioClip, AudioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeripheralKind {
    Microphone,
}

/// Secure-world peripheral fed from recorded clips instead of hardware.
#[derive(Debug, Clone)]
pub struct SimulatedPeripheral {
    kind: PeripheralKind,
    source: VecDeque<AudioClip>,
}

impl SimulatedPeripheral {
    pub fn microphone() -> Self {
        Self { kind: PeripheralKind::Microphone, source: VecDeque::new() }
    }

    /// Queues every `*.wav` in `dir`, sorted by file name.
    pub fn microphone_from_dir(dir: &Path) -> Result<Self, AudioError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let mut mic = Self::microphone();
        for p in paths {
            mic.push(read_wav_file(&p)?);
        }
        Ok(mic)
    }

    pub fn kind(&self) -> PeripheralKind {
        self.kind
    }

    pub fn push(&mut self, clip: AudioClip) {
        self.source.push_back(clip);
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub(crate) fn pop(&mut self) -> Option<AudioClip> {
        self.source.pop_front()
    }
}

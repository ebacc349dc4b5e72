//! Audio front end: WAV ingestion and the 49×43 fingerprint.
//!
//! Pipeline per 1 s clip at 16 kHz: 49 rectangular windows of 480 samples
//! with a 320-sample hop, each zero-padded to 512 and run through a Q15
//! radix-2 FFT; bins 0..256 (Nyquist dropped) are averaged in groups of six
//! (the last group has four members) and linearly quantized to `u8`.

mod fft;
mod frontend;
mod wav;

use thiserror::Error;

pub use fft::{spectrum, FFT_LEN, SPECTRUM_BINS, SPECTRUM_ERROR_BOUND};
pub use frontend::{
    dequantize, frame, make_fingerprint, pool_bins, pool_bins_fixed, quantize, Fingerprint, FINGERPRINT_COLS,
    FINGERPRINT_LEN, FINGERPRINT_ROWS, FRAME_COUNT, HOP_LEN, POOL_WIDTH, QUANT_FULL_SCALE, WINDOW_LEN,
};
pub use wav::{read_wav, read_wav_file, write_wav};

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_SAMPLES: usize = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed WAV: {0}")]
    Malformed(String),
    #[error("expected {expected} samples at {SAMPLE_RATE} Hz, got {found} samples at {rate} Hz")]
    WrongLength { expected: usize, found: usize, rate: u32 },
    #[error("fingerprint must be {FINGERPRINT_ROWS}x{FINGERPRINT_COLS} ({FINGERPRINT_LEN} bytes), got {0} bytes")]
    FingerprintShape(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono signed 16-bit PCM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn silence() -> Self {
        Self::new(vec![0; CLIP_SAMPLES], SAMPLE_RATE)
    }

    pub fn duration_secs(&self) -> f64 {
        if self.sample_rate == 0 {
            return 0.0;
        }
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Little-endian PCM bytes, as the clip sits in enclave memory.
    pub fn to_pcm_bytes(&self) -> Vec<u8> {
        self.samples.iter().flat_map(|s| s.to_le_bytes()).collect()
    }
}

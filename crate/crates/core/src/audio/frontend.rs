use std::fmt::Write as _;

use super::fft::{spectrum, SPECTRUM_BINS};
use super::{AudioClip, AudioError, CLIP_SAMPLES, SAMPLE_RATE};
use crate::Scalar;

/// 30 ms at 16 kHz.
pub const WINDOW_LEN: usize = 480;
/// 20 ms at 16 kHz.
pub const HOP_LEN: usize = 320;
pub const FRAME_COUNT: usize = (CLIP_SAMPLES - WINDOW_LEN) / HOP_LEN + 1;
pub const POOL_WIDTH: usize = 6;
pub const FINGERPRINT_ROWS: usize = FRAME_COUNT;
pub const FINGERPRINT_COLS: usize = SPECTRUM_BINS.div_ceil(POOL_WIDTH);
pub const FINGERPRINT_LEN: usize = FINGERPRINT_ROWS * FINGERPRINT_COLS;

/// Pooled magnitude that maps to quantized 255.
///
/// A full-scale sinusoid centred on one bin peaks at `32767·480/2/512 ≈ 15360`
/// in spectrum units; averaged with five empty neighbours that is 2560.
pub const QUANT_FULL_SCALE: u32 = 2560;

/// Splits a standard clip into 49 overlapping windows.
pub fn frame(clip: &AudioClip) -> Result<Vec<&[i16; WINDOW_LEN]>, AudioError> {
    if clip.samples.len() != CLIP_SAMPLES || clip.sample_rate != SAMPLE_RATE {
        return Err(AudioError::WrongLength {
            expected: CLIP_SAMPLES,
            found: clip.samples.len(),
            rate: clip.sample_rate,
        });
    }
    Ok((0..FRAME_COUNT)
        .map(|i| {
            let start = i * HOP_LEN;
            clip.samples[start..start + WINDOW_LEN].try_into().expect("window length")
        })
        .collect())
}

fn groups() -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..FINGERPRINT_COLS).map(|k| k * POOL_WIDTH..((k + 1) * POOL_WIDTH).min(SPECTRUM_BINS))
}

/// Mean of each group of six adjacent bins; the last group averages its four.
pub fn pool_bins<S: Scalar>(bins: &[S; SPECTRUM_BINS]) -> [S; FINGERPRINT_COLS] {
    let mut out = [S::zero(); FINGERPRINT_COLS];
    for (o, g) in out.iter_mut().zip(groups()) {
        let n = S::from_usize(g.len()).unwrap();
        *o = bins[g].iter().copied().sum::<S>() / n;
    }
    out
}

/// Integer counterpart of [`pool_bins`], rounding half up.
pub fn pool_bins_fixed(bins: &[u32; SPECTRUM_BINS]) -> [u32; FINGERPRINT_COLS] {
    let mut out = [0u32; FINGERPRINT_COLS];
    for (o, g) in out.iter_mut().zip(groups()) {
        let n = g.len() as u32;
        *o = (bins[g].iter().sum::<u32>() + n / 2) / n;
    }
    out
}

/// Linear map `[0, QUANT_FULL_SCALE] → [0, 255]`, rounding, saturating above.
pub fn quantize(pooled: u32) -> u8 {
    let scaled = (u64::from(pooled) * 255 + u64::from(QUANT_FULL_SCALE) / 2) / u64::from(QUANT_FULL_SCALE);
    scaled.min(255) as u8
}

/// Inverse of [`quantize`] onto the normalized range `[0, 1]` (1 = full scale).
pub fn dequantize<S: Scalar>(q: u8) -> S {
    S::from_u8(q).unwrap() / S::from_u8(255).unwrap()
}

/// 49×43 row-major quantized spectrogram: one row per frame.
#[derive(Clone, PartialEq, Eq)]
pub struct Fingerprint {
    values: Vec<u8>,
}

impl std::fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fingerprint({}x{}, sum={})", FINGERPRINT_ROWS, FINGERPRINT_COLS, self.values.iter().map(|&v| u64::from(v)).sum::<u64>())
    }
}

impl Fingerprint {
    pub fn zeros() -> Self {
        Self { values: vec![0; FINGERPRINT_LEN] }
    }

    pub fn from_bytes(flat: &[u8]) -> Result<Self, AudioError> {
        if flat.len() != FINGERPRINT_LEN {
            return Err(AudioError::FingerprintShape(flat.len()));
        }
        Ok(Self { values: flat.to_vec() })
    }

    pub fn rows(&self) -> usize {
        FINGERPRINT_ROWS
    }

    pub fn cols(&self) -> usize {
        FINGERPRINT_COLS
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * FINGERPRINT_COLS + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.values[row * FINGERPRINT_COLS..(row + 1) * FINGERPRINT_COLS]
    }

    /// Flat row-major export.
    pub fn as_bytes(&self) -> &[u8] {
        &self.values
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(FINGERPRINT_LEN * 4);
        for r in 0..FINGERPRINT_ROWS {
            for (c, v) in self.row(r).iter().enumerate() {
                if c > 0 {
                    s.push(',');
                }
                write!(s, "{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn dequantized<S: Scalar>(&self) -> Vec<S> {
        self.values.iter().map(|&q| dequantize(q)).collect()
    }
}

pub fn make_fingerprint(clip: &AudioClip) -> Result<Fingerprint, AudioError> {
    let mut values = Vec::with_capacity(FINGERPRINT_LEN);
    for window in frame(clip)? {
        let pooled = pool_bins_fixed(&spectrum(window));
        values.extend(pooled.iter().map(|&p| quantize(p)));
    }
    debug_assert_eq!(values.len(), FINGERPRINT_LEN);
    Ok(Fingerprint { values })
}

//! Straightforward reference implementations, written from the textbook
//! definitions and sharing no code with the library.
#![allow(dead_code)]

use std::f64::consts::PI;

use hmac::{Hmac, Mac};
use sha2::Sha256;

use omg_core::audio::AudioClip;

pub const WINDOW: usize = 480;
pub const HOP: usize = 320;
pub const N_FFT: usize = 512;
pub const BINS: usize = 256;
pub const POOL: usize = 6;
/// Pooled magnitude of a full-scale tone centred on one bin (peak/6).
pub const FULL_SCALE: f64 = 2560.0;
pub const NUM_CLASSES: usize = 12;

fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

/// HKDF-SHA256 built directly on HMAC: extract, then expand block by block.
pub fn hkdf_sha256(ikm: &[u8], salt: &[u8], info: &[u8], len: usize) -> Vec<u8> {
    let salt: &[u8] = if salt.is_empty() { &[0u8; 32] } else { salt };
    let prk = hmac_sha256(salt, &[ikm]);
    let mut okm = Vec::with_capacity(len);
    let mut t: Vec<u8> = Vec::new();
    let mut counter = 1u8;
    while okm.len() < len {
        t = hmac_sha256(&prk, &[&t, info, &[counter]]).to_vec();
        okm.extend_from_slice(&t);
        counter += 1;
    }
    okm.truncate(len);
    okm
}

/// `|DFT_512(window zero-padded)| / 512` for bins 0..256, by direct summation.
pub fn dft_magnitudes(window: &[i16]) -> Vec<f64> {
    assert_eq!(window.len(), WINDOW);
    (0..BINS)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &x) in window.iter().enumerate() {
                let phase = -2.0 * PI * (k * n) as f64 / N_FFT as f64;
                re += f64::from(x) * phase.cos();
                im += f64::from(x) * phase.sin();
            }
            (re * re + im * im).sqrt() / N_FFT as f64
        })
        .collect()
}

/// Unrounded fingerprint on the 0..255 scale, 49 rows of 43.
pub fn float_fingerprint(clip: &AudioClip) -> Vec<f64> {
    assert_eq!(clip.samples.len(), 16_000);
    let frames = (16_000 - WINDOW) / HOP + 1;
    let mut out = Vec::with_capacity(frames * 43);
    for f in 0..frames {
        let mags = dft_magnitudes(&clip.samples[f * HOP..f * HOP + WINDOW]);
        for group in mags.chunks(POOL) {
            let mean = group.iter().sum::<f64>() / group.len() as f64;
            out.push((mean * 255.0 / FULL_SCALE).min(255.0));
        }
    }
    out
}

/// Parameters of a 2-D convolution with TensorFlow-style SAME padding.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub in_rows: usize,
    pub in_cols: usize,
    pub filters: usize,
    pub k_rows: usize,
    pub k_cols: usize,
    pub stride: usize,
}

pub const TINY_CONV: ConvShape = ConvShape { in_rows: 49, in_cols: 43, filters: 8, k_rows: 8, k_cols: 10, stride: 2 };

impl ConvShape {
    pub fn out_rows(&self) -> usize {
        (self.in_rows + self.stride - 1) / self.stride
    }

    pub fn out_cols(&self) -> usize {
        (self.in_cols + self.stride - 1) / self.stride
    }

    fn pads(&self) -> (usize, usize) {
        let total_r = ((self.out_rows() - 1) * self.stride + self.k_rows).saturating_sub(self.in_rows);
        let total_c = ((self.out_cols() - 1) * self.stride + self.k_cols).saturating_sub(self.in_cols);
        (total_r / 2, total_c / 2)
    }
}

/// Zero-padded input, then a plain six-deep loop. Output layout is
/// `(row, col, filter)`; weights are `(filter, k_row, k_col)`.
pub fn naive_conv(s: &ConvShape, input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let (pt, pl) = s.pads();
    let (pr, pc) = (s.in_rows + s.k_rows + s.stride, s.in_cols + s.k_cols + s.stride);
    let mut padded = vec![0.0; pr * pc];
    for r in 0..s.in_rows {
        for c in 0..s.in_cols {
            padded[(r + pt) * pc + c + pl] = input[r * s.in_cols + c];
        }
    }
    let mut out = vec![0.0; s.out_rows() * s.out_cols() * s.filters];
    for orow in 0..s.out_rows() {
        for ocol in 0..s.out_cols() {
            for f in 0..s.filters {
                let mut acc = bias[f];
                for kr in 0..s.k_rows {
                    for kc in 0..s.k_cols {
                        let x = padded[(orow * s.stride + kr) * pc + ocol * s.stride + kc];
                        acc += x * weights[(f * s.k_rows + kr) * s.k_cols + kc];
                    }
                }
                out[(orow * s.out_cols() + ocol) * s.filters + f] = acc;
            }
        }
    }
    out
}

/// `out[k] = b[k] + Σ_i x[i]·W[i][k]` with `W` stored input-major.
pub fn naive_fc(x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    (0..bias.len())
        .map(|k| bias[k] + (0..x.len()).map(|i| x[i] * weights[i * bias.len() + k]).sum::<f64>())
        .collect()
}

pub fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

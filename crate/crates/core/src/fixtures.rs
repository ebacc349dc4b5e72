//! Deterministic synthetic test material: keyword-like clips, a reference
//! tiny_conv model that classifies them, and a reference enclave image.
//!
//! Each keyword class is a two-part tone sweep at class-specific frequencies;
//! `silence` is faint noise and `unknown` is broadband noise. The reference
//! model is a nearest-centroid classifier expressed in tiny_conv weights:
//! a few fixed filters, dense weights = class centroids of the post-ReLU
//! features, bias = −|μ|²/2.

use std::f64::consts::PI;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{make_fingerprint, write_wav, AudioClip, CLIP_SAMPLES, SAMPLE_RATE};
use crate::inference::{conv2d, relu_in_place, save_model, ConvGeometry, TinyConvModel, LABELS, NUM_CLASSES};

/// Four dense weights planted on inputs that are always zero. Their
/// little-endian bytes form [`marker_bytes`], which confidentiality scans
/// look for.
pub const MARKER_WEIGHTS: [f32; 4] = [1234.5677, -0.007_812_5, 3.141_592_7, 271.828_18];
const MARKER_FILTER: usize = 7;

pub fn marker_bytes() -> [u8; 16] {
    let mut out = [0u8; 16];
    for (i, w) in MARKER_WEIGHTS.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn contains_marker(haystack: &[u8]) -> bool {
    let m = marker_bytes();
    haystack.windows(m.len()).any(|w| w == m)
}

/// (first, second) tone of each keyword class, in Hz.
const SWEEPS: [(f64, f64); 10] = [
    (500.0, 1500.0),
    (1500.0, 500.0),
    (700.0, 2500.0),
    (2500.0, 700.0),
    (900.0, 3500.0),
    (3500.0, 900.0),
    (1200.0, 4500.0),
    (4500.0, 1200.0),
    (2000.0, 6000.0),
    (6000.0, 2000.0),
];

pub const TRAINING_VARIANT_BASE: u64 = 1 << 32;

fn add_tone(buf: &mut [f64], start: usize, len: usize, freq: f64, amp: f64) {
    let ramp = 400.min(len / 2);
    for i in 0..len {
        let Some(s) = buf.get_mut(start + i) else { break };
        let env = if i < ramp {
            i as f64 / ramp as f64
        } else if i >= len - ramp {
            (len - i) as f64 / ramp as f64
        } else {
            1.0
        };
        *s += amp * env * (2.0 * PI * freq * i as f64 / f64::from(SAMPLE_RATE)).sin();
    }
}

/// One 1 s clip of class `class` (index into [`LABELS`]).
pub fn keyword_clip(class: usize, variant: u64) -> AudioClip {
    assert!(class < NUM_CLASSES, "class {class} out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(variant.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ class as u64);
    let mut buf = vec![0.0f64; CLIP_SAMPLES];
    let floor = if class == 0 { rng.gen_range(0.0..30.0) } else { rng.gen_range(30.0..150.0) };
    for s in buf.iter_mut() {
        *s = rng.gen_range(-floor..=floor);
    }
    let start = 2_500 + rng.gen_range(0..2_000);
    let len = 9_000 + rng.gen_range(0..2_000);
    match class {
        0 => {}
        1 => {
            let amp = rng.gen_range(2_000.0..5_000.0);
            for s in &mut buf[start..start + len] {
                *s += rng.gen_range(-amp..amp);
            }
        }
        k => {
            let (f1, f2) = SWEEPS[k - 2];
            let amp = rng.gen_range(5_000.0..12_000.0);
            let j1 = rng.gen_range(-25.0..25.0);
            let j2 = rng.gen_range(-25.0..25.0);
            add_tone(&mut buf, start, len / 2, f1 + j1, amp);
            add_tone(&mut buf, start + len / 2, len / 2, f2 + j2, amp);
        }
    }
    AudioClip::new(buf.into_iter().map(|s| s.round().clamp(-32768.0, 32767.0) as i16).collect(), SAMPLE_RATE)
}

/// `per_class` clips of every class, variants `first..first + per_class`.
pub fn labeled_clips(per_class: usize, first: u64) -> Vec<(usize, AudioClip)> {
    (0..NUM_CLASSES)
        .flat_map(|c| (0..per_class as u64).map(move |v| (c, keyword_clip(c, first + v))))
        .collect()
}

/// Ten clips for each of the ten keyword classes (no silence/unknown).
pub fn benchmark_clips() -> Vec<(usize, AudioClip)> {
    (2..NUM_CLASSES).flat_map(|c| (0..10).map(move |v| (c, keyword_clip(c, v)))).collect()
}

/// Writes `<label>_<nnn>.wav` files; returns the paths in write order.
pub fn write_fixture_dir(dir: &Path, clips: &[(usize, AudioClip)]) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut counters = [0usize; NUM_CLASSES];
    let mut out = Vec::with_capacity(clips.len());
    for (class, clip) in clips {
        let path = dir.join(format!("{}_{:03}.wav", LABELS[*class], counters[*class]));
        counters[*class] += 1;
        std::fs::write(&path, write_wav(clip))?;
        out.push(path);
    }
    Ok(out)
}

/// Ground-truth label encoded in a fixture file name, if any.
pub fn label_from_path(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let (label, _) = stem.rsplit_once('_')?;
    LABELS.iter().position(|l| *l == label)
}

fn feature_filters(model: &mut TinyConvModel<f32>) {
    // Centre tap, 2×2 box and a temporal onset detector; filters 3..8 stay dead.
    let k = model.geometry().kernel_len();
    let kc = model.geometry().kernel_cols;
    let at = |f: usize, r: usize, c: usize| f * k + r * kc + c;
    let w = model.conv_weights_mut();
    w[at(0, 3, 4)] = 1.0;
    for (r, c) in [(3, 4), (3, 5), (4, 4), (4, 5)] {
        w[at(1, r, c)] = 0.25;
    }
    w[at(2, 4, 4)] = 1.0;
    w[at(2, 2, 4)] = -1.0;
}

fn features(model: &TinyConvModel<f32>, clip: &AudioClip) -> Vec<f32> {
    let fp = make_fingerprint(clip).expect("fixture clips are standard");
    let mut fmap = conv2d(&fp, model).expect("tiny_conv geometry");
    relu_in_place(&mut fmap.data);
    fmap.data
}

fn build_reference_model() -> TinyConvModel<f32> {
    let mut model = TinyConvModel::<f32>::zeros(ConvGeometry::TINY_CONV).expect("tiny_conv geometry");
    feature_filters(&mut model);
    let n = model.geometry().fc_inputs();
    let per_class = 12;
    let mut centroids = vec![vec![0.0f64; n]; NUM_CLASSES];
    for (class, clip) in labeled_clips(per_class, TRAINING_VARIANT_BASE) {
        for (acc, x) in centroids[class].iter_mut().zip(features(&model, &clip)) {
            *acc += f64::from(x) / per_class as f64;
        }
    }
    for (k, mu) in centroids.iter().enumerate() {
        for (i, &m) in mu.iter().enumerate() {
            model.fc_weights_mut()[i * NUM_CLASSES + k] = m as f32;
        }
        model.fc_bias_mut()[k] = (-0.5 * mu.iter().map(|m| m * m).sum::<f64>()) as f32;
    }
    // Input (0, 0, MARKER_FILTER) is ReLU(0) = 0 for every clip.
    let first = MARKER_FILTER * NUM_CLASSES;
    model.fc_weights_mut()[first..first + 4].copy_from_slice(&MARKER_WEIGHTS);
    model
}

/// The reference classifier for the synthetic clips, carrying the marker.
pub fn reference_model() -> &'static TinyConvModel<f32> {
    static MODEL: OnceLock<TinyConvModel<f32>> = OnceLock::new();
    MODEL.get_or_init(build_reference_model)
}

/// TCV1 bytes of [`reference_model`].
pub fn reference_model_bytes() -> Vec<u8> {
    save_model(reference_model())
}

/// Deterministic 4 KiB stand-in for the enclave application binary.
pub fn reference_enclave_image() -> Vec<u8> {
    let mut image = b"SANCTUARY-APP omg-kws tiny_conv runtime v1\n".to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5A);
    image.extend((image.len()..4096).map(|_| rng.gen::<u8>()));
    image
}

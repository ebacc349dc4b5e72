//! tiny_conv forward pass: conv (8 filters, 8×10, stride 2) → ReLU → dense → 12 logits.
//!
//! Everything is generic over [`Scalar`]; the crate root exports `f32` and
//! `f64` aliases. Layout conventions, which weight files depend on:
//!
//! * conv weights `[filter][kernel_row][kernel_col]`, single input channel;
//! * feature maps and the dense-layer input are flattened `(row, col, channel)`
//!   row-major: `index = (row * out_cols + col) * filters + channel`;
//! * dense weights `[input][class]`, so `logits[k] = Σ_i x[i]·W[i][k] + b[k]`;
//! * argmax ties resolve to the lowest class index.

mod format;
mod layers;

use thiserror::Error;

use crate::audio::{FINGERPRINT_COLS, FINGERPRINT_ROWS};
use crate::Scalar;

pub use format::{load_model, save_model, save_model_with, WeightEncoding, TCV1_HEADER_LEN, TCV1_MAGIC};
pub use layers::{classify, conv2d, conv2d_real, forward, fully_connected, relu, relu_in_place, softmax};

/// Canonical 12-class label order.
pub const LABELS: [&str; 12] = ["silence", "unknown", "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"];
pub const NUM_CLASSES: usize = LABELS.len();

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InferenceError {
    #[error("shape mismatch in {what}: expected {expected}, got {found}")]
    Shape { what: &'static str, expected: usize, found: usize },
    #[error("bad weight-file magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("weight file payload is {found} bytes but its header implies {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("unsupported {what} code {code}")]
    UnsupportedCode { what: &'static str, code: u8 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("label table does not match the canonical class order")]
    Labels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Padding {
    /// Output `⌈in/stride⌉`, extra padding on the bottom/right.
    Same = 0,
    Valid = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_rows: usize,
    pub in_cols: usize,
    pub filters: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub const TINY_CONV: Self = Self {
        in_rows: FINGERPRINT_ROWS,
        in_cols: FINGERPRINT_COLS,
        filters: 8,
        kernel_rows: 8,
        kernel_cols: 10,
        stride: 2,
        padding: Padding::Same,
    };

    fn out_len(&self, input: usize, kernel: usize) -> usize {
        match self.padding {
            Padding::Same => input.div_ceil(self.stride),
            Padding::Valid => (input - kernel) / self.stride + 1,
        }
    }

    fn pad_before(&self, input: usize, kernel: usize) -> usize {
        match self.padding {
            Padding::Same => {
                let out = self.out_len(input, kernel);
                ((out - 1) * self.stride + kernel).saturating_sub(input) / 2
            }
            Padding::Valid => 0,
        }
    }

    pub fn out_rows(&self) -> usize {
        self.out_len(self.in_rows, self.kernel_rows)
    }

    pub fn out_cols(&self) -> usize {
        self.out_len(self.in_cols, self.kernel_cols)
    }

    pub fn pad_top(&self) -> usize {
        self.pad_before(self.in_rows, self.kernel_rows)
    }

    pub fn pad_left(&self) -> usize {
        self.pad_before(self.in_cols, self.kernel_cols)
    }

    pub fn input_len(&self) -> usize {
        self.in_rows * self.in_cols
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_rows * self.kernel_cols
    }

    /// Flattened feature-map length, i.e. dense-layer input size.
    pub fn fc_inputs(&self) -> usize {
        self.out_rows() * self.out_cols() * self.filters
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::Geometry(m.to_owned()));
        if self.in_rows != FINGERPRINT_ROWS || self.in_cols != FINGERPRINT_COLS {
            return bad("input must be the 49x43 fingerprint");
        }
        if self.filters == 0 || self.kernel_rows == 0 || self.kernel_cols == 0 || self.stride == 0 {
            return bad("zero-sized dimension");
        }
        if self.padding == Padding::Valid && (self.kernel_rows > self.in_rows || self.kernel_cols > self.in_cols) {
            return bad("kernel larger than input with VALID padding");
        }
        Ok(())
    }
}

/// Weights and label table of a tiny_conv network.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyConvModel<S> {
    geometry: ConvGeometry,
    conv_weights: Vec<S>,
    conv_bias: Vec<S>,
    fc_weights: Vec<S>,
    fc_bias: Vec<S>,
    labels: Vec<String>,
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), InferenceError> {
    if expected == found {
        Ok(())
    } else {
        Err(InferenceError::Shape { what, expected, found })
    }
}

impl<S: Scalar> TinyConvModel<S> {
    pub fn new(
        geometry: ConvGeometry,
        conv_weights: Vec<S>,
        conv_bias: Vec<S>,
        fc_weights: Vec<S>,
        fc_bias: Vec<S>,
    ) -> Result<Self, InferenceError> {
        geometry.validate()?;
        check_len("conv weights", geometry.filters * geometry.kernel_len(), conv_weights.len())?;
        check_len("conv bias", geometry.filters, conv_bias.len())?;
        check_len("fc weights", geometry.fc_inputs() * NUM_CLASSES, fc_weights.len())?;
        check_len("fc bias", NUM_CLASSES, fc_bias.len())?;
        Ok(Self {
            geometry,
            conv_weights,
            conv_bias,
            fc_weights,
            fc_bias,
            labels: LABELS.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn zeros(geometry: ConvGeometry) -> Result<Self, InferenceError> {
        Self::new(
            geometry,
            vec![S::zero(); geometry.filters * geometry.kernel_len()],
            vec![S::zero(); geometry.filters],
            vec![S::zero(); geometry.fc_inputs() * NUM_CLASSES],
            vec![S::zero(); NUM_CLASSES],
        )
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn conv_weights(&self) -> &[S] {
        &self.conv_weights
    }

    pub fn conv_weights_mut(&mut self) -> &mut [S] {
        &mut self.conv_weights
    }

    pub fn conv_bias(&self) -> &[S] {
        &self.conv_bias
    }

    pub fn conv_bias_mut(&mut self) -> &mut [S] {
        &mut self.conv_bias
    }

    pub fn fc_weights(&self) -> &[S] {
        &self.fc_weights
    }

    pub fn fc_weights_mut(&mut self) -> &mut [S] {
        &mut self.fc_weights
    }

    pub fn fc_bias(&self) -> &[S] {
        &self.fc_bias
    }

    pub fn fc_bias_mut(&mut self) -> &mut [S] {
        &mut self.fc_bias
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Weight of tap `(kr, kc)` of `filter`.
    pub fn conv_weight(&self, filter: usize, kr: usize, kc: usize) -> S {
        let g = &self.geometry;
        self.conv_weights[(filter * g.kernel_rows + kr) * g.kernel_cols + kc]
    }

    pub fn fc_weight(&self, input: usize, class: usize) -> S {
        self.fc_weights[input * NUM_CLASSES + class]
    }

    /// Same model in another scalar type.
    pub fn cast<T: Scalar>(&self) -> TinyConvModel<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::from_f64_lossy(x.to_f64_lossless())).collect();
        TinyConvModel {
            geometry: self.geometry,
            conv_weights: conv(&self.conv_weights),
            conv_bias: conv(&self.conv_bias),
            fc_weights: conv(&self.fc_weights),
            fc_bias: conv(&self.fc_bias),
            labels: self.labels.clone(),
        }
    }
}

/// Conv output, `(row, col, channel)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<S>,
}

impl<S: Copy> FeatureMap<S> {
    pub fn get(&self, row: usize, col: usize, channel: usize) -> S {
        self.data[(row * self.cols + col) * self.channels + channel]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Logits<S>(pub Vec<S>);

/// Softmax output, always `f64` so it sums to one within 1e-9 whatever the
/// model scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub index: usize,
    pub label: String,
    pub score: f64,
}

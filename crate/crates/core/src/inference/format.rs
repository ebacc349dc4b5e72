//! TCV1 weight files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TCV1"
//! 4       1     weight encoding: 0 = f32, 1 = int8 (symmetric, per tensor)
//! 5       1     padding: 0 = SAME, 1 = VALID
//! 6       2     reserved, zero
//! 8       7×4   u32: input_rows, input_cols, filters, kernel_rows,
//!               kernel_cols, stride, classes
//! 36      ..    conv weights   (see below)
//!               conv bias      f32 × filters
//!               dense weights  (see below)
//!               dense bias     f32 × classes
//!               labels         classes × (u8 length, UTF-8 bytes)
//! ```
//!
//! Weight tensors are `f32` little-endian in f32 mode; in int8 mode an `f32`
//! scale followed by one `i8` per weight, value = `scale · q`. Biases stay
//! `f32` in both modes.

use super::{ConvGeometry, InferenceError, Padding, TinyConvModel, LABELS, NUM_CLASSES};
use crate::Scalar;

pub const TCV1_MAGIC: &[u8; 4] = b"TCV1";
pub const TCV1_HEADER_LEN: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum WeightEncoding {
    F32 = 0,
    Int8 = 1,
}

impl WeightEncoding {
    fn tensor_len(self, n: usize) -> usize {
        match self {
            Self::F32 => 4 * n,
            Self::Int8 => 4 + n,
        }
    }
}

fn put_f32s<S: Scalar>(out: &mut Vec<u8>, xs: &[S]) {
    for x in xs {
        out.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
    }
}

fn put_tensor<S: Scalar>(out: &mut Vec<u8>, xs: &[S], enc: WeightEncoding) {
    match enc {
        WeightEncoding::F32 => put_f32s(out, xs),
        WeightEncoding::Int8 => {
            let max = xs.iter().map(|x| x.to_f32().unwrap().abs()).fold(0.0f32, f32::max);
            let scale = if max > 0.0 { max / 127.0 } else { 1.0 };
            out.extend_from_slice(&scale.to_le_bytes());
            out.extend(xs.iter().map(|x| (x.to_f32().unwrap() / scale).round().clamp(-127.0, 127.0) as i8 as u8));
        }
    }
}

/// Serializes with f32 weights.
pub fn save_model<S: Scalar>(model: &TinyConvModel<S>) -> Vec<u8> {
    save_model_with(model, WeightEncoding::F32)
}

pub fn save_model_with<S: Scalar>(model: &TinyConvModel<S>, enc: WeightEncoding) -> Vec<u8> {
    let g = model.geometry();
    let mut out = Vec::with_capacity(TCV1_HEADER_LEN + enc.tensor_len(model.fc_weights().len()) + 4096);
    out.extend_from_slice(TCV1_MAGIC);
    out.push(enc as u8);
    out.push(g.padding as u8);
    out.extend_from_slice(&[0, 0]);
    for d in [g.in_rows, g.in_cols, g.filters, g.kernel_rows, g.kernel_cols, g.stride, NUM_CLASSES] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    put_tensor(&mut out, model.conv_weights(), enc);
    put_f32s(&mut out, model.conv_bias());
    put_tensor(&mut out, model.fc_weights(), enc);
    put_f32s(&mut out, model.fc_bias());
    for label in model.labels() {
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    expected_total: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], InferenceError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(InferenceError::Dimension { expected: self.expected_total.max(end), found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f32s<S: Scalar>(&mut self, n: usize) -> Result<Vec<S>, InferenceError> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| S::from_f32(f32::from_le_bytes(c.try_into().unwrap())).unwrap())
            .collect())
    }

    fn tensor<S: Scalar>(&mut self, n: usize, enc: WeightEncoding) -> Result<Vec<S>, InferenceError> {
        match enc {
            WeightEncoding::F32 => self.f32s(n),
            WeightEncoding::Int8 => {
                let scale = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
                Ok(self.take(n)?.iter().map(|&q| S::from_f32(scale * f32::from(q as i8)).unwrap()).collect())
            }
        }
    }
}

pub fn load_model<S: Scalar>(bytes: &[u8]) -> Result<TinyConvModel<S>, InferenceError> {
    if bytes.len() < 4 {
        return Err(InferenceError::Dimension { expected: TCV1_HEADER_LEN, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != TCV1_MAGIC {
        return Err(InferenceError::BadMagic(magic));
    }
    if bytes.len() < TCV1_HEADER_LEN {
        return Err(InferenceError::Dimension { expected: TCV1_HEADER_LEN, found: bytes.len() });
    }
    let enc = match bytes[4] {
        0 => WeightEncoding::F32,
        1 => WeightEncoding::Int8,
        code => return Err(InferenceError::UnsupportedCode { what: "weight encoding", code }),
    };
    let padding = match bytes[5] {
        0 => Padding::Same,
        1 => Padding::Valid,
        code => return Err(InferenceError::UnsupportedCode { what: "padding", code }),
    };
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let geometry = ConvGeometry {
        in_rows: dim(0),
        in_cols: dim(1),
        filters: dim(2),
        kernel_rows: dim(3),
        kernel_cols: dim(4),
        stride: dim(5),
        padding,
    };
    geometry.validate()?;
    let classes = dim(6);
    if classes != NUM_CLASSES {
        return Err(InferenceError::Shape { what: "class count", expected: NUM_CLASSES, found: classes });
    }

    let conv_n = geometry.filters * geometry.kernel_len();
    let fc_n = geometry.fc_inputs() * NUM_CLASSES;
    let label_bytes: usize = LABELS.iter().map(|l| 1 + l.len()).sum();
    let expected_total = TCV1_HEADER_LEN
        + enc.tensor_len(conv_n)
        + 4 * geometry.filters
        + enc.tensor_len(fc_n)
        + 4 * NUM_CLASSES
        + label_bytes;

    let mut cur = Cursor { bytes, pos: TCV1_HEADER_LEN, expected_total };
    let conv_weights = cur.tensor(conv_n, enc)?;
    let conv_bias = cur.f32s(geometry.filters)?;
    let fc_weights = cur.tensor(fc_n, enc)?;
    let fc_bias = cur.f32s(NUM_CLASSES)?;
    for label in LABELS {
        let len = cur.take(1)?[0] as usize;
        if cur.take(len)? != label.as_bytes() {
            return Err(InferenceError::Labels);
        }
    }
    if cur.pos != bytes.len() {
        return Err(InferenceError::Dimension { expected: cur.pos, found: bytes.len() });
    }
    TinyConvModel::new(geometry, conv_weights, conv_bias, fc_weights, fc_bias)
}

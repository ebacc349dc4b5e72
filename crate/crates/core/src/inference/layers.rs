use super::{check_len, Classification, FeatureMap, InferenceError, Logits, Probabilities, TinyConvModel, NUM_CLASSES};
use crate::audio::Fingerprint;
use crate::Scalar;

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Convolution over a real-valued 49×43 input (row-major), pre-activation.
///
/// Taps falling into padding are skipped rather than multiplied by zero, so
/// each output touches only the in-bounds kernel window.
pub fn conv2d_real<S: Scalar>(input: &[S], model: &TinyConvModel<S>) -> Result<FeatureMap<S>, InferenceError> {
    let g = model.geometry();
    check_len("conv input", g.input_len(), input.len())?;
    let (out_rows, out_cols, filters) = (g.out_rows(), g.out_cols(), g.filters);
    let (pad_top, pad_left) = (g.pad_top() as isize, g.pad_left() as isize);
    let weights = model.conv_weights();
    let mut data = vec![S::zero(); out_rows * out_cols * filters];

    for r in 0..out_rows {
        let top = (r * g.stride) as isize - pad_top;
        let kr_lo = (-top).max(0) as usize;
        let kr_hi = (g.in_rows as isize - top).min(g.kernel_rows as isize).max(0) as usize;
        for c in 0..out_cols {
            let left = (c * g.stride) as isize - pad_left;
            let kc_lo = (-left).max(0) as usize;
            let kc_hi = (g.in_cols as isize - left).min(g.kernel_cols as isize).max(0) as usize;
            let out = &mut data[(r * out_cols + c) * filters..][..filters];
            out.copy_from_slice(model.conv_bias());
            if kc_lo >= kc_hi {
                continue;
            }
            for kr in kr_lo..kr_hi {
                let row_start = (top + kr as isize) as usize * g.in_cols;
                let col_start = (left + kc_lo as isize) as usize;
                let in_seg = &input[row_start + col_start..row_start + col_start + (kc_hi - kc_lo)];
                for (ch, o) in out.iter_mut().enumerate() {
                    let w_row = (ch * g.kernel_rows + kr) * g.kernel_cols;
                    *o += dot(in_seg, &weights[w_row + kc_lo..w_row + kc_hi]);
                }
            }
        }
    }
    Ok(FeatureMap { rows: out_rows, cols: out_cols, channels: filters, data })
}

/// Convolution of a quantized fingerprint, dequantized to `[0, 1]` first.
pub fn conv2d<S: Scalar>(fp: &Fingerprint, model: &TinyConvModel<S>) -> Result<FeatureMap<S>, InferenceError> {
    conv2d_real(&fp.dequantized::<S>(), model)
}

pub fn relu<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        S::zero()
    }
}

pub fn relu_in_place<S: Scalar>(xs: &mut [S]) {
    for x in xs {
        *x = relu(*x);
    }
}

/// `logits = Wᵀx + b` over the flattened `(row, col, channel)` feature vector.
pub fn fully_connected<S: Scalar>(x: &[S], model: &TinyConvModel<S>) -> Result<Logits<S>, InferenceError> {
    check_len("fc input", model.geometry().fc_inputs(), x.len())?;
    let mut logits = model.fc_bias().to_vec();
    for (xi, row) in x.iter().zip(model.fc_weights().chunks_exact(NUM_CLASSES)) {
        if *xi == S::zero() {
            continue;
        }
        for (l, &w) in logits.iter_mut().zip(row) {
            *l += *xi * w;
        }
    }
    Ok(Logits(logits))
}

/// Max-subtracted softmax, evaluated in `f64`.
pub fn softmax<S: Scalar>(logits: &[S]) -> Probabilities {
    let wide: Vec<f64> = logits.iter().map(|l| l.to_f64_lossless()).collect();
    let max = wide.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = wide.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Probabilities(exps.into_iter().map(|e| e / total).collect())
}

/// conv → ReLU → dense on a real-valued input.
pub fn forward<S: Scalar>(input: &[S], model: &TinyConvModel<S>) -> Result<Logits<S>, InferenceError> {
    let mut fmap = conv2d_real(input, model)?;
    relu_in_place(&mut fmap.data);
    fully_connected(&fmap.data, model)
}

fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn classify<S: Scalar>(fp: &Fingerprint, model: &TinyConvModel<S>) -> Result<Classification, InferenceError> {
    let logits = forward(&fp.dequantized::<S>(), model)?;
    let index = argmax(&logits.0);
    let probs = softmax(&logits.0);
    Ok(Classification { index, label: model.labels()[index].clone(), score: probs.0[index] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{FINGERPRINT_COLS, FINGERPRINT_LEN};
    use crate::inference::ConvGeometry;

    fn tiny() -> TinyConvModel<f64> {
        TinyConvModel::zeros(ConvGeometry::TINY_CONV).unwrap()
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_map() {
        let mut m = tiny();
        m.conv_weights_mut().iter_mut().enumerate().for_each(|(i, w)| *w = i as f64 * 0.01);
        let f = conv2d(&Fingerprint::zeros(), &m).unwrap();
        assert_eq!((f.rows, f.cols, f.channels), (25, 22, 8));
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_tap_filter_samples_strided_positions() {
        // Tap (3, 4) lines up with the SAME-padding offset, so output (r, c)
        // reads input (2r, 2c).
        let mut m = tiny();
        m.conv_weights_mut()[3 * 10 + 4] = 1.0;
        let mut input = vec![0.0; FINGERPRINT_LEN];
        input[10 * FINGERPRINT_COLS + 6] = 0.75;
        let f = conv2d_real(&input, &m).unwrap();
        for r in 0..25 {
            for c in 0..22 {
                let expect = if (r, c) == (5, 3) { 0.75 } else { 0.0 };
                assert_eq!(f.get(r, c, 0), expect, "({r},{c})");
                assert_eq!(f.get(r, c, 1), 0.0);
            }
        }
    }

    #[test]
    fn relu_values() {
        assert_eq!(relu(-1.0f32), 0.0);
        assert_eq!(relu(0.0f64), 0.0);
        assert_eq!(relu(2.5f64), 2.5);
    }

    #[test]
    fn fc_zero_input_returns_bias() {
        let mut m = tiny();
        m.fc_bias_mut().iter_mut().enumerate().for_each(|(i, b)| *b = i as f64 - 3.0);
        let l = fully_connected(&vec![0.0; 4400], &m).unwrap();
        assert_eq!(l.0, m.fc_bias());
    }

    #[test]
    fn fc_identity_column_selects_input() {
        let mut m = tiny();
        m.fc_weights_mut()[1234 * 12 + 7] = 1.0;
        m.fc_bias_mut()[7] = 0.5;
        let mut x = vec![0.0; 4400];
        x[1234] = 2.0;
        x[99] = 5.0;
        assert_eq!(fully_connected(&x, &m).unwrap().0[7], 2.5);
    }

    #[test]
    fn fc_rejects_wrong_dimension() {
        assert_eq!(
            fully_connected(&vec![0.0; 10], &tiny()),
            Err(InferenceError::Shape { what: "fc input", expected: 4400, found: 10 })
        );
    }

    #[test]
    fn softmax_cases() {
        let uniform = softmax(&[0.0f64; 12]);
        assert!(uniform.0.iter().all(|&p| (p - 1.0 / 12.0).abs() < 1e-15));

        let logits: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.0).collect();
        let (a, b) = (softmax(&logits), softmax(&shifted));
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut big = [0.0f32; 12];
        big[4] = 1000.0;
        let p = softmax(&big);
        assert!((p.0[4] - 1.0).abs() < 1e-12);
        assert!(p.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn crafted_bias_routes_to_down() {
        let mut m = tiny();
        m.fc_bias_mut()[5] = 3.0;
        let c = classify(&Fingerprint::zeros(), &m).unwrap();
        assert_eq!(c.label, "down");
        assert_eq!(c.index, 5);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let mut m = tiny();
        m.fc_bias_mut()[9] = 1.0;
        m.fc_bias_mut()[3] = 1.0;
        assert_eq!(classify(&Fingerprint::zeros(), &m).unwrap().index, 3);
        assert_eq!(classify(&Fingerprint::zeros(), &tiny()).unwrap().label, "silence");
    }
}

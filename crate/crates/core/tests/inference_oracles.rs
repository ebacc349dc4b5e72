mod oracle;

use omg_core::audio::make_fingerprint;
use omg_core::fixtures::{keyword_clip, reference_model};
use omg_core::inference::{
    classify, conv2d, conv2d_real, forward, fully_connected, relu_in_place, softmax, ConvGeometry, TinyConvModel,
};
use omg_core::{TinyConvModelF32, TinyConvModelF64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oracle::{naive_conv, naive_fc, naive_softmax, TINY_CONV};

fn random_model(rng: &mut ChaCha8Rng) -> TinyConvModelF64 {
    let g = ConvGeometry::TINY_CONV;
    let mut v = |n: usize, s: f64| (0..n).map(|_| rng.gen_range(-s..s)).collect::<Vec<f64>>();
    TinyConvModel::new(g, v(g.filters * g.kernel_len(), 1.0), v(g.filters, 0.5), v(g.fc_inputs() * 12, 0.1), v(12, 1.0))
        .unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_and_dense_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1F);
    for case in 0..60 {
        let model = random_model(&mut rng);
        let input: Vec<f64> = (0..49 * 43).map(|_| rng.gen_range(0.0..1.0)).collect();
        let fmap = conv2d_real(&input, &model).unwrap();
        let oracle_map = naive_conv(&TINY_CONV, &input, model.conv_weights(), model.conv_bias());
        assert!(max_diff(&fmap.data, &oracle_map) <= 1e-5, "conv case {case}");

        let mut act = oracle_map.clone();
        act.iter_mut().for_each(|x| *x = x.max(0.0));
        let logits = forward(&input, &model).unwrap();
        let oracle_logits = naive_fc(&act, model.fc_weights(), model.fc_bias());
        assert!(max_diff(&logits.0, &oracle_logits) <= 1e-5, "fc case {case}");
    }
}

#[test]
fn f32_path_agrees_with_f64_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x32);
    for _ in 0..10 {
        let model = random_model(&mut rng);
        let narrow: TinyConvModelF32 = model.cast();
        let input: Vec<f64> = (0..49 * 43).map(|_| rng.gen_range(0.0..1.0)).collect();
        let input32: Vec<f32> = input.iter().map(|&x| x as f32).collect();
        let wide = forward(&input, &model).unwrap();
        let thin = forward(&input32, &narrow).unwrap();
        for (a, b) in wide.0.iter().zip(&thin.0) {
            assert!((a - f64::from(*b)).abs() <= 1e-3 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn shape_chain() {
    let model = reference_model();
    let fp = make_fingerprint(&keyword_clip(3, 0)).unwrap();
    assert_eq!(fp.as_bytes().len(), 49 * 43);
    let mut fmap = conv2d(&fp, model).unwrap();
    assert_eq!((fmap.rows, fmap.cols, fmap.channels), (25, 22, 8));
    relu_in_place(&mut fmap.data);
    assert_eq!(fmap.data.len(), 4400);
    assert_eq!(fully_connected(&fmap.data, model).unwrap().0.len(), 12);
}

#[test]
fn classification_matches_oracle_chain_on_fixture_clips() {
    let model: TinyConvModelF64 = reference_model().cast();
    for class in 0..12 {
        let fp = make_fingerprint(&keyword_clip(class, 2)).unwrap();
        let input: Vec<f64> = fp.as_bytes().iter().map(|&q| f64::from(q) / 255.0).collect();
        let mut act = naive_conv(&TINY_CONV, &input, model.conv_weights(), model.conv_bias());
        act.iter_mut().for_each(|x| *x = x.max(0.0));
        let logits = naive_fc(&act, model.fc_weights(), model.fc_bias());
        let probs = naive_softmax(&logits);
        let best = (0..12).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
        let got = classify(&fp, reference_model()).unwrap();
        assert_eq!(got.index, best, "class {class}");
        assert!((got.score - probs[best]).abs() < 1e-4);
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-80.0f64..80.0, 12)) {
        let p = softmax(&logits);
        let total: f64 = p.0.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(max_diff(&p.0, &naive_softmax(&logits)) <= 1e-12);
    }
}

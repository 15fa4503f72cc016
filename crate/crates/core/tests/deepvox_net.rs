mod common;

use common::{random_frame, rng, small_deepvox};
use deepvox::audio::SpeechFrame;
use deepvox::deepvox_net::*;
use deepvox::ndcore::{ConvSpec, ParamStore, Tensor, SELU_LAMBDA};
use rand::Rng;

fn default_params(seed: u64) -> (DeepVoxConfig, ParamStore<f64>) {
    let cfg = DeepVoxConfig::default();
    let p = init_params(&cfg, &mut rng(seed));
    (cfg, p)
}

fn randomize_biases(p: &mut ParamStore<f64>, cfg: &DeepVoxConfig, seed: u64) {
    let mut r = rng(seed);
    for i in 0..cfg.layers.len() {
        let b = p.get_mut(&bias_name(i)).unwrap();
        b.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
    }
}

#[test]
fn zero_frame_gives_zero_response_without_bias_and_equal_columns_with() {
    let (cfg, mut p) = default_params(1);
    let zero = SpeechFrame::zeros(160, 200);
    let f = extract_features(&zero, &p, &cfg).unwrap();
    assert!(f.values.iter().all(|&v| v == 0.0));
    randomize_biases(&mut p, &cfg, 2);
    let f = extract_features(&zero, &p, &cfg).unwrap();
    let first = f.column(0);
    assert!(first.iter().any(|&v| v != 0.0));
    for u in 1..200 {
        assert_eq!(f.column(u), first);
    }
}

#[test]
fn permuting_units_permutes_outputs() {
    let cfg = small_deepvox();
    let p: ParamStore<f32> = init_params(&cfg, &mut rng(3));
    let frame = random_frame(160, 200, 4);
    let mut perm: Vec<usize> = (0..200).collect();
    perm.reverse();
    perm.swap(3, 150);
    let a = extract_features(&frame, &p, &cfg).unwrap();
    let b = extract_features(&frame.permute_columns(&perm), &p, &cfg).unwrap();
    for (j, &src) in perm.iter().enumerate() {
        for (x, y) in b.column(j).iter().zip(a.column(src)) {
            assert!((x - y).abs() <= 1e-6);
        }
    }
}

#[test]
fn single_unit_matches_full_frame_column() {
    let (cfg, mut p) = default_params(5);
    randomize_biases(&mut p, &cfg, 6);
    let p32: ParamStore<f32> = p.cast();
    let frame = random_frame(160, 200, 7);
    let full = extract_features(&frame, &p32, &cfg).unwrap();
    for u in [0, 17, 199] {
        let single = SpeechFrame::new(frame.column(u), 160, 1, "s", "c").unwrap();
        let one = extract_features(&single, &p32, &cfg).unwrap();
        assert_eq!((one.channels, one.units), (40, 1));
        for (x, y) in one.values.iter().zip(full.column(u)) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn changing_one_unit_changes_only_its_column() {
    let cfg = small_deepvox();
    let p: ParamStore<f32> = init_params(&cfg, &mut rng(8));
    let a = random_frame(160, 200, 9);
    let mut b = a.clone();
    b.set_column(42, &random_frame(160, 1, 10).data);
    let (fa, fb) = (
        extract_features(&a, &p, &cfg).unwrap(),
        extract_features(&b, &p, &cfg).unwrap(),
    );
    for u in 0..200 {
        let same = fa.column(u) == fb.column(u);
        assert_eq!(same, u != 42, "unit {u}");
    }
}

#[test]
fn wrong_frame_shape_is_rejected() {
    let (cfg, p) = default_params(1);
    assert!(extract_features(&SpeechFrame::zeros(161, 200), &p, &cfg).is_err());
}

fn single_layer(taps: &[f64], out: usize) -> (DeepVoxConfig, ParamStore<f64>) {
    let cfg = DeepVoxConfig {
        layers: vec![ConvSpec::new(1, out, taps.len(), 1)],
        unit_length: 160,
    };
    let mut p = ParamStore::new();
    let w: Vec<f64> = (0..out).flat_map(|_| taps.iter().copied()).collect();
    p.insert(weight_name(0), Tensor::from_vec(&[out, 1, taps.len()], w).unwrap());
    (cfg, p)
}

#[test]
fn identity_layer_gives_unit_impulses() {
    let (cfg, p) = single_layer(&[1.0], 40);
    let fb = effective_filterbank(&p, &cfg).unwrap();
    assert_eq!(fb.len(), 40);
    assert!(fb.iter().all(|h| h == &vec![1.0]));
}

#[test]
fn two_layers_multiply_as_polynomials() {
    // layer 1: 1 + 2x; layer 2: taps [3, 1] at dilation 2, i.e. 3 + x^2
    let cfg = DeepVoxConfig {
        layers: vec![ConvSpec::new(1, 1, 2, 1), ConvSpec::new(1, 1, 2, 2)],
        unit_length: 160,
    };
    let mut p = ParamStore::new();
    p.insert(weight_name(0), Tensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]).unwrap());
    p.insert(weight_name(1), Tensor::from_vec(&[1, 1, 2], vec![3.0, 1.0]).unwrap());
    // (1 + 2x)(3 + x^2) = 3 + 6x + x^2 + 2x^3
    assert_eq!(effective_filterbank(&p, &cfg).unwrap(), vec![vec![3.0, 6.0, 1.0, 2.0]]);
}

#[test]
fn filterbank_matches_cascade_oracle_on_random_kernels() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let layers = vec![
            ConvSpec::new(1, 3, r.random_range(1..5), 1),
            ConvSpec::new(3, 2, r.random_range(1..4), r.random_range(1..4)),
            ConvSpec::new(2, 4, r.random_range(1..4), r.random_range(1..3)),
        ];
        let cfg = DeepVoxConfig {
            layers,
            unit_length: 160,
        };
        let p: ParamStore<f64> = init_params(&cfg, &mut r);
        let fb = effective_filterbank(&p, &cfg).unwrap();
        let oracle = common::oracle::cascade_oracle(&p, &cfg);
        assert_eq!(fb.len(), oracle.len());
        for (a, b) in fb.iter().zip(&oracle) {
            assert_eq!(a.len(), cfg.receptive_field());
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn filterbank_matches_small_signal_probe() {
    let cfg = DeepVoxConfig {
        layers: DeepVoxConfig::default()
            .layers
            .into_iter()
            .map(|s| s.with_bias(false))
            .collect(),
        unit_length: 160,
    };
    let mut p: ParamStore<f64> = init_params(&cfg, &mut rng(11));
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = v.abs());
    }
    let fb = effective_filterbank(&p, &cfg).unwrap();
    let pos = 100;
    let mut unit = vec![0.0; 160];
    unit[pos] = 1e-4;
    let resp = stack_response(&unit, &p, &cfg).unwrap();
    let gain = SELU_LAMBDA.powi(cfg.layers.len() as i32 - 1) * 1e-4;
    for (h, y) in fb.iter().zip(&resp) {
        let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (m, &hm) in h.iter().enumerate() {
            let probed = y[pos - m] / gain;
            assert!((probed - hm).abs() <= 0.01 * peak, "tap {m}: {probed} vs {hm}");
        }
    }
}

#[test]
fn identity_kernel_has_flat_response() {
    let (cfg, p) = single_layer(&[1.0], 1);
    let r = layer_frequency_response(&p, &cfg, 0).unwrap();
    assert_eq!(r.freqs_hz.len(), 513);
    assert_eq!(r.freqs_hz[512], 4000.0);
    assert!(r.magnitude.iter().all(|&m| (m - 1.0).abs() < 1e-12));
}

#[test]
fn averaging_kernel_follows_cosine() {
    let (cfg, p) = single_layer(&[0.5, 0.5], 1);
    let r = layer_frequency_response(&p, &cfg, 0).unwrap();
    for (f, m) in r.freqs_hz.iter().zip(&r.magnitude) {
        let expect = (std::f64::consts::PI * f / 8000.0).cos().abs();
        assert!((m - expect).abs() <= 1e-9, "{f} Hz");
    }
    assert!(r.magnitude[512] < 1e-12);
}

#[test]
fn cumulative_response_is_nonnegative() {
    let (cfg, p) = default_params(12);
    for layer in 0..cfg.layers.len() {
        let r = layer_frequency_response(&p, &cfg, layer).unwrap();
        assert!(r.magnitude.iter().all(|&m| m >= 0.0));
    }
    assert!(layer_frequency_response(&p, &cfg, 4).is_err());
}

use ndcore::{grad_check, ConvSpec, NdError, Tape, Tensor, SELU_ALPHA, SELU_LAMBDA};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Naive O(C*L*K) cross-correlation: sum over channels, then taps, bias last.
fn naive_conv(x: &[f64], c: usize, l: usize, w: &[f64], o: usize, k: usize, b: &[f64]) -> Vec<f64> {
    let lo = l - k + 1;
    let mut y = vec![0.0; o * lo];
    for oc in 0..o {
        for t in 0..lo {
            let mut acc = 0.0;
            for ic in 0..c {
                for kk in 0..k {
                    acc += w[(oc * c + ic) * k + kk] * x[ic * l + t + kk];
                }
            }
            y[oc * lo + t] = acc + b[oc];
        }
    }
    y
}

#[test]
fn conv_identity_kernel() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_vec(&[1, 4], vec![0.5, -1.0, 2.0, 3.0]).unwrap());
    let w = tape.constant(Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap());
    let y = tape
        .conv1d(x, w, None, &ConvSpec::new(1, 1, 1, 1).with_bias(false))
        .unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -1.0, 2.0, 3.0]);
}

#[test]
fn conv_dilated_hand_example() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_vec(&[1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
    let w = tape.constant(Tensor::from_vec(&[1, 1, 2], vec![1.0, 1.0]).unwrap());
    let y = tape
        .conv1d(x, w, None, &ConvSpec::new(1, 1, 2, 2).with_bias(false))
        .unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2]);
    assert_eq!(tape.value(y).data(), &[1.0, 0.0]);
}

#[test]
fn conv_shape_errors_name_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 10]));
    let w = tape.constant(Tensor::zeros(&[3, 1, 3]));
    let err = tape
        .conv1d(x, w, None, &ConvSpec::new(1, 3, 3, 1).with_bias(false))
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 10]") && msg.contains("[3, 1, 3]"), "{msg}");
    // extent (3-1)*5+1 = 11 > 10
    let w = tape.constant(Tensor::zeros(&[3, 2, 3]));
    assert!(tape
        .conv1d(x, w, None, &ConvSpec::new(2, 3, 3, 5).with_bias(false))
        .is_err());
}

#[test]
fn conv_matches_naive_reference_bitwise_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (c, o, l, k) = (5, 7, 40, 4);
    let x = randn(&[c, l], &mut rng);
    let w = randn(&[o, c, k], &mut rng);
    let b = randn(&[o], &mut rng);
    let mut tape = Tape::<f64>::new();
    let (xv, wv, bv) = (
        tape.constant(x.clone()),
        tape.constant(w.clone()),
        tape.constant(b.clone()),
    );
    let y = tape.conv1d(xv, wv, Some(bv), &ConvSpec::new(c, o, k, 1)).unwrap();
    let reference = naive_conv(x.data(), c, l, w.data(), o, k, b.data());
    assert_eq!(tape.value(y).data(), reference.as_slice());
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = ConvSpec::new(3, 4, 3, 2).with_stride(2);
    let inputs = [
        randn(&[2, 3, 17], &mut rng),
        randn(&[4, 3, 3], &mut rng),
        randn(&[4], &mut rng),
    ];
    let err = grad_check(
        |t, v| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), &spec)?;
            t.sum(y)
        },
        &inputs,
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-7, "conv is affine in each argument: {err}");
}

#[test]
fn selu_values_and_gradients() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::vector(vec![0.0, 10.0]));
    let y = tape.selu(x).unwrap();
    assert_eq!(tape.value(y).data()[0], 0.0);
    let ratio = tape.value(y).data()[1] / 10.0;
    assert!(((ratio - SELU_LAMBDA) / SELU_LAMBDA).abs() < 1e-6);

    for &x0 in &[-2.0, -0.1, 0.1, 2.0] {
        let err = grad_check(
            |t, v| {
                let y = t.selu(v[0])?;
                t.sum(y)
            },
            &[Tensor::vector(vec![x0])],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "x={x0}: {err}");
    }
    // negative branch closed form
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::vector(vec![-1.0]));
    let y = tape.selu(x).unwrap();
    let expected = SELU_LAMBDA * SELU_ALPHA * ((-1.0f64).exp() - 1.0);
    assert!((tape.value(y).item() - expected).abs() < 1e-15);
}

#[test]
fn alpha_dropout_identity_cases_and_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
    let a = tape.alpha_dropout(x, 0.3, false, 1).unwrap();
    assert_eq!(tape.value(a), tape.value(x));
    let b = tape.alpha_dropout(x, 0.0, true, 1).unwrap();
    assert_eq!(tape.value(b), tape.value(x));
    assert!(tape.alpha_dropout(x, 1.0, true, 1).is_err());
    assert!(tape.alpha_dropout(x, -0.1, true, 1).is_err());
}

#[test]
fn alpha_dropout_preserves_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = Tensor::<f64>::from_vec(
        &[1_000_000],
        (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let y = tape.alpha_dropout(xv, 0.1, true, 1234).unwrap();
    let d = tape.value(y).data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "var {var}");
    // same seed reproduces the mask
    let z = tape.alpha_dropout(xv, 0.1, true, 1234).unwrap();
    assert_eq!(tape.value(y), tape.value(z));
}

#[test]
fn alpha_dropout_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let err = grad_check(
        |t, v| {
            let y = t.alpha_dropout(v[0], 0.3, true, 77)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        },
        &[randn(&[20], &mut rng)],
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn pooling_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_vec(&[1, 3], vec![1.0, 3.0, 2.0]).unwrap());
    let m = tape.max_pool1d(x, 2, 1).unwrap();
    assert_eq!(tape.value(m).data(), &[3.0, 3.0]);
    let a = tape.avg_pool1d(x, 3, 1).unwrap();
    assert_eq!(tape.value(a).data(), &[2.0]);
    assert!(tape.avg_pool1d(x, 4, 1).is_err());
    assert!(tape.max_pool1d(x, 4, 1).is_err());
}

#[test]
fn pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = randn(&[2, 3, 12], &mut rng);
    let w = randn(&[2, 3, 5], &mut rng);
    let err = grad_check(
        |t, v| {
            let p = t.avg_pool1d(v[0], 3, 2)?;
            let p = t.mul(p, v[1])?;
            t.sum(p)
        },
        &[x.clone(), w.clone()],
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
    // max pool: random continuous inputs have no ties, so subgradients route
    // to the unique argmax and finite differences agree.
    let err = grad_check(
        |t, v| {
            let p = t.max_pool1d(v[0], 3, 2)?;
            let p = t.mul(p, v[1])?;
            t.sum(p)
        },
        &[x, w],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn max_pool_routes_to_argmax() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_vec(&[1, 4], vec![1.0, 5.0, 2.0, 0.0]).unwrap(), true);
    let m = tape.max_pool1d(x, 2, 2).unwrap();
    let s = tape.sum(m).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn linear_and_cross_entropy() {
    let c = 7;
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(Tensor::full(&[c], 0.3));
    let l = tape.softmax_cross_entropy(logits, &[2]).unwrap();
    assert!((tape.value(l).item() - (c as f64).ln()).abs() < 1e-12);

    let mut d = vec![0.0; c];
    d[4] = 100.0;
    let logits = tape.constant(Tensor::vector(d));
    let l = tape.softmax_cross_entropy(logits, &[4]).unwrap();
    assert!(tape.value(l).item() < 1e-8);
    assert!(tape.softmax_cross_entropy(logits, &[9]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let err = grad_check(
        |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            t.sum(y)
        },
        &[
            randn(&[3, 5], &mut rng),
            randn(&[4, 5], &mut rng),
            randn(&[4], &mut rng),
        ],
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-7, "linear {err}");

    let err = grad_check(
        |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            t.softmax_cross_entropy(y, &[0, 3, 1])
        },
        &[
            randn(&[3, 5], &mut rng),
            randn(&[4, 5], &mut rng),
            randn(&[4], &mut rng),
        ],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "xent {err}");

    let x = tape.constant(Tensor::zeros(&[3, 5]));
    let w = tape.constant(Tensor::zeros(&[4, 6]));
    assert!(tape.linear(x, w, None).is_err());
}

#[test]
fn cosine_identities_and_gradient() {
    let mut tape = Tape::<f64>::new();
    let u = tape.constant(Tensor::vector(vec![1.0, 2.0, -3.0]));
    let nu = tape.scale(u, -1.0).unwrap();
    let o = tape.constant(Tensor::vector(vec![2.0, -1.0, 0.0]));
    let z = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let c = tape.cosine(u, u).unwrap();
    assert!((tape.value(c).item() - 1.0).abs() < 1e-15);
    let c = tape.cosine(u, nu).unwrap();
    assert!((tape.value(c).item() + 1.0).abs() < 1e-15);
    let c = tape.cosine(u, o).unwrap();
    assert_eq!(tape.value(c).item(), 0.0);
    assert!(matches!(tape.cosine(u, z), Err(NdError::DegenerateEmbedding)));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let err = grad_check(
        |t, v| t.cosine(v[0], v[1]),
        &[randn(&[16], &mut rng), randn(&[16], &mut rng)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn grad_check_of_constant_op_is_zero() {
    let report = ndcore::grad_check_report(
        |t, _v| Ok(t.constant(Tensor::scalar(4.2))),
        &[Tensor::vector(vec![1.0, 2.0])],
        1e-3,
    )
    .unwrap();
    assert_eq!(report.max_rel_err, 0.0);
    assert!(report.analytic[0].data().iter().all(|&g| g == 0.0));
    assert!(report.numeric[0].data().iter().all(|&g| g == 0.0));
}

#[test]
fn non_finite_values_are_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::vector(vec![1e308]));
    assert!(matches!(tape.scale(x, 10.0), Err(NdError::NonFinite { .. })));
}

proptest! {
    #[test]
    fn gemm_and_direct_conv_agree(c in 1usize..4, o in 1usize..5, k in 1usize..4, d in 1usize..3, s in 1usize..3, extra in 0usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = (k - 1) * d + 1 + extra;
        let x = randn(&[c, l], &mut rng);
        let w = randn(&[o, c, k], &mut rng);
        let spec = ConvSpec::new(c, o, k, d).with_stride(s).with_bias(false);
        let mut t64 = Tape::<f64>::new();
        let (xv, wv) = (t64.constant(x.clone()), t64.constant(w.clone()));
        let y64 = t64.conv1d(xv, wv, None, &spec).unwrap();
        let mut t32 = Tape::<f32>::new();
        let (xv, wv) = (t32.constant(x.cast()), t32.constant(w.cast()));
        let y32 = t32.conv1d(xv, wv, None, &spec).unwrap();
        for (a, b) in t64.value(y64).data().iter().zip(t32.value(y32).data()) {
            prop_assert!((a - *b as f64).abs() < 1e-4 * (1.0 + a.abs()));
        }
    }
}

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn vec_var(tape: &mut Tape, values: &[f64], grad: bool) -> Var {
    tape.leaf(Tensor::vector(values.to_vec()), grad).unwrap()
}

#[test]
fn cosine_examples() {
    let mut tape = Tape::new();
    let u = vec_var(&mut tape, &[1.0, 0.0, 0.0], false);
    let c = tape.cosine(u, u).unwrap();
    assert_eq!(tape.value(c).item(), 1.0);

    let a = vec_var(&mut tape, &[1.0, 0.0], false);
    let b = vec_var(&mut tape, &[0.0, 1.0], false);
    let c = tape.cosine(a, b).unwrap();
    assert_eq!(tape.value(c).item(), 0.0);

    // oracle: u.v = 1, |u| = sqrt(2), |v| = 1
    let a = vec_var(&mut tape, &[1.0, 1.0], false);
    let b = vec_var(&mut tape, &[1.0, 0.0], false);
    let c = tape.cosine(a, b).unwrap();
    assert_abs_diff_eq!(tape.value(c).item(), 1.0 / 2f64.sqrt(), epsilon = 1e-15);
}

#[test]
fn cosine_rejects_zero_norm() {
    let mut tape = Tape::new();
    let a = vec_var(&mut tape, &[0.0, 0.0], false);
    let b = vec_var(&mut tape, &[1.0, 0.0], false);
    assert!(matches!(tape.cosine(a, b), Err(Error::ZeroNorm { .. })));
    let tiny = vec_var(&mut tape, &[1e-13, 0.0], false);
    assert!(matches!(tape.cosine(b, tiny), Err(Error::ZeroNorm { .. })));
}

#[test]
fn sigmoid_examples() {
    let mut tape = Tape::new();
    let x = vec_var(&mut tape, &[0.0, 1.0, -1.0], false);
    let y = tape.sigmoid(x).unwrap();
    let y = tape.value(y).data().to_vec();
    assert_eq!(y[0], 0.5);
    assert_abs_diff_eq!(y[1], 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
    assert_abs_diff_eq!(y[1], 0.731_058_578_630_004_9, epsilon = 1e-15);
    assert_abs_diff_eq!(y[1] + y[2], 1.0, epsilon = 1e-15);
}

#[test]
fn softmax_temp_examples() {
    let mut tape = Tape::new();
    let tau = tape.constant(Tensor::scalar(0.2)).unwrap();
    let x = vec_var(&mut tape, &[0.7311, 0.5], false);
    let p = tape.softmax_temp(x, tau).unwrap();
    let (e0, e1) = ((0.7311f64 / 0.2).exp(), (0.5f64 / 0.2).exp());
    let p = tape.value(p).data().to_vec();
    assert_abs_diff_eq!(p[0], e0 / (e0 + e1), epsilon = 1e-14);
    assert_abs_diff_eq!(p[1], e1 / (e0 + e1), epsilon = 1e-14);
    assert_abs_diff_eq!(p[0], 0.7605, epsilon = 1e-4);

    let x = vec_var(&mut tape, &[3.3; 4], false);
    let p = tape.softmax_temp(x, tau).unwrap();
    for &v in tape.value(p).data() {
        assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
    }

    let x = vec_var(&mut tape, &[-7.0], false);
    let p = tape.softmax_temp(x, tau).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0]);
}

#[test]
fn softmax_temp_rejects_non_positive_temperature() {
    let mut tape = Tape::new();
    let x = vec_var(&mut tape, &[1.0, 2.0], false);
    for t in [0.0, -0.5] {
        let tau = tape.constant(Tensor::scalar(t)).unwrap();
        assert!(matches!(
            tape.softmax_temp(x, tau),
            Err(Error::NonPositiveTemperature(_))
        ));
    }
}

#[test]
fn affine_examples() {
    let mut tape = Tape::new();
    let x = vec_var(&mut tape, &[0.3, -1.2], false);
    let eye = tape
        .constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
        .unwrap();
    let zero_b = tape.constant(Tensor::zeros(&[2])).unwrap();
    let y = tape.affine(eye, x, zero_b).unwrap();
    assert_eq!(tape.value(y).data(), &[0.3, -1.2]);

    let zero_w = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
    let c = tape.constant(Tensor::vector(vec![4.0, 5.0, 6.0])).unwrap();
    let y = tape.affine(zero_w, x, c).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0, 5.0, 6.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xs = [0.7, -0.4];
    let wv = tape.constant(Tensor::new(vec![3, 2], w.clone()).unwrap()).unwrap();
    let xv = vec_var(&mut tape, &xs, false);
    let bv = vec_var(&mut tape, &b, false);
    let y = tape.affine(wv, xv, bv).unwrap();
    for r in 0..3 {
        let mut expected = b[r];
        for c in 0..2 {
            expected += w[r * 2 + c] * xs[c];
        }
        assert_abs_diff_eq!(tape.value(y).data()[r], expected, epsilon = 1e-15);
    }

    let bad = vec_var(&mut tape, &[1.0, 2.0, 3.0], false);
    assert!(matches!(tape.affine(wv, bad, bv), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let uniform = vec_var(&mut tape, &[0.4; 5], false);
    let l = tape.cross_entropy(uniform, 3).unwrap();
    assert_abs_diff_eq!(tape.value(l).item(), 5f64.ln(), epsilon = 1e-14);

    let peaked = vec_var(&mut tape, &[0.0, 100.0, 0.0], false);
    let l = tape.cross_entropy(peaked, 1).unwrap();
    assert!(tape.value(l).item() < 1e-40);

    let x = vec_var(&mut tape, &[1.0, 2.0, 3.0], false);
    let l = tape.cross_entropy(x, 2).unwrap();
    let oracle = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
    assert_abs_diff_eq!(tape.value(l).item(), oracle, epsilon = 1e-15);

    assert!(matches!(
        tape.cross_entropy(x, 3),
        Err(Error::LabelOutOfRange { label: 3, classes: 3 })
    ));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(0.0)).unwrap();
    let y = tape.sigmoid(x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).item(), 0.25);

    let mut tape = Tape::new();
    let u = vec_var(&mut tape, &[0.3, -1.1, 2.0], true);
    let c = tape.cosine(u, u).unwrap();
    tape.backward(c).unwrap();
    for g in tape.grad(u).data() {
        assert!(g.abs() < 1e-14, "{g}");
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let u = vec_var(&mut tape, &[0.3, -1.1], true);
    let y = tape.sigmoid(u).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
}

#[test]
fn backward_accumulates_and_resets_deterministically() {
    let mut tape = Tape::new();
    let u = vec_var(&mut tape, &[0.3, -1.1, 2.0], true);
    let v = vec_var(&mut tape, &[1.0, 0.5, -0.2], true);
    let c = tape.cosine(u, v).unwrap();
    let s = tape.sigmoid(c).unwrap();
    tape.backward(s).unwrap();
    let first = tape.grad(u);
    tape.backward(s).unwrap();
    let doubled = tape.grad(u);
    for (a, b) in first.data().iter().zip(doubled.data()) {
        assert_eq!(2.0 * a, *b);
    }
    tape.zero_grad();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(u), first);
}

#[test]
fn non_finite_values_are_errors() {
    let mut tape = Tape::new();
    assert!(matches!(
        tape.leaf(Tensor::vector(vec![f64::NAN]), false),
        Err(Error::NonFinite { .. })
    ));
    let x = vec_var(&mut tape, &[1000.0], false);
    assert!(matches!(tape.exp(x), Err(Error::NonFinite { op: "exp" })));
}

#[test]
fn gradcheck_quadratic_and_constant() {
    let params = vec![("x".to_string(), Tensor::vector(vec![0.5, -2.0, 3.0]))];
    let report = finite_diff_check(
        |tape, vars| {
            let sq = tape.mul(vars[0], vars[0])?;
            let scaled = tape.scale(sq, 1.5)?;
            tape.sum(scaled)
        },
        &params,
        1e-5,
        1e-8,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.max_error <= 1e-8);

    let report = finite_diff_check(
        |tape, vars| {
            let zero = tape.scale(vars[0], 0.0)?;
            let c = tape.constant(Tensor::scalar(4.0))?;
            let s = tape.sum(zero)?;
            tape.add(s, c)
        },
        &params,
        1e-5,
        1e-12,
    )
    .unwrap();
    assert_eq!(report.max_error, 0.0);
}

#[test]
fn gradcheck_detects_wrong_gradient() {
    let params = vec![("x".to_string(), Tensor::vector(vec![0.5, -2.0]))];
    let wrong = vec![Tensor::vector(vec![1.0, 1.0])];
    let report = compare_gradients(
        |v| Ok(v[0].data().iter().map(|x| x * x).sum()),
        &params,
        &wrong,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(!report.passed);
}

/// Random input for a given shape, bounded away from kinks.
fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type OpFn = fn(&mut Tape, &[Var]) -> crate::error::Result<Var>;

#[test]
fn every_op_matches_finite_differences_at_random_points() {
    let cases: Vec<(&str, Vec<Vec<usize>>, OpFn)> = vec![
        ("add", vec![vec![4], vec![4]], |t, v| {
            let y = t.add(v[0], v[1])?;
            let y = t.sigmoid(y)?;
            t.sum(y)
        }),
        ("sub", vec![vec![4], vec![4]], |t, v| {
            let y = t.sub(v[0], v[1])?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        ("mul", vec![vec![3, 2], vec![3, 2]], |t, v| {
            let y = t.mul(v[0], v[1])?;
            t.sum(y)
        }),
        ("mul_scalar", vec![vec![5], vec![]], |t, v| {
            let y = t.mul_scalar(v[0], v[1])?;
            let y = t.sigmoid(y)?;
            t.sum(y)
        }),
        ("div_scalar", vec![vec![5], vec![]], |t, v| {
            let y = t.div_scalar(v[0], v[1])?;
            let y = t.sigmoid(y)?;
            t.sum(y)
        }),
        ("exp", vec![vec![4]], |t, v| {
            let y = t.exp(v[0])?;
            t.mean(y)
        }),
        ("abs", vec![vec![4]], |t, v| {
            let y = t.abs(v[0])?;
            let y = t.mul(y, y)?;
            let y = t.mul(y, v[0])?;
            t.sum(y)
        }),
        ("sub_rows", vec![vec![3, 4], vec![3]], |t, v| {
            let y = t.sub_rows(v[0], v[1])?;
            let y = t.sigmoid(y)?;
            t.sum(y)
        }),
        ("mul_broadcast_last", vec![vec![2, 3], vec![2, 3, 4]], |t, v| {
            let y = t.mul_broadcast_last(v[0], v[1])?;
            let y = t.sigmoid(y)?;
            t.sum(y)
        }),
        ("softmax_axis0", vec![vec![3, 2, 2], vec![3, 2, 2]], |t, v| {
            let y = t.softmax_axis(v[0], 0)?;
            let y = t.mul(y, v[1])?;
            t.sum(y)
        }),
        ("softmax_temp", vec![vec![4], vec![4], vec![]], |t, v| {
            let tau = t.abs(v[2])?;
            let y = t.softmax_temp(v[0], tau)?;
            let y = t.mul(y, v[1])?;
            t.sum(y)
        }),
        ("max_min_rows", vec![vec![3, 5]], |t, v| {
            let hi = t.max_rows(v[0])?;
            let lo = t.min_rows(v[0])?;
            let y = t.mul(hi, lo)?;
            t.sum(y)
        }),
        ("sum_axis0", vec![vec![3, 2, 2], vec![2, 2]], |t, v| {
            let y = t.sum_axis0(v[0])?;
            let y = t.mul(y, v[1])?;
            t.sum(y)
        }),
        ("reshape_slice", vec![vec![6, 2]], |t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            let y = t.slice_axis0(y, 2)?;
            let y = t.exp(y)?;
            t.sum(y)
        }),
        ("cosine", vec![vec![5], vec![5]], |t, v| t.cosine(v[0], v[1])),
        (
            "cosine_grouped",
            vec![vec![2, 3, 4], vec![3, 2, 4], vec![2, 3, 2]],
            |t, v| {
                let y = t.cosine_grouped(v[0], v[1])?;
                let y = t.mul(y, v[2])?;
                t.sum(y)
            },
        ),
        ("segment_mean", vec![vec![2, 5, 3], vec![2, 2, 3]], |t, v| {
            let y = t.segment_mean(v[0], &[0, 2, 5])?;
            let y = t.mul(y, v[1])?;
            let y = t.sigmoid(y)?;
            t.sum(y)
        }),
        ("affine", vec![vec![3, 4], vec![4], vec![3]], |t, v| {
            let y = t.affine(v[0], v[1], v[2])?;
            let y = t.sigmoid(y)?;
            t.sum(y)
        }),
        ("cross_entropy", vec![vec![4]], |t, v| t.cross_entropy(v[0], 1)),
        ("cross_entropy_rows", vec![vec![3, 4]], |t, v| {
            let y = t.cross_entropy_rows(v[0], &[0, 3, 2])?;
            t.mean(y)
        }),
        ("clamp_between", vec![vec![4], vec![4], vec![4]], |t, v| {
            let lo = t.scale(v[1], 0.5)?;
            let hi = t.abs(v[2])?;
            let y = t.clamp_between(v[0], lo, hi)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, shapes, f) in cases {
        for trial in 0..100 {
            let params: Vec<(String, Tensor)> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("{name}[{i}]"), random_tensor(&mut rng, s)))
                .collect();
            let report = finite_diff_check(f, &params, 1e-6, 1e-4).unwrap();
            assert!(report.passed, "{name} trial {trial}: {report:?}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_sums_to_one(
        xs in prop::collection::vec(-50.0f64..50.0, 1..12),
        log_tau in -3.0f64..3.0,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(xs)).unwrap();
        let tau = tape.constant(Tensor::scalar(10f64.powf(log_tau))).unwrap();
        let p = tape.softmax_temp(x, tau).unwrap();
        let total: f64 = tape.value(p).data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sigmoid_is_symmetric(xs in prop::collection::vec(-700.0f64..700.0, 1..16)) {
        let mut tape = Tape::new();
        let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
        let a = tape.constant(Tensor::vector(xs)).unwrap();
        let b = tape.constant(Tensor::vector(neg)).unwrap();
        let sa = tape.sigmoid(a).unwrap();
        let sb = tape.sigmoid(b).unwrap();
        for (p, q) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            prop_assert!((p + q - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_is_bounded(
        u in prop::collection::vec(-1e3f64..1e3, 1..10),
        seed in any::<u64>(),
    ) {
        prop_assume!(u.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = u.iter().map(|x| x * rng.random_range(-2.0..2.0) + rng.random_range(-1.0..1.0)).collect();
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(u)).unwrap();
        let b = tape.constant(Tensor::vector(v)).unwrap();
        let c = tape.cosine(a, b).unwrap();
        let c = tape.value(c).item();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
    }
}

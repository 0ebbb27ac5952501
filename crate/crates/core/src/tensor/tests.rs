use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, op_suite, randn, weighted_sum};
use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn tensor_rejects_mismatched_data() {
    assert!(matches!(
        Tensor::new(vec![2, 2], vec![1.0; 3]),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn matmul_identity_and_selection() {
    let tape = Tape::new();
    let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    assert_eq!(eye.matmul(m).unwrap().value().data(), &[1., 2., 3., 4.]);
    let row = tape.constant(t(&[1, 2], &[1., 0.]));
    let col = tape.constant(t(&[2, 1], &[2., 5.]));
    assert_eq!(row.matmul(col).unwrap().value().data(), &[2.]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match a.matmul(b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_of_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&[3, 4], &mut rng);
    let b = randn(&[4, 2], &mut rng);
    let r = check("matmul", &[a, b], 1e-5, None, &mut rng, |_, v| {
        Ok(v[0].matmul(v[1])?.sum())
    })
    .unwrap();
    assert!(r.rel_error < 1e-6, "{r:?}");
}

#[test]
fn softmax_uniform_and_stabilized() {
    let tape = Tape::new();
    let x = tape.constant(t(&[3], &[0., 0., 0.]));
    close(x.softmax(0).unwrap().value().data(), &[1. / 3.; 3], 1e-15);
    let y = tape.constant(t(&[2], &[1000., 0.]));
    let s = y.softmax(0).unwrap().value();
    assert!(s.is_finite());
    assert!((s.data()[0] - 1.0).abs() < 1e-15);
    assert!(s.data()[1] < 1e-300);
}

#[test]
fn softmax_random_vector_sums_to_one_and_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn(&[4], &mut rng);
    let tape = Tape::new();
    let s = tape.constant(x.clone()).softmax(0).unwrap().value();
    assert!((s.sum() - 1.0).abs() < 1e-12);
    let r = check("softmax", &[x], 1e-5, None, &mut rng, |_, v| {
        weighted_sum(v[0].softmax(0)?, 9)
    })
    .unwrap();
    assert!(r.rel_error < 1e-6, "{r:?}");
}

#[test]
fn softmax_masks_negative_infinity() {
    let tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.3, f64::NEG_INFINITY, -0.2]));
    let s = x.softmax(0).unwrap().value();
    assert_eq!(s.data()[1], 0.0);
    assert!((s.sum() - 1.0).abs() < 1e-15);
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::new();
    let ones = tape.constant(Tensor::full(&[3], 1.0));
    let zeros = tape.constant(Tensor::zeros(&[3]));
    let c = tape.constant(t(&[1, 3], &[5., 5., 5.]));
    assert_eq!(c.layer_norm(ones, zeros, 1e-5).unwrap().value().data(), &[0., 0., 0.]);
    let r = tape.constant(t(&[1, 3], &[1., 2., 3.]));
    let s = 1.5f64.sqrt();
    close(r.layer_norm(ones, zeros, 1e-12).unwrap().value().data(), &[-s, 0., s], 1e-9);
    assert!(matches!(r.layer_norm(ones, zeros, 0.0), Err(Error::Config(_))));
}

#[test]
fn layer_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn(&[4, 5], &mut rng);
    let g = randn(&[5], &mut rng);
    let b = randn(&[5], &mut rng);
    let r = check("ln", &[x, g, b], 1e-5, None, &mut rng, |_, v| {
        weighted_sum(v[0].layer_norm(v[1], v[2], 1e-5)?, 4)
    })
    .unwrap();
    assert!(r.rel_error < 1e-5, "{r:?}");
}

#[test]
fn conv1d_examples() {
    let tape = Tape::new();
    let x = tape.constant(t(&[1, 3], &[1., 2., 3.]));
    let id = tape.constant(t(&[1, 1, 1], &[1.]));
    assert_eq!(x.conv1d(id, None, Padding::Same).unwrap().value().data(), &[1., 2., 3.]);
    let k = tape.constant(t(&[1, 1, 3], &[1., 0., -1.]));
    assert_eq!(x.conv1d(k, None, Padding::Same).unwrap().value().data(), &[-2., -2., 2.]);
    let even = tape.constant(Tensor::zeros(&[1, 1, 2]));
    assert!(matches!(x.conv1d(even, None, Padding::Same), Err(Error::Config(_))));
    // causal: output t reads x[t-2..=t]
    assert_eq!(x.conv1d(k, None, Padding::Causal).unwrap().value().data(), &[-1., -2., -2.]);
}

#[test]
fn conv1d_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&[2, 3, 7], &mut rng);
    let w = randn(&[4, 3, 5], &mut rng);
    let b = randn(&[4], &mut rng);
    let r = check("conv", &[x, w, b], 1e-5, None, &mut rng, |_, v| {
        weighted_sum(v[0].conv1d(v[1], Some(v[2]), Padding::Same)?, 5)
    })
    .unwrap();
    assert!(r.rel_error < 1e-5, "{r:?}");
}

#[test]
fn small_op_examples() {
    let tape = Tape::new();
    assert_eq!(tape.constant(Tensor::scalar(0.0)).sigmoid().value().data(), &[0.5]);
    let p = tape.constant(t(&[3], &[3., 1., 2.])).global_maxpool(0).unwrap();
    assert_eq!(p.value().data(), &[3.]);
    let logits = tape.constant(t(&[2, 3], &[50., 0., 0., 0., 0., 50.]));
    let ce = logits.cross_entropy_with_logits(&[0, 2], &[true, true]).unwrap();
    assert!(ce.value().data()[0] < 1e-20);
    let pm = tape.constant(t(&[4], &[1., 3., 2., 5.])).prefix_max(0).unwrap();
    assert_eq!(pm.value().data(), &[1., 3., 3., 5.]);
}

#[test]
fn cross_entropy_rejects_all_masked() {
    let tape = Tape::new();
    let logits = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(
        logits.cross_entropy_with_logits(&[0, 1], &[false, false]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn embedding_rejects_out_of_range_id() {
    let tape = Tape::new();
    let table = tape.constant(Tensor::zeros(&[4, 2]));
    assert!(matches!(table.embedding_lookup(&[4], &[1]), Err(Error::Data(_))));
}

#[test]
fn normalize_power_hits_unit_power_and_guards_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tape = Tape::new();
    let x = tape.constant(randn(&[3, 8], &mut rng));
    let y = x.normalize_power(None, 1.0).unwrap().value();
    let p = y.sq_norm() / (y.len() as f64 / 2.0);
    assert!((p - 1.0).abs() < 1e-12);
    let z = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(z.normalize_power(None, 1.0), Err(Error::Numerical(_))));
}

#[test]
fn full_op_suite_passes() {
    let results = op_suite(11).unwrap();
    assert!(results.len() >= 3 * 19);
    for r in &results {
        assert!(r.passed(1e-4), "{r:?}");
    }
}

#[test]
fn diamond_accumulates_both_paths() {
    // f(x) = x·x via one node used twice; df/dx = 2x
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = x.mul(x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0]);
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tape = Tape::new();
        let x = tape.leaf(randn(&[2, 3, 5], &mut rng));
        let w = tape.leaf(randn(&[3, 3, 3], &mut rng));
        let y = x.conv1d(w, None, Padding::Same).unwrap().softmax(2).unwrap();
        y.value().data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn backward_requires_scalar() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x.relu()), Err(Error::Contract(_))));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(v in proptest::collection::vec(-50.0f64..50.0, 2..12)) {
        let tape = Tape::new();
        let n = v.len();
        let s = tape.constant(Tensor::new(vec![n], v).unwrap()).softmax(0).unwrap().value();
        prop_assert!(s.data().iter().all(|&p| p >= 0.0));
        prop_assert!((s.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permute_then_inverse_is_identity(a in 1usize..4, b in 1usize..4, c in 1usize..4) {
        let data: Vec<f64> = (0..a * b * c).map(|i| i as f64).collect();
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![a, b, c], data.clone()).unwrap());
        let y = x.permute(&[1, 2, 0]).unwrap().permute(&[2, 0, 1]).unwrap();
        let got = y.value();
        prop_assert_eq!(got.data(), &data[..]);
    }
}


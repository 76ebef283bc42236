use qtensor::{matmul, Tape, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn matmul_matches_triple_loop_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, &[5, 4]);
    let b = random(&mut rng, &[4, 3]);
    let mut reference = vec![0.0; 15];
    for i in 0..5 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += a.at(i, k) * b.at(k, j);
            }
            reference[i * 3 + j] = acc;
        }
    }
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()).unwrap(), tape.constant(b.clone()).unwrap());
    let c = tape.matmul(va, vb).unwrap();
    assert_eq!(tape.value(c).data(), &reference[..]);
    assert_eq!(matmul(&a, &b).unwrap().data(), &reference[..]);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 2], &[0.0, 0.0])).unwrap();
    let y = tape.softmax_masked(x, Some(&t(&[1, 2], &[0.0, 0.0]))).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let x = tape.constant(t(&[1, 2], &[5.0, 9.0])).unwrap();
    let y = tape
        .softmax_masked(x, Some(&t(&[1, 2], &[0.0, f64::NEG_INFINITY])))
        .unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 0.0]);

    let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
    let y = tape.softmax(x).unwrap();
    let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
    for (a, b) in tape.value(y).data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn softmax_rejects_fully_masked_row_and_bad_masks() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let ninf = f64::NEG_INFINITY;
    let err = tape
        .softmax_masked(x, Some(&t(&[2, 2], &[0.0, 0.0, ninf, ninf])))
        .unwrap_err();
    assert_eq!(err, TensorError::FullyMasked(1));
    let err = tape
        .softmax_masked(x, Some(&t(&[2, 2], &[0.0, 1.0, 0.0, 0.0])))
        .unwrap_err();
    assert!(matches!(err, TensorError::InvalidMask(_)));
}

#[test]
fn masked_softmax_rows_sum_to_one_and_masked_entries_are_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (r, c) = (rng.random_range(1..6), rng.random_range(1..9));
        let logits = random(&mut rng, &[r, c]);
        let mut mask = vec![0.0; r * c];
        for i in 0..r {
            let keep = rng.random_range(0..c);
            for j in 0..c {
                if j != keep && rng.random_bool(0.5) {
                    mask[i * c + j] = f64::NEG_INFINITY;
                }
            }
        }
        let mask = t(&[r, c], &mask);
        let mut tape = Tape::new();
        let x = tape.constant(logits).unwrap();
        let y = tape.softmax_masked(x, Some(&mask)).unwrap();
        let y = tape.value(y);
        for i in 0..r {
            let s: f64 = y.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            for j in 0..c {
                if mask.at(i, j) == f64::NEG_INFINITY {
                    assert_eq!(y.at(i, j), 0.0);
                }
            }
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let gamma = tape.constant(t(&[2], &[1.0, 1.0])).unwrap();
    let zero = tape.constant(t(&[2], &[0.0, 0.0])).unwrap();
    let five = tape.constant(t(&[2], &[5.0, 5.0])).unwrap();

    let x = tape.constant(t(&[1, 2], &[1.0, 1.0])).unwrap();
    let y = tape.layer_norm(x, gamma, zero, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0]);

    let x = tape.constant(t(&[1, 2], &[0.0, 2.0])).unwrap();
    let y = tape.layer_norm(x, gamma, five, 0.0).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0, 6.0]);
}

#[test]
fn layer_norm_matches_two_pass_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[3, 7]);
    let gamma = random(&mut rng, &[7]);
    let beta = random(&mut rng, &[7]);
    let mut tape = Tape::new();
    let (vx, vg, vb) = (
        tape.constant(x.clone()).unwrap(),
        tape.constant(gamma.clone()).unwrap(),
        tape.constant(beta.clone()).unwrap(),
    );
    let y = tape.layer_norm(vx, vg, vb, 1e-5).unwrap();
    for i in 0..3 {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / 7.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
        for j in 0..7 {
            let expect = (row[j] - mean) / (var + 1e-5).sqrt() * gamma.data()[j] + beta.data()[j];
            assert!((tape.value(y).at(i, j) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.0, -3.0, 2.0])).unwrap();
    let s = tape.sigmoid(x).unwrap();
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(s).data()[0], 0.5);
    assert!((tape.value(s).data()[2] - 0.8807970779778823).abs() < 1e-6);
    assert_eq!(tape.value(r).data()[1], 0.0);
    let y = tape.constant(t(&[2], &[1.0, 2.0])).unwrap();
    assert!(matches!(tape.add(x, y), Err(TensorError::Shape(_))));
}

#[test]
fn non_finite_results_are_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[0.0, 1.0])).unwrap();
    assert_eq!(tape.ln(x).unwrap_err(), TensorError::NonFinite("ln"));
    assert!(tape.leaf(t(&[1], &[f64::NAN]), true).is_err());
}

#[test]
fn backward_scalar_examples() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[1], &[3.0])).unwrap();
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.data(x).unwrap(), &[6.0]);

    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[3.0, -1.0])).unwrap();
    let c = tape.constant(t(&[2], &[4.0, 4.0])).unwrap();
    let z = tape.scale(x, 0.0).unwrap();
    let y = tape.add(z, c).unwrap();
    let s = tape.sum_all(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.data(x).unwrap(), &[0.0, 0.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0])).unwrap();
    assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn sum_of_product_gradient_pattern() {
    // d/dA sum(AB) = 1 Bᵀ, d/dB = Aᵀ 1
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let mut tape = Tape::new();
    let (va, vb) = (tape.param(a.clone()).unwrap(), tape.param(b.clone()).unwrap());
    let c = tape.matmul(va, vb).unwrap();
    let s = tape.sum_all(c).unwrap();
    let g = tape.backward(s).unwrap();
    let ga = g.get(va).unwrap();
    let gb = g.get(vb).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let rowsum: f64 = b.row(k).iter().sum();
            assert!((ga.at(i, k) - rowsum).abs() < 1e-12);
        }
    }
    for k in 0..4 {
        let colsum: f64 = (0..3).map(|i| a.at(i, k)).sum();
        for j in 0..2 {
            assert!((gb.at(k, j) - colsum).abs() < 1e-12);
        }
    }
}

#[test]
fn ops_are_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(&mut rng, &[4, 6]);
        let b = random(&mut rng, &[6, 5]);
        let mut tape = Tape::new();
        let (va, vb) = (tape.param(a).unwrap(), tape.param(b).unwrap());
        let c = tape.matmul(va, vb).unwrap();
        let p = tape.softmax(c).unwrap();
        let l = tape.log_softmax(c).unwrap();
        let m = tape.mul(p, l).unwrap();
        let s = tape.sum_all(m).unwrap();
        let g = tape.backward(s).unwrap();
        (tape.value(s).data().to_vec(), g.data(va).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

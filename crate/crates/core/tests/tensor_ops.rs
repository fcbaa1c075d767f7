// Reference values are quoted at full computed precision.
#![allow(clippy::excessive_precision, clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shortcut_uq::tensor::{Tape, Tensor, Var};
use shortcut_uq::verify::{naive_conv2d, naive_linear, naive_maxpool2};
use shortcut_uq::Error;

type Build = dyn Fn(&mut Tape, &[Var]) -> shortcut_uq::Result<Var>;

/// Scalar probe `sum(op(inputs) * r)` with a fixed random `r`.
fn probe(build: &Build, inputs: &[(Vec<usize>, Vec<f64>)], r: &[f64], grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(s, d)| {
            let t = Tensor::new(s.clone(), d.clone()).unwrap();
            tape.leaf(if grads { t.with_grad() } else { t })
        })
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let shape = tape.value(out).shape().to_vec();
    let rv = tape.leaf(Tensor::new(shape, r.to_vec()).unwrap());
    let prod = tape.mul(out, rv).unwrap();
    let loss = tape.sum(prod);
    let value = tape.value(loss).data()[0];
    if !grads {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    let g =
        vars.iter().zip(inputs).map(|(&v, (_, d))| tape.grad(v).map_or(vec![0.0; d.len()], <[f64]>::to_vec)).collect();
    (value, g)
}

fn output_len(build: &Build, inputs: &[(Vec<usize>, Vec<f64>)]) -> usize {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(s, d)| tape.leaf(Tensor::new(s.clone(), d.clone()).unwrap())).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.value(out).numel()
}

/// Largest relative error between backprop and central differences.
fn fd_max_rel_error(build: &Build, inputs: Vec<(Vec<usize>, Vec<f64>)>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..output_len(build, &inputs)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, analytic) = probe(build, &inputs, &r, true);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (t, (_, data)) in inputs.iter().enumerate() {
        for i in 0..data.len() {
            let mut up = inputs.clone();
            up[t].1[i] += h;
            let mut down = inputs.clone();
            down[t].1[i] -= h;
            let numeric = (probe(build, &up, &r, false).0 - probe(build, &down, &r, false).0) / (2.0 * h);
            let a = analytic[t][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<usize>, Vec<f64>) {
    (shape.to_vec(), (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![random(&mut rng, &[2, 2, 5, 4]), random(&mut rng, &[3, 2, 3, 3]), random(&mut rng, &[3])];
    let err = fd_max_rel_error(&|t, v| t.conv2d(v[0], v[1], v[2]), inputs, 2);
    assert!(err < 1e-6, "conv2d max rel error {err:e}");
}

#[test]
fn maxpool_gradients_route_to_the_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&mut rng, &[2, 3, 4, 6])];
    let err = fd_max_rel_error(&|t, v| t.maxpool2(v[0]), inputs, 4);
    assert!(err < 1e-6, "maxpool2 max rel error {err:e}");
}

#[test]
fn maxpool_ties_go_to_the_first_element() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 1, 2, 2], vec![2.0, 2.0, 2.0, 1.0]).unwrap().with_grad());
    let y = tape.maxpool2(x).unwrap();
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn linear_relu_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![random(&mut rng, &[4, 7]), random(&mut rng, &[7, 5]), random(&mut rng, &[5])];
    let build = |t: &mut Tape, v: &[Var]| {
        let h = t.linear(v[0], v[1], v[2])?;
        Ok(t.relu(h))
    };
    let err = fd_max_rel_error(&build, inputs, 6);
    assert!(err < 1e-6, "linear+relu max rel error {err:e}");
}

#[test]
fn softmax_cross_entropy_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![random(&mut rng, &[5, 3])];
    let build = |t: &mut Tape, v: &[Var]| {
        let p = t.softmax_rows(v[0])?;
        t.cross_entropy(p, &[0, 2, 1, 1, 0])
    };
    let err = fd_max_rel_error(&build, inputs, 8);
    assert!(err < 1e-6, "softmax+ce max rel error {err:e}");
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, row.len()], row.to_vec()).unwrap());
    let p = tape.softmax_rows(x).unwrap();
    tape.value(p).data().to_vec()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

#[test]
fn softmax_matches_high_precision_values() {
    // reference values computed with 40-digit arithmetic
    let cases: [([f64; 3], [f64; 3]); 4] = [
        ([1000.0, 1001.0, 1002.0], [0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953]),
        ([-5.0, 0.0, 5.0], [4.5094041236354880753e-5, 0.0066925491165892870822, 0.99326235684217435804]),
        ([0.001, 0.002, 0.0], [0.33333322222224999999, 0.33366672216665278982, 0.33300005561109721019]),
        ([3.0, 3.0, 3.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
    ];
    for (logits, expected) in cases {
        let p = softmax(&logits);
        for (a, b) in p.iter().zip(expected) {
            assert!(close(*a, b, 1e-14), "softmax({logits:?}) = {p:?}, expected {expected:?}");
        }
    }
    // exp(-800) underflows; the shifted form still yields an exact one-hot
    assert_eq!(softmax(&[-800.0, 0.0, -800.0]), vec![0.0, 1.0, 0.0]);
}

#[test]
fn cross_entropy_values_and_floor() {
    let ce = |logits: [f64; 3], label: usize| {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], logits.to_vec()).unwrap());
        let p = tape.softmax_rows(x).unwrap();
        let l = tape.cross_entropy(p, &[label]).unwrap();
        tape.value(l).data()[0]
    };
    assert!(close(ce([1000.0, 1001.0, 1002.0], 0), 2.4076059644443803045, 1e-13));
    assert!(close(ce([-5.0, 0.0, 5.0], 0), 10.006760443547121268, 1e-13));
    // a probability that underflows to 0 is floored at 1e-12
    assert!(close(ce([-800.0, 0.0, -800.0], 0), 27.631021115928547, 1e-15));
}

#[test]
fn shape_and_label_errors() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap());
    let w = tape.leaf(Tensor::new(vec![4, 2], vec![0.0; 8]).unwrap());
    let b = tape.leaf(Tensor::new(vec![2], vec![0.0; 2]).unwrap());
    assert!(matches!(tape.linear(x, w, b), Err(Error::Shape { op: "linear", .. })));
    let p = tape.softmax_rows(x).unwrap();
    assert!(matches!(tape.cross_entropy(p, &[0, 3]), Err(Error::LabelOutOfRange { row: 1, label: 3, .. })));
    assert!(matches!(tape.backward(p), Err(Error::NonScalarLoss(_))));
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches_loop_reference(
        n in 1usize..3, c in 1usize..4, h in 1usize..7, w in 1usize..7, f in 1usize..4, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, x) = random(&mut rng, &[n, c, h, w]);
        let (_, k) = random(&mut rng, &[f, c, 3, 3]);
        let (_, b) = random(&mut rng, &[f]);
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(vec![n, c, h, w], x.clone()).unwrap());
        let kv = tape.leaf(Tensor::new(vec![f, c, 3, 3], k.clone()).unwrap());
        let bv = tape.leaf(Tensor::new(vec![f], b.clone()).unwrap());
        let y = tape.conv2d(xv, kv, bv).unwrap();
        let reference = naive_conv2d(&x, [n, c, h, w], &k, f, &b);
        for (a, r) in tape.value(y).data().iter().zip(&reference) {
            prop_assert!((a - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn maxpool_and_linear_match_loop_references(
        n in 1usize..4, c in 1usize..3, h2 in 1usize..4, w2 in 1usize..4, d in 1usize..9, e in 1usize..6, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [n, c, 2 * h2, 2 * w2];
        let (_, x) = random(&mut rng, &shape);
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(shape.to_vec(), x.clone()).unwrap());
        let y = tape.maxpool2(xv).unwrap();
        let pooled = naive_maxpool2(&x, shape);
        prop_assert_eq!(tape.value(y).data(), pooled.as_slice());

        let (_, a) = random(&mut rng, &[n, d]);
        let (_, wt) = random(&mut rng, &[d, e]);
        let (_, b) = random(&mut rng, &[e]);
        let av = tape.leaf(Tensor::new(vec![n, d], a.clone()).unwrap());
        let wv = tape.leaf(Tensor::new(vec![d, e], wt.clone()).unwrap());
        let bv = tape.leaf(Tensor::new(vec![e], b.clone()).unwrap());
        let z = tape.linear(av, wv, bv).unwrap();
        for (got, r) in tape.value(z).data().iter().zip(naive_linear(&a, n, d, &wt, e, &b)) {
            prop_assert!((got - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(logits in prop::collection::vec(-700.0f64..700.0, 3..30)) {
        let k = 3;
        let rows = logits.len() / k;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![rows, k], logits[..rows * k].to_vec()).unwrap());
        let p = tape.softmax_rows(x).unwrap();
        for row in tape.value(p).data().chunks(k) {
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

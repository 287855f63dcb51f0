use fgmdm_tensor::gradcheck::{central_difference, max_relative_error};
use fgmdm_tensor::{AdamConfig, AdamState, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Runs `build` once on a tape for the analytic gradient and repeatedly
/// without recording for finite differences.
fn check(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let numeric = central_difference(
        |xs| {
            let mut t = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
            let l = build(&mut t, &vs);
            t.value(l).item()
        },
        &inputs,
        1e-6,
    );
    vars.iter()
        .zip(&numeric)
        .map(|(&v, n)| max_relative_error(&grads.wrt(v), n, 1e-6))
        .fold(0.0, f64::max)
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(x));
    let w = tape.constant(w);
    let p = tape.mul(x, w).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn matmul_matches_naive_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a: Tensor<f32> = random(&mut rng, &[8, 8]).cast();
    let b: Tensor<f32> = random(&mut rng, &[8, 8]).cast();
    let c = a.matmul(&b).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0f32;
            for k in 0..8 {
                acc += a.at2(i, k) * b.at2(k, j);
            }
            assert!((c.at2(i, j) - acc).abs() <= 1e-5);
        }
    }
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cases: Vec<(
        &str,
        Vec<Tensor<f64>>,
        Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
    )> = vec![
        (
            "matmul",
            vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])],
            Box::new(|t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                weighted_sum(t, y, 1)
            }),
        ),
        (
            "add_sub_mul",
            vec![random(&mut rng, &[2, 3]), random(&mut rng, &[2, 3])],
            Box::new(|t, v| {
                let a = t.add(v[0], v[1]).unwrap();
                let s = t.sub(a, v[1]).unwrap();
                let m = t.mul(s, v[1]).unwrap();
                weighted_sum(t, m, 2)
            }),
        ),
        (
            "add_row",
            vec![random(&mut rng, &[4, 3]), random(&mut rng, &[3])],
            Box::new(|t, v| {
                let y = t.add_row(v[0], v[1]).unwrap();
                weighted_sum(t, y, 3)
            }),
        ),
        (
            "layer_norm",
            vec![
                random(&mut rng, &[3, 5]),
                random(&mut rng, &[5]),
                random(&mut rng, &[5]),
            ],
            Box::new(|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                weighted_sum(t, y, 4)
            }),
        ),
        (
            "softmax",
            vec![random(&mut rng, &[3, 4])],
            Box::new(|t, v| {
                let y = t.softmax(v[0]).unwrap();
                weighted_sum(t, y, 5)
            }),
        ),
        (
            "attention",
            vec![
                random(&mut rng, &[4, 3]),
                random(&mut rng, &[4, 3]),
                random(&mut rng, &[4, 3]),
            ],
            Box::new(|t, v| {
                let kt = t.transpose(v[1]).unwrap();
                let s = t.matmul(v[0], kt).unwrap();
                let s = t.scale(s, 1.0 / 3f64.sqrt()).unwrap();
                let p = t.softmax(s).unwrap();
                let o = t.matmul(p, v[2]).unwrap();
                weighted_sum(t, o, 6)
            }),
        ),
        (
            "activations",
            vec![random(&mut rng, &[2, 4])],
            Box::new(|t, v| {
                let a = t.gelu(v[0]).unwrap();
                let b = t.tanh(a).unwrap();
                let c = t.square(b).unwrap();
                weighted_sum(t, c, 7)
            }),
        ),
        (
            "slices_and_concats",
            vec![random(&mut rng, &[4, 6])],
            Box::new(|t, v| {
                let a = t.slice_cols(v[0], 1, 3).unwrap();
                let b = t.slice_cols(v[0], 4, 2).unwrap();
                let c = t.concat_cols(&[b, a]).unwrap();
                let d = t.slice_rows(c, 1, 2).unwrap();
                let e = t.concat_rows(&[d, c]).unwrap();
                let r = t.reshape(e, &[5, 6]).unwrap();
                weighted_sum(t, r, 8)
            }),
        ),
        (
            "normalize_rows",
            vec![random(&mut rng, &[3, 4])],
            Box::new(|t, v| {
                let y = t.normalize_rows(v[0], 1e-12).unwrap();
                weighted_sum(t, y, 9)
            }),
        ),
        (
            "cross_entropy",
            vec![random(&mut rng, &[3, 4])],
            Box::new(|t, v| t.cross_entropy(v[0], &[2, 0, 3]).unwrap()),
        ),
        (
            "mean",
            vec![random(&mut rng, &[3, 4])],
            Box::new(|t, v| {
                let s = t.square(v[0]).unwrap();
                t.mean(s).unwrap()
            }),
        ),
    ];
    for (name, inputs, build) in cases {
        let err = check(inputs, build);
        assert!(err <= 1e-3, "{name}: relative error {err}");
    }
}

#[test]
fn two_layer_perceptron_with_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inputs = vec![
        random(&mut rng, &[5, 4]),
        random(&mut rng, &[4, 6]),
        random(&mut rng, &[6]),
        random(&mut rng, &[6]),
        random(&mut rng, &[6]),
        random(&mut rng, &[6, 2]),
    ];
    let err = check(inputs, |t, v| {
        let h = t.matmul(v[0], v[1]).unwrap();
        let h = t.add_row(h, v[2]).unwrap();
        let h = t.layer_norm(h, v[3], v[4], 1e-5).unwrap();
        let h = t.gelu(h).unwrap();
        let y = t.matmul(h, v[5]).unwrap();
        let y = t.square(y).unwrap();
        t.mean(y).unwrap()
    });
    assert!(err <= 1e-3, "relative error {err}");
}

#[test]
fn gradients_are_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f32>::new();
        let a = tape.param(random(&mut rng, &[6, 5]).cast());
        let b = tape.param(random(&mut rng, &[5, 4]).cast());
        let y = tape.matmul(a, b).unwrap();
        let y = tape.softmax(y).unwrap();
        let y = tape.square(y).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        (g.wrt(a), g.wrt(b))
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_matches_scalar_recurrence() {
    let cfg = AdamConfig::default();
    let mut params = vec![Tensor::<f64>::scalar(0.5)];
    let mut state = AdamState::new(cfg, &params);
    let grad = [Tensor::scalar(1.0)];

    let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for t in 1..=1000 {
        state.step(&mut params, &grad).unwrap();
        m = 0.9 * m + 0.1 * 1.0;
        v = 0.999 * v + 0.001 * 1.0;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= 1e-4 * mh / (vh.sqrt() + 1e-8);
        assert!((params[0].item() - x).abs() < 1e-6, "step {t}");
    }
    assert_eq!(state.step, 1000);
}

proptest! {
    #[test]
    fn matmul_transposes_consistently(seed in 0u64..1000, m in 1usize..6, k in 1usize..6, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        let ab_t = a.matmul(&b).unwrap().transpose().unwrap();
        let bt_at = b.transpose().unwrap().matmul(&a.transpose().unwrap()).unwrap();
        for (x, y) in ab_t.data().iter().zip(bt_at.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in 0u64..1000, scale in 0.1f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[3, 7]).map(|v| v * scale));
        let y = tape.softmax(x).unwrap();
        for r in 0..3 {
            let s: f64 = tape.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

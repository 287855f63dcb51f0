use fgmdm_core::diffusion::{
    make_schedule, posterior_step, q_sample, reverse_chain, sample_loop, standard_normal, Branch,
    ScheduleKind,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn schedules_are_monotone_for_reference_lengths() {
    for steps in [1usize, 10, 100, 1000] {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(steps, kind).unwrap();
            assert!(
                s.beta.iter().all(|&b| b > 0.0 && b < 1.0),
                "{kind} T={steps}"
            );
            assert!(
                s.alpha_bar.windows(2).all(|w| w[1] < w[0]),
                "{kind} T={steps}"
            );
            assert_eq!(s.beta_tilde[0], 0.0);
        }
    }
}

#[test]
fn cosine_endpoint() {
    let s = make_schedule(1000, ScheduleKind::Cosine).unwrap();
    assert!(s.alpha_bar[999] < 1e-2);
    // Unclipped steps follow the closed form ratio f(t)/f(0).
    let f = |u: f64| {
        (((u / 1000.0) + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2)
            .cos()
            .powi(2)
    };
    for t in [1usize, 10, 100, 500] {
        assert!(
            (s.alpha_bar[t - 1] - f(t as f64) / f(0.0)).abs() < 1e-9,
            "t={t}"
        );
    }
}

#[test]
fn linear_endpoint_matches_direct_product() {
    let s = make_schedule(1000, ScheduleKind::Linear).unwrap();
    let mut prod = 1.0f64;
    for i in 0..1000 {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
    }
    assert!((s.alpha_bar[999] - prod).abs() < 1e-12 * prod.max(1e-300) + 1e-15);
    assert!((prod - 4.0e-5).abs() < 1e-5, "{prod}");
}

#[test]
fn q_sample_moments() {
    let s = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let t = 40;
    let x0 = 1.5f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps: Vec<f64> = standard_normal(&mut rng, 10_000);
    let xs = q_sample(&vec![x0; eps.len()], t, &eps, &s).unwrap();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ab = s.alpha_bar[t - 1];
    assert!((mean / (ab.sqrt() * x0) - 1.0).abs() < 0.05, "mean {mean}");
    assert!((var / (1.0 - ab) - 1.0).abs() < 0.05, "var {var}");
}

#[test]
fn posterior_matches_scalar_formula() {
    let s = make_schedule(10, ScheduleKind::Linear).unwrap();
    let (xt, x0, t) = (0.7f64, -0.3f64, 5usize);
    // Rebuild the chain by hand.
    let betas: Vec<f64> = (0..10)
        .map(|i| (1e-4 + (0.02 - 1e-4) * i as f64 / 9.0) * 100.0)
        .collect();
    let ab = |k: usize| betas[..k].iter().map(|b| 1.0 - b).product::<f64>();
    let (b, a_t, ab_t, ab_prev) = (betas[t - 1], 1.0 - betas[t - 1], ab(t), ab(t - 1));
    let mean =
        ab_prev.sqrt() * b / (1.0 - ab_t) * x0 + a_t.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t) * xt;
    let var = b * (1.0 - ab_prev) / (1.0 - ab_t);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let out = posterior_step(&[xt], &[x0], t, &s, &mut rng).unwrap()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z: Vec<f64> = standard_normal(&mut rng, 1);
    assert!((out - (mean + var.sqrt() * z[0])).abs() < 1e-7);

    let mut a = ChaCha8Rng::seed_from_u64(3);
    let mut b2 = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(
        posterior_step(&[xt], &[x0], t, &s, &mut a).unwrap(),
        posterior_step(&[xt], &[x0], t, &s, &mut b2).unwrap()
    );
    assert!(posterior_step(&[xt], &[x0], 11, &s, &mut a).is_err());
}

#[test]
fn oracle_denoiser_round_trip() {
    let s = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0: Vec<f64> = standard_normal(&mut rng, 32 * 71);
    let eps: Vec<f64> = standard_normal(&mut rng, x0.len());
    let x_t = q_sample(&x0, 100, &eps, &s).unwrap();
    let out = reverse_chain(x_t, &s, 1.0, &mut rng, |_, _, _| Ok(x0.clone())).unwrap();
    let rmse = (out
        .iter()
        .zip(&x0)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / x0.len() as f64)
        .sqrt();
    assert!(rmse <= 0.05, "rmse {rmse}");
}

#[test]
fn single_step_chain_returns_denoiser_output() {
    let s = make_schedule(1, ScheduleKind::Cosine).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = sample_loop(4, &s, 1.0, &mut rng, |x: &[f64], t, _| {
        assert_eq!(t, 1);
        Ok(x.iter().map(|v| v * 2.0).collect())
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x_t: Vec<f64> = standard_normal(&mut rng, 4);
    assert_eq!(out, x_t.iter().map(|v| v * 2.0).collect::<Vec<_>>());
}

#[test]
fn guidance_zero_uses_unconditional_branch() {
    let s = make_schedule(5, ScheduleKind::Cosine).unwrap();
    let run = |scale: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        sample_loop(3, &s, scale, &mut rng, |_: &[f64], _, b| {
            Ok(match b {
                Branch::Conditional => vec![1.0; 3],
                Branch::Unconditional => vec![-1.0; 3],
            })
        })
        .unwrap()
    };
    assert_eq!(run(0.0), vec![-1.0; 3]);
    assert_eq!(run(1.0), vec![1.0; 3]);
}

#[test]
fn sampling_is_seed_deterministic() {
    let s = make_schedule(20, ScheduleKind::Cosine).unwrap();
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_loop(6, &s, 2.5, &mut rng, |x: &[f32], _, b| {
            let k = if b == Branch::Conditional { 0.5 } else { 0.2 };
            Ok(x.iter().map(|v| v * k).collect())
        })
        .unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn non_finite_prediction_is_numeric_error() {
    let s = make_schedule(3, ScheduleKind::Cosine).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = sample_loop(2, &s, 1.0, &mut rng, |_: &[f32], _, _| {
        Ok(vec![f32::NAN; 2])
    })
    .unwrap_err();
    assert!(matches!(err, fgmdm_core::Error::Numeric { step: 3, .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn alpha_bar_strictly_decreasing(steps in 1usize..=2000, cosine in any::<bool>()) {
        let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
        let s = make_schedule(steps, kind).unwrap();
        prop_assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(s.beta.iter().all(|&b| b > 0.0 && b < 1.0));
    }
}

mod common;

use common::checks::*;
use common::*;
use mixgan::batch::ImageBatch;
use mixgan::losses::{d_loss, LossKind};
use mixgan::models::{Discriminator, DiscriminatorNorm};
use mixgan::regularize::{
    consistency_regularization, cr_augment, gradient_penalty, gradient_penalty_at, interpolate,
    sample_interpolation_weights, CrTransform, RegularizerConfig,
};
use mixgan::rng::SeededRng;
use mixgan::tensor::Tensor;
use proptest::prelude::*;

fn random_batch(n: usize, c: usize, h: usize, w: usize, seed: u64) -> ImageBatch {
    let mut r = oracle_rng(seed);
    ImageBatch::new(n, c, h, w, (0..n * c * h * w).map(|_| normal(&mut r).tanh()).collect()).unwrap()
}

#[test]
fn penalty_on_linear_critics_is_exact() {
    gp_linear(1).unwrap();
}

#[test]
fn penalty_matches_finite_differences_on_mlp() {
    gp_mlp(2).unwrap();
    gp_mlp(3).unwrap();
}

#[test]
fn penalty_is_symmetric_under_swap() {
    let (c, h, w, hidden) = (3, 4, 4, 5);
    let p = c * h * w;
    let mut r = oracle_rng(4);
    let params: Vec<f64> = (0..MlpCritic::param_count(p, hidden)).map(|_| 0.3 * normal(&mut r)).collect();
    let critic = MlpCritic::new(p, hidden, &params);
    let reals = random_batch(6, c, h, w, 5);
    let fakes = random_batch(6, c, h, w, 6);
    let forward = gradient_penalty(&critic, &reals, &fakes, &mut SeededRng::new(7)).unwrap().item();
    let eps = sample_interpolation_weights(6, &mut SeededRng::new(7));
    let flipped: Vec<f64> = eps.iter().map(|e| 1.0 - e).collect();
    let swapped = gradient_penalty_at(&critic, &interpolate(&fakes, &reals, &flipped).unwrap()).unwrap().item();
    assert!((forward - swapped).abs() < 1e-10, "{forward} vs {swapped}");
}

#[test]
fn penalty_is_nonnegative_on_a_real_discriminator() {
    let d = Discriminator::new(&toy_spec(DiscriminatorNorm::Layer), &mut SeededRng::new(1)).unwrap();
    let reals = random_batch(4, 3, 32, 32, 8);
    let fakes = random_batch(4, 3, 32, 32, 9);
    let gp = gradient_penalty(&d, &reals, &fakes, &mut SeededRng::new(2)).unwrap().item();
    assert!(gp.is_finite() && gp >= 0.0);
    let cr = consistency_regularization(&d, &reals, 4, &mut SeededRng::new(3)).unwrap().item();
    assert!(cr.is_finite() && cr >= 0.0);
}

#[test]
fn penalty_schedule_counts() {
    for k in 1..8 {
        let cfg = RegularizerConfig {
            gp_enabled: true,
            gp_every: k,
            ..RegularizerConfig::default()
        };
        for n in [1u64, 7, 50, 101] {
            let hits = (1..=n).filter(|&i| cfg.gp_due(i)).count() as u64;
            assert_eq!(hits, n / k as u64);
        }
    }
    assert!(!RegularizerConfig::default().gp_due(5));
}

/// Replicate-edge shift oracle on a horizontal ramp.
#[test]
fn shift_by_four_on_a_ramp() {
    let (h, w) = (3, 10);
    let ramp: Vec<f64> = (0..h * w).map(|k| (k % w) as f64).collect();
    let t = CrTransform {
        flip: false,
        dx: 4,
        dy: 0,
    };
    let out = t.apply(&ramp, 1, h, w);
    for y in 0..h {
        for x in 0..w {
            let want = x.saturating_sub(4) as f64;
            assert_eq!(out[y * w + x], want, "({y},{x})");
        }
    }
    let flipped = CrTransform {
        flip: true,
        dx: 0,
        dy: 0,
    }
    .apply(&ramp, 1, h, w);
    assert_eq!(&flipped[..w], &(0..w).rev().map(|v| v as f64).collect::<Vec<_>>()[..]);
    assert_eq!(CrTransform::IDENTITY.apply(&ramp, 1, h, w), ramp);
}

#[test]
fn loss_values_are_exact() {
    loss_values().unwrap();
}

#[test]
fn loss_gradients_match_finite_differences() {
    loss_gradients(10).unwrap();
}

#[test]
fn spectral_norm_matches_svd() {
    spectral_convergence(20, 100, 11).unwrap();
}

fn scores(v: &[f64]) -> Tensor {
    Tensor::new(v.to_vec(), &[v.len()])
}

proptest! {
    #[test]
    fn hinge_is_nonnegative_and_zero_only_past_the_margins(
        real in prop::collection::vec(-3.0f64..3.0, 1..10),
        fake in prop::collection::vec(-3.0f64..3.0, 1..10),
    ) {
        let l = d_loss(&scores(&real), &scores(&fake), LossKind::Hinge).unwrap().item();
        prop_assert!(l >= 0.0);
        let separated = real.iter().all(|&s| s >= 1.0) && fake.iter().all(|&s| s <= -1.0);
        prop_assert_eq!(l == 0.0, separated);
    }

    #[test]
    fn wasserstein_ignores_a_shared_offset_and_order(
        real in prop::collection::vec(-3.0f64..3.0, 1..10),
        fake in prop::collection::vec(-3.0f64..3.0, 1..10),
        c in -5.0f64..5.0,
    ) {
        let base = d_loss(&scores(&real), &scores(&fake), LossKind::Wasserstein).unwrap().item();
        let r2: Vec<f64> = real.iter().map(|v| v + c).collect();
        let f2: Vec<f64> = fake.iter().map(|v| v + c).collect();
        let shifted = d_loss(&scores(&r2), &scores(&f2), LossKind::Wasserstein).unwrap().item();
        prop_assert!((base - shifted).abs() < 1e-12);
        let mut rr = real.clone();
        rr.reverse();
        for kind in [LossKind::Hinge, LossKind::Wasserstein] {
            let a = d_loss(&scores(&real), &scores(&fake), kind).unwrap().item();
            let b = d_loss(&scores(&rr), &scores(&fake), kind).unwrap().item();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cr_augment_keeps_shape_and_range(seed in any::<u64>(), shift in 0usize..6) {
        let img = random_batch(1, 3, 8, 8, seed).data;
        let out = cr_augment(&img, 3, 8, 8, shift, &mut SeededRng::new(seed));
        prop_assert_eq!(out.len(), img.len());
        let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(out.iter().all(|&v| v >= lo && v <= hi));
    }
}

//! Property suites shared by the focused integration tests and the
//! acceptance runner. Each returns a one-line summary on success and a
//! description of the first violation otherwise.

#![allow(dead_code)]

use std::collections::HashSet;

use mixgan::augment::{
    compose_discriminator_batch, mix, sample_cutmix_mask, sample_mixup_lambda, sample_mixup_mask, sample_srmix_mask,
    Axis, Mask, MixStrategyConfig, MixupParams, SrmixRanges, Strategy,
};
use mixgan::batch::ImageBatch;
use mixgan::checkpoint::{decode, encode};
use mixgan::losses::{d_loss, g_loss, LossKind};
use mixgan::metrics::{frechet_distance, GaussianStats};
use mixgan::models::DiscriminatorNorm;
use mixgan::nn::PowerIterationState;
use mixgan::regularize::gradient_penalty_at;
use mixgan::rng::SeededRng;
use mixgan::tensor::{grad, Tensor};
use mixgan::train::{
    run_training, DiscriminatorMetrics, GeneratorMetrics, NoObserver, Observer, TrainConfig, TrainState,
};
use mixgan::data::{make_synthetic_dataset, SyntheticKind};

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{
    frechet_oracle, normal, oracle_rng, random_spd, toy_spec, toy_train, LinearCritic, MlpCritic,
};

pub type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- masks

pub const MASKS_PER_STRATEGY: usize = 10_000;

pub fn mixup_masks(n: usize, res: usize, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut lambdas = Vec::with_capacity(n);
    for k in 0..n {
        let m = sample_mixup_mask(res, res, MixupParams::default(), &mut rng).map_err(|e| e.to_string())?;
        ensure!(m.height == res && m.width == res, "mask {k} has the wrong shape");
        let v = m.values[0];
        ensure!((0.0..=1.0).contains(&v), "mask {k}: lambda {v} out of range");
        ensure!(m.values.iter().all(|&x| x == v), "mask {k} is not spatially constant");
        lambdas.push(v);
    }
    let mean = lambdas.iter().sum::<f64>() / n as f64;
    let var = lambdas.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    ensure!((mean - 0.5).abs() <= 0.02, "lambda mean {mean} outside 0.5 +/- 0.02");
    ensure!((var - 1.0 / 12.0).abs() <= 0.01, "lambda variance {var} outside 1/12 +/- 0.01");
    Ok(format!("mixup: {n} constant masks, lambda mean {mean:.4}, var {var:.4}"))
}

pub fn cutmix_masks(n: usize, res: usize, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut area = 0.0;
    for k in 0..n {
        let (m, b) = sample_cutmix_mask(res, res, &mut rng).map_err(|e| e.to_string())?;
        ensure!(b.w >= 1 && b.h >= 1, "box {k} is empty: {b:?}");
        ensure!(b.x + b.w <= res && b.y + b.h <= res, "box {k} leaves the image: {b:?}");
        for y in 0..res {
            for x in 0..res {
                let inside = (b.x..b.x + b.w).contains(&x) && (b.y..b.y + b.h).contains(&y);
                let want = if inside { 1.0 } else { 0.0 };
                ensure!(m.at(y, x) == want, "mask {k} at ({y},{x}) is {} for box {b:?}", m.at(y, x));
            }
        }
        ensure!(m.sum() == (b.w * b.h) as f64, "mask {k} sum differs from box area");
        area += (b.w * b.h) as f64 / (res * res) as f64;
    }
    let mean = area / n as f64;
    ensure!((mean - 0.5).abs() <= 0.03, "mean box area fraction {mean} outside 0.5 +/- 0.03");
    Ok(format!("cutmix: {n} binary masks, mean area fraction {mean:.4}"))
}

pub fn srmix_masks(n: usize, res: usize, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let ranges = SrmixRanges::default();
    let (c_lo, c_hi) = (res as f64 / 8.0, res as f64 * 7.0 / 8.0);
    let (w_lo, w_hi) = (2.0, (res as f64 / 16.0).max(2.0));
    let mut seen_axes = HashSet::new();
    for k in 0..n {
        let (m, p) = sample_srmix_mask(res, res, res, &ranges, &mut rng).map_err(|e| e.to_string())?;
        ensure!(p.sigma == 1.0 || p.sigma == -1.0, "mask {k}: sigma {}", p.sigma);
        ensure!((c_lo..=c_hi).contains(&p.center), "mask {k}: center {} outside [{c_lo}, {c_hi}]", p.center);
        ensure!((w_lo..=w_hi).contains(&p.width), "mask {k}: width {} outside [{w_lo}, {w_hi}]", p.width);
        seen_axes.insert(format!("{:?}{}", p.axis, p.sigma));
        for y in 0..res {
            for x in 0..res {
                let (along, across) = match p.axis {
                    Axis::Horizontal => (x, y),
                    Axis::Vertical => (y, x),
                };
                let v = m.at(y, x);
                ensure!((0.0..=1.0).contains(&v), "mask {k} value {v} out of range");
                let want = 0.5 * (1.0 + p.sigma * ((along as f64 - p.center) / p.width).tanh());
                ensure!((v - want).abs() <= 1e-15, "mask {k} at ({y},{x}): {v} vs profile {want}");
                // constant across the other axis
                let first = match p.axis {
                    Axis::Horizontal => m.at(0, x),
                    Axis::Vertical => m.at(y, 0),
                };
                ensure!(v == first || across == 0, "mask {k} varies across its axis");
                if along > 0 {
                    let prev = match p.axis {
                        Axis::Horizontal => m.at(y, x - 1),
                        Axis::Vertical => m.at(y - 1, x),
                    };
                    ensure!(p.sigma * (v - prev) >= 0.0, "mask {k} not monotone at ({y},{x})");
                }
            }
        }
    }
    ensure!(seen_axes.len() == 4, "not every axis/sign combination was drawn: {seen_axes:?}");
    Ok(format!("srmix: {n} monotone masks, parameters in range"))
}

// --------------------------------------------------------------- mixing

fn close_ulps(x: f64, want: f64, scale: f64) -> bool {
    (x - want).abs() <= 4.0 * f64::EPSILON * scale
}

pub fn mixing_algebra(seed: u64) -> Check {
    let mut r = oracle_rng(seed);
    let (c, h, w) = (3, 16, 16);
    let mut checked = 0usize;
    for trial in 0..200 {
        let a: Vec<f64> = (0..c * h * w).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
        let b: Vec<f64> = (0..c * h * w).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
        let m = Mask {
            height: h,
            width: w,
            values: (0..h * w).map(|_| r.random::<f64>()).collect(),
        };
        let ones = mix(&a, &b, c, &Mask::constant(h, w, 1.0)).map_err(|e| e.to_string())?;
        ensure!(ones == a, "trial {trial}: all-ones mask does not return x_i");
        let zeros = mix(&a, &b, c, &Mask::constant(h, w, 0.0)).map_err(|e| e.to_string())?;
        ensure!(zeros == b, "trial {trial}: all-zero mask does not return x_j");
        let half = mix(&a, &b, c, &Mask::constant(h, w, 0.5)).map_err(|e| e.to_string())?;
        ensure!(
            half.iter().zip(a.iter().zip(&b)).all(|(&o, (&x, &y))| o == (x + y) / 2.0),
            "trial {trial}: half mask is not the average"
        );
        let same = mix(&a, &a, c, &m).map_err(|e| e.to_string())?;
        ensure!(
            same.iter().zip(&a).all(|(&o, &x)| close_ulps(o, x, x.abs())),
            "trial {trial}: x_i = x_j is not a fixed point"
        );
        let ab = mix(&a, &b, c, &m).map_err(|e| e.to_string())?;
        let ba = mix(&b, &a, c, &m).map_err(|e| e.to_string())?;
        for k in 0..a.len() {
            let (x, y) = (a[k], b[k]);
            ensure!(
                close_ulps(ab[k] + ba[k], x + y, x.abs() + y.abs()),
                "trial {trial}: complementarity fails at {k}"
            );
            ensure!(
                ab[k] >= x.min(y) - 1e-15 && ab[k] <= x.max(y) + 1e-15,
                "trial {trial}: output leaves the pixel hull at {k}"
            );
            // the mask is shared by every channel
            let mval = m.values[k % (h * w)];
            ensure!(close_ulps(ab[k], mval * x + (1.0 - mval) * y, 1.0), "trial {trial}: channel sharing fails at {k}");
        }
        checked += 1;
    }
    Ok(format!("{checked} random image pairs: identity, average, fixed point, complement"))
}

// ---------------------------------------------------------- composition

fn constant_batch(n: usize, c: usize, h: usize, w: usize, v: f64) -> ImageBatch {
    ImageBatch::new(n, c, h, w, vec![v; n * c * h * w]).expect("shape")
}

/// Counts entries of the composed batch that differ from the fakes.
pub fn composition(batch: usize, ratio: f64, expected: usize, seed: u64) -> Check {
    let (c, h, w) = (3, 16, 16);
    let reals = constant_batch(batch, c, h, w, 0.75);
    let fakes = constant_batch(batch, c, h, w, -0.5);
    for strategy in Strategy::ALL_MIXING {
        let cfg = MixStrategyConfig::new(strategy, ratio);
        let out = compose_discriminator_batch(&reals, &fakes, &cfg, &mut SeededRng::new(seed))
            .map_err(|e| e.to_string())?;
        let again = compose_discriminator_batch(&reals, &fakes, &cfg, &mut SeededRng::new(seed))
            .map_err(|e| e.to_string())?;
        ensure!(out == again, "{strategy:?}: composition is not deterministic");
        ensure!(out.mixed == expected, "{strategy:?}: reported {} mixed, expected {expected}", out.mixed);
        let changed: Vec<usize> = (0..batch).filter(|&i| out.images.item(i) != fakes.item(i)).collect();
        ensure!(
            changed == (0..expected).collect::<Vec<_>>(),
            "{strategy:?}: mixed entries at {changed:?}, expected the first {expected}"
        );
        for i in 0..expected {
            ensure!(
                out.images.item(i).iter().all(|&v| (-0.5..=0.75).contains(&v)),
                "{strategy:?}: entry {i} is not a real/fake blend"
            );
        }
    }
    let zero = compose_discriminator_batch(&reals, &fakes, &MixStrategyConfig::new(Strategy::Srmix, 0.0), &mut SeededRng::new(seed))
        .map_err(|e| e.to_string())?;
    ensure!(zero.images == fakes, "r = 0 changed the fakes");
    Ok(format!("B={batch}, r={ratio}: {expected} mixed + {} plain fakes", batch - expected))
}

// ------------------------------------------------------------------ FID

fn gaussian(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
    GaussianStats { mean, cov, count: 0 }
}

pub fn fid_closed_forms(seed: u64) -> Check {
    let mut r = oracle_rng(seed);
    let d = 6;
    let cov = random_spd(d, &mut r);
    let mean: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
    let same = frechet_distance(&gaussian(mean.clone(), cov.clone()), &gaussian(mean.clone(), cov.clone()))
        .map_err(|e| e.to_string())?;
    ensure!(same.abs() <= 1e-8, "identical Gaussians give {same}");

    let shift: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
    let shifted: Vec<f64> = mean.iter().zip(&shift).map(|(a, b)| a + b).collect();
    let want: f64 = shift.iter().map(|s| s * s).sum();
    let got = frechet_distance(&gaussian(mean.clone(), cov.clone()), &gaussian(shifted, cov.clone()))
        .map_err(|e| e.to_string())?;
    ensure!((got - want).abs() <= 1e-8, "mean shift gives {got}, expected {want}");

    for (sa, sb) in [(1.0, 2.0), (0.3, 0.3), (2.5, 0.1)] {
        let got = frechet_distance(&gaussian(vec![0.0], vec![sa * sa]), &gaussian(vec![0.0], vec![sb * sb]))
            .map_err(|e| e.to_string())?;
        let want = (sa - sb) * (sa - sb);
        ensure!((got - want).abs() <= 1e-8, "1-d sigmas {sa},{sb}: {got} vs {want}");
    }
    // commuting diagonal covariances in several dimensions
    let da: Vec<f64> = (0..d).map(|_| 0.1 + r.random::<f64>()).collect();
    let db: Vec<f64> = (0..d).map(|_| 0.1 + r.random::<f64>()).collect();
    let diag = |v: &[f64]| {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = v[i];
        }
        m
    };
    let got = frechet_distance(&gaussian(vec![0.0; d], diag(&da)), &gaussian(vec![0.0; d], diag(&db)))
        .map_err(|e| e.to_string())?;
    let want: f64 = da.iter().zip(&db).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    ensure!((got - want).abs() <= 1e-8, "diagonal covariances: {got} vs {want}");
    Ok("identity, mean shift, 1-d and diagonal commuting cases within 1e-8".into())
}

pub fn fid_vs_oracle(pairs: usize, d: usize, seed: u64) -> Check {
    let mut r = oracle_rng(seed);
    let mut worst: f64 = 0.0;
    for k in 0..pairs {
        let ca = random_spd(d, &mut r);
        let cb = random_spd(d, &mut r);
        let ma: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
        let mb: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
        let got = frechet_distance(&gaussian(ma.clone(), ca.clone()), &gaussian(mb.clone(), cb.clone()))
            .map_err(|e| e.to_string())?;
        let want = frechet_oracle(&ma, &ca, &mb, &cb);
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-6, "pair {k}: library {got} vs oracle {want}");
    }
    Ok(format!("{pairs} random {d}-d SPD pairs, max |diff| {worst:.2e}"))
}

// ------------------------------------------------------- gradient penalty

/// `(||w|| - 1)^2` for linear critics of several norms.
pub fn gp_linear(seed: u64) -> Check {
    let mut r = oracle_rng(seed);
    let (c, h, w) = (3, 4, 4);
    let p = c * h * w;
    for (k, target) in [0.25, 0.5, 1.0, 2.0, 7.5].into_iter().enumerate() {
        let dir: Vec<f64> = (0..p).map(|_| normal(&mut r)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let wv: Vec<f64> = dir.iter().map(|v| v / norm * target).collect();
        let critic = LinearCritic {
            w: Tensor::new(wv, &[p]),
            b: normal(&mut r),
        };
        let pts = ImageBatch::new(5, c, h, w, (0..5 * p).map(|_| normal(&mut r)).collect()).expect("shape");
        let gp = gradient_penalty_at(&critic, &pts).map_err(|e| e.to_string())?.item();
        let want = (target - 1.0) * (target - 1.0);
        ensure!((gp - want).abs() <= 1e-9, "case {k}: ||w|| = {target} gives {gp}, expected {want}");
    }
    Ok("linear critics: penalty equals (||w|| - 1)^2".into())
}

/// Analytic input gradient of the tanh MLP.
fn mlp_input_grad(inputs: usize, hidden: usize, params: &[f64], x: &[f64]) -> Vec<f64> {
    let (a, rest) = params.split_at(inputs * hidden);
    let (b, c) = rest.split_at(hidden);
    let act: Vec<f64> = (0..hidden)
        .map(|j| {
            let pre: f64 = (0..inputs).map(|i| x[i] * a[i * hidden + j]).sum::<f64>() + b[j];
            c[j] * (1.0 - pre.tanh().powi(2))
        })
        .collect();
    (0..inputs)
        .map(|i| (0..hidden).map(|j| a[i * hidden + j] * act[j]).sum())
        .collect()
}

fn mlp_penalty(inputs: usize, hidden: usize, params: &[f64], pts: &[Vec<f64>]) -> f64 {
    pts.iter()
        .map(|x| {
            let g = mlp_input_grad(inputs, hidden, params, x);
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            (n - 1.0).powi(2)
        })
        .sum::<f64>()
        / pts.len() as f64
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Penalty value against finite-difference input gradients, and its
/// parameter gradient against finite differences of an analytic penalty.
pub fn gp_mlp(seed: u64) -> Check {
    let mut r = oracle_rng(seed);
    let (c, h, w, hidden, n) = (3, 4, 4, 6, 4);
    let p = c * h * w;
    let np = MlpCritic::param_count(p, hidden);
    let params: Vec<f64> = (0..np).map(|_| 0.3 * normal(&mut r)).collect();
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| normal(&mut r)).collect()).collect();
    let batch = ImageBatch::new(n, c, h, w, pts.concat()).expect("shape");
    let critic = MlpCritic::new(p, hidden, &params);
    let gp = gradient_penalty_at(&critic, &batch).map_err(|e| e.to_string())?;

    // value: input gradients by central differences on the plain-float MLP
    let step = 1e-5;
    let fd_value = pts
        .iter()
        .map(|x| {
            let g: Vec<f64> = (0..p)
                .map(|i| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += step;
                    xm[i] -= step;
                    (MlpCritic::eval(p, hidden, &params, &xp) - MlpCritic::eval(p, hidden, &params, &xm)) / (2.0 * step)
                })
                .collect();
            (g.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).powi(2)
        })
        .sum::<f64>()
        / n as f64;
    ensure!(rel(gp.item(), fd_value) <= 1e-3, "penalty {} vs finite differences {fd_value}", gp.item());

    // parameter gradient through the double backward
    let grads = grad(&gp, &[&critic.w1, &critic.b1, &critic.w2], false);
    let auto: Vec<f64> = grads
        .into_iter()
        .zip([p * hidden, hidden, hidden])
        .flat_map(|(g, len)| g.map_or(vec![0.0; len], |t| t.to_vec()))
        .collect();
    let mut worst: f64 = 0.0;
    for k in 0..np {
        let mut pp = params.clone();
        let mut pm = params.clone();
        pp[k] += step;
        pm[k] -= step;
        let fd = (mlp_penalty(p, hidden, &pp, &pts) - mlp_penalty(p, hidden, &pm, &pts)) / (2.0 * step);
        let scale = auto.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = (auto[k] - fd).abs() / scale.max(1e-12);
        worst = worst.max(err);
        ensure!(err <= 1e-3, "parameter {k}: autodiff {} vs finite difference {fd}", auto[k]);
    }
    Ok(format!("tiny MLP: value rel err {:.1e}, parameter gradient max rel err {worst:.1e}", rel(gp.item(), fd_value)))
}

// ---------------------------------------------------------------- losses

pub fn loss_values() -> Check {
    let t = |v: &[f64]| Tensor::new(v.to_vec(), &[v.len()]);
    let cases = [
        // (real, fake, hinge, wasserstein, generator)
        (vec![2.0, 1.0, 3.0, 1.5], vec![-1.0, -4.0, -2.0, -1.5], 0.0, -4.0, 2.125),
        (vec![0.0, 0.0], vec![0.0, 0.0], 2.0, 0.0, 0.0),
        (vec![0.5, -1.0], vec![0.5, 2.0], 3.5, 1.5, -1.25),
        (vec![1.0], vec![-1.0], 0.0, -2.0, 1.0),
        (vec![-0.5, 0.25, 0.75, 1.25], vec![-0.75, 0.0, -2.0, 0.5], 0.625 + 0.6875, -1.0, 0.5625),
    ];
    for (k, (real, fake, hinge, wass, gen)) in cases.iter().enumerate() {
        let h = d_loss(&t(real), &t(fake), LossKind::Hinge).map_err(|e| e.to_string())?.item();
        let w = d_loss(&t(real), &t(fake), LossKind::Wasserstein).map_err(|e| e.to_string())?.item();
        ensure!(h == *hinge, "case {k}: hinge {h}, expected {hinge}");
        ensure!(w == *wass, "case {k}: wasserstein {w}, expected {wass}");
        for kind in [LossKind::Hinge, LossKind::Wasserstein] {
            let g = g_loss(&t(fake), kind).map_err(|e| e.to_string())?.item();
            ensure!(g == *gen, "case {k}: generator loss {g}, expected {gen}");
        }
    }
    Ok(format!("{} hand-specified score vectors exact for both kinds", cases.len()))
}

/// Loss gradients with respect to scores against central differences.
pub fn loss_gradients(seed: u64) -> Check {
    let mut r = oracle_rng(seed);
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let n = 2 + trial % 7;
        // keep away from the hinge kinks at +-1
        let draw = |r: &mut ChaCha20Rng| loop {
            let v = 3.0 * normal(r);
            if (v.abs() - 1.0).abs() > 1e-3 {
                break v;
            }
        };
        let real: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let fake: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        for kind in [LossKind::Hinge, LossKind::Wasserstein] {
            let rt = Tensor::param(real.clone(), &[n]);
            let ft = Tensor::param(fake.clone(), &[n]);
            let loss = d_loss(&rt, &ft, kind).map_err(|e| e.to_string())?;
            let gl = g_loss(&ft, kind).map_err(|e| e.to_string())?;
            let g = grad(&loss, &[&rt, &ft], false);
            let gg = grad(&gl, &[&ft], false);
            let auto_r = g[0].as_ref().map_or(vec![0.0; n], |t| t.to_vec());
            let auto_f = g[1].as_ref().map_or(vec![0.0; n], |t| t.to_vec());
            let auto_g = gg[0].as_ref().map_or(vec![0.0; n], |t| t.to_vec());
            let value = |re: &[f64], fa: &[f64]| {
                d_loss(&Tensor::new(re.to_vec(), &[n]), &Tensor::new(fa.to_vec(), &[n]), kind)
                    .expect("finite scores")
                    .item()
            };
            let gvalue = |fa: &[f64]| g_loss(&Tensor::new(fa.to_vec(), &[n]), kind).expect("finite").item();
            for i in 0..n {
                let bump = |v: &[f64], d: f64| {
                    let mut v = v.to_vec();
                    v[i] += d;
                    v
                };
                let fd_r = (value(&bump(&real, step), &fake) - value(&bump(&real, -step), &fake)) / (2.0 * step);
                let fd_f = (value(&real, &bump(&fake, step)) - value(&real, &bump(&fake, -step))) / (2.0 * step);
                let fd_g = (gvalue(&bump(&fake, step)) - gvalue(&bump(&fake, -step))) / (2.0 * step);
                for (a, f, what) in [(auto_r[i], fd_r, "real"), (auto_f[i], fd_f, "fake"), (auto_g[i], fd_g, "generator")] {
                    let err = (a - f).abs() / f.abs().max(1.0 / n as f64);
                    worst = worst.max(err);
                    ensure!(err <= 1e-4, "{kind:?} trial {trial} {what}[{i}]: autodiff {a} vs fd {f}");
                }
            }
        }
    }
    Ok(format!("50 random score vectors, max rel err {worst:.1e}"))
}

// -------------------------------------------------------- spectral norm

pub fn spectral_convergence(matrices: usize, iterations: usize, seed: u64) -> Check {
    let mut r = oracle_rng(seed);
    let mut worst: f64 = 0.0;
    for k in 0..matrices {
        let rows = 3 + (r.random::<u32>() % 48) as usize;
        let cols = 3 + (r.random::<u32>() % 48) as usize;
        let scale = 0.02 + r.random::<f64>();
        let w: Vec<f64> = (0..rows * cols).map(|_| scale * normal(&mut r)).collect();
        let mut st = PowerIterationState::new(rows, cols, &mut SeededRng::new(seed + k as u64));
        for _ in 0..iterations {
            st.step(&w, rows, cols);
        }
        let sigma = st.sigma(&w, rows, cols);
        let top = nalgebra::DMatrix::from_row_slice(rows, cols, &w).singular_values().max();
        let normalized = top / sigma;
        let err = (normalized - 1.0).abs();
        worst = worst.max(err);
        ensure!(err <= 0.01, "matrix {k} ({rows}x{cols}): normalized top singular value {normalized}");
        let wt = Tensor::new(w.clone(), &[rows, cols]);
        let sn = mixgan::nn::spectral_normalized(&wt, &st);
        let top_sn = nalgebra::DMatrix::from_row_slice(rows, cols, sn.data()).singular_values().max();
        ensure!((top_sn - 1.0).abs() <= 0.01, "matrix {k}: normalized weight has top singular value {top_sn}");
    }
    Ok(format!("{matrices} random matrices after {iterations} iterations, max |sigma_1/est - 1| {worst:.1e}"))
}

// ------------------------------------------------------------ structure

#[derive(Debug, Clone)]
enum Event {
    D { g: Vec<f64>, d: Vec<f64>, latent: Vec<f64>, mixed: usize, gp: bool },
    G { g: Vec<f64>, d: Vec<f64>, latent: Vec<f64> },
}

struct Recorder {
    events: Vec<Event>,
    snapshot_at: u64,
    snapshot: Option<Vec<u8>>,
}

impl Observer for Recorder {
    fn on_discriminator_step(&mut self, state: &TrainState, m: &DiscriminatorMetrics) {
        self.events.push(Event::D {
            g: state.generator.params().flat(),
            d: state.discriminator.params().flat(),
            latent: m.latent.to_vec(),
            mixed: m.mixed,
            gp: m.gp.is_some(),
        });
    }

    fn on_generator_step(&mut self, state: &TrainState, m: &GeneratorMetrics) {
        self.events.push(Event::G {
            g: state.generator.params().flat(),
            d: state.discriminator.params().flat(),
            latent: m.latent.to_vec(),
        });
        if state.iteration == self.snapshot_at {
            self.snapshot = Some(encode(state, &serde_json::Value::Null).expect("encode"));
        }
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub struct StructureReport {
    pub alternation: Check,
    pub frozen: Check,
    pub fresh_latents: Check,
    pub mixed_fraction: Check,
    pub gp_schedule: Check,
    pub resume: Check,
}

pub fn toy_dataset(n: usize) -> mixgan::data::Dataset {
    make_synthetic_dataset(SyntheticKind::ColoredShapes, n, 32, 11).expect("synthetic data")
}

/// Instrumented toy run: `iterations` generator steps with SRMix, GP and
/// CR, then a resume from the midpoint.
pub fn structure(iterations: u64, n_crit: usize) -> StructureReport {
    let dataset = toy_dataset(64);
    let mut cfg: TrainConfig = toy_train(MixStrategyConfig::new(Strategy::Srmix, 0.25), iterations);
    cfg.n_crit = n_crit;
    let spec = toy_spec(DiscriminatorNorm::Spectral);
    let mut state = TrainState::new(&spec, &cfg, dataset.len()).expect("state");
    let g0 = state.generator.params().flat();
    let d0 = state.discriminator.params().flat();
    let mid = iterations / 2;
    let mut rec = Recorder {
        events: Vec::new(),
        snapshot_at: mid,
        snapshot: None,
    };
    let summary = match run_training(&cfg, &dataset, &mut state, &mut rec) {
        Ok(s) => s,
        Err(e) => {
            let msg = Err(format!("training failed: {e}"));
            return StructureReport {
                alternation: msg.clone(),
                frozen: msg.clone(),
                fresh_latents: msg.clone(),
                mixed_fraction: msg.clone(),
                gp_schedule: msg.clone(),
                resume: msg,
            };
        }
    };

    let alternation = (|| -> Check {
        let pattern: String = rec.events.iter().map(|e| if matches!(e, Event::D { .. }) { 'D' } else { 'G' }).collect();
        let unit = format!("{}G", "D".repeat(n_crit));
        ensure!(pattern == unit.repeat(iterations as usize), "event order is not ({unit})^{iterations}");
        ensure!(state.iteration == iterations, "iteration counter {}", state.iteration);
        ensure!(state.d_iterations == iterations * n_crit as u64, "d_iterations {}", state.d_iterations);
        Ok(format!("{iterations} x ({n_crit} discriminator updates, 1 generator update)"))
    })();

    let frozen = (|| -> Check {
        let (mut g_prev, mut d_prev) = (bits(&g0), bits(&d0));
        for (k, e) in rec.events.iter().enumerate() {
            match e {
                Event::D { g, d, .. } => {
                    ensure!(bits(g) == g_prev, "event {k}: generator parameters moved during a discriminator step");
                    ensure!(bits(d) != d_prev, "event {k}: discriminator step left the discriminator unchanged");
                    d_prev = bits(d);
                }
                Event::G { g, d, .. } => {
                    ensure!(bits(d) == d_prev, "event {k}: discriminator parameters moved during a generator step");
                    ensure!(bits(g) != g_prev, "event {k}: generator step left the generator unchanged");
                    g_prev = bits(g);
                }
            }
        }
        Ok("each player's parameters are bit-identical while the other updates".into())
    })();

    let fresh_latents = (|| -> Check {
        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        for (k, e) in rec.events.iter().enumerate() {
            let latent = match e {
                Event::D { latent, .. } | Event::G { latent, .. } => latent,
            };
            ensure!(seen.insert(bits(latent)), "event {k} reuses an earlier latent batch");
            // no single latent vector is shared either
            let z_dim = 8;
            for row in latent.chunks(z_dim) {
                ensure!(seen.insert(bits(row)), "event {k} reuses a latent vector");
            }
        }
        Ok(format!("{} latent batches, all distinct", rec.events.len()))
    })();

    let mixed_fraction = (|| -> Check {
        let want = cfg.mix.mixed_slots(cfg.batch_size);
        let counts: Vec<usize> = rec
            .events
            .iter()
            .filter_map(|e| match e {
                Event::D { mixed, .. } => Some(*mixed),
                _ => None,
            })
            .collect();
        ensure!(counts.iter().all(|&c| c == want), "mixed counts {counts:?}, expected {want} each");
        Ok(format!("{} discriminator batches with exactly {want}/{} mixed", counts.len(), cfg.batch_size))
    })();

    let gp_schedule = (|| -> Check {
        let n = state.d_iterations as usize;
        let k = cfg.regularizers.gp_every;
        let with_gp = rec.events.iter().filter(|e| matches!(e, Event::D { gp: true, .. })).count();
        ensure!(with_gp == n / k, "penalty applied {with_gp} times in {n} iterations, expected {}", n / k);
        Ok(format!("penalty on {with_gp} of {n} discriminator iterations (every {k})"))
    })();

    let resume = (|| -> Check {
        let bytes = rec.snapshot.clone().ok_or("no midpoint snapshot")?;
        let mut resumed = decode(&bytes, std::path::Path::new("<memory>")).map_err(|e| e.to_string())?.state;
        ensure!(resumed.iteration == mid, "snapshot iteration {}", resumed.iteration);
        let rest = run_training(&cfg, &dataset, &mut resumed, &mut NoObserver).map_err(|e| e.to_string())?;
        let straight: Vec<_> = summary.records.iter().filter(|r| r.iteration > mid).collect();
        ensure!(rest.records.len() == straight.len(), "resumed run logged {} records", rest.records.len());
        for (a, b) in rest.records.iter().zip(&straight) {
            ensure!(a.same_values(b), "record {} differs after resume: {a:?} vs {b:?}", a.iteration);
        }
        let end_a = encode(&state, &serde_json::Value::Null).map_err(|e| e.to_string())?;
        let end_b = encode(&resumed, &serde_json::Value::Null).map_err(|e| e.to_string())?;
        ensure!(end_a == end_b, "final states differ after resume");
        Ok(format!("resume at {mid} reproduces iterations {}..={iterations} and the final state bit for bit", mid + 1))
    })();

    StructureReport {
        alternation,
        frozen,
        fresh_latents,
        mixed_fraction,
        gp_schedule,
        resume,
    }
}

pub fn all_ok(checks: &[&Check]) -> Check {
    let mut parts = Vec::new();
    for c in checks {
        match c {
            Ok(s) => parts.push(s.clone()),
            Err(e) => return Err(e.clone()),
        }
    }
    Ok(parts.join("; "))
}

pub fn srmix_ranges_small(seed: u64) -> Check {
    // tiny images collapse the width range to exactly two pixels
    let mut rng = SeededRng::new(seed);
    for _ in 0..1000 {
        let (_, p) = sample_srmix_mask(16, 16, 16, &SrmixRanges::default(), &mut rng).map_err(|e| e.to_string())?;
        ensure!(p.width == 2.0, "width {} at resolution 16", p.width);
    }
    Ok("resolution 16: width fixed at 2 px".into())
}

pub fn mixup_lambda_mean(n: usize, alpha: f64, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| sample_mixup_lambda(MixupParams { alpha }, &mut rng).expect("alpha > 0"))
        .sum::<f64>()
        / n as f64
}

//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! into the library's numerical routines.
#![allow(dead_code)]

pub mod checks;

use mixgan::augment::MixStrategyConfig;
use mixgan::models::{Critic, DiscriminatorNorm, Family, GeneratorNorm, ModelSpec};
use mixgan::regularize::RegularizerConfig;
use mixgan::tensor::Tensor;
use mixgan::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn oracle_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Box-Muller standard normal, kept separate from the library's samplers.
pub fn normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let aip = a[i * k + p];
            for j in 0..m {
                out[i * m + j] += aip * b[p * m + j];
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

/// Cyclic Jacobi rotations on a symmetric `n x n` matrix. Returns the
/// eigenvalues and the eigenvectors as columns of a row-major matrix.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Lower-triangular `L` with `L L^T = a`.
pub fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                l[i * n + i] = (a[i * n + i] - s).sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    l
}

/// Random symmetric positive definite matrix `A A^T / n + eps I`.
pub fn random_spd(n: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let a: Vec<f64> = (0..n * n).map(|_| normal(rng)).collect();
    let mut s = matmul(&a, &transpose(&a, n, n), n, n, n);
    for (i, v) in s.iter_mut().enumerate() {
        *v /= n as f64;
        if i % (n + 1) == 0 {
            *v += 0.05;
        }
    }
    s
}

/// Random orthogonal matrix from the eigenvectors of a random SPD matrix.
pub fn random_rotation(n: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    jacobi_eigen(&random_spd(n, rng), n).1
}

/// Frechet distance through a different route than the library: with
/// `cov_a = L L^T`, `tr sqrt(cov_a cov_b)` is the sum of square roots of
/// the eigenvalues of the symmetric `L^T cov_b L`.
pub fn frechet_oracle(mean_a: &[f64], cov_a: &[f64], mean_b: &[f64], cov_b: &[f64]) -> f64 {
    let n = mean_a.len();
    let l = cholesky(cov_a, n);
    let m = matmul(&matmul(&transpose(&l, n, n), cov_b, n, n, n), &l, n, n, n);
    let sym: Vec<f64> = (0..n * n).map(|k| 0.5 * (m[k] + m[(k % n) * n + k / n])).collect();
    let (vals, _) = jacobi_eigen(&sym, n);
    let tr_sqrt: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dmu: f64 = mean_a.iter().zip(mean_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let tr_a: f64 = (0..n).map(|i| cov_a[i * n + i]).sum();
    let tr_b: f64 = (0..n).map(|i| cov_b[i * n + i]).sum();
    dmu + tr_a + tr_b - 2.0 * tr_sqrt
}

/// `D(x) = w . vec(x) + b`
pub struct LinearCritic {
    pub w: Tensor,
    pub b: f64,
}

impl Critic for LinearCritic {
    fn score(&self, x: &Tensor) -> Tensor {
        let n = x.dim(0);
        let p = x.numel() / n;
        x.reshape(&[n, p]).matmul(&self.w.reshape(&[p, 1])).add_scalar(self.b).reshape(&[n])
    }
}

/// `D(x) = w2 . tanh(W1 vec(x) + b1)`
pub struct MlpCritic {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
}

impl MlpCritic {
    pub fn new(inputs: usize, hidden: usize, params: &[f64]) -> Self {
        let (a, rest) = params.split_at(inputs * hidden);
        let (b, c) = rest.split_at(hidden);
        Self {
            w1: Tensor::param(a.to_vec(), &[inputs, hidden]),
            b1: Tensor::param(b.to_vec(), &[1, hidden]),
            w2: Tensor::param(c.to_vec(), &[hidden, 1]),
        }
    }

    pub fn param_count(inputs: usize, hidden: usize) -> usize {
        inputs * hidden + 2 * hidden
    }

    /// Plain-float forward of one flattened input.
    pub fn eval(inputs: usize, hidden: usize, params: &[f64], x: &[f64]) -> f64 {
        let (a, rest) = params.split_at(inputs * hidden);
        let (b, c) = rest.split_at(hidden);
        (0..hidden)
            .map(|h| {
                let pre: f64 = (0..inputs).map(|i| x[i] * a[i * hidden + h]).sum::<f64>() + b[h];
                c[h] * pre.tanh()
            })
            .sum()
    }
}

impl Critic for MlpCritic {
    fn score(&self, x: &Tensor) -> Tensor {
        let n = x.dim(0);
        let p = x.numel() / n;
        x.reshape(&[n, p])
            .matmul(&self.w1)
            .add(&self.b1)
            .tanh()
            .matmul(&self.w2)
            .reshape(&[n])
    }
}

/// Small DCGAN used by the structural tests.
pub fn toy_spec(norm: DiscriminatorNorm) -> ModelSpec {
    ModelSpec {
        family: Family::Dcgan,
        resolution: 32,
        z_dim: 8,
        base_channels: 4,
        d_norm: vec![norm],
        g_norm: GeneratorNorm::Batch,
    }
}

pub fn toy_train(mix: MixStrategyConfig, iterations: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        total_iterations: iterations,
        mix,
        regularizers: RegularizerConfig {
            gp_enabled: true,
            cr_enabled: true,
            ..RegularizerConfig::default()
        },
        seed: 5,
        eval_every: 0,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

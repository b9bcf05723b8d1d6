//! Gradient penalty, consistency regularization and its augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::models::Critic;
use crate::rng::SeededRng;
use crate::tensor::{grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerConfig {
    pub gp_enabled: bool,
    /// apply the penalty on every `gp_every`-th discriminator iteration
    pub gp_every: usize,
    pub gp_coefficient: f64,
    pub cr_enabled: bool,
    pub cr_coefficient: f64,
    pub cr_max_shift: usize,
    /// experimental: also regularize the mixed entries of the fake batch
    pub cr_include_mixed: bool,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            gp_enabled: false,
            gp_every: 5,
            gp_coefficient: 10.0,
            cr_enabled: false,
            cr_coefficient: 1.0,
            cr_max_shift: 4,
            cr_include_mixed: false,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gp_every == 0 {
            return Err(Error::Parameter("gp_every must be at least 1".into()));
        }
        if !(self.gp_coefficient > 0.0) || !(self.cr_coefficient > 0.0) {
            return Err(Error::Parameter("regularizer coefficients must be positive".into()));
        }
        Ok(())
    }

    /// Whether discriminator iteration `d_iteration` (1-based) carries the
    /// gradient penalty.
    pub fn gp_due(&self, d_iteration: u64) -> bool {
        self.gp_enabled && d_iteration % self.gp_every as u64 == 0
    }
}

/// One interpolation weight per sample, `Uniform(0, 1)`.
pub fn sample_interpolation_weights(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// `eps_i * real_i + (1 - eps_i) * fake_i`
pub fn interpolate(reals: &ImageBatch, fakes: &ImageBatch, eps: &[f64]) -> Result<ImageBatch> {
    if reals.len != fakes.len || !reals.same_item_shape(fakes) || eps.len() != reals.len {
        return Err(Error::Shape("gradient penalty needs equally shaped real and fake batches".into()));
    }
    let mut out = reals.clone();
    for (i, &e) in eps.iter().enumerate() {
        let f = fakes.item(i);
        for (o, &fv) in out.item_mut(i).iter_mut().zip(f) {
            *o = e * *o + (1.0 - e) * fv;
        }
    }
    Ok(out)
}

/// `mean_i (||grad_x D(x_i)||_2 - 1)^2` at the given points, differentiable
/// with respect to the critic's parameters.
pub fn gradient_penalty_at<C: Critic + ?Sized>(critic: &C, points: &ImageBatch) -> Result<Tensor> {
    let x = Tensor::param(points.data.clone(), &[points.len, points.channels, points.height, points.width]);
    let total = critic.score(&x).sum();
    let gx = grad(&total, &[&x], true)
        .pop()
        .flatten()
        .ok_or_else(|| Error::Capability("critic score is not differentiable with respect to its input".into()))?;
    let norms = gx
        .square()
        .sum_to(&[points.len, 1, 1, 1])
        .add_scalar(1e-12)
        .sqrt();
    Ok(norms.add_scalar(-1.0).square().mean())
}

/// Two-sided gradient penalty at random real/fake interpolates.
pub fn gradient_penalty<C: Critic + ?Sized>(
    critic: &C,
    reals: &ImageBatch,
    fakes: &ImageBatch,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    let eps = sample_interpolation_weights(reals.len, rng);
    let points = interpolate(reals, fakes, &eps)?;
    gradient_penalty_at(critic, &points)
}

/// Concrete augmentation: optional horizontal flip, then an integer shift
/// `(dx, dy)` with replicated edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrTransform {
    pub flip: bool,
    pub dx: i64,
    pub dy: i64,
}

impl CrTransform {
    pub const IDENTITY: CrTransform = CrTransform {
        flip: false,
        dx: 0,
        dy: 0,
    };

    pub fn sample(max_shift: usize, rng: &mut SeededRng) -> Self {
        let s = max_shift as i64;
        Self {
            flip: rng.random::<bool>(),
            dx: rng.random_range(-s..=s),
            dy: rng.random_range(-s..=s),
        }
    }

    /// Applies the transform to one `[C, H, W]` image.
    /// `out[y][x] = flipped[clamp(y - dy)][clamp(x - dx)]`.
    pub fn apply(&self, image: &[f64], channels: usize, height: usize, width: usize) -> Vec<f64> {
        assert_eq!(image.len(), channels * height * width);
        let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
        let mut out = vec![0.0; image.len()];
        for c in 0..channels {
            let plane = &image[c * height * width..(c + 1) * height * width];
            let dst = &mut out[c * height * width..(c + 1) * height * width];
            for y in 0..height {
                let sy = clamp(y as i64 - self.dy, height);
                for x in 0..width {
                    let mut sx = clamp(x as i64 - self.dx, width);
                    if self.flip {
                        sx = width - 1 - sx;
                    }
                    dst[y * width + x] = plane[sy * width + sx];
                }
            }
        }
        out
    }
}

/// Random flip (p = 0.5) and shift in `[-max_shift, max_shift]^2`.
pub fn cr_augment(image: &[f64], channels: usize, height: usize, width: usize, max_shift: usize, rng: &mut SeededRng) -> Vec<f64> {
    CrTransform::sample(max_shift, rng).apply(image, channels, height, width)
}

pub fn cr_augment_batch(batch: &ImageBatch, max_shift: usize, rng: &mut SeededRng) -> ImageBatch {
    let mut out = batch.clone();
    for i in 0..batch.len {
        let aug = cr_augment(batch.item(i), batch.channels, batch.height, batch.width, max_shift, rng);
        out.item_mut(i).copy_from_slice(&aug);
    }
    out
}

/// `mean_i (D(x_i) - D(aug(x_i)))^2`.
pub fn consistency_regularization<C: Critic + ?Sized>(
    critic: &C,
    images: &ImageBatch,
    max_shift: usize,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    if images.len == 0 {
        return Err(Error::InsufficientData("consistency regularization on an empty batch".into()));
    }
    let augmented = cr_augment_batch(images, max_shift, rng);
    let both = images.concat(&augmented)?.to_tensor();
    let scores = critic.score(&both);
    consistency_from_scores(&scores, images.len)
}

/// Consistency term from scores of `[originals; augmented]` stacked along
/// the batch axis.
pub fn consistency_from_scores(scores: &Tensor, n: usize) -> Result<Tensor> {
    if scores.numel() != 2 * n {
        return Err(Error::Shape(format!("expected {} scores, got {}", 2 * n, scores.numel())));
    }
    let orig = scores.narrow0(0, n);
    let aug = scores.narrow0(n, n);
    Ok(orig.sub(&aug).square().mean())
}

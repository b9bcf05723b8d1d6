//! Fréchet distance between feature Gaussians (FID), feature extractors and
//! discriminator-score statistics.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::data::sample_latent;
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator};
use crate::nn::Mode;
use crate::rng::SeededRng;
use crate::tensor::{no_grad, Tensor};

/// Number of generated samples compared against the reference set.
pub const DEFAULT_N_FAKE: usize = 10_000;

/// Eigenvalues down to this negative value are treated as round-off.
pub const EIGEN_TOLERANCE: f64 = 1e-6;

/// Environment variable naming the cache directory for extractor weights
/// and reference statistics.
pub const CACHE_DIR_ENV: &str = "MIXGAN_CACHE_DIR";

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from)
}

/// Maps an image batch to a row-major `[N, dim]` feature matrix.
pub trait FeatureExtractor {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, images: &ImageBatch) -> Result<Vec<f64>>;
}

/// Fixed-seed random linear projection of raw pixels.
#[derive(Debug, Clone)]
pub struct ToyExtractor {
    /// `[input, dim]`, entries `N(0, 1/input)`
    projection: Tensor,
    input: usize,
    dim: usize,
    seed: u64,
}

impl ToyExtractor {
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_SEED: u64 = 0x5eed;

    pub fn new(channels: usize, height: usize, width: usize, dim: usize, seed: u64) -> Self {
        let input = channels * height * width;
        let mut rng = SeededRng::derived(seed, "toy-extractor", input as u64);
        let scale = 1.0 / (input as f64).sqrt();
        let data = (0..input * dim)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        Self {
            projection: Tensor::new(data, &[input, dim]),
            input,
            dim,
            seed,
        }
    }

    pub fn for_resolution(resolution: usize) -> Self {
        Self::new(3, resolution, resolution, Self::DEFAULT_DIM, Self::DEFAULT_SEED)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The projection matrix, row-major `[input, dim]`.
    pub fn projection(&self) -> &[f64] {
        self.projection.data()
    }
}

impl FeatureExtractor for ToyExtractor {
    fn name(&self) -> &str {
        "toy"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, images: &ImageBatch) -> Result<Vec<f64>> {
        if images.item_size() != self.input {
            return Err(Error::Shape(format!(
                "toy extractor expects {} values per image, got {}",
                self.input,
                images.item_size()
            )));
        }
        let x = Tensor::new(images.data.clone(), &[images.len, self.input]);
        Ok(no_grad(|| x.matmul(&self.projection)).to_vec())
    }
}

/// Resolves an extractor by name for images of the given resolution.
pub fn extractor_by_name(name: &str, resolution: usize) -> Result<Box<dyn FeatureExtractor>> {
    match name {
        "toy" => Ok(Box::new(ToyExtractor::for_resolution(resolution))),
        "inception" => {
            let place = cache_dir()
                .map(|d| format!(" (searched {})", d.display()))
                .unwrap_or_else(|| format!(" ({CACHE_DIR_ENV} is not set)"));
            Err(Error::Capability(format!(
                "the inception extractor needs pretrained weights that are not available{place}; \
                 use `--extractor toy` for the built-in random-projection extractor"
            )))
        }
        other => Err(Error::Capability(format!(
            "unknown feature extractor `{other}`; available: toy"
        ))),
    }
}

/// Mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// row-major `[dim, dim]`
    pub cov: Vec<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.cov)
    }
}

/// Sample mean and unbiased sample covariance of `n` rows of length `dim`.
pub fn fit_gaussian(features: &[f64], n: usize, dim: usize) -> Result<GaussianStats> {
    if features.len() != n * dim || dim == 0 {
        return Err(Error::Shape(format!("{} values do not form a {n} x {dim} matrix", features.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 feature rows, got {n}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("feature matrix"));
    }
    let x = DMatrix::from_row_slice(n, dim, features);
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats {
        mean: mean.iter().copied().collect(),
        cov: cov.transpose().iter().copied().collect(),
        count: n,
    })
}

/// Square root of a symmetric positive semidefinite matrix.
fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if !v.is_finite() || *v < -EIGEN_TOLERANCE {
            return Err(Error::numeric(format!("{what} is not positive semidefinite (eigenvalue {v})")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The trace of the cross term is taken from the eigenvalues of the
/// symmetric matrix `S_a^{1/2} S_b S_a^{1/2}`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.dim();
    if d != b.dim() || a.cov.len() != d * d || b.cov.len() != d * d {
        return Err(Error::Shape(format!("Gaussian dimensions {} and {} differ", d, b.dim())));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = a.cov_matrix();
    let sb = b.cov_matrix();
    let root_a = psd_sqrt(&sa, "first covariance")?;
    let inner = &root_a * &sb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let mut cross = 0.0;
    for &v in eig.eigenvalues.iter() {
        if !v.is_finite() || v < -EIGEN_TOLERANCE {
            return Err(Error::numeric(format!("covariance product has eigenvalue {v}")));
        }
        cross += v.max(0.0).sqrt();
    }
    let value = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if !value.is_finite() || value < -EIGEN_TOLERANCE {
        return Err(Error::numeric(format!("Fréchet distance evaluated to {value}")));
    }
    Ok(value.max(0.0))
}

/// Feature statistics of an image set, extracted in chunks.
pub fn image_stats(extractor: &dyn FeatureExtractor, images: &ImageBatch, chunk: usize) -> Result<GaussianStats> {
    let chunk = chunk.max(1);
    let mut features = Vec::with_capacity(images.len * extractor.dim());
    let mut start = 0;
    while start < images.len {
        let end = (start + chunk).min(images.len);
        let idx: Vec<usize> = (start..end).collect();
        features.extend(extractor.extract(&images.select(&idx))?);
        start = end;
    }
    fit_gaussian(&features, images.len, extractor.dim())
}

/// FID between the whole `reals` set and the first `n_fake` of `fakes`.
pub fn compute_fid(
    extractor: &dyn FeatureExtractor,
    reals: &ImageBatch,
    fakes: &ImageBatch,
    n_fake: usize,
) -> Result<f64> {
    if fakes.len < n_fake {
        return Err(Error::Count {
            needed: n_fake,
            got: fakes.len,
        });
    }
    let idx: Vec<usize> = (0..n_fake).collect();
    let real_stats = image_stats(extractor, reals, 512)?;
    let fake_stats = image_stats(extractor, &fakes.select(&idx), 512)?;
    frechet_distance(&real_stats, &fake_stats)
}

/// Generates `n` images in evaluation mode, `chunk` at a time.
pub fn generate_images(generator: &Generator, n: usize, chunk: usize, rng: &mut SeededRng) -> ImageBatch {
    let mut g = generator.clone();
    let z_dim = g.spec().z_dim;
    let res = g.spec().resolution;
    let mut out = ImageBatch::zeros(0, 3, res, res);
    let mut done = 0;
    while done < n {
        let m = chunk.max(1).min(n - done);
        let z = sample_latent(z_dim, m, rng);
        let x = ImageBatch::from_tensor(&g.sample(&z, Mode::Eval));
        out.len += m;
        out.data.extend(x.data);
        done += m;
    }
    out
}

/// FID of a generator snapshot against precomputed reference statistics.
pub fn generator_fid(
    extractor: &dyn FeatureExtractor,
    reference: &GaussianStats,
    generator: &Generator,
    n_fake: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    const CHUNK: usize = 250;
    let mut features = Vec::with_capacity(n_fake * extractor.dim());
    let mut done = 0;
    while done < n_fake {
        let m = CHUNK.min(n_fake - done);
        let images = generate_images(generator, m, m, rng);
        features.extend(extractor.extract(&images)?);
        done += m;
    }
    let stats = fit_gaussian(&features, n_fake, extractor.dim())?;
    frechet_distance(reference, &stats)
}

/// Shared-edge histogram over several groups of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges
    pub edges: Vec<f64>,
    /// one count vector per group
    pub counts: Vec<Vec<usize>>,
}

pub const HISTOGRAM_BINS: usize = 50;

/// Uniform bins spanning the pooled range of every group. A zero-width range
/// is widened to `[v - 0.5, v + 0.5]`.
pub fn histogram(groups: &[&[f64]], bins: usize) -> Histogram {
    assert!(bins >= 1);
    let pooled = groups.iter().flat_map(|g| g.iter().copied());
    let (mut lo, mut hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        lo = -0.5;
        hi = 0.5;
    } else if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let counts = groups
        .iter()
        .map(|g| {
            let mut c = vec![0; bins];
            for &v in g.iter() {
                let i = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
                c[i] += 1;
            }
            c
        })
        .collect();
    Histogram { edges, counts }
}

/// Raw discriminator scores of the real, fake and mixed groups with a
/// shared histogram (groups in that order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreStatistics {
    pub real: Vec<f64>,
    pub fake: Vec<f64>,
    pub mixed: Vec<f64>,
    pub histogram: Histogram,
}

impl ScoreStatistics {
    pub fn means(&self) -> [Option<f64>; 3] {
        let m = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        [m(&self.real), m(&self.fake), m(&self.mixed)]
    }
}

/// Scores in chunks without recording gradients.
pub fn discriminator_scores(d: &Discriminator, images: &ImageBatch) -> Vec<f64> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(images.len);
    let mut start = 0;
    while start < images.len {
        let end = (start + CHUNK).min(images.len);
        let idx: Vec<usize> = (start..end).collect();
        let x = images.select(&idx).to_tensor();
        out.extend(no_grad(|| d.forward(&x)).to_vec());
        start = end;
    }
    out
}

/// `mixed` may be empty (vanilla training has no mixed group).
pub fn score_statistics(
    d: &Discriminator,
    reals: &ImageBatch,
    fakes: &ImageBatch,
    mixed: &ImageBatch,
) -> Result<ScoreStatistics> {
    if reals.len == 0 || fakes.len == 0 {
        return Err(Error::InsufficientData("score statistics need real and fake samples".into()));
    }
    let real = discriminator_scores(d, reals);
    let fake = discriminator_scores(d, fakes);
    let mixed = discriminator_scores(d, mixed);
    if real.iter().chain(&fake).chain(&mixed).any(|v| !v.is_finite()) {
        return Err(Error::numeric("discriminator scores"));
    }
    let histogram = histogram(&[&real, &fake, &mixed], HISTOGRAM_BINS);
    Ok(ScoreStatistics {
        real,
        fake,
        mixed,
        histogram,
    })
}

//! Image datasets: folder ingestion (resize, center-crop, normalize),
//! procedural desk-scale datasets, batch sampling and the latent prior.

use std::f64::consts::PI;
use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

/// An in-memory set of `[3, R, R]` images with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: ImageBatch,
    pub source: String,
}

impl Dataset {
    pub fn new(images: ImageBatch, source: impl Into<String>) -> Result<Self> {
        if images.len == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if images.height != images.width {
            return Err(Error::Data("dataset images must be square".into()));
        }
        if images.data.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Data("dataset values must lie in [-1, 1]".into()));
        }
        Ok(Self {
            images,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len
    }

    pub fn is_empty(&self) -> bool {
        self.images.len == 0
    }

    pub fn resolution(&self) -> usize {
        self.images.height
    }

    pub fn batch(&self, indices: &[usize]) -> ImageBatch {
        self.images.select(indices)
    }
}

/// Maps a `u8` channel value to `[-1, 1]`.
pub fn normalize_u8(v: u8) -> f64 {
    f64::from(v) / 127.5 - 1.0
}

/// Resize (bilinear, short side to `resolution`), center-crop to
/// `resolution x resolution`, normalize to `[-1, 1]`; returns `[3, R, R]`.
pub fn preprocess(img: &DynamicImage, resolution: usize) -> Vec<f64> {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let res = resolution as u32;
    let (nw, nh) = if w <= h {
        (res, ((h as f64) * res as f64 / w as f64).round().max(res as f64) as u32)
    } else {
        (((w as f64) * res as f64 / h as f64).round().max(res as f64) as u32, res)
    };
    let resized = if (nw, nh) == (w, h) {
        rgb
    } else {
        image::imageops::resize(&rgb, nw, nh, FilterType::Triangle)
    };
    let left = (nw - res) / 2;
    let top = (nh - res) / 2;
    let mut out = vec![0.0; CHANNELS * resolution * resolution];
    for y in 0..resolution {
        for x in 0..resolution {
            let p = resized.get_pixel(left + x as u32, top + y as u32);
            for c in 0..CHANNELS {
                out[(c * resolution + y) * resolution + x] = normalize_u8(p[c]);
            }
        }
    }
    out
}

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "ppm"];

/// Loads every decodable image in `dir` (sorted by file name). Files that
/// fail to decode are skipped and counted.
pub fn load_image_folder(dir: &Path, resolution: usize) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut data = Vec::new();
    let mut loaded = 0;
    let mut skipped = 0;
    for path in &paths {
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if !known {
            continue;
        }
        match image::open(path) {
            Ok(img) => {
                data.extend(preprocess(&img, resolution));
                loaded += 1;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} undecodable file(s) in {}", dir.display());
    }
    if loaded == 0 {
        return Err(Error::Data(format!("no decodable images in {}", dir.display())));
    }
    let images = ImageBatch::new(loaded, CHANNELS, resolution, resolution, data)?;
    Dataset::new(images, dir.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    GaussianBlobs,
    ColoredShapes,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" => Ok(Self::GaussianBlobs),
            "colored-shapes" => Ok(Self::ColoredShapes),
            other => Err(Error::Data(format!("unknown synthetic dataset `{other}`"))),
        }
    }
}

const PALETTE: [[f64; 3]; 6] = [
    [0.90, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.35, 0.90],
    [0.95, 0.85, 0.20],
    [0.85, 0.30, 0.85],
    [0.20, 0.85, 0.85],
];

/// Mode centers (fractions of the image side) for the blob dataset.
const BLOB_MODES: [[f64; 2]; 4] = [[0.3, 0.3], [0.7, 0.3], [0.3, 0.7], [0.7, 0.7]];

fn render_blobs(res: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut img = vec![0.1; CHANNELS * res * res];
    let count = rng.random_range(1..=2);
    for _ in 0..count {
        let mode = BLOB_MODES[rng.random_range(0..BLOB_MODES.len())];
        let color = PALETTE[rng.random_range(0..PALETTE.len())];
        let cx = (mode[0] + rng.random_range(-0.05..0.05)) * res as f64;
        let cy = (mode[1] + rng.random_range(-0.05..0.05)) * res as f64;
        let sigma = res as f64 * rng.random_range(0.08..0.14);
        for y in 0..res {
            for x in 0..res {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                let a = (-d2 / (2.0 * sigma * sigma)).exp();
                for c in 0..CHANNELS {
                    let v = &mut img[(c * res + y) * res + x];
                    *v = (*v * (1.0 - a) + color[c] * a).clamp(0.0, 1.0);
                }
            }
        }
    }
    img
}

fn render_shape(res: usize, rng: &mut SeededRng) -> Vec<f64> {
    let bg = rng.random_range(0.05..0.25);
    let mut img = vec![bg; CHANNELS * res * res];
    let color = PALETTE[rng.random_range(0..PALETTE.len())];
    let shape = rng.random_range(0..3);
    let r = res as f64 * rng.random_range(0.18..0.32);
    let cx = rng.random_range(r..res as f64 - r);
    let cy = rng.random_range(r..res as f64 - r);
    let inside = |px: f64, py: f64| -> bool {
        let (dx, dy) = (px - cx, py - cy);
        match shape {
            0 => dx * dx + dy * dy <= r * r,
            1 => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
            _ => {
                // upward triangle inscribed in the circle of radius r
                let top = cy - r;
                let bottom = cy + r * (PI / 6.0).sin();
                if py < top || py > bottom {
                    return false;
                }
                let half = (py - top) / (bottom - top) * r * (PI / 3.0).sin();
                dx.abs() <= half
            }
        }
    };
    for y in 0..res {
        for x in 0..res {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                for c in 0..CHANNELS {
                    img[(c * res + y) * res + x] = color[c];
                }
            }
        }
    }
    img
}

/// Procedurally generated images, fully determined by `seed`.
pub fn make_synthetic_dataset(kind: SyntheticKind, n: usize, resolution: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Data("synthetic dataset needs n >= 1".into()));
    }
    if resolution < 4 {
        return Err(Error::Data("synthetic dataset needs resolution >= 4".into()));
    }
    let mut rng = SeededRng::derived(seed, kind_tag(kind), 0);
    let mut data = Vec::with_capacity(n * CHANNELS * resolution * resolution);
    for _ in 0..n {
        let unit = match kind {
            SyntheticKind::GaussianBlobs => render_blobs(resolution, &mut rng),
            SyntheticKind::ColoredShapes => render_shape(resolution, &mut rng),
        };
        data.extend(unit.into_iter().map(|v| v * 2.0 - 1.0));
    }
    let images = ImageBatch::new(n, CHANNELS, resolution, resolution, data)?;
    Dataset::new(images, format!("synthetic://{}?n={n}&seed={seed}", kind_tag(kind)))
}

fn kind_tag(kind: SyntheticKind) -> &'static str {
    match kind {
        SyntheticKind::GaussianBlobs => "gaussian-blobs",
        SyntheticKind::ColoredShapes => "colored-shapes",
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    Folder(std::path::PathBuf),
    Synthetic { kind: SyntheticKind, n: usize, seed: u64 },
}

impl DatasetSource {
    /// Parses `synthetic://<kind>?n=<n>&seed=<seed>`, `folder://<path>` or a
    /// bare directory path.
    pub fn parse(uri: &str) -> Result<Self> {
        if let Some(rest) = uri.strip_prefix("synthetic://") {
            let (kind, query) = rest.split_once('?').unwrap_or((rest, ""));
            let kind: SyntheticKind = kind.parse()?;
            let mut n = 1000;
            let mut seed = 0;
            for pair in query.split('&').filter(|p| !p.is_empty()) {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::Data(format!("malformed query `{pair}` in {uri}")))?;
                let parsed: u64 = v
                    .parse()
                    .map_err(|_| Error::Data(format!("`{k}` must be an integer in {uri}")))?;
                match k {
                    "n" => n = parsed as usize,
                    "seed" => seed = parsed,
                    other => return Err(Error::Data(format!("unknown synthetic parameter `{other}`"))),
                }
            }
            return Ok(Self::Synthetic { kind, n, seed });
        }
        let path = uri.strip_prefix("folder://").unwrap_or(uri);
        if path.is_empty() {
            return Err(Error::Data("empty dataset URI".into()));
        }
        Ok(Self::Folder(path.into()))
    }

    pub fn load(&self, resolution: usize) -> Result<Dataset> {
        match self {
            Self::Folder(p) => load_image_folder(p, resolution),
            Self::Synthetic { kind, n, seed } => make_synthetic_dataset(*kind, *n, resolution, *seed),
        }
    }
}

pub fn open_dataset(uri: &str, resolution: usize) -> Result<Dataset> {
    DatasetSource::parse(uri)?.load(resolution)
}

/// Standard normal prior over `z_dim`-dimensional latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentPrior {
    pub z_dim: usize,
}

impl LatentPrior {
    /// `[batch, z_dim]` i.i.d. standard normal draws.
    pub fn sample(&self, batch: usize, rng: &mut SeededRng) -> Tensor {
        sample_latent(self.z_dim, batch, rng)
    }
}

pub fn sample_latent(z_dim: usize, batch: usize, rng: &mut SeededRng) -> Tensor {
    assert!(batch >= 1 && z_dim >= 1, "latent batch and dimension must be positive");
    let data: Vec<f64> = (0..batch * z_dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(data, &[batch, z_dim])
}

/// Epoch-wise shuffled index stream. Epoch `e` uses the permutation derived
/// from `(seed, e)`, so the position alone determines future batches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSampler {
    pub seed: u64,
    pub len: usize,
    pub epoch: u64,
    pub cursor: usize,
    #[serde(skip)]
    perm: Vec<usize>,
}

impl BatchSampler {
    pub fn new(seed: u64, len: usize) -> Self {
        assert!(len > 0, "cannot sample from an empty dataset");
        Self {
            seed,
            len,
            epoch: 0,
            cursor: 0,
            perm: Vec::new(),
        }
    }

    pub fn permutation(seed: u64, len: usize, epoch: u64) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..len).collect();
        let mut rng = SeededRng::derived(seed, "epoch", epoch);
        perm.shuffle(&mut rng);
        perm
    }

    pub fn next_indices(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.cursor >= self.len {
                self.epoch += 1;
                self.cursor = 0;
                self.perm.clear();
            }
            if self.perm.is_empty() {
                self.perm = Self::permutation(self.seed, self.len, self.epoch);
            }
            out.push(self.perm[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Writes an `[3, H, W]` image in `[-1, 1]` as an RGB image.
pub fn to_rgb_image(image: &[f64], height: usize, width: usize) -> RgbImage {
    let mut out = RgbImage::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let px = std::array::from_fn(|c| to_u8(image[(c * height + y) * width + x]));
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    out
}

/// `[-1, 1] -> [0, 255]`, rounded and clamped.
pub fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

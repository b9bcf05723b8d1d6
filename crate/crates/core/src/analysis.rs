//! Static artifacts: normalized 4x4 discriminator heatmaps, score
//! histograms (CSV and plot) and image grids.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::data::to_rgb_image;
use crate::error::{Error, Result};
use crate::metrics::ScoreStatistics;
use crate::models::{spatial_score_map, Discriminator};

pub const HEATMAP_GRID: usize = 4;

/// Raw and display-normalized 4x4 discriminator response, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapArtifact {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Min-max normalization to `[0, 1]`; a constant map becomes all 0.5.
pub fn normalize_heatmap(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
}

pub fn render_heatmap(d: &Discriminator, image: &[f64]) -> Result<HeatmapArtifact> {
    let raw = spatial_score_map(d, image)?;
    let normalized = normalize_heatmap(&raw);
    Ok(HeatmapArtifact { raw, normalized })
}

/// Grayscale picture of a normalized map; each cell is `cell` pixels wide
/// and lower scores are darker.
pub fn heatmap_image(normalized: &[f64], grid: usize, cell: usize) -> GrayImage {
    assert_eq!(normalized.len(), grid * grid);
    let side = (grid * cell) as u32;
    GrayImage::from_fn(side, side, |x, y| {
        let v = normalized[(y as usize / cell) * grid + x as usize / cell];
        Luma([(v * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

/// Tiles `rows x cols` images row-major with no padding.
pub fn render_image_grid(images: &ImageBatch, rows: usize, cols: usize) -> Result<RgbImage> {
    let needed = rows * cols;
    if needed == 0 {
        return Err(Error::Parameter("grid needs at least one row and column".into()));
    }
    if images.len < needed {
        return Err(Error::Count {
            needed,
            got: images.len,
        });
    }
    if images.channels != 3 {
        return Err(Error::Shape("grids need 3-channel images".into()));
    }
    let (h, w) = (images.height, images.width);
    let mut out = RgbImage::new((cols * w) as u32, (rows * h) as u32);
    for i in 0..needed {
        let tile = to_rgb_image(images.item(i), h, w);
        let (ox, oy) = ((i % cols) * w, (i / cols) * h);
        image::imageops::replace(&mut out, &tile, ox as i64, oy as i64);
    }
    Ok(out)
}

const GROUPS: [&str; 3] = ["real", "fake", "mixed"];
const SERIES_COLORS: [[u8; 3]; 3] = [[31, 119, 180], [255, 127, 14], [44, 160, 44]];

/// Raw scores, one `group,index,score` line each.
pub fn scores_csv(stats: &ScoreStatistics) -> String {
    let mut s = String::from("group,index,score\n");
    for (name, values) in GROUPS.iter().zip([&stats.real, &stats.fake, &stats.mixed]) {
        for (i, v) in values.iter().enumerate() {
            writeln!(s, "{name},{i},{v}").expect("write to string");
        }
    }
    s
}

/// `bin_low,bin_high,real,fake,mixed`.
pub fn histogram_csv(stats: &ScoreStatistics) -> String {
    let h = &stats.histogram;
    let mut s = String::from("bin_low,bin_high,real,fake,mixed\n");
    for b in 0..h.edges.len() - 1 {
        let c = |g: usize| h.counts.get(g).map_or(0, |c| c[b]);
        writeln!(s, "{},{},{},{},{}", h.edges[b], h.edges[b + 1], c(0), c(1), c(2)).expect("write to string");
    }
    s
}

/// Overlaid density histograms (blue real, orange fake, green mixed) on a
/// white canvas. Empty groups are left out.
pub fn histogram_plot(stats: &ScoreStatistics, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 20u32;
    let (pw, ph) = (width - 2 * margin, height - 2 * margin);
    let h = &stats.histogram;
    let bins = h.edges.len() - 1;
    let sizes = [stats.real.len(), stats.fake.len(), stats.mixed.len()];
    let density = |g: usize, b: usize| h.counts[g][b] as f64 / sizes[g].max(1) as f64;
    let peak = (0..3)
        .filter(|&g| sizes[g] > 0)
        .flat_map(|g| (0..bins).map(move |b| (g, b)))
        .map(|(g, b)| density(g, b))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for g in (0..3).filter(|&g| sizes[g] > 0) {
        let color = SERIES_COLORS[g];
        for b in 0..bins {
            let bar = (density(g, b) / peak * ph as f64).round() as u32;
            let x0 = margin + (b as u32 * pw) / bins as u32;
            let x1 = margin + ((b as u32 + 1) * pw) / bins as u32;
            for x in x0..x1 {
                for y in (margin + ph - bar)..(margin + ph) {
                    let p = img.get_pixel_mut(x, y);
                    for c in 0..3 {
                        // 50% blend keeps overlapping series visible
                        p[c] = ((p[c] as u16 + color[c] as u16) / 2) as u8;
                    }
                }
            }
        }
    }
    for x in margin..margin + pw {
        img.put_pixel(x, margin + ph, Rgb([0, 0, 0]));
    }
    for y in margin..=margin + ph {
        img.put_pixel(margin, y, Rgb([0, 0, 0]));
    }
    img
}

/// Files written by [`write_score_distributions`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionFiles {
    pub scores_csv: PathBuf,
    pub histogram_csv: PathBuf,
    pub plot: PathBuf,
}

pub fn write_score_distributions(stats: &ScoreStatistics, dir: &Path) -> Result<DistributionFiles> {
    std::fs::create_dir_all(dir)?;
    let files = DistributionFiles {
        scores_csv: dir.join("scores.csv"),
        histogram_csv: dir.join("histogram.csv"),
        plot: dir.join("histogram.png"),
    };
    std::fs::write(&files.scores_csv, scores_csv(stats))?;
    std::fs::write(&files.histogram_csv, histogram_csv(stats))?;
    histogram_plot(stats, 640, 400).save(&files.plot)?;
    Ok(files)
}

/// A histogram group is degenerate when it is empty or all its mass sits in
/// a single bin.
pub fn histogram_is_degenerate(counts: &[usize]) -> bool {
    counts.iter().filter(|&&c| c > 0).count() <= 1
}

//! Mixing masks (Mixup, CutMix, SRMix), the masked convex combination of two
//! images, and composition of the discriminator's fake-slot batch.
//!
//! A mixed sample is `M * x_i + (1 - M) * x_j` with a per-pixel mask `M`
//! shared by all channels. Mixed samples are treated as another kind of fake
//! sample: they replace the first `floor(r * B)` entries of the fake batch.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Per-pixel mixing weights in `[0, 1]`, `height x width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Mask {
    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn in_unit_range(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixupParams {
    pub alpha: f64,
}

impl Default for MixupParams {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

/// A CutMix rectangle: top-left corner `(x, y)` and extents `(w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutMixBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CutMixBox {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }
}

/// Axis along which an SRMix mask varies. `Horizontal` varies across
/// columns (constant down each column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrmixParams {
    /// +1 or -1
    pub sigma: f64,
    pub axis: Axis,
    /// center of the transient band, pixel units
    pub center: f64,
    /// width of the transient band, pixel units
    pub width: f64,
}

/// Sampling ranges for SRMix. Defaults: center in `[L/8, 7L/8]`, width in
/// `[2, resolution/16]` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrmixRanges {
    pub center_min_fraction: f64,
    pub center_max_fraction: f64,
    pub min_width: f64,
    pub max_width_fraction: f64,
}

impl Default for SrmixRanges {
    fn default() -> Self {
        Self {
            center_min_fraction: 1.0 / 8.0,
            center_max_fraction: 7.0 / 8.0,
            min_width: 2.0,
            max_width_fraction: 1.0 / 16.0,
        }
    }
}

impl SrmixRanges {
    /// `[lo, hi]` for the band width; degenerates to `min_width` when
    /// the resolution is too small.
    pub fn width_range(&self, resolution: usize) -> (f64, f64) {
        let hi = (resolution as f64 * self.max_width_fraction).max(self.min_width);
        (self.min_width, hi)
    }

    pub fn center_range(&self, length: usize) -> (f64, f64) {
        (
            length as f64 * self.center_min_fraction,
            length as f64 * self.center_max_fraction,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.center_min_fraction
            && self.center_min_fraction <= self.center_max_fraction
            && self.center_max_fraction <= 1.0
            && self.min_width > 0.0
            && self.max_width_fraction >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid SRMix ranges {self:?}")))
        }
    }
}

/// Fraction of the discriminator's fake slots filled with mixed samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LadderRatio(f64);

impl LadderRatio {
    pub fn new(r: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&r) {
            Ok(Self(r))
        } else {
            Err(Error::Parameter(format!("ladder ratio {r} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `floor(r * batch)`; the small slack absorbs products such as
    /// `0.29 * 100` landing just below an integer.
    pub fn mixed_slots(self, batch: usize) -> usize {
        ((self.0 * batch as f64) + 1e-9).floor() as usize
    }
}

impl TryFrom<f64> for LadderRatio {
    type Error = Error;
    fn try_from(r: f64) -> Result<Self> {
        Self::new(r)
    }
}

impl From<LadderRatio> for f64 {
    fn from(r: LadderRatio) -> f64 {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    None,
    Mixup,
    Cutmix,
    Srmix,
}

impl Strategy {
    pub const ALL_MIXING: [Strategy; 3] = [Strategy::Mixup, Strategy::Cutmix, Strategy::Srmix];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Mixup => "mixup",
            Strategy::Cutmix => "cutmix",
            Strategy::Srmix => "srmix",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "vanilla" => Ok(Strategy::None),
            "mixup" => Ok(Strategy::Mixup),
            "cutmix" => Ok(Strategy::Cutmix),
            "srmix" => Ok(Strategy::Srmix),
            other => Err(Error::Parameter(format!("unknown mixing strategy `{other}`"))),
        }
    }
}

/// Which two samples a mixed entry combines. `RealFake` puts the real
/// sample under the mask (`x_i`) and the fake under its complement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    #[default]
    RealFake,
    RealReal,
    FakeFake,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixStrategyConfig {
    pub strategy: Strategy,
    pub ratio: LadderRatio,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub pairing: Pairing,
    #[serde(default)]
    pub srmix: SrmixRanges,
}

fn default_alpha() -> f64 {
    1.0
}

impl MixStrategyConfig {
    pub fn vanilla() -> Self {
        Self::new(Strategy::None, 0.0)
    }

    /// Panics on a ratio outside `[0, 1]`; use for literals.
    pub fn new(strategy: Strategy, ratio: f64) -> Self {
        Self {
            strategy,
            ratio: LadderRatio::new(ratio).expect("ratio literal in [0, 1]"),
            alpha: 1.0,
            pairing: Pairing::RealFake,
            srmix: SrmixRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::Parameter(format!("mixup alpha must be positive, got {}", self.alpha)));
        }
        self.srmix.validate()
    }

    /// Mixed entries per batch of `batch` fakes; zero for vanilla training.
    pub fn mixed_slots(&self, batch: usize) -> usize {
        match self.strategy {
            Strategy::None => 0,
            _ => self.ratio.mixed_slots(batch),
        }
    }
}

/// A spatially constant mask with `lambda ~ Beta(alpha, alpha)`.
pub fn sample_mixup_mask(height: usize, width: usize, params: MixupParams, rng: &mut SeededRng) -> Result<Mask> {
    if height == 0 || width == 0 {
        return Err(Error::Shape("mask needs a non-empty image".into()));
    }
    let lambda = sample_mixup_lambda(params, rng)?;
    Ok(Mask::constant(height, width, lambda))
}

pub fn sample_mixup_lambda(params: MixupParams, rng: &mut SeededRng) -> Result<f64> {
    if params.alpha.is_nan() || params.alpha <= 0.0 {
        return Err(Error::Parameter(format!("Beta concentration must be positive, got {}", params.alpha)));
    }
    let beta = Beta::new(params.alpha, params.alpha).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(beta.sample(rng).clamp(0.0, 1.0))
}

/// Binary mask with ones exactly inside `bbox`.
pub fn cutmix_mask(height: usize, width: usize, bbox: CutMixBox) -> Result<Mask> {
    if !bbox.fits(height, width) {
        return Err(Error::Parameter(format!("box {bbox:?} does not fit a {height}x{width} image")));
    }
    let mut mask = Mask::constant(height, width, 0.0);
    for y in bbox.y..bbox.y + bbox.h {
        mask.values[y * width + bbox.x..y * width + bbox.x + bbox.w].fill(1.0);
    }
    Ok(mask)
}

/// Samples a CutMix box: `lambda ~ Beta(1, 1)`, box area fraction `1 - lambda`
/// with each side scaled by `sqrt(1 - lambda)`, placed uniformly among the
/// positions where it fits inside the image.
pub fn sample_cutmix_box(height: usize, width: usize, rng: &mut SeededRng) -> Result<CutMixBox> {
    if height < 4 || width < 4 {
        return Err(Error::Parameter(format!(
            "image {height}x{width} too small for a CutMix box (need at least 4x4)"
        )));
    }
    let lambda: f64 = rng.random();
    let side = (1.0 - lambda).sqrt();
    let w = ((width as f64 * side).round() as usize).clamp(1, width);
    let h = ((height as f64 * side).round() as usize).clamp(1, height);
    let x = rng.random_range(0..=width - w);
    let y = rng.random_range(0..=height - h);
    Ok(CutMixBox { x, y, w, h })
}

pub fn sample_cutmix_mask(height: usize, width: usize, rng: &mut SeededRng) -> Result<(Mask, CutMixBox)> {
    let bbox = sample_cutmix_box(height, width, rng)?;
    Ok((cutmix_mask(height, width, bbox)?, bbox))
}

/// Evaluates `0.5 * (1 + sigma * tanh((p - center) / width))` at integer
/// pixel coordinates `p` along the chosen axis.
pub fn srmix_mask(height: usize, width: usize, params: &SrmixParams) -> Mask {
    let profile = |p: usize| 0.5 * (1.0 + params.sigma * ((p as f64 - params.center) / params.width).tanh());
    let mut mask = Mask::constant(height, width, 0.0);
    for y in 0..height {
        for x in 0..width {
            let p = match params.axis {
                Axis::Horizontal => x,
                Axis::Vertical => y,
            };
            mask.values[y * width + x] = profile(p).clamp(0.0, 1.0);
        }
    }
    mask
}

pub fn sample_srmix_params(
    height: usize,
    width: usize,
    resolution: usize,
    ranges: &SrmixRanges,
    rng: &mut SeededRng,
) -> Result<SrmixParams> {
    if height == 0 || width == 0 {
        return Err(Error::Shape("mask needs a non-empty image".into()));
    }
    if resolution != height && resolution != width {
        return Err(Error::Shape(format!(
            "resolution {resolution} matches neither side of a {height}x{width} image"
        )));
    }
    let sigma = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let axis = if rng.random::<bool>() {
        Axis::Horizontal
    } else {
        Axis::Vertical
    };
    let length = match axis {
        Axis::Horizontal => width,
        Axis::Vertical => height,
    };
    let (c_lo, c_hi) = ranges.center_range(length);
    let (w_lo, w_hi) = ranges.width_range(resolution);
    let center = uniform(rng, c_lo, c_hi);
    let band = uniform(rng, w_lo, w_hi);
    Ok(SrmixParams {
        sigma,
        axis,
        center,
        width: band,
    })
}

fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

pub fn sample_srmix_mask(
    height: usize,
    width: usize,
    resolution: usize,
    ranges: &SrmixRanges,
    rng: &mut SeededRng,
) -> Result<(Mask, SrmixParams)> {
    let params = sample_srmix_params(height, width, resolution, ranges, rng)?;
    Ok((srmix_mask(height, width, &params), params))
}

/// One mask drawn according to `cfg`. `None` for vanilla training.
pub fn sample_mask(cfg: &MixStrategyConfig, height: usize, width: usize, rng: &mut SeededRng) -> Result<Option<Mask>> {
    let mask = match cfg.strategy {
        Strategy::None => return Ok(None),
        Strategy::Mixup => sample_mixup_mask(height, width, MixupParams { alpha: cfg.alpha }, rng)?,
        Strategy::Cutmix => sample_cutmix_mask(height, width, rng)?.0,
        Strategy::Srmix => sample_srmix_mask(height, width, height.max(width), &cfg.srmix, rng)?.0,
    };
    Ok(Some(mask))
}

/// `mask * a + (1 - mask) * b` for one `[C, H, W]` image, mask shared
/// across channels.
pub fn mix_into(out: &mut [f64], a: &[f64], b: &[f64], mask: &Mask) {
    let plane = mask.values.len();
    for ((o, &xa), (&xb, &m)) in out
        .iter_mut()
        .zip(a)
        .zip(b.iter().zip(mask.values.iter().cycle()))
    {
        *o = m * xa + (1.0 - m) * xb;
    }
    debug_assert_eq!(out.len() % plane, 0);
}

/// Mixes two `[C, H, W]` images (flattened) under `mask`.
pub fn mix(a: &[f64], b: &[f64], channels: usize, mask: &Mask) -> Result<Vec<f64>> {
    let plane = mask.height * mask.width;
    if a.len() != b.len() {
        return Err(Error::Shape(format!("images differ in size: {} vs {}", a.len(), b.len())));
    }
    if a.len() != channels * plane {
        return Err(Error::Shape(format!(
            "image of {} values does not match {channels} channels of a {}x{} mask",
            a.len(),
            mask.height,
            mask.width
        )));
    }
    let mut out = vec![0.0; a.len()];
    mix_into(&mut out, a, b, mask);
    Ok(out)
}

/// Discriminator fake-slot batch: the first `mixed` entries are mixed
/// samples, the rest are the corresponding fakes unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedBatch {
    pub images: ImageBatch,
    pub mixed: usize,
}

/// Builds the fake-slot batch for one discriminator iteration.
///
/// Slot `i < floor(r * B)` holds a mixed sample formed from pair `i` (see
/// [`Pairing`]) under a freshly drawn mask; the remaining slots keep the
/// fakes as they are.
pub fn compose_discriminator_batch(
    reals: &ImageBatch,
    fakes: &ImageBatch,
    cfg: &MixStrategyConfig,
    rng: &mut SeededRng,
) -> Result<ComposedBatch> {
    cfg.validate()?;
    if reals.len != fakes.len || !reals.same_item_shape(fakes) {
        return Err(Error::Shape(format!(
            "real batch {}x{}x{}x{} and fake batch {}x{}x{}x{} differ",
            reals.len, reals.channels, reals.height, reals.width, fakes.len, fakes.channels, fakes.height, fakes.width
        )));
    }
    let b = fakes.len;
    let mixed = cfg.mixed_slots(b);
    let mut images = fakes.clone();
    for i in 0..mixed {
        let Some(mask) = sample_mask(cfg, fakes.height, fakes.width, rng)? else {
            break;
        };
        let partner = (i + 1) % b;
        let (a, c) = match cfg.pairing {
            Pairing::RealFake => (reals.item(i), fakes.item(i)),
            Pairing::RealReal => (reals.item(i), reals.item(partner)),
            Pairing::FakeFake => (fakes.item(i), fakes.item(partner)),
        };
        mix_into(images.item_mut(i), a, c, &mask);
    }
    Ok(ComposedBatch { images, mixed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> SeededRng {
        SeededRng::new(seed)
    }

    #[test]
    fn mixup_rejects_bad_alpha() {
        assert!(matches!(
            sample_mixup_mask(4, 4, MixupParams { alpha: 0.0 }, &mut rng(0)),
            Err(Error::Parameter(_))
        ));
        assert!(sample_mixup_mask(4, 4, MixupParams { alpha: -1.0 }, &mut rng(0)).is_err());
    }

    #[test]
    fn mixup_mask_is_constant() {
        let mut r = rng(1);
        for _ in 0..50 {
            let m = sample_mixup_mask(5, 7, MixupParams::default(), &mut r).unwrap();
            assert!(m.values.iter().all(|&v| v == m.values[0]));
            assert!(m.in_unit_range());
        }
    }

    #[test]
    fn mixup_concentrates_for_large_alpha() {
        let mut r = rng(2);
        for _ in 0..1000 {
            let l = sample_mixup_lambda(MixupParams { alpha: 1e6 }, &mut r).unwrap();
            assert!((l - 0.5).abs() < 0.01, "{l}");
        }
    }

    #[test]
    fn cutmix_full_box_is_all_ones() {
        let m = cutmix_mask(6, 5, CutMixBox { x: 0, y: 0, w: 5, h: 6 }).unwrap();
        assert!(m.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cutmix_counts_box_area() {
        let mut r = rng(3);
        for _ in 0..200 {
            let (m, b) = sample_cutmix_mask(16, 12, &mut r).unwrap();
            assert!(b.fits(16, 12));
            assert_eq!(m.sum(), b.area() as f64);
            assert!(m.values.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn cutmix_rejects_tiny_images() {
        assert!(matches!(sample_cutmix_box(3, 8, &mut rng(0)), Err(Error::Parameter(_))));
        assert!(cutmix_mask(4, 4, CutMixBox { x: 3, y: 0, w: 2, h: 1 }).is_err());
    }

    #[test]
    fn srmix_profile_values() {
        let p = SrmixParams {
            sigma: 1.0,
            axis: Axis::Horizontal,
            center: 10.0,
            width: 2.0,
        };
        let m = srmix_mask(4, 32, &p);
        assert_eq!(m.at(0, 10), 0.5);
        // (18 - 10) / 2 = 4
        assert!((m.at(2, 18) - 0.999_664_649_869_533_6).abs() < 1e-12);
        assert!((m.at(2, 18) - 1.0).abs() < 1e-3);
        let flipped = srmix_mask(4, 32, &SrmixParams { sigma: -1.0, ..p });
        for (a, b) in m.values.iter().zip(&flipped.values) {
            assert!((a + b - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn srmix_width_clamps_for_tiny_resolution() {
        let ranges = SrmixRanges::default();
        assert_eq!(ranges.width_range(16), (2.0, 2.0));
        assert_eq!(ranges.width_range(8), (2.0, 2.0));
        assert_eq!(ranges.width_range(64), (2.0, 4.0));
        let mut r = rng(4);
        for _ in 0..100 {
            let p = sample_srmix_params(8, 8, 8, &ranges, &mut r).unwrap();
            assert_eq!(p.width, 2.0);
        }
    }

    #[test]
    fn mix_special_cases() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.5).collect();
        let b: Vec<f64> = (0..12).map(|i| 0.9 - i as f64 * 0.07).collect();
        assert_eq!(mix(&a, &b, 3, &Mask::constant(2, 2, 1.0)).unwrap(), a);
        assert_eq!(mix(&a, &b, 3, &Mask::constant(2, 2, 0.0)).unwrap(), b);
        let avg = mix(&a, &b, 3, &Mask::constant(2, 2, 0.5)).unwrap();
        for ((m, x), y) in avg.iter().zip(&a).zip(&b) {
            assert_eq!(*m, 0.5 * x + 0.5 * y);
        }
        assert!(matches!(mix(&a, &b[..8], 3, &Mask::constant(2, 2, 0.5)), Err(Error::Shape(_))));
        assert!(matches!(mix(&a, &b, 2, &Mask::constant(2, 2, 0.5)), Err(Error::Shape(_))));
    }

    #[test]
    fn ladder_ratio_bounds_and_floor() {
        assert!(LadderRatio::new(-0.01).is_err());
        assert!(LadderRatio::new(1.01).is_err());
        assert_eq!(LadderRatio::new(0.25).unwrap().mixed_slots(64), 16);
        assert_eq!(LadderRatio::new(0.15).unwrap().mixed_slots(64), 9);
        assert_eq!(LadderRatio::new(0.29).unwrap().mixed_slots(100), 29);
        assert_eq!(LadderRatio::new(1.0).unwrap().mixed_slots(7), 7);
    }

    fn batches(n: usize) -> (ImageBatch, ImageBatch) {
        let size = 3 * 8 * 8;
        let reals = ImageBatch::new(n, 3, 8, 8, (0..n * size).map(|i| (i % 13) as f64 / 13.0).collect()).unwrap();
        let fakes = ImageBatch::new(n, 3, 8, 8, (0..n * size).map(|i| -((i % 7) as f64) / 7.0).collect()).unwrap();
        (reals, fakes)
    }

    #[test]
    fn compose_with_zero_ratio_is_identity() {
        let (reals, fakes) = batches(6);
        let cfg = MixStrategyConfig::new(Strategy::Srmix, 0.0);
        let out = compose_discriminator_batch(&reals, &fakes, &cfg, &mut rng(5)).unwrap();
        assert_eq!(out.mixed, 0);
        assert_eq!(out.images, fakes);
    }

    #[test]
    fn compose_places_mixed_entries_first() {
        let (reals, fakes) = batches(10);
        let cfg = MixStrategyConfig::new(Strategy::Mixup, 0.35);
        let out = compose_discriminator_batch(&reals, &fakes, &cfg, &mut rng(6)).unwrap();
        assert_eq!(out.mixed, 3);
        for i in 0..10 {
            let same = out.images.item(i) == fakes.item(i);
            assert_eq!(same, i >= 3, "slot {i}");
        }
    }

    #[test]
    fn compose_rejects_mismatched_batches() {
        let (reals, fakes) = batches(4);
        let short = fakes.select(&[0, 1, 2]);
        let cfg = MixStrategyConfig::new(Strategy::Cutmix, 0.5);
        assert!(matches!(
            compose_discriminator_batch(&reals, &short, &cfg, &mut rng(0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn same_kind_pairings_use_neighbours() {
        let (reals, fakes) = batches(4);
        let mut cfg = MixStrategyConfig::new(Strategy::Mixup, 1.0);
        cfg.pairing = Pairing::RealReal;
        cfg.alpha = 1e9;
        let out = compose_discriminator_batch(&reals, &fakes, &cfg, &mut rng(7)).unwrap();
        let want = mix(reals.item(3), reals.item(0), 3, &Mask::constant(8, 8, 0.5)).unwrap();
        for (g, w) in out.images.item(3).iter().zip(&want) {
            assert!((g - w).abs() < 1e-3);
        }
    }
}

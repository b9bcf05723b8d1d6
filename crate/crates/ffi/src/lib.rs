//! C ABI over the mixgan library.
//!
//! Conventions:
//! * every fallible function returns an `int32_t` status (`MIXGAN_OK` on
//!   success) and writes results through caller-provided pointers;
//! * on failure, `mixgan_last_error` returns a message for the calling
//!   thread, valid until that thread's next failing call;
//! * images are `double` arrays in `[N, C, H, W]` order with values in
//!   `[-1, 1]`; matrices are row-major;
//! * handles are opaque and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mixgan::augment::{compose_discriminator_batch, mix, sample_mask, MixStrategyConfig, Strategy};
use mixgan::batch::ImageBatch;
use mixgan::checkpoint::load_checkpoint;
use mixgan::metrics::{frechet_distance, GaussianStats};
use mixgan::models::{Discriminator, Generator};
use mixgan::nn::Mode;
use mixgan::rng::SeededRng;
use mixgan::tensor::{no_grad, Tensor};
use mixgan::Error;

pub const MIXGAN_OK: i32 = 0;
pub const MIXGAN_ERR_NULL: i32 = 1;
pub const MIXGAN_ERR_PARAMETER: i32 = 2;
pub const MIXGAN_ERR_SHAPE: i32 = 3;
pub const MIXGAN_ERR_NUMERIC: i32 = 4;
pub const MIXGAN_ERR_DATA: i32 = 5;
pub const MIXGAN_ERR_CHECKPOINT: i32 = 6;
pub const MIXGAN_ERR_CAPABILITY: i32 = 7;
pub const MIXGAN_ERR_IO: i32 = 8;
pub const MIXGAN_ERR_PANIC: i32 = 9;

pub const MIXGAN_STRATEGY_NONE: i32 = 0;
pub const MIXGAN_STRATEGY_MIXUP: i32 = 1;
pub const MIXGAN_STRATEGY_CUTMIX: i32 = 2;
pub const MIXGAN_STRATEGY_SRMIX: i32 = 3;

/// Seeded random stream.
pub struct MixganRng {
    inner: SeededRng,
}

/// Generator and discriminator restored from a checkpoint.
pub struct MixganModel {
    generator: Generator,
    discriminator: Discriminator,
    iteration: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parameter(_) | Error::Config(_) | Error::Spec(_) => MIXGAN_ERR_PARAMETER,
            Error::Shape(_) => MIXGAN_ERR_SHAPE,
            Error::Numeric { .. } => MIXGAN_ERR_NUMERIC,
            Error::Data(_) | Error::InsufficientData(_) | Error::Count { .. } | Error::Image(_) => MIXGAN_ERR_DATA,
            Error::Checkpoint { .. } => MIXGAN_ERR_CHECKPOINT,
            Error::Capability(_) => MIXGAN_ERR_CAPABILITY,
            Error::Io(_) | Error::Json(_) | Error::Locked { .. } => MIXGAN_ERR_IO,
        };
        Failure(code, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MIXGAN_ERR_NULL, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MIXGAN_OK,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            MIXGAN_ERR_PANIC
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn strategy(code: i32) -> Result<Strategy, Failure> {
    match code {
        MIXGAN_STRATEGY_NONE => Ok(Strategy::None),
        MIXGAN_STRATEGY_MIXUP => Ok(Strategy::Mixup),
        MIXGAN_STRATEGY_CUTMIX => Ok(Strategy::Cutmix),
        MIXGAN_STRATEGY_SRMIX => Ok(Strategy::Srmix),
        other => Err(Failure(MIXGAN_ERR_PARAMETER, format!("unknown strategy code {other}"))),
    }
}

/// Message describing the calling thread's most recent failure; empty if
/// there was none. Owned by the library.
#[no_mangle]
pub extern "C" fn mixgan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mixgan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New random stream; release with `mixgan_rng_free`.
#[no_mangle]
pub extern "C" fn mixgan_rng_new(seed: u64) -> *mut MixganRng {
    Box::into_raw(Box::new(MixganRng {
        inner: SeededRng::new(seed),
    }))
}

/// # Safety
/// `rng` must come from `mixgan_rng_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mixgan_rng_free(rng: *mut MixganRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

/// Samples one `[height, width]` mask into `out`. `alpha` is the Beta
/// concentration used by Mixup.
///
/// # Safety
/// `rng` must be a live handle and `out` must hold `height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn mixgan_sample_mask(
    rng: *mut MixganRng,
    strategy_code: i32,
    height: usize,
    width: usize,
    alpha: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let rng = rng.as_mut().ok_or_else(|| null("rng"))?;
        let out = slice_mut(out, height * width, "out")?;
        let mut cfg = MixStrategyConfig::new(strategy(strategy_code)?, 1.0);
        cfg.alpha = alpha;
        let mask = sample_mask(&cfg, height, width, &mut rng.inner)?
            .ok_or_else(|| Failure(MIXGAN_ERR_PARAMETER, "strategy NONE has no mask".into()))?;
        out.copy_from_slice(&mask.values);
        Ok(())
    })
}

/// `out = mask * a + (1 - mask) * b` for one `[channels, height, width]`
/// image pair and a `[height, width]` mask.
///
/// # Safety
/// `a`, `b` and `out` hold `channels * height * width` doubles, `mask` holds
/// `height * width`.
#[no_mangle]
pub unsafe extern "C" fn mixgan_mix(
    a: *const f64,
    b: *const f64,
    mask: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let n = channels * height * width;
        let a = slice(a, n, "a")?;
        let b = slice(b, n, "b")?;
        let m = slice(mask, height * width, "mask")?;
        let out = slice_mut(out, n, "out")?;
        let mask = mixgan::augment::Mask {
            height,
            width,
            values: m.to_vec(),
        };
        if !mask.in_unit_range() {
            return Err(Failure(MIXGAN_ERR_PARAMETER, "mask values must lie in [0, 1]".into()));
        }
        out.copy_from_slice(&mix(a, b, channels, &mask)?);
        Ok(())
    })
}

/// Builds a discriminator fake-slot batch: the first `floor(ratio * batch)`
/// entries mix real `i` with fake `i`, the rest are the fakes. The number
/// of mixed entries is written to `mixed_out`.
///
/// # Safety
/// `reals`, `fakes` and `out` hold `batch * channels * height * width`
/// doubles; `mixed_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn mixgan_compose_batch(
    rng: *mut MixganRng,
    reals: *const f64,
    fakes: *const f64,
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    strategy_code: i32,
    ratio: f64,
    out: *mut f64,
    mixed_out: *mut usize,
) -> i32 {
    guard(|| {
        let rng = rng.as_mut().ok_or_else(|| null("rng"))?;
        let n = batch * channels * height * width;
        let r = ImageBatch::new(batch, channels, height, width, slice(reals, n, "reals")?.to_vec())?;
        let f = ImageBatch::new(batch, channels, height, width, slice(fakes, n, "fakes")?.to_vec())?;
        let out = slice_mut(out, n, "out")?;
        let ladder = mixgan::augment::LadderRatio::new(ratio)?;
        let mut cfg = MixStrategyConfig::new(strategy(strategy_code)?, 0.0);
        cfg.ratio = ladder;
        let composed = compose_discriminator_batch(&r, &f, &cfg, &mut rng.inner)?;
        out.copy_from_slice(&composed.images.data);
        if !mixed_out.is_null() {
            *mixed_out = composed.mixed;
        }
        Ok(())
    })
}

/// Fréchet distance between `N(mean_a, cov_a)` and `N(mean_b, cov_b)`.
///
/// # Safety
/// Means hold `dim` doubles, covariances `dim * dim` (row-major).
#[no_mangle]
pub unsafe extern "C" fn mixgan_frechet_distance(
    mean_a: *const f64,
    cov_a: *const f64,
    mean_b: *const f64,
    cov_b: *const f64,
    dim: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let stats = |m: *const f64, c: *const f64| -> Result<GaussianStats, Failure> {
            Ok(GaussianStats {
                mean: slice(m, dim, "mean")?.to_vec(),
                cov: slice(c, dim * dim, "cov")?.to_vec(),
                count: 0,
            })
        };
        let a = stats(mean_a, cov_a)?;
        let b = stats(mean_b, cov_b)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = frechet_distance(&a, &b)?;
        Ok(())
    })
}

/// Loads a checkpoint; release with `mixgan_model_free`.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mixgan_model_load(path: *const c_char, out: *mut *mut MixganModel) -> i32 {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(MIXGAN_ERR_PARAMETER, "path is not UTF-8".into()))?;
        let ck = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(MixganModel {
            generator: ck.state.generator,
            discriminator: ck.state.discriminator,
            iteration: ck.state.iteration,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `mixgan_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mixgan_model_free(model: *mut MixganModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image resolution, latent size and completed generator iterations. Any
/// output pointer may be null.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mixgan_model_info(
    model: *const MixganModel,
    resolution: *mut usize,
    z_dim: *mut usize,
    iteration: *mut u64,
) -> i32 {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let spec = m.generator.spec();
        if let Some(r) = resolution.as_mut() {
            *r = spec.resolution;
        }
        if let Some(z) = z_dim.as_mut() {
            *z = spec.z_dim;
        }
        if let Some(i) = iteration.as_mut() {
            *i = m.iteration;
        }
        Ok(())
    })
}

/// Generates `n` images from latents `z` (`[n, z_dim]`) in evaluation mode.
///
/// # Safety
/// `z` holds `n * z_dim` doubles, `out` holds `n * 3 * R * R`.
#[no_mangle]
pub unsafe extern "C" fn mixgan_model_generate(model: *mut MixganModel, z: *const f64, n: usize, out: *mut f64) -> i32 {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let spec = m.generator.spec().clone();
        if n == 0 {
            return Err(Failure(MIXGAN_ERR_PARAMETER, "n must be positive".into()));
        }
        let z = Tensor::new(slice(z, n * spec.z_dim, "z")?.to_vec(), &[n, spec.z_dim]);
        let out = slice_mut(out, n * 3 * spec.resolution * spec.resolution, "out")?;
        out.copy_from_slice(m.generator.sample(&z, Mode::Eval).data());
        Ok(())
    })
}

/// Discriminator scores of `n` images at the model resolution.
///
/// # Safety
/// `images` holds `n * 3 * R * R` doubles, `out` holds `n`.
#[no_mangle]
pub unsafe extern "C" fn mixgan_model_score(
    model: *const MixganModel,
    images: *const f64,
    n: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let r = m.discriminator.spec().resolution;
        if n == 0 {
            return Err(Failure(MIXGAN_ERR_PARAMETER, "n must be positive".into()));
        }
        let x = Tensor::new(slice(images, n * 3 * r * r, "images")?.to_vec(), &[n, 3, r, r]);
        let out = slice_mut(out, n, "out")?;
        out.copy_from_slice(no_grad(|| m.discriminator.forward(&x)).data());
        Ok(())
    })
}

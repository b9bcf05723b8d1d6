//! The mixed-sample training loop: `n_crit` discriminator updates on
//! composed fake batches, then one generator update.

pub mod optim;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{compose_discriminator_batch, MixStrategyConfig};
use crate::batch::ImageBatch;
use crate::data::{sample_latent, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::losses::{d_loss, g_loss, LossKind};
use crate::models::{Discriminator, Generator, ModelSpec};
use crate::nn::Mode;
use crate::regularize::{consistency_from_scores, cr_augment_batch, gradient_penalty_at, interpolate, sample_interpolation_weights, RegularizerConfig};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::{grad, Tensor};

pub use optim::{adam_update, Adam, AdamHyper, Moments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_crit: usize,
    pub lr: f64,
    /// 0.01 is unusually small for GANs but is the published setting.
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// generator updates
    pub total_iterations: u64,
    pub loss: LossKind,
    pub mix: MixStrategyConfig,
    pub regularizers: RegularizerConfig,
    pub seed: u64,
    /// FID evaluation period in generator iterations; 0 disables
    pub eval_every: u64,
    /// checkpoint period in generator iterations; 0 keeps only the final one
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            n_crit: 2,
            lr: 1e-3,
            beta1: 0.01,
            beta2: 0.999,
            adam_eps: 1e-8,
            total_iterations: 100_000,
            loss: LossKind::Hinge,
            mix: MixStrategyConfig::vanilla(),
            regularizers: RegularizerConfig::default(),
            seed: 0,
            eval_every: 1000,
            checkpoint_every: 5000,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Parameter("batch_size must be at least 2".into()));
        }
        if self.n_crit == 0 {
            return Err(Error::Parameter("n_crit must be at least 1".into()));
        }
        self.adam().validate()?;
        self.mix.validate()?;
        self.regularizers.validate()
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_opt: Adam,
    pub d_opt: Adam,
    /// completed generator updates
    pub iteration: u64,
    /// completed discriminator updates
    pub d_iterations: u64,
    pub rng: SeededRng,
    pub sampler: BatchSampler,
}

impl TrainState {
    /// Fresh state; every random stream is derived from `cfg.seed`.
    pub fn new(spec: &ModelSpec, cfg: &TrainConfig, dataset_len: usize) -> Result<Self> {
        cfg.validate()?;
        if dataset_len == 0 {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        let generator = Generator::new(spec, &mut SeededRng::derived(cfg.seed, "generator", 0))?;
        let discriminator = Discriminator::new(spec, &mut SeededRng::derived(cfg.seed, "discriminator", 0))?;
        let g_opt = Adam::new(cfg.adam(), generator.params());
        let d_opt = Adam::new(cfg.adam(), discriminator.params());
        Ok(Self {
            generator,
            discriminator,
            g_opt,
            d_opt,
            iteration: 0,
            d_iterations: 0,
            rng: SeededRng::derived(cfg.seed, "train", 0),
            sampler: BatchSampler::new(derive_seed(cfg.seed, "data", 0), dataset_len),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorMetrics {
    /// 1-based index of this discriminator update
    pub d_iteration: u64,
    /// adversarial part only
    pub d_loss: f64,
    pub gp: Option<f64>,
    pub cr: Option<f64>,
    pub total_loss: f64,
    pub mixed: usize,
    pub latent: Tensor,
}

#[derive(Debug, Clone)]
pub struct GeneratorMetrics {
    pub g_loss: f64,
    pub latent: Tensor,
}

fn check_finite(value: f64, what: &str, d_iteration: u64, iteration: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!(
            "{what} (generator iteration {iteration}, discriminator iteration {d_iteration})"
        )))
    }
}

/// One discriminator update on `reals`.
///
/// Random draws happen in a fixed order from `state.rng`: latents, mixing
/// masks, consistency augmentations, then penalty interpolation weights.
pub fn discriminator_step(state: &mut TrainState, reals: &ImageBatch, cfg: &TrainConfig) -> Result<DiscriminatorMetrics> {
    let b = cfg.batch_size;
    if reals.len != b {
        return Err(Error::Count { needed: b, got: reals.len });
    }
    let k = state.d_iterations + 1;
    state.discriminator.power_iterate();

    let latent = sample_latent(state.generator.spec().z_dim, b, &mut state.rng);
    let fakes = ImageBatch::from_tensor(&state.generator.sample(&latent, Mode::Train));
    let composed = compose_discriminator_batch(reals, &fakes, &cfg.mix, &mut state.rng)?;

    let reg = &cfg.regularizers;
    let mut inputs = reals.concat(&composed.images)?;
    let mut cr_count = 0;
    if reg.cr_enabled {
        let sources = if reg.cr_include_mixed && composed.mixed > 0 {
            let mixed: Vec<usize> = (0..composed.mixed).collect();
            reals.concat(&composed.images.select(&mixed))?
        } else {
            reals.clone()
        };
        cr_count = sources.len;
        inputs = inputs.concat(&cr_augment_batch(&sources, reg.cr_max_shift, &mut state.rng))?;
    }

    let d = &state.discriminator;
    let scores = d.forward(&inputs.to_tensor());
    let real_scores = scores.narrow0(0, b);
    let fake_scores = scores.narrow0(b, b);
    let adversarial = d_loss(&real_scores, &fake_scores, cfg.loss)?;
    let mut total = adversarial.clone();

    let mut cr_value = None;
    if reg.cr_enabled {
        let originals = if cr_count > b {
            Tensor::cat0(&[real_scores.clone(), fake_scores.narrow0(0, cr_count - b)])
        } else {
            real_scores.clone()
        };
        let pair = Tensor::cat0(&[originals, scores.narrow0(2 * b, cr_count)]);
        let cr = consistency_from_scores(&pair, cr_count)?;
        cr_value = Some(cr.item());
        total = total.add(&cr.scale(reg.cr_coefficient));
    }

    let mut gp_value = None;
    if reg.gp_due(k) {
        let eps = sample_interpolation_weights(b, &mut state.rng);
        let points = interpolate(reals, &fakes, &eps)?;
        let gp = gradient_penalty_at(d, &points)?;
        gp_value = Some(gp.item());
        total = total.add(&gp.scale(reg.gp_coefficient));
    }

    let total_value = total.item();
    check_finite(total_value, "discriminator loss", k, state.iteration)?;
    let params: Vec<&Tensor> = d.params().tensors().iter().collect();
    let grads = grad(&total, &params, false);
    state.d_opt.step(state.discriminator.params_mut(), &grads)?;
    state.d_iterations = k;

    Ok(DiscriminatorMetrics {
        d_iteration: k,
        d_loss: adversarial.item(),
        gp: gp_value,
        cr: cr_value,
        total_loss: total_value,
        mixed: composed.mixed,
        latent,
    })
}

/// One generator update on a freshly drawn latent batch.
pub fn generator_step(state: &mut TrainState, cfg: &TrainConfig) -> Result<GeneratorMetrics> {
    let latent = sample_latent(state.generator.spec().z_dim, cfg.batch_size, &mut state.rng);
    let fake = state.generator.forward(&latent, Mode::Train);
    let scores = state.discriminator.forward(&fake);
    let loss = g_loss(&scores, cfg.loss)?;
    let value = loss.item();
    check_finite(value, "generator loss", state.d_iterations, state.iteration + 1)?;
    let params: Vec<&Tensor> = state.generator.params().tensors().iter().collect();
    let grads = grad(&loss, &params, false);
    state.g_opt.step(state.generator.params_mut(), &grads)?;
    Ok(GeneratorMetrics { g_loss: value, latent })
}

/// One line of the metrics log. Iteration 0 carries only the initial FID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub gp: Option<f64>,
    pub cr: Option<f64>,
    pub fid: Option<f64>,
    /// seconds since the start of this process's run
    pub wall_time: f64,
}

impl IterationRecord {
    /// Equality ignoring wall time.
    pub fn same_values(&self, other: &IterationRecord) -> bool {
        IterationRecord {
            wall_time: 0.0,
            ..self.clone()
        } == IterationRecord {
            wall_time: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointReason {
    Periodic,
    Final,
    Failure,
}

/// Hooks into [`run_training`]. Every method has a no-op default.
pub trait Observer {
    fn on_discriminator_step(&mut self, _state: &TrainState, _metrics: &DiscriminatorMetrics) {}

    fn on_generator_step(&mut self, _state: &TrainState, _metrics: &GeneratorMetrics) {}

    fn on_record(&mut self, _record: &IterationRecord) -> Result<()> {
        Ok(())
    }

    /// FID of the current (frozen) generator, if an evaluator is attached.
    fn evaluate(&mut self, _state: &TrainState) -> Result<Option<f64>> {
        Ok(None)
    }

    fn checkpoint(&mut self, _state: &TrainState, _reason: CheckpointReason) -> Result<()> {
        Ok(())
    }
}

/// An observer that ignores everything.
pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub records: Vec<IterationRecord>,
    pub fid_history: Vec<(u64, f64)>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn train_iteration<O: Observer + ?Sized>(
    state: &mut TrainState,
    dataset: &Dataset,
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<(Vec<DiscriminatorMetrics>, GeneratorMetrics)> {
    let mut d_metrics = Vec::with_capacity(cfg.n_crit);
    for _ in 0..cfg.n_crit {
        let indices = state.sampler.next_indices(cfg.batch_size);
        let reals = dataset.batch(&indices);
        let m = discriminator_step(state, &reals, cfg)?;
        observer.on_discriminator_step(state, &m);
        d_metrics.push(m);
    }
    let g = generator_step(state, cfg)?;
    state.iteration += 1;
    observer.on_generator_step(state, &g);
    Ok((d_metrics, g))
}

/// Runs generator iterations until `cfg.total_iterations`, starting from
/// whatever `state` holds (fresh or restored).
pub fn run_training<O: Observer + ?Sized>(
    cfg: &TrainConfig,
    dataset: &Dataset,
    state: &mut TrainState,
    observer: &mut O,
) -> Result<RunSummary> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if state.sampler.len != dataset.len() {
        return Err(Error::Data(format!(
            "training state was built for {} items, dataset has {}",
            state.sampler.len,
            dataset.len()
        )));
    }
    let start = Instant::now();
    let mut summary = RunSummary {
        records: Vec::new(),
        fid_history: Vec::new(),
    };
    let eval_due = |it: u64| cfg.eval_every > 0 && (it % cfg.eval_every == 0 || it == cfg.total_iterations);

    if state.iteration == 0 && eval_due(0) {
        let fid = observer.evaluate(state)?;
        let record = IterationRecord {
            iteration: 0,
            d_loss: None,
            g_loss: None,
            gp: None,
            cr: None,
            fid,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if let Some(f) = fid {
            summary.fid_history.push((0, f));
        }
        observer.on_record(&record)?;
        summary.records.push(record);
    }

    while state.iteration < cfg.total_iterations {
        let (d_metrics, g) = match train_iteration(state, dataset, cfg, observer) {
            Ok(v) => v,
            Err(e) => {
                if let Err(ck) = observer.checkpoint(state, CheckpointReason::Failure) {
                    log::error!("failure checkpoint could not be written: {ck}");
                }
                return Err(e);
            }
        };
        let it = state.iteration;
        let d_losses: Vec<f64> = d_metrics.iter().map(|m| m.d_loss).collect();
        let gps: Vec<f64> = d_metrics.iter().filter_map(|m| m.gp).collect();
        let crs: Vec<f64> = d_metrics.iter().filter_map(|m| m.cr).collect();
        let fid = if eval_due(it) { observer.evaluate(state)? } else { None };
        if let Some(f) = fid {
            summary.fid_history.push((it, f));
        }
        let record = IterationRecord {
            iteration: it,
            d_loss: mean(&d_losses),
            g_loss: Some(g.g_loss),
            gp: mean(&gps),
            cr: mean(&crs),
            fid,
            wall_time: start.elapsed().as_secs_f64(),
        };
        observer.on_record(&record)?;
        summary.records.push(record);
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < cfg.total_iterations {
            observer.checkpoint(state, CheckpointReason::Periodic)?;
        }
    }
    observer.checkpoint(state, CheckpointReason::Final)?;
    Ok(summary)
}

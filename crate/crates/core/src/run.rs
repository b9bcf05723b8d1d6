//! Run directories and the high-level operations behind the command line:
//! training, FID evaluation, analysis and mask inspection.
//!
//! Run directory layout:
//!
//! ```text
//! <output_dir>/
//!   config.toml            resolved configuration snapshot
//!   run.lock               present while a process owns the directory
//!   metrics.jsonl          one JSON record per generator iteration
//!   fid/iter_<n>.json      one summary per FID evaluation
//!   checkpoints/iter_<n>.ckpt, final.ckpt, failure.ckpt
//!   analysis/<what>/...    analysis artifacts
//!   run.json               run record written at the end
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{heatmap_image, render_heatmap, render_image_grid, write_score_distributions, HeatmapArtifact};
use crate::augment::{compose_discriminator_batch, sample_mask, MixStrategyConfig, Strategy};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::data::{open_dataset, to_rgb_image, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{
    cache_dir, extractor_by_name, generate_images, generator_fid, image_stats, score_statistics, FeatureExtractor,
    GaussianStats,
};
use crate::rng::SeededRng;
use crate::train::{run_training, CheckpointReason, IterationRecord, Observer, TrainState};

/// Well-known paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// The run directory owning a checkpoint (`<run>/checkpoints/x.ckpt`).
    pub fn of_checkpoint(checkpoint: &Path) -> Self {
        let parent = checkpoint.parent().unwrap_or(Path::new("."));
        let root = if parent.file_name().is_some_and(|n| n == "checkpoints") {
            parent.parent().unwrap_or(Path::new("."))
        } else {
            parent
        };
        Self::new(root)
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn lock(&self) -> PathBuf {
        self.root.join("run.lock")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }
    pub fn fid_dir(&self) -> PathBuf {
        self.root.join("fid")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, reason: CheckpointReason, iteration: u64) -> PathBuf {
        let name = match reason {
            CheckpointReason::Periodic => format!("iter_{iteration:08}.ckpt"),
            CheckpointReason::Final => "final.ckpt".into(),
            CheckpointReason::Failure => "failure.ckpt".into(),
        };
        self.checkpoints().join(name)
    }
    pub fn analysis(&self, what: &str) -> PathBuf {
        self.root.join("analysis").join(what)
    }
    pub fn record(&self) -> PathBuf {
        self.root.join("run.json")
    }
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = RunPaths::new(dir).lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                Err(Error::Locked {
                    path: dir.to_path_buf(),
                    holder: format!("pid {}", holder.trim()),
                })
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// What a finished (or resumed and finished) run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_snapshot: PathBuf,
    pub metrics_log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub fid_history: Vec<(u64, f64)>,
    pub artifacts: Vec<PathBuf>,
}

fn content_hash(dataset: &Dataset) -> u64 {
    // FNV-1a over the raw bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in &dataset.images.data {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Reference statistics of a dataset, cached under `$MIXGAN_CACHE_DIR/stats`
/// when that variable is set.
pub fn reference_stats(extractor: &dyn FeatureExtractor, dataset: &Dataset) -> Result<GaussianStats> {
    let cache = cache_dir().map(|d| {
        d.join("stats").join(format!(
            "{}-{}-{:016x}.json",
            extractor.name(),
            dataset.resolution(),
            content_hash(dataset)
        ))
    });
    if let Some(path) = &cache {
        if let Ok(text) = fs::read_to_string(path) {
            if let Ok(stats) = serde_json::from_str::<GaussianStats>(&text) {
                return Ok(stats);
            }
        }
    }
    let stats = image_stats(extractor, &dataset.images, 500)?;
    if let Some(path) = &cache {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(&stats)?)?;
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidSummary {
    pub iteration: u64,
    pub fid: f64,
    pub extractor: String,
    pub n_fake: usize,
}

struct FidEvaluator {
    extractor: Box<dyn FeatureExtractor>,
    reference: GaussianStats,
    n_fake: usize,
    seed: u64,
}

impl FidEvaluator {
    fn evaluate(&self, state: &TrainState) -> Result<f64> {
        let mut rng = SeededRng::derived(self.seed, "fid", state.iteration);
        generator_fid(self.extractor.as_ref(), &self.reference, &state.generator, self.n_fake, &mut rng)
    }
}

struct RunObserver {
    paths: RunPaths,
    metrics: BufWriter<File>,
    fid: Option<FidEvaluator>,
    config: serde_json::Value,
    checkpoints: Vec<PathBuf>,
}

impl Observer for RunObserver {
    fn on_record(&mut self, record: &IterationRecord) -> Result<()> {
        serde_json::to_writer(&mut self.metrics, record)?;
        self.metrics.write_all(b"\n")?;
        self.metrics.flush()?;
        if record.iteration % 100 == 0 {
            log::info!(
                "iteration {}: d_loss {:?} g_loss {:?} fid {:?}",
                record.iteration,
                record.d_loss,
                record.g_loss,
                record.fid
            );
        }
        Ok(())
    }

    fn evaluate(&mut self, state: &TrainState) -> Result<Option<f64>> {
        let Some(ev) = &self.fid else { return Ok(None) };
        let fid = ev.evaluate(state)?;
        let summary = FidSummary {
            iteration: state.iteration,
            fid,
            extractor: ev.extractor.name().to_string(),
            n_fake: ev.n_fake,
        };
        fs::create_dir_all(self.paths.fid_dir())?;
        fs::write(
            self.paths.fid_dir().join(format!("iter_{:08}.json", state.iteration)),
            serde_json::to_string_pretty(&summary)?,
        )?;
        Ok(Some(fid))
    }

    fn checkpoint(&mut self, state: &TrainState, reason: CheckpointReason) -> Result<()> {
        fs::create_dir_all(self.paths.checkpoints())?;
        let path = self.paths.checkpoint(reason, state.iteration);
        save_checkpoint(&path, state, &self.config)?;
        if reason == CheckpointReason::Failure {
            log::error!("training failed; state saved to {}", path.display());
        }
        self.checkpoints.push(path);
        Ok(())
    }
}

/// Keeps the metrics lines up to and including `iteration`.
fn truncate_metrics(path: &Path, iteration: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        match serde_json::from_str::<IterationRecord>(&line) {
            Ok(r) if r.iteration <= iteration => kept.push(line),
            _ => {}
        }
    }
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Trains the configured experiment into `cfg.output_dir`, optionally
/// continuing from a checkpoint.
pub fn train_experiment(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunRecord> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.output_dir);
    let _lock = RunLock::acquire(&paths.root)?;
    let dataset = open_dataset(&cfg.dataset, cfg.model.resolution)?;
    log::info!("dataset {} with {} images", dataset.source, dataset.len());

    let fid = if cfg.train.eval_every > 0 {
        let extractor = extractor_by_name(&cfg.eval.extractor, cfg.model.resolution)?;
        let reference = reference_stats(extractor.as_ref(), &dataset)?;
        Some(FidEvaluator {
            extractor,
            reference,
            n_fake: cfg.eval.n_fake,
            seed: cfg.train.seed,
        })
    } else {
        None
    };

    let mut state = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.state.generator.spec() != &cfg.model {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained with a different model spec",
                    path.display()
                )));
            }
            truncate_metrics(&paths.metrics(), ck.state.iteration)?;
            ck.state
        }
        None => {
            if paths.metrics().exists() {
                fs::remove_file(paths.metrics())?;
            }
            TrainState::new(&cfg.model, &cfg.train, dataset.len())?
        }
    };

    fs::write(paths.config(), cfg.to_toml()?)?;
    let metrics = OpenOptions::new().create(true).append(true).open(paths.metrics())?;
    let mut observer = RunObserver {
        paths: paths.clone(),
        metrics: BufWriter::new(metrics),
        fid,
        config: serde_json::to_value(cfg)?,
        checkpoints: Vec::new(),
    };
    let summary = run_training(&cfg.train, &dataset, &mut state, &mut observer)?;
    let record = RunRecord {
        config_snapshot: paths.config(),
        metrics_log: paths.metrics(),
        checkpoints: observer.checkpoints,
        fid_history: summary.fid_history,
        artifacts: Vec::new(),
    };
    fs::write(paths.record(), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

/// A checkpoint with the experiment configuration stored beside it.
pub struct LoadedRun {
    pub state: TrainState,
    pub config: Option<ExperimentConfig>,
}

pub fn load_run(checkpoint: &Path) -> Result<LoadedRun> {
    let ck = load_checkpoint(checkpoint)?;
    let config = serde_json::from_value::<ExperimentConfig>(ck.config).ok();
    Ok(LoadedRun { state: ck.state, config })
}

fn resolve_dataset(run: &LoadedRun, dataset: Option<&str>) -> Result<Dataset> {
    let uri = match (dataset, &run.config) {
        (Some(uri), _) => uri.to_string(),
        (None, Some(cfg)) => cfg.dataset.clone(),
        (None, None) => {
            return Err(Error::Config(
                "the checkpoint carries no experiment config; pass --dataset".into(),
            ))
        }
    };
    open_dataset(&uri, run.state.generator.spec().resolution)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub checkpoint: PathBuf,
    pub dataset: String,
    pub extractor: String,
    pub n_fake: usize,
    pub seed: u64,
    pub iteration: u64,
    pub fid: f64,
}

/// FID of a checkpoint's generator against a dataset.
pub fn eval_fid(
    checkpoint: &Path,
    dataset: Option<&str>,
    n_fake: usize,
    extractor: &str,
    seed: u64,
) -> Result<FidReport> {
    let run = load_run(checkpoint)?;
    let data = resolve_dataset(&run, dataset)?;
    let extractor = extractor_by_name(extractor, run.state.generator.spec().resolution)?;
    let reference = reference_stats(extractor.as_ref(), &data)?;
    let mut rng = SeededRng::derived(seed, "eval-fid", 0);
    let fid = generator_fid(extractor.as_ref(), &reference, &run.state.generator, n_fake, &mut rng)?;
    Ok(FidReport {
        checkpoint: checkpoint.to_path_buf(),
        dataset: data.source,
        extractor: extractor.name().to_string(),
        n_fake,
        seed,
        iteration: run.state.iteration,
        fid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisKind {
    Histograms,
    Heatmaps,
    Grid,
}

impl std::str::FromStr for AnalysisKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "histograms" => Ok(Self::Histograms),
            "heatmaps" => Ok(Self::Heatmaps),
            "grid" => Ok(Self::Grid),
            other => Err(Error::Config(format!(
                "unknown analysis `{other}` (expected histograms, heatmaps or grid)"
            ))),
        }
    }
}

impl AnalysisKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Histograms => "histograms",
            Self::Heatmaps => "heatmaps",
            Self::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    /// images per group for histograms
    pub samples: usize,
    /// heatmaps to render
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub dataset: Option<String>,
    /// defaults to `<run>/analysis/<what>`
    pub out: Option<PathBuf>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            samples: 500,
            count: 4,
            rows: 4,
            cols: 4,
            seed: 0,
            dataset: None,
            out: None,
        }
    }
}

/// The mixing configuration used for analysis samples: the run's strategy
/// with every slot mixed.
fn analysis_mix(run: &LoadedRun) -> MixStrategyConfig {
    let mut mix = run
        .config
        .as_ref()
        .map(|c| c.train.mix)
        .unwrap_or_else(MixStrategyConfig::vanilla);
    mix.ratio = crate::augment::LadderRatio::new(1.0).expect("unit ratio");
    mix
}

/// Writes the requested artifacts and returns their paths.
pub fn analyze(checkpoint: &Path, what: AnalysisKind, opts: &AnalysisOptions) -> Result<Vec<PathBuf>> {
    let run = load_run(checkpoint)?;
    let out = opts
        .out
        .clone()
        .unwrap_or_else(|| RunPaths::of_checkpoint(checkpoint).analysis(what.name()));
    fs::create_dir_all(&out)?;
    let spec = run.state.generator.spec().clone();
    let res = spec.resolution;
    match what {
        AnalysisKind::Histograms => {
            let data = resolve_dataset(&run, opts.dataset.as_deref())?;
            let n = opts.samples.min(data.len()).max(1);
            let perm = BatchSampler::permutation(opts.seed, data.len(), 0);
            let reals = data.batch(&perm[..n]);
            let fakes = generate_images(&run.state.generator, n, 100, &mut SeededRng::derived(opts.seed, "analysis-fakes", 0));
            let mix = analysis_mix(&run);
            let mixed = if mix.strategy == Strategy::None {
                crate::batch::ImageBatch::zeros(0, 3, res, res)
            } else {
                let mut rng = SeededRng::derived(opts.seed, "analysis-mix", 0);
                compose_discriminator_batch(&reals, &fakes, &mix, &mut rng)?.images
            };
            let stats = score_statistics(&run.state.discriminator, &reals, &fakes, &mixed)?;
            let files = write_score_distributions(&stats, &out)?;
            let summary = out.join("summary.json");
            let means = stats.means();
            fs::write(
                &summary,
                serde_json::to_string_pretty(&serde_json::json!({
                    "iteration": run.state.iteration,
                    "samples": n,
                    "mean_real": means[0],
                    "mean_fake": means[1],
                    "mean_mixed": means[2],
                }))?,
            )?;
            Ok(vec![files.scores_csv, files.histogram_csv, files.plot, summary])
        }
        AnalysisKind::Heatmaps => {
            let data = resolve_dataset(&run, opts.dataset.as_deref())?;
            let n = opts.count.max(1);
            let perm = BatchSampler::permutation(opts.seed, data.len(), 0);
            let picks: Vec<usize> = (0..n).map(|i| perm[i % perm.len()]).collect();
            let reals = data.batch(&picks);
            let fakes = generate_images(&run.state.generator, n, n, &mut SeededRng::derived(opts.seed, "analysis-fakes", 0));
            let run_mix = analysis_mix(&run);
            let mut rng = SeededRng::derived(opts.seed, "analysis-mix", 0);
            let mut written = Vec::new();
            let mut artifacts: Vec<HeatmapArtifact> = Vec::new();
            for i in 0..n {
                // vanilla runs cycle through the strategies
                let mut mix = run_mix;
                if mix.strategy == Strategy::None {
                    mix.strategy = Strategy::ALL_MIXING[i % 3];
                }
                let mask = sample_mask(&mix, res, res, &mut rng)?.expect("mixing strategy yields a mask");
                let image = crate::augment::mix(reals.item(i), fakes.item(i), 3, &mask)?;
                let art = render_heatmap(&run.state.discriminator, &image)?;
                let sample = out.join(format!("sample_{i:02}.png"));
                let heat = out.join(format!("heatmap_{i:02}.png"));
                to_rgb_image(&image, res, res).save(&sample)?;
                heatmap_image(&art.normalized, 4, res / 4).save(&heat)?;
                written.push(sample);
                written.push(heat);
                artifacts.push(art);
            }
            let json = out.join("heatmaps.json");
            fs::write(&json, serde_json::to_string_pretty(&artifacts)?)?;
            written.push(json);
            Ok(written)
        }
        AnalysisKind::Grid => {
            let n = opts.rows * opts.cols;
            let fakes = generate_images(&run.state.generator, n, n.max(1), &mut SeededRng::derived(opts.seed, "analysis-grid", 0));
            let path = out.join("grid.png");
            render_image_grid(&fakes, opts.rows, opts.cols)?.save(&path)?;
            Ok(vec![path])
        }
    }
}

/// Samples `count` masks of one strategy and writes them as grayscale PNGs
/// (`mask_<i>.png`, white = 1) plus a CSV of their mean values.
pub fn mask_debug(strategy: Strategy, resolution: usize, count: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    if strategy == Strategy::None {
        return Err(Error::Config("mask-debug needs a mixing strategy".into()));
    }
    fs::create_dir_all(out)?;
    let cfg = MixStrategyConfig::new(strategy, 1.0);
    let mut rng = SeededRng::derived(seed, "mask-debug", 0);
    let mut written = Vec::new();
    let mut summary = String::from("index,mean\n");
    for i in 0..count {
        let mask = sample_mask(&cfg, resolution, resolution, &mut rng)?.expect("mixing strategy yields a mask");
        let img = image::GrayImage::from_fn(resolution as u32, resolution as u32, |x, y| {
            image::Luma([(mask.at(y as usize, x as usize) * 255.0).round() as u8])
        });
        let path = out.join(format!("mask_{i:03}.png"));
        img.save(&path)?;
        written.push(path);
        summary.push_str(&format!("{i},{}\n", mask.sum() / (resolution * resolution) as f64));
    }
    let csv = out.join("masks.csv");
    fs::write(&csv, summary)?;
    written.push(csv);
    Ok(written)
}

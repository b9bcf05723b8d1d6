//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MIXGANCK"
//! version  u32      FORMAT_VERSION
//! hlen     u64      length of the JSON header in bytes
//! header   hlen bytes of UTF-8 JSON (model spec, run config, counters,
//!          random-stream positions, tensor directory)
//! payload  f64 values of every tensor in directory order
//! ```
//!
//! The payload holds generator and discriminator parameters, batch-norm
//! running statistics, spectral-norm `u`/`v` vectors and both optimizers'
//! moment estimates, so a restored state continues bit-for-bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::BatchSampler;
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator, ModelSpec};
use crate::nn::PowerIterationState;
use crate::rng::{RngState, SeededRng};
use crate::train::{Adam, AdamHyper, Moments, TrainState};

pub const MAGIC: &[u8; 8] = b"MIXGANCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    config: serde_json::Value,
    iteration: u64,
    d_iterations: u64,
    rng: RngState,
    sampler: BatchSampler,
    g_adam: AdamHyper,
    g_adam_step: u64,
    d_adam: AdamHyper,
    d_adam_step: u64,
    /// which discriminator weights carry power-iteration vectors
    spectral_layout: Vec<bool>,
    tensors: Vec<TensorEntry>,
}

/// A decoded checkpoint: the training state plus the opaque run
/// configuration stored alongside it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: TrainState,
    pub config: serde_json::Value,
}

struct Payload {
    entries: Vec<TensorEntry>,
    values: Vec<f64>,
}

impl Payload {
    fn push(&mut self, name: String, data: &[f64]) {
        self.entries.push(TensorEntry { name, len: data.len() });
        self.values.extend_from_slice(data);
    }
}

fn collect(state: &TrainState) -> (Payload, Vec<bool>) {
    let mut p = Payload {
        entries: Vec::new(),
        values: Vec::new(),
    };
    let g = &state.generator;
    for (name, t) in g.params().names().iter().zip(g.params().tensors()) {
        p.push(name.clone(), t.data());
    }
    for (i, bn) in g.batch_norms().iter().enumerate() {
        p.push(format!("g.bn_running_mean.{i}"), &bn.running_mean);
        p.push(format!("g.bn_running_var.{i}"), &bn.running_var);
    }
    let d = &state.discriminator;
    for (name, t) in d.params().names().iter().zip(d.params().tensors()) {
        p.push(name.clone(), t.data());
    }
    let spectral = d.spectral_states();
    for (i, s) in spectral.iter().enumerate() {
        if let Some(s) = s {
            p.push(format!("d.sn_u.{i}"), &s.u);
            p.push(format!("d.sn_v.{i}"), &s.v);
        }
    }
    for (prefix, opt) in [("g", &state.g_opt), ("d", &state.d_opt)] {
        for (i, m) in opt.moments.iter().enumerate() {
            p.push(format!("{prefix}.adam_m.{i}"), &m.m);
            p.push(format!("{prefix}.adam_v.{i}"), &m.v);
        }
    }
    (p, spectral.iter().map(Option::is_some).collect())
}

/// Serializes `state` and `config` into the container format.
pub fn encode(state: &TrainState, config: &serde_json::Value) -> Result<Vec<u8>> {
    let (payload, spectral_layout) = collect(state);
    let header = Header {
        spec: state.generator.spec().clone(),
        config: config.clone(),
        iteration: state.iteration,
        d_iterations: state.d_iterations,
        rng: state.rng.state(),
        sampler: state.sampler.clone(),
        g_adam: state.g_opt.hyper,
        g_adam_step: state.g_opt.step,
        d_adam: state.d_opt.hyper,
        d_adam_step: state.d_opt.step,
        spectral_layout,
        tensors: payload.entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * payload.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &payload.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    path: &'a Path,
    entries: std::slice::Iter<'a, TensorEntry>,
    values: &'a [u8],
}

impl Reader<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn next(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let entry = self
            .entries
            .next()
            .ok_or_else(|| self.fail(format!("missing tensor `{name}`")))?;
        if entry.name != name || entry.len != len {
            return Err(self.fail(format!(
                "expected tensor `{name}` with {len} values, found `{}` with {}",
                entry.name, entry.len
            )));
        }
        let bytes = len * 8;
        if self.values.len() < bytes {
            return Err(self.fail("payload is truncated"));
        }
        let (head, rest) = self.values.split_at(bytes);
        self.values = rest;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

/// Parses a container produced by [`encode`]. `path` is only used in error
/// messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(fail(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(fail("header is truncated".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| fail(format!("malformed header: {e}")))?;
    let mut r = Reader {
        path,
        entries: header.tensors.iter(),
        values: &body[hlen..],
    };

    // Architecture comes from the stored ModelSpec; initial values are overwritten.
    let mut scratch = SeededRng::new(0);
    let mut generator = Generator::new(&header.spec, &mut scratch)?;
    let mut discriminator = Discriminator::new(&header.spec, &mut scratch)?;

    let g_layout: Vec<(String, usize)> = named_sizes(generator.params());
    for (i, (name, len)) in g_layout.iter().enumerate() {
        let v = r.next(name, *len)?;
        generator.params_mut().set(i, v);
    }
    let bn_count = generator.batch_norms().len();
    for i in 0..bn_count {
        let c = generator.batch_norms()[i].channels;
        let mean = r.next(&format!("g.bn_running_mean.{i}"), c)?;
        let var = r.next(&format!("g.bn_running_var.{i}"), c)?;
        let mut bns = generator.batch_norms_mut();
        bns[i].running_mean = mean;
        bns[i].running_var = var;
    }
    let d_layout = named_sizes(discriminator.params());
    for (i, (name, len)) in d_layout.iter().enumerate() {
        let v = r.next(name, *len)?;
        discriminator.params_mut().set(i, v);
    }
    let shapes: Vec<(usize, usize, bool)> = discriminator
        .weights()
        .iter()
        .map(|w| (w.rows, w.cols, w.spectral.is_some()))
        .collect();
    if shapes.iter().map(|s| s.2).collect::<Vec<_>>() != header.spectral_layout {
        return Err(fail("spectral-norm layout does not match the model spec".into()));
    }
    let mut states = Vec::with_capacity(shapes.len());
    for (i, &(rows, cols, has)) in shapes.iter().enumerate() {
        states.push(if has {
            let u = r.next(&format!("d.sn_u.{i}"), rows)?;
            let v = r.next(&format!("d.sn_v.{i}"), cols)?;
            Some(PowerIterationState { u, v })
        } else {
            None
        });
    }
    discriminator.set_spectral_states(states)?;

    let mut read_adam = |prefix: &str, layout: &[(String, usize)], hyper: AdamHyper, step: u64| -> Result<Adam> {
        let mut moments = Vec::with_capacity(layout.len());
        for (i, (_, len)) in layout.iter().enumerate() {
            let m = r.next(&format!("{prefix}.adam_m.{i}"), *len)?;
            let v = r.next(&format!("{prefix}.adam_v.{i}"), *len)?;
            moments.push(Moments { m, v });
        }
        Ok(Adam { hyper, step, moments })
    };
    let g_opt = read_adam("g", &g_layout, header.g_adam, header.g_adam_step)?;
    let d_opt = read_adam("d", &d_layout, header.d_adam, header.d_adam_step)?;
    if r.entries.next().is_some() || !r.values.is_empty() {
        return Err(fail("trailing data after the last tensor".into()));
    }

    Ok(Checkpoint {
        state: TrainState {
            generator,
            discriminator,
            g_opt,
            d_opt,
            iteration: header.iteration,
            d_iterations: header.d_iterations,
            rng: SeededRng::from_state(&header.rng),
            sampler: header.sampler,
        },
        config: header.config,
    })
}

fn named_sizes(ps: &crate::nn::ParamStore) -> Vec<(String, usize)> {
    ps.names()
        .iter()
        .cloned()
        .zip(ps.tensors().iter().map(|t| t.numel()))
        .collect()
}

/// Writes atomically: the bytes go to a sibling temporary file that is then
/// renamed over `path`.
pub fn save_checkpoint(path: &Path, state: &TrainState, config: &serde_json::Value) -> Result<()> {
    let bytes = encode(state, config)?;
    let tmp: PathBuf = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode(&bytes, path)
}

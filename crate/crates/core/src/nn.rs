//! Parameter storage and the layer building blocks used by the generator
//! and discriminator architectures.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::tensor::{ConvGeometry, Tensor};

/// Standard deviation of the normal initializer for weights.
pub const INIT_STD: f64 = 0.02;

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable leaf tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> ParamId {
        self.names.push(name.into());
        self.values.push(Tensor::param(data, shape));
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces the value of parameter `index`, keeping its shape.
    pub fn set(&mut self, index: usize, data: Vec<f64>) {
        let shape = self.values[index].shape().to_vec();
        self.values[index] = Tensor::param(data, &shape);
    }

    /// All parameter values flattened in registration order.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

pub(crate) fn normal_init(rng: &mut SeededRng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Persistent power-iteration vectors for one spectrally normalized weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Lower bound on the singular value estimate.
pub const SIGMA_FLOOR: f64 = 1e-12;

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(SIGMA_FLOOR);
    v.iter_mut().for_each(|x| *x /= norm);
}

impl PowerIterationState {
    /// Random unit `u`; `v` is zero until the first [`step`](Self::step).
    pub fn new(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        normalize(&mut u);
        Self {
            u,
            v: vec![0.0; cols],
        }
    }

    /// One power-iteration step on the `[rows, cols]` matrix `w`:
    /// `v <- normalize(W^T u)`, `u <- normalize(W v)`.
    pub fn step(&mut self, w: &[f64], rows: usize, cols: usize) {
        assert_eq!(w.len(), rows * cols);
        assert_eq!(self.u.len(), rows);
        let mut v = vec![0.0; cols];
        for (r, &ur) in self.u.iter().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            for (vc, &wc) in v.iter_mut().zip(row) {
                *vc += wc * ur;
            }
        }
        normalize(&mut v);
        let mut u: Vec<f64> = (0..rows)
            .map(|r| w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        normalize(&mut u);
        self.u = u;
        self.v = v;
    }

    /// Current estimate `u^T W v` of the top singular value.
    pub fn sigma(&self, w: &[f64], rows: usize, cols: usize) -> f64 {
        (0..rows)
            .map(|r| {
                let wv: f64 = w[r * cols..(r + 1) * cols].iter().zip(&self.v).map(|(a, b)| a * b).sum();
                self.u[r] * wv
            })
            .sum()
    }
}

/// `weight / sigma` with `sigma = u^T W v` computed on the graph, so the
/// gradient flows through the normalization. `weight` is `[rows, cols]`.
pub fn spectral_normalized(weight: &Tensor, state: &PowerIterationState) -> Tensor {
    let rows = weight.dim(0);
    let cols = weight.dim(1);
    let u = Tensor::new(state.u.clone(), &[1, rows]);
    let v = Tensor::new(state.v.clone(), &[cols, 1]);
    let sigma = u.matmul(weight).matmul(&v).reshape(&[]);
    if sigma.item().abs() < SIGMA_FLOOR {
        return weight.scale(1.0 / SIGMA_FLOOR);
    }
    weight.div(&sigma)
}

/// Advances the power iteration once, then normalizes `weight` with the
/// updated vectors.
pub fn spectral_normalize(weight: &Tensor, state: &PowerIterationState) -> (Tensor, PowerIterationState) {
    let mut next = state.clone();
    next.step(weight.data(), weight.dim(0), weight.dim(1));
    (spectral_normalized(weight, &next), next)
}

/// A weight matrix, optionally spectrally normalized.
#[derive(Debug, Clone)]
pub struct Weight {
    pub id: ParamId,
    pub rows: usize,
    pub cols: usize,
    pub spectral: Option<PowerIterationState>,
}

impl Weight {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        rows: usize,
        cols: usize,
        spectral: bool,
        rng: &mut SeededRng,
    ) -> Self {
        let id = ps.add(name, normal_init(rng, rows * cols, INIT_STD), &[rows, cols]);
        let spectral = spectral.then(|| {
            let mut st = PowerIterationState::new(rows, cols, rng);
            st.step(ps.get(id).data(), rows, cols);
            st
        });
        Self { id, rows, cols, spectral }
    }

    pub fn effective(&self, ps: &ParamStore) -> Tensor {
        let w = ps.get(self.id);
        match &self.spectral {
            Some(st) => spectral_normalized(w, st),
            None => w.clone(),
        }
    }

    pub fn power_iterate(&mut self, ps: &ParamStore) {
        if let Some(st) = &mut self.spectral {
            st.step(ps.get(self.id).data(), self.rows, self.cols);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Weight,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, inp: usize, out: usize, spectral: bool, rng: &mut SeededRng) -> Self {
        let weight = Weight::new(ps, &format!("{name}.weight"), out, inp, spectral, rng);
        let bias = ps.add(format!("{name}.bias"), vec![0.0; out], &[1, out]);
        Self { weight, bias }
    }

    /// `[N, in] -> [N, out]`
    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let w = self.weight.effective(ps);
        x.matmul_t(&w, false, true).add(ps.get(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Weight,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        spectral: bool,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = Weight::new(ps, &format!("{name}.weight"), out_ch, in_ch * kernel * kernel, spectral, rng);
        let bias = ps.add(format!("{name}.bias"), vec![0.0; out_ch], &[1, out_ch, 1, 1]);
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape4();
        assert_eq!(c, self.in_ch, "conv input channels");
        let geom = ConvGeometry {
            batch: n,
            channels: c,
            height: h,
            width: w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        };
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let wt = self.weight.effective(ps);
        x.im2col(geom)
            .matmul_t(&wt, false, true)
            .reshape(&[n, oh, ow, self.out_ch])
            .permute(&[0, 3, 1, 2])
            .add(ps.get(self.bias))
    }
}

/// Transposed convolution (fractionally strided), the adjoint of [`Conv2d`]
/// with the same geometry.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let k2 = kernel * kernel;
        let weight = ps.add(
            format!("{name}.weight"),
            normal_init(rng, in_ch * out_ch * k2, INIT_STD),
            &[in_ch, out_ch * k2],
        );
        let bias = ps.add(format!("{name}.bias"), vec![0.0; out_ch], &[1, out_ch, 1, 1]);
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size - 1) * self.stride + self.kernel - 2 * self.pad
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape4();
        assert_eq!(c, self.in_ch, "conv-transpose input channels");
        let geom = ConvGeometry {
            batch: n,
            channels: self.out_ch,
            height: self.out_size(h),
            width: self.out_size(w),
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        };
        debug_assert_eq!(geom.out_height(), h);
        x.permute(&[0, 2, 3, 1])
            .reshape(&[n * h * w, c])
            .matmul(ps.get(self.weight))
            .col2im(geom)
            .add(ps.get(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalization over `(N, H, W)` per channel with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), vec![1.0; channels], &[1, channels, 1, 1]);
        let beta = ps.add(format!("{name}.beta"), vec![0.0; channels], &[1, channels, 1, 1]);
        Self {
            gamma,
            beta,
            channels,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Batch statistics in train mode (updating the running estimates when
    /// `track` is set), running statistics in eval mode.
    pub fn forward(&mut self, ps: &ParamStore, x: &Tensor, mode: Mode, track: bool) -> Tensor {
        let [n, c, h, w] = x.shape4();
        assert_eq!(c, self.channels);
        let stat_shape = [1, c, 1, 1];
        let normalized = match mode {
            Mode::Train => {
                let count = (n * h * w) as f64;
                let mean = x.sum_to(&stat_shape).scale(1.0 / count);
                let centered = x.sub(&mean);
                let var = centered.square().sum_to(&stat_shape).scale(1.0 / count);
                if track {
                    let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                    for ch in 0..c {
                        let m = self.momentum;
                        self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * mean.data()[ch];
                        self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * var.data()[ch] * unbias;
                    }
                }
                centered.div(&var.add_scalar(self.eps).sqrt())
            }
            Mode::Eval => {
                let mean = Tensor::new(self.running_mean.clone(), &stat_shape);
                let inv_std: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                x.sub(&mean).mul(&Tensor::new(inv_std, &stat_shape))
            }
        };
        normalized.mul(ps.get(self.gamma)).add(ps.get(self.beta))
    }
}

/// Per-sample normalization over `(C, H, W)` with a per-channel affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), vec![1.0; channels], &[1, channels, 1, 1]);
        let beta = ps.add(format!("{name}.beta"), vec![0.0; channels], &[1, channels, 1, 1]);
        Self {
            gamma,
            beta,
            channels,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape4();
        assert_eq!(c, self.channels);
        let count = (c * h * w) as f64;
        let stat_shape = [n, 1, 1, 1];
        let mean = x.sum_to(&stat_shape).scale(1.0 / count);
        let centered = x.sub(&mean);
        let var = centered.square().sum_to(&stat_shape).scale(1.0 / count);
        centered
            .div(&var.add_scalar(self.eps).sqrt())
            .mul(ps.get(self.gamma))
            .add(ps.get(self.beta))
    }
}

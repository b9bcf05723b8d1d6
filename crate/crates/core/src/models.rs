//! DCGAN-style and ResNet-style generator/discriminator pairs.
//!
//! Layer layout, scaled by `base_channels = c` with `n = log2(resolution / 4)`
//! up/down-sampling stages:
//!
//! * DCGAN generator: linear `z -> c*2^(n-1) x 4 x 4`, then `n` transposed
//!   4x4 stride-2 convolutions halving channels (last one to RGB); batch norm
//!   and ReLU between, `tanh` output.
//! * DCGAN discriminator: `n` 4x4 stride-2 convolutions doubling channels
//!   from `c`, leaky ReLU(0.2), optional layer norm after all but the first,
//!   then a per-location linear head over the final 4x4 map.
//! * ResNet generator: the same linear stem, `n` up-sampling residual blocks
//!   (BN-ReLU-up-conv3-BN-ReLU-conv3, 1x1 shortcut), BN-ReLU-conv3-tanh.
//! * ResNet discriminator: an input block plus `n - 1` down-sampling residual
//!   blocks (norm-ReLU-conv3-norm-ReLU-conv3-avgpool, 1x1 shortcut), ReLU,
//!   and a per-location head averaged over the 4x4 map.
//!
//! The discriminator head is applied per spatial location before reduction,
//! which gives the spatial score tap used for heatmaps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    normal_init, BatchNorm2d, Conv2d, ConvTranspose2d, LayerNorm, Linear, Mode, ParamId, ParamStore,
    PowerIterationState, Weight, INIT_STD,
};
use crate::rng::SeededRng;
use crate::tensor::{no_grad, Tensor};

pub const IMAGE_CHANNELS: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Dcgan,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorNorm {
    Spectral,
    Layer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorNorm {
    #[default]
    Batch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub resolution: usize,
    pub z_dim: usize,
    pub base_channels: usize,
    pub d_norm: Vec<DiscriminatorNorm>,
    #[serde(default)]
    pub g_norm: GeneratorNorm,
}

impl ModelSpec {
    pub const RESOLUTIONS: [usize; 3] = [32, 64, 128];

    pub fn validate(&self) -> Result<()> {
        if !Self::RESOLUTIONS.contains(&self.resolution) {
            return Err(Error::Spec(format!(
                "resolution {} not supported (expected one of {:?})",
                self.resolution,
                Self::RESOLUTIONS
            )));
        }
        if self.z_dim == 0 || self.base_channels == 0 {
            return Err(Error::Spec("z_dim and base_channels must be positive".into()));
        }
        Ok(())
    }

    pub fn has_norm(&self, norm: DiscriminatorNorm) -> bool {
        self.d_norm.contains(&norm)
    }

    /// Number of 2x resampling stages between 4x4 and the output resolution.
    pub fn stages(&self) -> usize {
        (self.resolution / 4).trailing_zeros() as usize
    }

    fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }
}

#[derive(Debug, Clone)]
struct UpBlock {
    bn1: BatchNorm2d,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    conv2: Conv2d,
    shortcut: Conv2d,
}

#[derive(Debug, Clone)]
enum GeneratorBody {
    Dcgan {
        stem_bn: BatchNorm2d,
        ups: Vec<ConvTranspose2d>,
        bns: Vec<BatchNorm2d>,
    },
    Resnet {
        blocks: Vec<UpBlock>,
        out_bn: BatchNorm2d,
        out_conv: Conv2d,
    },
}

/// Maps latent vectors to images in `[-1, 1]^{3 x R x R}`.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: ModelSpec,
    params: ParamStore,
    stem: Linear,
    stem_channels: usize,
    body: GeneratorBody,
}

impl Generator {
    pub fn new(spec: &ModelSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let n = spec.stages();
        let top = spec.stage_channels(n - 1);
        let mut ps = ParamStore::new();
        let stem = Linear::new(&mut ps, "g.stem", spec.z_dim, top * 16, false, rng);
        let body = match spec.family {
            Family::Dcgan => {
                let stem_bn = BatchNorm2d::new(&mut ps, "g.stem_bn", top);
                let mut ups = Vec::new();
                let mut bns = Vec::new();
                for i in 0..n {
                    let cin = spec.stage_channels(n - 1 - i);
                    let last = i == n - 1;
                    let cout = if last { IMAGE_CHANNELS } else { cin / 2 };
                    ups.push(ConvTranspose2d::new(&mut ps, &format!("g.up{i}"), cin, cout, 4, 2, 1, rng));
                    if !last {
                        bns.push(BatchNorm2d::new(&mut ps, &format!("g.bn{i}"), cout));
                    }
                }
                GeneratorBody::Dcgan { stem_bn, ups, bns }
            }
            Family::Resnet => {
                let mut blocks = Vec::new();
                for i in 0..n {
                    let cin = spec.stage_channels(n - 1 - i);
                    let cout = if i == n - 1 { spec.base_channels } else { cin / 2 };
                    let name = format!("g.block{i}");
                    blocks.push(UpBlock {
                        bn1: BatchNorm2d::new(&mut ps, &format!("{name}.bn1"), cin),
                        conv1: Conv2d::new(&mut ps, &format!("{name}.conv1"), cin, cout, 3, 1, 1, false, rng),
                        bn2: BatchNorm2d::new(&mut ps, &format!("{name}.bn2"), cout),
                        conv2: Conv2d::new(&mut ps, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng),
                        shortcut: Conv2d::new(&mut ps, &format!("{name}.shortcut"), cin, cout, 1, 1, 0, false, rng),
                    });
                }
                GeneratorBody::Resnet {
                    blocks,
                    out_bn: BatchNorm2d::new(&mut ps, "g.out_bn", spec.base_channels),
                    out_conv: Conv2d::new(&mut ps, "g.out", spec.base_channels, IMAGE_CHANNELS, 3, 1, 1, false, rng),
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            params: ps,
            stem,
            stem_channels: top,
            body,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `z: [N, z_dim] -> [N, 3, R, R]`. Train mode normalizes with batch
    /// statistics and updates the running estimates.
    pub fn forward(&mut self, z: &Tensor, mode: Mode) -> Tensor {
        self.run(z, mode, mode == Mode::Train)
    }

    fn run(&mut self, z: &Tensor, mode: Mode, track: bool) -> Tensor {
        let n = z.dim(0);
        assert_eq!(z.dim(1), self.spec.z_dim, "latent dimension");
        let ps = &self.params;
        let h = self.stem.forward(ps, z).reshape(&[n, self.stem_channels, 4, 4]);
        match &mut self.body {
            GeneratorBody::Dcgan { stem_bn, ups, bns } => {
                let mut h = stem_bn.forward(ps, &h, mode, track).relu();
                for (i, up) in ups.iter().enumerate() {
                    h = up.forward(ps, &h);
                    if let Some(bn) = bns.get_mut(i) {
                        h = bn.forward(ps, &h, mode, track).relu();
                    }
                }
                h.tanh()
            }
            GeneratorBody::Resnet {
                blocks,
                out_bn,
                out_conv,
            } => {
                let mut h = h;
                for b in blocks.iter_mut() {
                    let main = b.bn1.forward(ps, &h, mode, track).relu().upsample2();
                    let main = b.conv1.forward(ps, &main);
                    let main = b.bn2.forward(ps, &main, mode, track).relu();
                    let main = b.conv2.forward(ps, &main);
                    let skip = b.shortcut.forward(ps, &h.upsample2());
                    h = main.add(&skip);
                }
                let h = out_bn.forward(ps, &h, mode, track).relu();
                out_conv.forward(ps, &h).tanh()
            }
        }
    }

    /// Generates a batch without recording gradients. Running statistics are
    /// left untouched even in train mode, so sampling never changes the
    /// generator's state.
    pub fn sample(&mut self, z: &Tensor, mode: Mode) -> Tensor {
        no_grad(|| self.run(z, mode, false))
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        match &self.body {
            GeneratorBody::Dcgan { stem_bn, bns, .. } => std::iter::once(stem_bn).chain(bns.iter()).collect(),
            GeneratorBody::Resnet { blocks, out_bn, .. } => blocks
                .iter()
                .flat_map(|b| [&b.bn1, &b.bn2])
                .chain(std::iter::once(out_bn))
                .collect(),
        }
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        match &mut self.body {
            GeneratorBody::Dcgan { stem_bn, bns, .. } => std::iter::once(stem_bn).chain(bns.iter_mut()).collect(),
            GeneratorBody::Resnet { blocks, out_bn, .. } => blocks
                .iter_mut()
                .flat_map(|b| [&mut b.bn1, &mut b.bn2])
                .chain(std::iter::once(out_bn))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct DownBlock {
    norm1: Option<LayerNorm>,
    conv1: Conv2d,
    norm2: Option<LayerNorm>,
    conv2: Conv2d,
    shortcut: Conv2d,
    /// the input block skips the leading activation
    first: bool,
}

#[derive(Debug, Clone)]
enum DiscriminatorBody {
    Dcgan {
        convs: Vec<Conv2d>,
        norms: Vec<Option<LayerNorm>>,
    },
    Resnet {
        blocks: Vec<DownBlock>,
    },
}

/// Per-location linear head over a `[N, C, 4, 4]` feature map.
#[derive(Debug, Clone)]
struct Head {
    weight: Weight,
    bias: ParamId,
    channels: usize,
    /// DCGAN: one weight per (channel, location). ResNet: shared over locations.
    per_location: bool,
}

/// Scores images; larger means more real.
#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: ModelSpec,
    params: ParamStore,
    body: DiscriminatorBody,
    head: Head,
}

/// A scalar-valued differentiable function of an image batch.
pub trait Critic {
    /// `[N, C, H, W] -> [N]`
    fn score(&self, x: &Tensor) -> Tensor;
}

impl Discriminator {
    pub fn new(spec: &ModelSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        if spec.d_norm.is_empty() {
            log::debug!("discriminator built without normalization");
        }
        let n = spec.stages();
        let sn = spec.has_norm(DiscriminatorNorm::Spectral);
        let ln = spec.has_norm(DiscriminatorNorm::Layer);
        let mut ps = ParamStore::new();
        let mut res = spec.resolution;
        let body = match spec.family {
            Family::Dcgan => {
                let mut convs = Vec::new();
                let mut norms = Vec::new();
                for i in 0..n {
                    let cin = if i == 0 { IMAGE_CHANNELS } else { spec.stage_channels(i - 1) };
                    let cout = spec.stage_channels(i);
                    convs.push(Conv2d::new(&mut ps, &format!("d.conv{i}"), cin, cout, 4, 2, 1, sn, rng));
                    res /= 2;
                    norms.push((ln && i > 0).then(|| LayerNorm::new(&mut ps, &format!("d.ln{i}"), cout)));
                }
                DiscriminatorBody::Dcgan { convs, norms }
            }
            Family::Resnet => {
                let mut blocks = Vec::new();
                for i in 0..n {
                    let first = i == 0;
                    let cin = if first { IMAGE_CHANNELS } else { spec.stage_channels(i - 1) };
                    let cout = spec.stage_channels(i);
                    let name = format!("d.block{i}");
                    let norm = |ps: &mut ParamStore, tag: &str, ch: usize| {
                        (ln && !first).then(|| LayerNorm::new(ps, &format!("{name}.{tag}"), ch))
                    };
                    let norm1 = norm(&mut ps, "ln1", cin);
                    let conv1 = Conv2d::new(&mut ps, &format!("{name}.conv1"), cin, cout, 3, 1, 1, sn, rng);
                    let norm2 = norm(&mut ps, "ln2", cout);
                    let conv2 = Conv2d::new(&mut ps, &format!("{name}.conv2"), cout, cout, 3, 1, 1, sn, rng);
                    let shortcut = Conv2d::new(&mut ps, &format!("{name}.shortcut"), cin, cout, 1, 1, 0, sn, rng);
                    blocks.push(DownBlock {
                        norm1,
                        conv1,
                        norm2,
                        conv2,
                        shortcut,
                        first,
                    });
                    res /= 2;
                }
                DiscriminatorBody::Resnet { blocks }
            }
        };
        debug_assert_eq!(res, 4);
        let channels = spec.stage_channels(n - 1);
        let per_location = spec.family == Family::Dcgan;
        let cols = if per_location { channels * 16 } else { channels };
        let weight_id = ps.add("d.head.weight", normal_init(rng, cols, INIT_STD), &[1, cols]);
        let spectral = sn.then(|| {
            let mut st = PowerIterationState::new(1, cols, rng);
            st.step(ps.get(weight_id).data(), 1, cols);
            st
        });
        let bias = ps.add("d.head.bias", vec![0.0], &[1, 1]);
        let head = Head {
            weight: Weight {
                id: weight_id,
                rows: 1,
                cols,
                spectral,
            },
            bias,
            channels,
            per_location,
        };
        Ok(Self {
            spec: spec.clone(),
            params: ps,
            body,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn features(&self, x: &Tensor) -> Tensor {
        let ps = &self.params;
        match &self.body {
            DiscriminatorBody::Dcgan { convs, norms } => {
                let mut h = x.clone();
                for (conv, norm) in convs.iter().zip(norms) {
                    h = conv.forward(ps, &h);
                    if let Some(ln) = norm {
                        h = ln.forward(ps, &h);
                    }
                    h = h.leaky_relu(LEAKY_SLOPE);
                }
                h
            }
            DiscriminatorBody::Resnet { blocks } => {
                let mut h = x.clone();
                for b in blocks {
                    let mut main = h.clone();
                    if !b.first {
                        if let Some(ln) = &b.norm1 {
                            main = ln.forward(ps, &main);
                        }
                        main = main.relu();
                    }
                    main = b.conv1.forward(ps, &main);
                    if let Some(ln) = &b.norm2 {
                        main = ln.forward(ps, &main);
                    }
                    main = b.conv2.forward(ps, &main.relu()).avg_pool2();
                    let skip = b.shortcut.forward(ps, &h).avg_pool2();
                    h = main.add(&skip);
                }
                h.relu()
            }
        }
    }

    /// Scores `[N]` together with the spatial tap `[N, 4, 4]`: the head's
    /// contribution at each location of the final feature map.
    pub fn forward_with_tap(&self, x: &Tensor) -> (Tensor, Tensor) {
        assert_eq!(x.dim(1), IMAGE_CHANNELS);
        let f = self.features(x);
        let [n, c, h, w] = f.shape4();
        debug_assert_eq!(c, self.head.channels);
        let weight = self.head.weight.effective(&self.params);
        let bias = self.params.get(self.head.bias);
        let locations = h * w;
        let tap = if self.head.per_location {
            f.mul(&weight.reshape(&[1, c, h, w])).sum_to(&[n, 1, h, w])
        } else {
            f.mul(&weight.reshape(&[1, c, 1, 1])).sum_to(&[n, 1, h, w])
        };
        let tap = tap.reshape(&[n, h, w]);
        let pooled = tap.reshape(&[n, locations]).sum_to(&[n, 1]);
        let pooled = if self.head.per_location {
            pooled
        } else {
            pooled.scale(1.0 / locations as f64)
        };
        let scores = pooled.add(bias).reshape(&[n]);
        // spread the bias evenly so the tap reduces to the score
        let share = if self.head.per_location {
            bias.scale(1.0 / locations as f64)
        } else {
            bias.clone()
        };
        let tap = tap.add(&share.reshape(&[1, 1, 1]));
        (scores, tap)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.forward_with_tap(x).0
    }

    /// Advances every spectral-norm power iteration by one step.
    pub fn power_iterate(&mut self) {
        let ps = &self.params;
        for w in Self::body_weights_mut(&mut self.body, &mut self.head) {
            w.power_iterate(ps);
        }
    }

    fn weights_mut_inner(&mut self) -> Vec<&mut Weight> {
        Self::body_weights_mut(&mut self.body, &mut self.head)
    }

    fn body_weights_mut<'a>(body: &'a mut DiscriminatorBody, head: &'a mut Head) -> Vec<&'a mut Weight> {
        let mut out: Vec<&mut Weight> = Vec::new();
        match body {
            DiscriminatorBody::Dcgan { convs, .. } => out.extend(convs.iter_mut().map(|c| &mut c.weight)),
            DiscriminatorBody::Resnet { blocks } => {
                for b in blocks.iter_mut() {
                    out.push(&mut b.conv1.weight);
                    out.push(&mut b.conv2.weight);
                    out.push(&mut b.shortcut.weight);
                }
            }
        }
        out.push(&mut head.weight);
        out
    }

    /// All weight matrices in registration order (spectral state included).
    pub fn weights(&self) -> Vec<&Weight> {
        let mut out: Vec<&Weight> = Vec::new();
        match &self.body {
            DiscriminatorBody::Dcgan { convs, .. } => out.extend(convs.iter().map(|c| &c.weight)),
            DiscriminatorBody::Resnet { blocks } => {
                for b in blocks {
                    out.extend([&b.conv1.weight, &b.conv2.weight, &b.shortcut.weight]);
                }
            }
        }
        out.push(&self.head.weight);
        out
    }

    pub fn spectral_states(&self) -> Vec<Option<PowerIterationState>> {
        self.weights().iter().map(|w| w.spectral.clone()).collect()
    }

    pub fn set_spectral_states(&mut self, states: Vec<Option<PowerIterationState>>) -> Result<()> {
        let mut weights = self.weights_mut_inner();
        if weights.len() != states.len() {
            return Err(Error::Shape(format!(
                "expected {} spectral states, got {}",
                weights.len(),
                states.len()
            )));
        }
        for (w, s) in weights.iter_mut().zip(states) {
            if w.spectral.is_some() != s.is_some() {
                return Err(Error::Shape("spectral-norm layout mismatch".into()));
            }
            w.spectral = s;
        }
        Ok(())
    }

    /// The effective (possibly normalized) weight matrices as used in a
    /// forward pass.
    pub fn effective_weights(&self) -> Vec<Tensor> {
        self.weights().iter().map(|w| w.effective(&self.params)).collect()
    }
}

impl Critic for Discriminator {
    fn score(&self, x: &Tensor) -> Tensor {
        self.forward(x)
    }
}

/// Average-pools a `[h, w]` map down to `[grid, grid]`; `h` and `w` must be
/// multiples of `grid`.
pub fn pool_to_grid(map: &[f64], h: usize, w: usize, grid: usize) -> Result<Vec<f64>> {
    if map.len() != h * w || h % grid != 0 || w % grid != 0 || h == 0 {
        return Err(Error::Shape(format!(
            "cannot pool a {h}x{w} map ({} values) to {grid}x{grid}",
            map.len()
        )));
    }
    let (bh, bw) = (h / grid, w / grid);
    let mut out = vec![0.0; grid * grid];
    for y in 0..h {
        for x in 0..w {
            out[(y / bh) * grid + x / bw] += map[y * w + x];
        }
    }
    let area = (bh * bw) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}

/// 4x4 map of the discriminator's spatial tap for one `[3, R, R]` image.
pub fn spatial_score_map(d: &Discriminator, image: &[f64]) -> Result<Vec<f64>> {
    let r = d.spec().resolution;
    if image.len() != IMAGE_CHANNELS * r * r {
        return Err(Error::Shape(format!(
            "image has {} values, discriminator expects 3x{r}x{r}",
            image.len()
        )));
    }
    let x = Tensor::new(image.to_vec(), &[1, IMAGE_CHANNELS, r, r]);
    let tap = no_grad(|| d.forward_with_tap(&x).1);
    let [h, w] = [tap.dim(1), tap.dim(2)];
    pool_to_grid(tap.data(), h, w, 4)
}

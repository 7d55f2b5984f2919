//! Mini-I3D: a small inflated-3D inception feature extractor.
//!
//! The network is a list of stages (plain 3D convolutions, valid max-pools
//! and inception blocks of parallel convolutions concatenated on channels).
//! Every convolution uses same padding and is followed by ReLU. Layers are
//! the convolutions in forward order; freezing keeps all but the last
//! `trainable_last_n` of them fixed.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::Conv3dLayer;
use crate::ops::{maxpool3d, maxpool3d_backward, maxpool3d_output, maxpool3d_with_indices, output_extent, Padding};
use crate::param::Parameter;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Rgb,
    Flow,
}

impl Stream {
    pub fn channels(self) -> usize {
        match self {
            Stream::Rgb => 3,
            Stream::Flow => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Flow => "flow",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchConfig {
    pub kernel: [usize; 3],
    pub filters: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StageConfig {
    Conv {
        kernel: [usize; 3],
        filters: usize,
        strides: [usize; 3],
    },
    MaxPool {
        window: [usize; 3],
        strides: [usize; 3],
    },
    Inception {
        branches: Vec<BranchConfig>,
        strides: [usize; 3],
    },
}

fn fmt_triple(v: [usize; 3]) -> String {
    format!("{}x{}x{}", v[0], v[1], v[2])
}

fn parse_triple(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("expected AxBxC, got {s:?}")));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| Error::Config(format!("bad extent {p:?} in {s:?}")))?;
        if *o == 0 {
            return Err(Error::Config(format!("zero extent in {s:?}")));
        }
    }
    Ok(out)
}

fn parse_count(s: &str) -> Result<usize> {
    match s.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Config(format!("expected a positive count, got {s:?}"))),
    }
}

impl fmt::Display for StageConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageConfig::Conv { kernel, filters, strides } => {
                write!(f, "conv:{}:{}:{}", fmt_triple(*kernel), filters, fmt_triple(*strides))
            }
            StageConfig::MaxPool { window, strides } => {
                write!(f, "maxpool:{}:{}", fmt_triple(*window), fmt_triple(*strides))
            }
            StageConfig::Inception { branches, strides } => {
                let b: Vec<String> = branches.iter().map(|b| format!("{}/{}", fmt_triple(b.kernel), b.filters)).collect();
                write!(f, "inception:{}:{}", b.join("+"), fmt_triple(*strides))
            }
        }
    }
}

impl FromStr for StageConfig {
    type Err = Error;

    /// `conv:KtxKhxKw:F:StxShxSw`, `maxpool:WtxWhxWw:StxShxSw` or
    /// `inception:KtxKhxKw/F+KtxKhxKw/F:StxShxSw`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["conv", k, f, st] => Ok(StageConfig::Conv {
                kernel: parse_triple(k)?,
                filters: parse_count(f)?,
                strides: parse_triple(st)?,
            }),
            ["maxpool", w, st] => Ok(StageConfig::MaxPool {
                window: parse_triple(w)?,
                strides: parse_triple(st)?,
            }),
            ["inception", b, st] => {
                let branches = b
                    .split('+')
                    .map(|br| {
                        let (k, f) = br
                            .split_once('/')
                            .ok_or_else(|| Error::Config(format!("inception branch {br:?} needs kernel/filters")))?;
                        Ok(BranchConfig {
                            kernel: parse_triple(k)?,
                            filters: parse_count(f)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(StageConfig::Inception {
                    branches,
                    strides: parse_triple(st)?,
                })
            }
            _ => Err(Error::Config(format!("unrecognised stage {s:?}"))),
        }
    }
}

pub fn format_stages(stages: &[StageConfig]) -> String {
    stages.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";")
}

pub fn parse_stages(s: &str) -> Result<Vec<StageConfig>> {
    s.split(';').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub stages: Vec<StageConfig>,
    pub trainable_last_n: usize,
    pub input_channels: usize,
}

impl BackboneConfig {
    /// Default Mini-I3D: 7×7×7/64 stem at stride 2, spatial max-pool, two
    /// inception stages (96 and 128 channels) and a 3×3×3/192 head conv.
    /// A 30×224×224 window maps to 4×7×7×192.
    pub fn mini_i3d(input_channels: usize) -> Self {
        Self {
            stages: parse_stages(
                "conv:7x7x7:64:2x2x2;maxpool:1x2x2:1x2x2;\
                 inception:1x1x1/48+3x3x3/48:2x2x2;\
                 inception:1x1x1/64+3x3x3/64:2x2x2;\
                 conv:3x3x3:192:1x2x2",
            )
            .expect("built-in stage list parses"),
            trainable_last_n: 0,
            input_channels,
        }
    }

    /// The same topology at desk scale, for toy training runs on small frames.
    pub fn toy(input_channels: usize) -> Self {
        Self {
            stages: parse_stages(
                "conv:3x3x3:8:1x2x2;maxpool:1x2x2:1x2x2;\
                 inception:1x1x1/6+3x3x3/6:2x1x1;\
                 inception:1x1x1/8+3x3x3/8:2x1x1;\
                 conv:3x3x3:16:1x2x2",
            )
            .expect("built-in stage list parses"),
            trainable_last_n: 0,
            input_channels,
        }
    }

    pub fn preset(name: &str, input_channels: usize) -> Result<Self> {
        match name {
            "mini_i3d" => Ok(Self::mini_i3d(input_channels)),
            "toy" => Ok(Self::toy(input_channels)),
            other => Err(Error::Config(format!("unknown backbone preset {other:?}"))),
        }
    }

    pub fn layer_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match s {
                StageConfig::Conv { .. } => 1,
                StageConfig::MaxPool { .. } => 0,
                StageConfig::Inception { branches, .. } => branches.len(),
            })
            .sum()
    }

    pub fn output_channels(&self) -> usize {
        let mut c = self.input_channels;
        for s in &self.stages {
            match s {
                StageConfig::Conv { filters, .. } => c = *filters,
                StageConfig::MaxPool { .. } => {}
                StageConfig::Inception { branches, .. } => c = branches.iter().map(|b| b.filters).sum(),
            }
        }
        c
    }

    /// Closed-form shape propagation for a `T×H×W` input.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<Vec<usize>> {
        let mut dims = vec![input[0], input[1], input[2], self.input_channels];
        for s in &self.stages {
            dims = match s {
                StageConfig::Conv { kernel, filters, strides } => {
                    let mut d = Vec::with_capacity(4);
                    for a in 0..3 {
                        d.push(output_extent(dims[a], kernel[a], strides[a], Padding::Same)?.0);
                    }
                    d.push(*filters);
                    d
                }
                StageConfig::MaxPool { window, strides } => maxpool3d_output(&dims, *window, *strides)?,
                StageConfig::Inception { branches, strides } => {
                    let mut d = Vec::with_capacity(4);
                    for a in 0..3 {
                        d.push(dims[a].div_ceil(strides[a]));
                    }
                    d.push(branches.iter().map(|b| b.filters).sum());
                    d
                }
            };
        }
        Ok(dims)
    }

    /// Closed-form parameter count: Σ (Kt·Kh·Kw·Cin + 1)·F over convolutions.
    pub fn param_count(&self) -> usize {
        let mut c = self.input_channels;
        let mut total = 0;
        for s in &self.stages {
            match s {
                StageConfig::Conv { kernel, filters, .. } => {
                    total += (kernel.iter().product::<usize>() * c + 1) * filters;
                    c = *filters;
                }
                StageConfig::MaxPool { .. } => {}
                StageConfig::Inception { branches, .. } => {
                    for b in branches {
                        total += (b.kernel.iter().product::<usize>() * c + 1) * b.filters;
                    }
                    c = branches.iter().map(|b| b.filters).sum();
                }
            }
        }
        total
    }

    pub fn validate(&self, input: [usize; 3]) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("backbone input channels must be >= 1".into()));
        }
        if self.trainable_last_n > self.layer_count() {
            return Err(Error::Config(format!(
                "trainable_last_n={} exceeds the {} backbone layers",
                self.trainable_last_n,
                self.layer_count()
            )));
        }
        for s in &self.stages {
            if let StageConfig::Inception { branches, .. } = s {
                if branches.is_empty() {
                    return Err(Error::Config("inception stage without branches".into()));
                }
            }
        }
        self.output_dims(input)
            .map_err(|e| Error::Config(format!("stages collapse a {input:?} input: {e}")))?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Stage<S: Scalar> {
    Conv(Conv3dLayer<S>),
    MaxPool { window: [usize; 3], strides: [usize; 3] },
    Inception { branches: Vec<Conv3dLayer<S>> },
}

#[derive(Clone, Debug)]
enum StageCache<S: Scalar> {
    Conv { input: Tensor<S>, output: Tensor<S> },
    MaxPool { input_dims: Vec<usize>, indices: Vec<usize> },
    Inception { input: Tensor<S>, outputs: Vec<Tensor<S>> },
}

/// Activations saved by [`Backbone::forward_train`].
#[derive(Clone, Debug)]
pub struct BackboneCache<S: Scalar> {
    stages: Vec<StageCache<S>>,
}

/// Backbone output with the provenance of the window it came from.
#[derive(Clone, Debug)]
pub struct FeatureMap<S: Scalar = f32> {
    pub features: Tensor<S>,
    pub stream: Stream,
    pub clip_id: String,
    pub start_index: usize,
}

#[derive(Clone, Debug)]
pub struct Backbone<S: Scalar = f32> {
    pub config: BackboneConfig,
    pub input_extent: [usize; 3],
    pub stages: Vec<Stage<S>>,
}

fn relu_inplace<S: Scalar>(t: &mut Tensor<S>) {
    for v in t.data_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

fn relu_backward<S: Scalar>(output: &Tensor<S>, grad: &mut Tensor<S>) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= S::zero() {
            *g = S::zero();
        }
    }
}

impl<S: Scalar> Backbone<S> {
    /// Initialise every convolution from `seed` (He-uniform kernels, zero
    /// biases) and mark only the last `trainable_last_n` layers trainable.
    pub fn build(config: BackboneConfig, input_extent: [usize; 3], seed: u64) -> Result<Self> {
        config.validate(input_extent)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = config.input_channels;
        let mut stages = Vec::with_capacity(config.stages.len());
        for s in &config.stages {
            stages.push(match s {
                StageConfig::Conv { kernel, filters, strides } => {
                    let layer = Conv3dLayer::new(*kernel, c, *filters, *strides, Padding::Same, &mut rng)?;
                    c = *filters;
                    Stage::Conv(layer)
                }
                StageConfig::MaxPool { window, strides } => Stage::MaxPool {
                    window: *window,
                    strides: *strides,
                },
                StageConfig::Inception { branches, strides } => {
                    let layers = branches
                        .iter()
                        .map(|b| Conv3dLayer::new(b.kernel, c, b.filters, *strides, Padding::Same, &mut rng))
                        .collect::<Result<Vec<_>>>()?;
                    c = branches.iter().map(|b| b.filters).sum();
                    Stage::Inception { branches: layers }
                }
            });
        }
        let mut backbone = Self {
            config,
            input_extent,
            stages,
        };
        let n = backbone.config.trainable_last_n;
        backbone.set_trainable_last(n);
        Ok(backbone)
    }

    pub fn layers(&self) -> Vec<&Conv3dLayer<S>> {
        let mut out = Vec::new();
        for s in &self.stages {
            match s {
                Stage::Conv(l) => out.push(l),
                Stage::Inception { branches } => out.extend(branches.iter()),
                Stage::MaxPool { .. } => {}
            }
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Conv3dLayer<S>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            match s {
                Stage::Conv(l) => out.push(l),
                Stage::Inception { branches } => out.extend(branches.iter_mut()),
                Stage::MaxPool { .. } => {}
            }
        }
        out
    }

    pub fn set_trainable_last(&mut self, n: usize) {
        let mut layers = self.layers_mut();
        let total = layers.len();
        for (i, l) in layers.iter_mut().enumerate() {
            l.set_trainable(i + n >= total);
        }
        self.config.trainable_last_n = n.min(total);
    }

    /// `(name, parameter)` pairs in forward order.
    pub fn parameters(&self) -> Vec<(String, &Parameter<S>)> {
        self.layers()
            .into_iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("conv{i}.kernel"), &l.kernel), (format!("conv{i}.bias"), &l.bias)])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter<S>)> {
        self.layers_mut()
            .into_iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("conv{i}.kernel"), &mut l.kernel), (format!("conv{i}.bias"), &mut l.bias)])
            .collect()
    }

    pub fn output_dims(&self) -> Result<Vec<usize>> {
        self.config.output_dims(self.input_extent)
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        x.expect_rank(4, "backbone input (T×H×W×C)")?;
        let c = x.dims()[3];
        if c != self.config.input_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.input_channels,
                got: c,
            });
        }
        Ok(())
    }

    /// Inference forward pass; keeps no activations.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for s in &self.stages {
            cur = match s {
                Stage::Conv(l) => {
                    let mut y = l.forward(&cur)?;
                    relu_inplace(&mut y);
                    y
                }
                Stage::MaxPool { window, strides } => maxpool3d(&cur, *window, *strides)?,
                Stage::Inception { branches } => {
                    let outs = branches
                        .iter()
                        .map(|b| {
                            let mut y = b.forward(&cur)?;
                            relu_inplace(&mut y);
                            Ok(y)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Tensor::concat_last(&outs.iter().collect::<Vec<_>>())?
                }
            };
        }
        Ok(cur)
    }

    pub fn extract_features(&self, window: &Tensor<S>, stream: Stream, clip_id: &str, start_index: usize) -> Result<FeatureMap<S>> {
        Ok(FeatureMap {
            features: self.forward(window)?,
            stream,
            clip_id: clip_id.to_string(),
            start_index,
        })
    }

    /// Forward pass keeping what [`Backbone::backward`] needs.
    pub fn forward_train(&self, x: &Tensor<S>) -> Result<(Tensor<S>, BackboneCache<S>)> {
        self.check_input(x)?;
        let mut cache = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for s in &self.stages {
            match s {
                Stage::Conv(l) => {
                    let mut y = l.forward(&cur)?;
                    relu_inplace(&mut y);
                    cache.push(StageCache::Conv {
                        input: std::mem::replace(&mut cur, y.clone()),
                        output: y,
                    });
                }
                Stage::MaxPool { window, strides } => {
                    let (y, indices) = maxpool3d_with_indices(&cur, *window, *strides)?;
                    cache.push(StageCache::MaxPool {
                        input_dims: cur.dims().to_vec(),
                        indices,
                    });
                    cur = y;
                }
                Stage::Inception { branches } => {
                    let outs = branches
                        .iter()
                        .map(|b| {
                            let mut y = b.forward(&cur)?;
                            relu_inplace(&mut y);
                            Ok(y)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let y = Tensor::concat_last(&outs.iter().collect::<Vec<_>>())?;
                    cache.push(StageCache::Inception {
                        input: std::mem::replace(&mut cur, y),
                        outputs: outs,
                    });
                }
            }
        }
        Ok((cur, BackboneCache { stages: cache }))
    }

    fn stage_has_trainable(s: &Stage<S>) -> bool {
        match s {
            Stage::Conv(l) => l.kernel.trainable,
            Stage::Inception { branches } => branches.iter().any(|b| b.kernel.trainable),
            Stage::MaxPool { .. } => false,
        }
    }

    /// Backpropagate from the feature map. Gradients are only pushed as far
    /// back as the earliest trainable layer; frozen layers receive nothing.
    /// Returns the input gradient when `want_input` is set.
    pub fn backward(&mut self, cache: &BackboneCache<S>, grad_output: &Tensor<S>, want_input: bool) -> Result<Option<Tensor<S>>> {
        let first_trainable = self.stages.iter().position(Self::stage_has_trainable);
        let stop = match (want_input, first_trainable) {
            (true, _) => 0,
            (false, Some(i)) => i,
            (false, None) => return Ok(None),
        };
        let mut grad = grad_output.clone();
        for idx in (stop..self.stages.len()).rev() {
            let need_input = idx > stop || want_input;
            let stage_cache = &cache.stages[idx];
            grad = match (&mut self.stages[idx], stage_cache) {
                (Stage::Conv(l), StageCache::Conv { input, output }) => {
                    relu_backward(output, &mut grad);
                    match l.backward(input, &grad, need_input)? {
                        Some(g) => g,
                        None => break,
                    }
                }
                (Stage::MaxPool { .. }, StageCache::MaxPool { input_dims, indices }) => maxpool3d_backward(input_dims, indices, &grad)?,
                (Stage::Inception { branches }, StageCache::Inception { input, outputs }) => {
                    let widths: Vec<usize> = branches.iter().map(|b| b.filters()).collect();
                    let parts = grad.split_last(&widths)?;
                    let mut acc: Option<Tensor<S>> = None;
                    for ((b, mut g), out) in branches.iter_mut().zip(parts).zip(outputs) {
                        relu_backward(out, &mut g);
                        if let Some(gi) = b.backward(input, &g, need_input)? {
                            match acc.as_mut() {
                                Some(a) => a.add_assign(&gi)?,
                                None => acc = Some(gi),
                            }
                        }
                    }
                    match acc {
                        Some(g) => g,
                        None => break,
                    }
                }
                _ => return Err(Error::shape("backbone cache does not match stages")),
            };
        }
        Ok(if want_input { Some(grad) } else { None })
    }

    pub fn param_count(&self) -> (usize, usize) {
        let layers = self.layers();
        let total = layers.iter().map(|l| l.param_count()).sum();
        let trainable = layers
            .iter()
            .map(|l| (if l.kernel.trainable { l.kernel.len() } else { 0 }) + if l.bias.trainable { l.bias.len() } else { 0 })
            .sum();
        (total, trainable)
    }

    pub fn cast<T: Scalar>(&self) -> Backbone<T> {
        Backbone {
            config: self.config.clone(),
            input_extent: self.input_extent,
            stages: self
                .stages
                .iter()
                .map(|s| match s {
                    Stage::Conv(l) => Stage::Conv(l.cast()),
                    Stage::MaxPool { window, strides } => Stage::MaxPool {
                        window: *window,
                        strides: *strides,
                    },
                    Stage::Inception { branches } => Stage::Inception {
                        branches: branches.iter().map(|b| b.cast()).collect(),
                    },
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_strings_round_trip() {
        let cfg = BackboneConfig::mini_i3d(3);
        let s = format_stages(&cfg.stages);
        assert_eq!(parse_stages(&s).unwrap(), cfg.stages);
        assert!(parse_stages("conv:3x3:8:1x1x1").is_err());
        assert!(parse_stages("pool:1x1x1:1x1x1").is_err());
    }

    #[test]
    fn default_shape_propagation() {
        let cfg = BackboneConfig::mini_i3d(3);
        assert_eq!(cfg.output_dims([30, 224, 224]).unwrap(), vec![4, 7, 7, 192]);
        assert_eq!(cfg.layer_count(), 6);
        let toy = BackboneConfig::toy(2);
        assert_eq!(toy.output_dims([8, 32, 32]).unwrap(), vec![2, 4, 4, 16]);
    }

    #[test]
    fn freezing_marks_only_last_layers() {
        let mut cfg = BackboneConfig::toy(3);
        cfg.trainable_last_n = 2;
        let b = Backbone::<f32>::build(cfg, [8, 32, 32], 0).unwrap();
        let flags: Vec<bool> = b.layers().iter().map(|l| l.kernel.trainable).collect();
        assert_eq!(flags, vec![false, false, false, false, true, true]);
        let mut cfg = BackboneConfig::toy(3);
        cfg.trainable_last_n = 7;
        assert!(Backbone::<f32>::build(cfg, [8, 32, 32], 0).is_err());
    }

    #[test]
    fn pool_window_too_large_is_rejected() {
        let cfg = BackboneConfig {
            stages: parse_stages("maxpool:2x2x2:1x1x1").unwrap(),
            trainable_last_n: 0,
            input_channels: 1,
        };
        assert!(Backbone::<f32>::build(cfg, [1, 4, 4], 0).is_err());
    }
}

//! Forward-only landmark-to-boundary propagation and attention module.
//!
//! Data flow for one sample:
//!
//! 1. each boundary owns a stack of 7×7 convolutions that turns the heatmaps
//!    of its landmarks into a single boundary heatmap;
//! 2. the boundary heatmaps are concatenated with the incoming features and
//!    passed through a two-level hourglass of multi-view blocks, projected to
//!    one channel and squashed by a logistic;
//! 3. the resulting attention map modulates every feature channel.
//!
//! There are no normalisation layers. Every convolution accumulates in a
//! fixed order (output channel, input channel, kernel row, kernel column,
//! pixel), so outputs are bit-reproducible for fixed weights.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::BoundaryScheme;
use crate::error::{Error, Result};
use crate::shift::{blur_downsample, BlurKernel};
use crate::tensor::{self, FeatureMap, HeatmapStack, Stack};

/// Stride-1 convolution with zero "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`, rounded to `f32` so that weights survive
    /// the on-disk container unchanged.
    pub fn random(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel);
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        for w in conv.weight.iter_mut().chain(conv.bias.iter_mut()) {
            *w = rng.gen_range(-bound..bound) as f32 as f64;
        }
        conv
    }

    pub fn weight_index(&self, out: usize, inp: usize, ky: usize, kx: usize) -> usize {
        ((out * self.in_channels + inp) * self.kernel + ky) * self.kernel + kx
    }

    /// Sets a centred unit tap from `inp` to `out`.
    pub fn set_delta(&mut self, out: usize, inp: usize, gain: f64) {
        let c = self.kernel / 2;
        let i = self.weight_index(out, inp, c, c);
        self.weight[i] = gain;
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.out_channels * self.in_channels * self.kernel * self.kernel;
        if self.weight.len() != expected || self.bias.len() != self.out_channels {
            return Err(Error::config(format!(
                "conv {}->{} k{} holds {} weights and {} biases",
                self.in_channels,
                self.out_channels,
                self.kernel,
                self.weight.len(),
                self.bias.len()
            )));
        }
        if !self.weight.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::config("non-finite convolution parameter"));
        }
        Ok(())
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels() != self.in_channels {
            return Err(Error::config(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let (h, w) = input.dims();
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let mut out = Stack::zeros(self.out_channels, h, w);
        for oc in 0..self.out_channels {
            let plane = out.map_mut(oc);
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = input.map(ic);
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                    for kx in 0..k {
                        let wv = self.weight[self.weight_index(oc, ic, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        let dx = kx as isize - pad;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let dst = &mut plane[y * w + x0..y * w + x1];
                            let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                            for (d, &v) in dst.iter_mut().zip(s) {
                                *d += wv * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn relu(f: FeatureMap) -> FeatureMap {
    f.map_values(|v| v.max(0.0))
}

/// Logistic squashing kept strictly inside `(0, 1)`.
pub fn logistic(v: f64) -> f64 {
    let s = 1.0 / (1.0 + (-v).exp());
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Nearest-neighbour ×2 upsampling cropped to `(height, width)`.
pub fn upsample_nearest(f: &FeatureMap, height: usize, width: usize) -> FeatureMap {
    Stack::from_fn(f.channels(), height, width, |c, y, x| f.get(c, (y / 2).min(f.height() - 1), (x / 2).min(f.width() - 1)))
}

fn add_in_place(a: &mut FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!("cannot add {:?} and {:?}", a.shape(), b.shape())));
    }
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    Ok(())
}

/// Hierarchical, parallel, multi-scale residual block.
///
/// Three 3×3 branches of widths `w/2`, `w/4`, `w/4` are chained: each branch
/// reads the rectified output of the previous one. Their concatenation is
/// added to the block input.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewBlock {
    pub branches: [Conv2d; 3],
}

impl MultiViewBlock {
    pub fn branch_widths(width: usize) -> Result<[usize; 3]> {
        if width == 0 || !width.is_multiple_of(4) {
            return Err(Error::config(format!("multi-view block width {width} is not a positive multiple of 4")));
        }
        Ok([width / 2, width / 4, width / 4])
    }

    pub fn zeros(width: usize) -> Result<Self> {
        let [a, b, c] = Self::branch_widths(width)?;
        Ok(MultiViewBlock { branches: [Conv2d::zeros(width, a, 3), Conv2d::zeros(a, b, 3), Conv2d::zeros(b, c, 3)] })
    }

    pub fn random(width: usize, rng: &mut impl Rng) -> Result<Self> {
        let [a, b, c] = Self::branch_widths(width)?;
        Ok(MultiViewBlock {
            branches: [Conv2d::random(width, a, 3, rng), Conv2d::random(a, b, 3, rng), Conv2d::random(b, c, 3, rng)],
        })
    }

    pub fn width(&self) -> usize {
        self.branches[0].in_channels
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = Self::branch_widths(self.width())?;
        let [b0, b1, b2] = &self.branches;
        let chain = [(b0, self.width(), a), (b1, a, b), (b2, b, c)];
        for (i, (conv, inp, out)) in chain.into_iter().enumerate() {
            conv.validate()?;
            if conv.in_channels != inp || conv.out_channels != out || conv.kernel != 3 {
                return Err(Error::config(format!("multi-view branch {i} has the wrong shape")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels() != self.width() {
            return Err(Error::config(format!(
                "multi-view block of width {} got {} channels",
                self.width(),
                x.channels()
            )));
        }
        let b1 = self.branches[0].forward(&relu(x.clone()))?;
        let b2 = self.branches[1].forward(&relu(b1.clone()))?;
        let b3 = self.branches[2].forward(&relu(b2.clone()))?;
        let mut out = Stack::concat(&[&b1, &b2, &b3])?;
        add_in_place(&mut out, x)?;
        Ok(out)
    }
}

/// Two-level hourglass that turns features plus boundary heatmaps into a
/// single-channel attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHourglass {
    /// 1×1 projection of the concatenated input to the hourglass width.
    pub input: Conv2d,
    /// Blocks in evaluation order: full-resolution skip, first level,
    /// first-level skip, second level, first-level merge, full-resolution merge.
    pub blocks: [MultiViewBlock; 6],
    /// 1×1 projection to the attention logit.
    pub output: Conv2d,
}

impl AttentionHourglass {
    pub fn zeros(in_channels: usize, width: usize) -> Result<Self> {
        let block = || MultiViewBlock::zeros(width);
        Ok(AttentionHourglass {
            input: Conv2d::zeros(in_channels, width, 1),
            blocks: [block()?, block()?, block()?, block()?, block()?, block()?],
            output: Conv2d::zeros(width, 1, 1),
        })
    }

    pub fn random(in_channels: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        let input = Conv2d::random(in_channels, width, 1, rng);
        let blocks = [
            MultiViewBlock::random(width, rng)?,
            MultiViewBlock::random(width, rng)?,
            MultiViewBlock::random(width, rng)?,
            MultiViewBlock::random(width, rng)?,
            MultiViewBlock::random(width, rng)?,
            MultiViewBlock::random(width, rng)?,
        ];
        let output = Conv2d::random(width, 1, 1, rng);
        Ok(AttentionHourglass { input, blocks, output })
    }

    pub fn width(&self) -> usize {
        self.input.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        self.output.validate()?;
        for b in &self.blocks {
            b.validate()?;
            if b.width() != self.width() {
                return Err(Error::config("hourglass block width differs from its input projection"));
            }
        }
        if self.output.in_channels != self.width() || self.output.out_channels != 1 || self.input.kernel != 1 || self.output.kernel != 1 {
            return Err(Error::config("hourglass projections have the wrong shape"));
        }
        Ok(())
    }

    /// Attention logits before squashing.
    pub fn logits(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let kernel = BlurKernel::new(3)?;
        let (h, w) = input.dims();
        let x0 = relu(self.input.forward(input)?);
        let skip0 = self.blocks[0].forward(&x0)?;
        let d1 = self.blocks[1].forward(&blur_downsample(&x0, &kernel)?)?;
        let skip1 = self.blocks[2].forward(&d1)?;
        let d2 = self.blocks[3].forward(&blur_downsample(&d1, &kernel)?)?;
        let mut u1 = upsample_nearest(&d2, d1.height(), d1.width());
        add_in_place(&mut u1, &skip1)?;
        let u1 = self.blocks[4].forward(&u1)?;
        let mut u0 = upsample_nearest(&u1, h, w);
        add_in_place(&mut u0, &skip0)?;
        let u0 = self.blocks[5].forward(&u0)?;
        self.output.forward(&u0)
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.logits(input)?.map_values(logistic))
    }
}

/// Which landmark heatmaps feed each boundary's convolution stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Wiring {
    /// Only the boundary's own landmarks, in first-occurrence order.
    #[default]
    Subset,
    /// Every landmark heatmap.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// `features * attention`
    #[default]
    Multiply,
    /// `features * (1 + attention)`
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagationConfig {
    /// Convolutions per boundary stack (1 to 5).
    pub depth: usize,
    /// Channels between the convolutions of a stack.
    pub hidden: usize,
    pub kernel: usize,
    /// Incoming feature channels.
    pub features: usize,
    /// Hourglass width; a multiple of 4.
    pub hourglass_width: usize,
    pub wiring: Wiring,
    /// Rectify between the convolutions of a stack.
    pub rectify: bool,
    pub attention: AttentionMode,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            depth: 3,
            hidden: 8,
            kernel: 7,
            features: 256,
            hourglass_width: 64,
            wiring: Wiring::Subset,
            rectify: true,
            attention: AttentionMode::Multiply,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.depth) {
            return Err(Error::config(format!("stack depth {} outside 1..=5", self.depth)));
        }
        if self.hidden == 0 || self.kernel.is_multiple_of(2) || self.features == 0 {
            return Err(Error::config(format!("invalid propagation config {self:?}")));
        }
        MultiViewBlock::branch_widths(self.hourglass_width)?;
        Ok(())
    }

    fn stack_inputs(&self, scheme: &BoundaryScheme, m: usize) -> usize {
        match self.wiring {
            Wiring::Subset => scheme.unique_indices(m).len(),
            Wiring::Full => scheme.n_points,
        }
    }

    fn stack_shapes(&self, inputs: usize) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|i| {
                let inp = if i == 0 { inputs } else { self.hidden };
                let out = if i + 1 == self.depth { 1 } else { self.hidden };
                (inp, out)
            })
            .collect()
    }
}

/// All parameters of the module.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationWeights {
    pub config: PropagationConfig,
    /// One convolution stack per boundary.
    pub stacks: Vec<Vec<Conv2d>>,
    pub hourglass: AttentionHourglass,
}

impl PropagationWeights {
    pub fn zeros(config: PropagationConfig, scheme: &BoundaryScheme) -> Result<Self> {
        config.validate()?;
        let stacks = (0..scheme.len())
            .map(|m| {
                config
                    .stack_shapes(config.stack_inputs(scheme, m))
                    .into_iter()
                    .map(|(i, o)| Conv2d::zeros(i, o, config.kernel))
                    .collect()
            })
            .collect();
        let hourglass = AttentionHourglass::zeros(config.features + scheme.len(), config.hourglass_width)?;
        Ok(PropagationWeights { config, stacks, hourglass })
    }

    /// Seeded uniform initialisation in `±1/sqrt(fan_in)`.
    pub fn random(config: PropagationConfig, scheme: &BoundaryScheme, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stacks = (0..scheme.len())
            .map(|m| {
                config
                    .stack_shapes(config.stack_inputs(scheme, m))
                    .into_iter()
                    .map(|(i, o)| Conv2d::random(i, o, config.kernel, &mut rng))
                    .collect()
            })
            .collect();
        let hourglass = AttentionHourglass::random(config.features + scheme.len(), config.hourglass_width, &mut rng)?;
        Ok(PropagationWeights { config, stacks, hourglass })
    }

    /// Checks the weights against a scheme, naming the first offending boundary.
    pub fn validate(&self, scheme: &BoundaryScheme) -> Result<()> {
        self.config.validate()?;
        if self.stacks.len() != scheme.len() {
            return Err(Error::config(format!(
                "weights hold {} boundary stacks, scheme has {} boundaries",
                self.stacks.len(),
                scheme.len()
            )));
        }
        for (m, stack) in self.stacks.iter().enumerate() {
            let expected = self.config.stack_shapes(self.config.stack_inputs(scheme, m));
            let found: Vec<(usize, usize)> = stack.iter().map(|c| (c.in_channels, c.out_channels)).collect();
            if found != expected {
                return Err(Error::config(format!(
                    "boundary {m}: stack shapes {found:?} do not match the scheme (expected {expected:?})"
                )));
            }
            for conv in stack {
                conv.validate().map_err(|e| Error::config(format!("boundary {m}: {e}")))?;
            }
        }
        self.hourglass.validate()?;
        if self.hourglass.input.in_channels != self.config.features + scheme.len() {
            return Err(Error::config("hourglass input width does not match features + boundaries"));
        }
        Ok(())
    }

    /// Named parameters in a fixed order.
    pub fn named_convs(&self) -> Vec<(String, &Conv2d)> {
        let mut out = Vec::new();
        for (m, stack) in self.stacks.iter().enumerate() {
            for (i, c) in stack.iter().enumerate() {
                out.push((format!("boundary.{m}.conv.{i}"), c));
            }
        }
        out.push(("hourglass.input".to_string(), &self.hourglass.input));
        for (b, block) in self.hourglass.blocks.iter().enumerate() {
            for (i, c) in block.branches.iter().enumerate() {
                out.push((format!("hourglass.block.{b}.branch.{i}"), c));
            }
        }
        out.push(("hourglass.output".to_string(), &self.hourglass.output));
        out
    }

    fn named_convs_mut(&mut self) -> Vec<(String, &mut Conv2d)> {
        let mut out = Vec::new();
        for (m, stack) in self.stacks.iter_mut().enumerate() {
            for (i, c) in stack.iter_mut().enumerate() {
                out.push((format!("boundary.{m}.conv.{i}"), c));
            }
        }
        out.push(("hourglass.input".to_string(), &mut self.hourglass.input));
        for (b, block) in self.hourglass.blocks.iter_mut().enumerate() {
            for (i, c) in block.branches.iter_mut().enumerate() {
                out.push((format!("hourglass.block.{b}.branch.{i}"), c));
            }
        }
        out.push(("hourglass.output".to_string(), &mut self.hourglass.output));
        out
    }

    /// Writes every weight and bias as an `HMK1` file plus `manifest.txt`.
    ///
    /// Manifest lines are `config <key>=<value> ...` followed by one
    /// `param <name> <shape> <file>` line per tensor, with shapes written as
    /// `AxBxCxD`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let c = &self.config;
        let mut manifest = String::from("# propagation module weights\n");
        let _ = writeln!(
            manifest,
            "config depth={} hidden={} kernel={} features={} hourglass_width={} wiring={} rectify={} attention={}",
            c.depth,
            c.hidden,
            c.kernel,
            c.features,
            c.hourglass_width,
            match c.wiring {
                Wiring::Subset => "subset",
                Wiring::Full => "full",
            },
            c.rectify,
            match c.attention {
                AttentionMode::Multiply => "multiply",
                AttentionMode::Residual => "residual",
            }
        );
        for (name, conv) in self.named_convs() {
            let (o, i, k) = (conv.out_channels, conv.in_channels, conv.kernel);
            let wfile = format!("{name}.weight.hmk");
            let bfile = format!("{name}.bias.hmk");
            tensor::write_stack(&Stack::from_vec(o * i, k, k, conv.weight.clone())?, &dir.join(&wfile))?;
            tensor::write_stack(&Stack::from_vec(1, 1, o, conv.bias.clone())?, &dir.join(&bfile))?;
            let _ = writeln!(manifest, "param {name}.weight {o}x{i}x{k}x{k} {wfile}");
            let _ = writeln!(manifest, "param {name}.bias {o} {bfile}");
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Loads weights written by [`PropagationWeights::save`].
    pub fn load(dir: &Path, scheme: &BoundaryScheme) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut config = PropagationConfig::default();
        let mut params: Vec<(String, Vec<usize>, String)> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut tokens = line.split_whitespace();
            match tokens.next() {
                Some("config") => {
                    for kv in tokens {
                        let (k, v) = kv.split_once('=').ok_or_else(|| Error::config(format!("bad config entry {kv:?}")))?;
                        let num = || v.parse::<usize>().map_err(|_| Error::config(format!("bad value for {k}: {v:?}")));
                        match k {
                            "depth" => config.depth = num()?,
                            "hidden" => config.hidden = num()?,
                            "kernel" => config.kernel = num()?,
                            "features" => config.features = num()?,
                            "hourglass_width" => config.hourglass_width = num()?,
                            "wiring" => {
                                config.wiring = match v {
                                    "subset" => Wiring::Subset,
                                    "full" => Wiring::Full,
                                    _ => return Err(Error::config(format!("unknown wiring {v:?}"))),
                                }
                            }
                            "rectify" => config.rectify = v.parse().map_err(|_| Error::config(format!("bad rectify flag {v:?}")))?,
                            "attention" => {
                                config.attention = match v {
                                    "multiply" => AttentionMode::Multiply,
                                    "residual" => AttentionMode::Residual,
                                    _ => return Err(Error::config(format!("unknown attention mode {v:?}"))),
                                }
                            }
                            _ => return Err(Error::config(format!("unknown config key {k:?}"))),
                        }
                    }
                }
                Some("param") => {
                    let fields: Vec<&str> = tokens.collect();
                    let [name, shape, file] = fields[..] else {
                        return Err(Error::config(format!("bad manifest line {line:?}")));
                    };
                    let dims = shape
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::config(format!("bad shape {shape:?}")))?;
                    params.push((name.to_string(), dims, file.to_string()));
                }
                _ => return Err(Error::config(format!("bad manifest line {line:?}"))),
            }
        }
        let mut weights = Self::zeros(config, scheme)?;
        for (name, conv) in weights.named_convs_mut() {
            for (suffix, expected) in [
                ("weight", vec![conv.out_channels, conv.in_channels, conv.kernel, conv.kernel]),
                ("bias", vec![conv.out_channels]),
            ] {
                let full = format!("{name}.{suffix}");
                let (_, dims, file) = params
                    .iter()
                    .find(|(n, _, _)| *n == full)
                    .ok_or_else(|| Error::config(format!("manifest lacks parameter {full}")))?;
                if *dims != expected {
                    return Err(Error::config(format!("{full}: manifest shape {dims:?}, expected {expected:?}")));
                }
                let values = tensor::read_stack(&dir.join(file))?.into_vec();
                if values.len() != expected.iter().product::<usize>() {
                    return Err(Error::config(format!("{full}: file holds {} values", values.len())));
                }
                match suffix {
                    "weight" => conv.weight = values,
                    _ => conv.bias = values,
                }
            }
        }
        weights.validate(scheme)?;
        Ok(weights)
    }
}

/// Turns `K` landmark heatmaps into one heatmap per boundary.
pub fn propagate_to_boundaries(landmarks: &HeatmapStack, weights: &PropagationWeights, scheme: &BoundaryScheme) -> Result<HeatmapStack> {
    if landmarks.channels() != scheme.n_points {
        return Err(Error::invalid(format!(
            "{} landmark heatmaps given, scheme has {} landmarks",
            landmarks.channels(),
            scheme.n_points
        )));
    }
    weights.validate(scheme)?;
    let (h, w) = landmarks.dims();
    let mut out = Stack::zeros(scheme.len(), h, w);
    for (m, stack) in weights.stacks.iter().enumerate() {
        let mut x = match weights.config.wiring {
            Wiring::Subset => landmarks.select(&scheme.unique_indices(m)),
            Wiring::Full => landmarks.clone(),
        };
        for (i, conv) in stack.iter().enumerate() {
            x = conv.forward(&x)?;
            if weights.config.rectify && i + 1 < stack.len() {
                x = relu(x);
            }
        }
        out.map_mut(m).copy_from_slice(x.map(0));
    }
    Ok(out)
}

/// Attention map in `(0, 1)` from features and boundary heatmaps.
pub fn attention_hourglass(features: &FeatureMap, boundaries: &HeatmapStack, weights: &PropagationWeights) -> Result<Stack> {
    if features.dims() != boundaries.dims() {
        return Err(Error::invalid(format!(
            "features are {:?} but boundary heatmaps are {:?}",
            features.dims(),
            boundaries.dims()
        )));
    }
    if features.channels() != weights.config.features {
        return Err(Error::invalid(format!(
            "{} feature channels given, weights expect {}",
            features.channels(),
            weights.config.features
        )));
    }
    weights.hourglass.forward(&Stack::concat(&[features, boundaries])?)
}

/// Broadcasts a single-channel attention map over every feature channel.
pub fn apply_attention(features: &FeatureMap, attention: &Stack, mode: AttentionMode) -> Result<FeatureMap> {
    if attention.channels() != 1 || attention.dims() != features.dims() {
        return Err(Error::invalid(format!(
            "attention {:?} cannot modulate features {:?}",
            attention.shape(),
            features.shape()
        )));
    }
    let att = attention.map(0);
    let (c, h, w) = features.shape();
    Ok(Stack::from_fn(c, h, w, |ch, y, x| {
        let a = att[y * w + x];
        let f = features.get(ch, y, x);
        match mode {
            AttentionMode::Multiply => f * a,
            AttentionMode::Residual => f * (1.0 + a),
        }
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleOutput {
    pub boundaries: HeatmapStack,
    pub attention: Stack,
    pub features: FeatureMap,
}

/// Full module: boundaries for supervision and modulated features for the
/// next stage.
pub fn forward_module(features: &FeatureMap, landmarks: &HeatmapStack, weights: &PropagationWeights, scheme: &BoundaryScheme) -> Result<ModuleOutput> {
    let boundaries = propagate_to_boundaries(landmarks, weights, scheme)?;
    let attention = attention_hourglass(features, &boundaries, weights)?;
    let features = apply_attention(features, &attention, weights.config.attention)?;
    Ok(ModuleOutput { boundaries, attention, features })
}

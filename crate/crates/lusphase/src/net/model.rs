//! Multi-scale residual classifier with early/mid/late feature fusion.
//!
//! Every variant is assembled from the same parts: an initial convolution
//! stem, three residual branches with different receptive kernels (each
//! three sub-blocks of two convolutions plus a skip), global average
//! pooling, and a fully connected two-way classifier.
//!
//! - Early fusion stacks the input images as channels of one stem.
//! - Mid fusion gives every input its own stem and concatenates the
//!   primary feature maps before a single trunk.
//! - Late fusion runs a full stem+trunk per input and concatenates the
//!   pooled feature vectors before the classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::layers::{softmax, softmax_cross_entropy, Conv2d, GlobalAvgPool, Linear, Relu};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Kernel size, output depth and stride of one convolutional layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub depth: usize,
    pub stride: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            kernel: 7,
            depth: 16,
            stride: 2,
        }
    }
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel {} must be odd and >= 1",
                self.kernel
            )));
        }
        if self.depth == 0 || self.stride == 0 {
            return Err(Error::Config("depth and stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// One residual branch: three sub-blocks of two convolutions each, with a
/// skip connection per sub-block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResBlockSpec {
    pub kernel: usize,
    pub stage_depths: [usize; 3],
    /// Stride-2 entry into every sub-block.
    pub downsample: bool,
}

impl ResBlockSpec {
    pub fn with_kernel(kernel: usize) -> Self {
        ResBlockSpec {
            kernel,
            stage_depths: [16, 32, 64],
            downsample: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "branch kernel {} must be odd and >= 1",
                self.kernel
            )));
        }
        if self.stage_depths.contains(&0) {
            return Err(Error::Config("stage depths must be >= 1".into()));
        }
        Ok(())
    }

    fn entry_stride(&self) -> usize {
        if self.downsample {
            2
        } else {
            1
        }
    }
}

/// Whole-network configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input spatial side; must be divisible by the total downsampling.
    pub image_side: usize,
    pub seed: u64,
    pub initial_conv: ConvSpec,
    pub branches: [ResBlockSpec; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_side: 512,
            seed: 0,
            initial_conv: ConvSpec::default(),
            branches: [
                ResBlockSpec::with_kernel(3),
                ResBlockSpec::with_kernel(5),
                ResBlockSpec::with_kernel(7),
            ],
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration for tests and smoke runs.
    pub fn with_side(image_side: usize, seed: u64) -> Self {
        ModelConfig {
            image_side,
            seed,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.initial_conv.validate()?;
        for b in &self.branches {
            b.validate()?;
        }
        let total = self.total_downsampling();
        if self.image_side == 0 || !self.image_side.is_multiple_of(total) {
            return Err(Error::Config(format!(
                "image side {} must be divisible by the total downsampling {total}",
                self.image_side
            )));
        }
        Ok(())
    }

    pub fn total_downsampling(&self) -> usize {
        let branch_factor: usize = self
            .branches
            .iter()
            .map(|b| b.entry_stride().pow(3))
            .max()
            .unwrap_or(1);
        self.initial_conv.stride * branch_factor
    }

    /// Pooled feature width of one trunk (sum of the final stage depths).
    pub fn pooled_width(&self) -> usize {
        self.branches.iter().map(|b| b.stage_depths[2]).sum()
    }
}

/// The five feature images a fusion configuration can consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Us,
    E1,
    E2,
    S1,
    S2,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Us,
        FeatureKind::E1,
        FeatureKind::E2,
        FeatureKind::S1,
        FeatureKind::S2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Us => "us",
            FeatureKind::E1 => "e1",
            FeatureKind::E2 => "e2",
            FeatureKind::S1 => "s1",
            FeatureKind::S2 => "s2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "us" => Ok(FeatureKind::Us),
            "e1" => Ok(FeatureKind::E1),
            "e2" => Ok(FeatureKind::E2),
            "s1" => Ok(FeatureKind::S1),
            "s2" => Ok(FeatureKind::S2),
            other => Err(Error::Config(format!(
                "unknown feature '{other}' (expected us, e1, e2, s1 or s2)"
            ))),
        }
    }
}

/// Depth at which the input features are fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Early,
    Mid,
    Late,
}

impl FusionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "early" => Ok(FusionMode::Early),
            "mid" => Ok(FusionMode::Mid),
            "late" => Ok(FusionMode::Late),
            other => Err(Error::Config(format!(
                "unknown fusion mode '{other}' (expected early, mid or late)"
            ))),
        }
    }
}

/// Which features feed the network and how deep the fusion happens.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionSpec {
    pub mode: FusionMode,
    pub inputs: Vec<FeatureKind>,
    /// Share stem (mid) or stem+trunk (late) weights across streams.
    #[serde(default)]
    pub weight_sharing: bool,
}

impl FusionSpec {
    pub fn new(mode: FusionMode, inputs: Vec<FeatureKind>) -> Self {
        FusionSpec {
            mode,
            inputs,
            weight_sharing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Config("fusion inputs must be non-empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for input in &self.inputs {
            if !seen.insert(*input) {
                return Err(Error::Config(format!(
                    "duplicate fusion input '{}'",
                    input.name()
                )));
            }
        }
        if self.inputs.len() == 1 && self.mode != FusionMode::Early {
            return Err(Error::Config(
                "single-input configurations are only valid with early fusion".into(),
            ));
        }
        Ok(())
    }
}

/// Network input for one batch: one channel-stacked tensor for early
/// fusion, or one single-channel tensor per stream for mid/late fusion.
#[derive(Debug, Clone)]
pub enum BatchInput {
    Stacked(Tensor),
    Streams(Vec<Tensor>),
}

impl BatchInput {
    pub fn batch_size(&self) -> usize {
        match self {
            BatchInput::Stacked(t) => t.shape()[0],
            BatchInput::Streams(v) => v.first().map_or(0, |t| t.shape()[0]),
        }
    }
}

#[derive(Debug)]
struct Stem {
    conv: Conv2d,
    relu: Relu,
}

impl Stem {
    fn new(in_channels: usize, spec: &ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        Stem {
            conv: Conv2d::new(in_channels, spec.depth, spec.kernel, spec.stride, rng),
            relu: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.relu.forward(&self.conv.forward(x)?))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        self.conv.backward(&self.relu.backward(upstream)?)
    }
}

/// One residual sub-block: `out = skip(x) + relu(conv2(relu(conv1(x))))`.
///
/// The skip is the identity when shape is preserved, otherwise a strided
/// 1x1 projection. With all convolution weights and biases zeroed the
/// sub-block reduces exactly to its skip path.
#[derive(Debug)]
struct SubBlock {
    conv1: Conv2d,
    relu1: Relu,
    conv2: Conv2d,
    relu2: Relu,
    projection: Option<Conv2d>,
}

impl SubBlock {
    fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let projection = if stride != 1 || in_channels != out_channels {
            Some(Conv2d::new(in_channels, out_channels, 1, stride, rng))
        } else {
            None
        };
        SubBlock {
            conv1: Conv2d::new(in_channels, out_channels, kernel, stride, rng),
            relu1: Relu::new(),
            conv2: Conv2d::new(out_channels, out_channels, kernel, 1, rng),
            relu2: Relu::new(),
            projection,
        }
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let skip = match &mut self.projection {
            Some(proj) => proj.forward(x)?,
            None => x.clone(),
        };
        let body = self.relu1.forward(&self.conv1.forward(x)?);
        let body = self.relu2.forward(&self.conv2.forward(&body)?);
        if body.shape() != skip.shape() {
            return Err(Error::Shape(format!(
                "residual body {:?} does not match skip {:?}",
                body.shape(),
                skip.shape()
            )));
        }
        let mut out = skip;
        for (o, &b) in out.data_mut().iter_mut().zip(body.data()) {
            *o += b;
        }
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let body = self.relu2.backward(upstream)?;
        let body = self.conv2.backward(&body)?;
        let body = self.relu1.backward(&body)?;
        let mut dx = self.conv1.backward(&body)?;
        let dskip = match &mut self.projection {
            Some(proj) => proj.backward(upstream)?,
            None => upstream.clone(),
        };
        for (d, &s) in dx.data_mut().iter_mut().zip(dskip.data()) {
            *d += s;
        }
        Ok(dx)
    }
}

/// A fixed-kernel residual branch followed by global average pooling.
#[derive(Debug)]
struct Branch {
    blocks: Vec<SubBlock>,
    pool: GlobalAvgPool,
}

impl Branch {
    fn new(in_channels: usize, spec: &ResBlockSpec, rng: &mut ChaCha8Rng) -> Self {
        let stride = spec.entry_stride();
        let mut blocks = Vec::with_capacity(3);
        let mut current = in_channels;
        for &depth in &spec.stage_depths {
            blocks.push(SubBlock::new(current, depth, spec.kernel, stride, rng));
            current = depth;
        }
        Branch {
            blocks,
            pool: GlobalAvgPool::new(),
        }
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut current = x.clone();
        for block in &mut self.blocks {
            current = block.forward(&current)?;
        }
        self.pool.forward(&current)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let mut current = self.pool.backward(upstream)?;
        for block in self.blocks.iter_mut().rev() {
            current = block.backward(&current)?;
        }
        Ok(current)
    }
}

/// Three multi-scale branches consuming the same feature map; outputs the
/// concatenation of their pooled vectors.
#[derive(Debug)]
struct Trunk {
    branches: Vec<Branch>,
}

impl Trunk {
    fn new(in_channels: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Trunk {
            branches: cfg
                .branches
                .iter()
                .map(|spec| Branch::new(in_channels, spec, rng))
                .collect(),
        }
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let pooled: Vec<Tensor> = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x))
            .collect::<Result<_>>()?;
        Ok(concat_columns(&pooled))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let widths: Vec<usize> = self
            .branches
            .iter()
            .map(|b| b.blocks[2].conv2.out_channels())
            .collect();
        let parts = split_columns(upstream, &widths);
        let mut dx: Option<Tensor> = None;
        for (branch, part) in self.branches.iter_mut().zip(&parts).rev() {
            let d = branch.backward(part)?;
            dx = Some(match dx {
                None => d,
                Some(mut acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(d.data()) {
                        *a += b;
                    }
                    acc
                }
            });
        }
        Ok(dx.expect("trunk has branches"))
    }
}

/// Concatenates `[N, Ci]` tensors along the feature axis.
fn concat_columns(parts: &[Tensor]) -> Tensor {
    let batch = parts[0].shape()[0];
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Tensor::zeros(&[batch, total]);
    let odata = out.data_mut();
    for n in 0..batch {
        let mut offset = 0;
        for part in parts {
            let width = part.shape()[1];
            odata[n * total + offset..n * total + offset + width]
                .copy_from_slice(&part.data()[n * width..(n + 1) * width]);
            offset += width;
        }
    }
    out
}

fn split_columns(t: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let batch = t.shape()[0];
    let total = t.shape()[1];
    let mut parts = Vec::with_capacity(widths.len());
    let mut offset = 0;
    for &width in widths {
        let mut part = Tensor::zeros(&[batch, width]);
        for n in 0..batch {
            part.data_mut()[n * width..(n + 1) * width]
                .copy_from_slice(&t.data()[n * total + offset..n * total + offset + width]);
        }
        parts.push(part);
        offset += width;
    }
    parts
}

/// Concatenates `[N, Ci, H, W]` tensors along the channel axis.
fn concat_channels(parts: &[Tensor]) -> Tensor {
    let shape = parts[0].shape();
    let (batch, h, w) = (shape[0], shape[2], shape[3]);
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Tensor::zeros(&[batch, total, h, w]);
    let plane = h * w;
    let odata = out.data_mut();
    for n in 0..batch {
        let mut offset = 0;
        for part in parts {
            let c = part.shape()[1];
            let src = &part.data()[n * c * plane..(n + 1) * c * plane];
            odata[(n * total + offset) * plane..(n * total + offset + c) * plane]
                .copy_from_slice(src);
            offset += c;
        }
    }
    out
}

fn split_channels(t: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let shape = t.shape();
    let (batch, total, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let mut parts = Vec::with_capacity(widths.len());
    let mut offset = 0;
    for &c in widths {
        let mut part = Tensor::zeros(&[batch, c, h, w]);
        for n in 0..batch {
            part.data_mut()[n * c * plane..(n + 1) * c * plane].copy_from_slice(
                &t.data()[(n * total + offset) * plane..(n * total + offset + c) * plane],
            );
        }
        parts.push(part);
        offset += c;
    }
    parts
}

/// A built classifier network.
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    fusion: FusionSpec,
    stems: Vec<Stem>,
    trunks: Vec<Trunk>,
    classifier: Linear,
    step_count: u64,
}

impl Model {
    /// Builds the network for the given fusion layout, initializing all
    /// weights Kaiming-uniform from `config.seed`.
    pub fn build(config: ModelConfig, fusion: FusionSpec) -> Result<Model> {
        config.validate()?;
        fusion.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let streams = fusion.inputs.len();
        let init = &config.initial_conv;
        let (stems, trunks, classifier_width) = match fusion.mode {
            FusionMode::Early => {
                let stems = vec![Stem::new(streams, init, &mut rng)];
                let trunks = vec![Trunk::new(init.depth, &config, &mut rng)];
                (stems, trunks, config.pooled_width())
            }
            FusionMode::Mid => {
                let stem_count = if fusion.weight_sharing { 1 } else { streams };
                let stems = (0..stem_count)
                    .map(|_| Stem::new(1, init, &mut rng))
                    .collect();
                let trunks = vec![Trunk::new(init.depth * streams, &config, &mut rng)];
                (stems, trunks, config.pooled_width())
            }
            FusionMode::Late => {
                let count = if fusion.weight_sharing { 1 } else { streams };
                let mut stems = Vec::with_capacity(count);
                let mut trunks = Vec::with_capacity(count);
                for _ in 0..count {
                    stems.push(Stem::new(1, init, &mut rng));
                    trunks.push(Trunk::new(init.depth, &config, &mut rng));
                }
                (stems, trunks, config.pooled_width() * streams)
            }
        };
        // The classifier head starts at zero so the initial loss of a
        // balanced batch is exactly ln 2; gradients reach the trunk once
        // the head moves off zero after the first update.
        let mut classifier = Linear::new(classifier_width, 2, &mut rng);
        classifier.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        Ok(Model {
            config,
            fusion,
            stems,
            trunks,
            classifier,
            step_count: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fusion(&self) -> &FusionSpec {
        &self.fusion
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_step_count(&mut self, steps: u64) {
        self.step_count = steps;
    }

    pub fn bump_step_count(&mut self) {
        self.step_count += 1;
    }

    /// Initial convolution weight shape `[depth, channels, k, k]`.
    pub fn initial_conv_weight_shape(&self) -> &[usize] {
        self.stems[0].conv.weight.shape()
    }

    /// Input width of the fully connected classifier.
    pub fn classifier_width(&self) -> usize {
        self.classifier.in_features()
    }

    fn expect_stream_shape(&self, t: &Tensor, channels: usize) -> Result<()> {
        let side = self.config.image_side;
        if t.shape().len() != 4
            || t.shape()[1] != channels
            || t.shape()[2] != side
            || t.shape()[3] != side
        {
            return Err(Error::Shape(format!(
                "expected [N, {channels}, {side}, {side}], got {:?}",
                t.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass producing `[N, 2]` logits.
    pub fn forward(&mut self, input: &BatchInput) -> Result<Tensor> {
        let streams = self.fusion.inputs.len();
        let pooled = match (&self.fusion.mode, input) {
            (FusionMode::Early, BatchInput::Stacked(x)) => {
                self.expect_stream_shape(x, streams)?;
                let features = self.stems[0].forward(x)?;
                self.trunks[0].forward(&features)?
            }
            (FusionMode::Mid, BatchInput::Streams(xs)) => {
                if xs.len() != streams {
                    return Err(Error::Shape(format!(
                        "expected {streams} input streams, got {}",
                        xs.len()
                    )));
                }
                let mut primaries = Vec::with_capacity(streams);
                for (i, x) in xs.iter().enumerate() {
                    self.expect_stream_shape(x, 1)?;
                    let stem = if self.fusion.weight_sharing {
                        &mut self.stems[0]
                    } else {
                        &mut self.stems[i]
                    };
                    primaries.push(stem.forward(x)?);
                }
                let fused = concat_channels(&primaries);
                self.trunks[0].forward(&fused)?
            }
            (FusionMode::Late, BatchInput::Streams(xs)) => {
                if xs.len() != streams {
                    return Err(Error::Shape(format!(
                        "expected {streams} input streams, got {}",
                        xs.len()
                    )));
                }
                let mut pooled_parts = Vec::with_capacity(streams);
                for (i, x) in xs.iter().enumerate() {
                    self.expect_stream_shape(x, 1)?;
                    let slot = if self.fusion.weight_sharing { 0 } else { i };
                    let features = self.stems[slot].forward(x)?;
                    pooled_parts.push(self.trunks[slot].forward(&features)?);
                }
                concat_columns(&pooled_parts)
            }
            (FusionMode::Early, BatchInput::Streams(_)) => {
                return Err(Error::Shape(
                    "early fusion expects one channel-stacked tensor".into(),
                ))
            }
            (_, BatchInput::Stacked(_)) => {
                return Err(Error::Shape(
                    "mid/late fusion expects per-stream tensors".into(),
                ))
            }
        };
        self.classifier.forward(&pooled)
    }

    /// Backpropagates the logit gradient produced by the loss.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<()> {
        let dpooled = self.classifier.backward(dlogits)?;
        let streams = self.fusion.inputs.len();
        match self.fusion.mode {
            FusionMode::Early => {
                let dfeatures = self.trunks[0].backward(&dpooled)?;
                self.stems[0].backward(&dfeatures)?;
            }
            FusionMode::Mid => {
                let dfused = self.trunks[0].backward(&dpooled)?;
                let widths = vec![self.config.initial_conv.depth; streams];
                let parts = split_channels(&dfused, &widths);
                // Shared stems stack caches; pop them in reverse order.
                for (i, part) in parts.iter().enumerate().rev() {
                    let stem = if self.fusion.weight_sharing {
                        &mut self.stems[0]
                    } else {
                        &mut self.stems[i]
                    };
                    stem.backward(part)?;
                }
            }
            FusionMode::Late => {
                let widths = vec![self.config.pooled_width(); streams];
                let parts = split_columns(&dpooled, &widths);
                for (i, part) in parts.iter().enumerate().rev() {
                    let slot = if self.fusion.weight_sharing { 0 } else { i };
                    let dfeatures = self.trunks[slot].backward(part)?;
                    self.stems[slot].backward(&dfeatures)?;
                }
            }
        }
        Ok(())
    }

    /// All trainable tensors in declaration order (stems, trunks,
    /// classifier; weight before bias).
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut params = Vec::new();
        for stem in &mut self.stems {
            params.push(&mut stem.conv.weight);
            params.push(&mut stem.conv.bias);
        }
        for trunk in &mut self.trunks {
            for branch in &mut trunk.branches {
                for block in &mut branch.blocks {
                    params.push(&mut block.conv1.weight);
                    params.push(&mut block.conv1.bias);
                    params.push(&mut block.conv2.weight);
                    params.push(&mut block.conv2.bias);
                    if let Some(proj) = &mut block.projection {
                        params.push(&mut proj.weight);
                        params.push(&mut proj.bias);
                    }
                }
            }
        }
        params.push(&mut self.classifier.weight);
        params.push(&mut self.classifier.bias);
        params
    }

    pub fn parameter_count(&mut self) -> usize {
        self.parameters_mut().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// Zeroes every convolution inside the residual sub-blocks, leaving
    /// stems, skip projections and the classifier untouched; each
    /// sub-block then reduces exactly to its skip path.
    pub fn zero_residual_bodies(&mut self) {
        for trunk in &mut self.trunks {
            for branch in &mut trunk.branches {
                for block in &mut branch.blocks {
                    for tensor in [
                        &mut block.conv1.weight,
                        &mut block.conv1.bias,
                        &mut block.conv2.weight,
                        &mut block.conv2.bias,
                    ] {
                        tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
    }

    /// Class predictions and softmax probabilities; ties resolve to
    /// class 0.
    pub fn predict(&mut self, input: &BatchInput) -> Result<(Vec<usize>, Vec<[f64; 2]>)> {
        let logits = self.forward(input)?;
        self.discard_caches();
        let probs = softmax(&logits)?;
        let classes = probs
            .iter()
            .map(|p| if p[1] > p[0] { 1 } else { 0 })
            .collect();
        Ok((classes, probs.into_iter().map(|p| [p[0], p[1]]).collect()))
    }

    /// Drops forward caches after inference-only passes.
    fn discard_caches(&mut self) {
        for stem in &mut self.stems {
            stem.conv.clear_cache();
            stem.relu.clear_cache();
        }
        for trunk in &mut self.trunks {
            for branch in &mut trunk.branches {
                for block in &mut branch.blocks {
                    block.conv1.clear_cache();
                    block.conv2.clear_cache();
                    block.relu1.clear_cache();
                    block.relu2.clear_cache();
                    if let Some(proj) = &mut block.projection {
                        proj.clear_cache();
                    }
                }
                branch.pool.clear_cache();
            }
        }
        self.classifier.clear_cache();
    }
}

/// One optimization step: forward, mean cross-entropy, backward, Adam
/// update. Returns the batch loss.
pub fn train_step(
    model: &mut Model,
    input: &BatchInput,
    labels: &[usize],
    optimizer: &mut AdamState,
) -> Result<f64> {
    model.zero_grad();
    let logits = model.forward(input)?;
    if let Some(bad) = logits.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step: optimizer.steps() as usize,
            message: format!("logit {bad} is not finite"),
        });
    }
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step: optimizer.steps() as usize,
            message: format!("loss {loss} is not finite"),
        });
    }
    model.backward(&dlogits)?;
    optimizer.step(&mut model.parameters_mut());
    model.bump_step_count();
    Ok(loss)
}

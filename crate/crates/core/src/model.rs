//! The dual-branch density network.
//!
//! Deep branch: VGG-16 convolutions (blocks of 2, 2, 3, 3, 3 3x3 convs) with
//! stride-2 max pools after blocks 1-3, a stride-1 pool in place of pool 4,
//! no pool 5, and dilation 2 on the block-5 convs. Shallow branch: three
//! 5x5 convs each followed by ReLU and 2x2 average pooling. Both reach 1/8
//! of the input resolution; their maps are concatenated, fused by a 1x1 conv
//! into one channel and bilinearly upsampled to the input size.

use serde::{Deserialize, Serialize};

use crate::density::DensityMap;
use crate::error::{Error, Result};
use crate::tensor::{
    avg_pool, avg_pool_backward, bilinear_resize, bilinear_resize_backward, concat_channels,
    concat_channels_backward, conv2d_backward, conv2d_backward_params, conv2d_forward, init_weights,
    l2_loss_with, max_pool, max_pool_backward, relu, relu_backward, sgd_update, InitScheme, LayerKind,
    LayerSpec, LossNorm, ParamState, Shape, Tensor,
};

/// Total downsampling factor of both branches.
pub const OUTPUT_STRIDE: usize = 8;

/// Number of 3x3 convs per VGG block.
pub const VGG_BLOCK_CONVS: [usize; 5] = [2, 2, 3, 3, 3];

const PAPER_DEEP_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
const PAPER_SHALLOW_WIDTH: usize = 24;
const PAPER_SHALLOW_KERNEL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Paper,
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub preset: Preset,
    /// Output channels of the five VGG blocks before the multiplier.
    pub deep_widths: [usize; 5],
    pub shallow_width: usize,
    pub shallow_kernel: usize,
    /// Scales every channel width (rounded, at least 1).
    pub width_multiplier: f64,
    /// Kernel of the stride-1 max pool that replaces VGG pool 4. Kernel 2
    /// with one trailing pad keeps block-5 receptive fields equal to VGG's;
    /// kernel 3 with symmetric padding is the wider DeepLab variant.
    pub pool4_kernel: usize,
    /// Subtracted from raw 0-255 pixels before scaling.
    pub mean_pixel: f32,
    /// Raw pixels are divided by this after mean subtraction.
    pub pixel_scale: f32,
    /// Initialization of the branch convolutions.
    pub init: InitScheme,
    /// Initialization of the 1x1 fusion layer.
    pub fusion_init: InitScheme,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::paper()
    }
}

impl NetworkConfig {
    pub fn paper() -> Self {
        NetworkConfig {
            preset: Preset::Paper,
            deep_widths: PAPER_DEEP_WIDTHS,
            shallow_width: PAPER_SHALLOW_WIDTH,
            shallow_kernel: PAPER_SHALLOW_KERNEL,
            width_multiplier: 1.0,
            pool4_kernel: 2,
            mean_pixel: 0.0,
            pixel_scale: 255.0,
            init: InitScheme::Gaussian,
            fusion_init: InitScheme::Gaussian,
        }
    }

    /// Same topology at 1/8 width. The branches use He initialization so the
    /// signal survives 16 plain layers; the fusion layer keeps the small
    /// Gaussian so the initial density is near zero.
    pub fn toy() -> Self {
        NetworkConfig {
            preset: Preset::Toy,
            width_multiplier: 0.125,
            init: InitScheme::He,
            ..NetworkConfig::paper()
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => NetworkConfig::paper(),
            Preset::Toy => NetworkConfig::toy(),
        }
    }

    fn scaled(&self, width: usize) -> usize {
        ((width as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn effective_deep_widths(&self) -> [usize; 5] {
        self.deep_widths.map(|w| self.scaled(w))
    }

    pub fn effective_shallow_width(&self) -> usize {
        self.scaled(self.shallow_width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config(reason));
        if self.deep_widths.contains(&0) || self.shallow_width == 0 {
            return bad(format!(
                "channel widths must be >= 1 (deep {:?}, shallow {})",
                self.deep_widths, self.shallow_width
            ));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return bad(format!("width_multiplier {} must be positive", self.width_multiplier));
        }
        if self.shallow_kernel == 0 || self.shallow_kernel.is_multiple_of(2) {
            return bad(format!("shallow_kernel {} must be odd", self.shallow_kernel));
        }
        if !(2..=3).contains(&self.pool4_kernel) {
            return bad(format!("pool4_kernel {} must be 2 or 3", self.pool4_kernel));
        }
        if !(self.pixel_scale > 0.0) {
            return bad(format!("pixel_scale {} must be positive", self.pixel_scale));
        }
        Ok(())
    }

    /// Deep-branch layers as built: stride-1 pool 4 and dilated block 5.
    pub fn deep_layer_specs(&self) -> Vec<(String, LayerSpec)> {
        deep_specs(self, false)
    }

    /// The unmodified VGG layout (stride-2 pool 4, undilated block 5, pool 5
    /// omitted) for receptive-field comparison.
    pub fn original_vgg_specs(&self) -> Vec<(String, LayerSpec)> {
        deep_specs(self, true)
    }

    pub fn shallow_layer_specs(&self) -> Vec<(String, LayerSpec)> {
        let width = self.effective_shallow_width();
        let k = self.shallow_kernel;
        let mut specs = Vec::new();
        let mut in_ch = 1;
        for i in 1..=3 {
            specs.push((format!("shallow.conv{i}"), LayerSpec::conv(in_ch, width, k).with_padding(k / 2)));
            specs.push((format!("shallow.relu{i}"), LayerSpec::relu()));
            specs.push((format!("shallow.pool{i}"), LayerSpec::avg_pool(2, 2)));
            in_ch = width;
        }
        specs
    }
}

fn deep_specs(cfg: &NetworkConfig, original: bool) -> Vec<(String, LayerSpec)> {
    let widths = cfg.effective_deep_widths();
    let mut specs = Vec::new();
    let mut in_ch = 3;
    for (block, (&n, &width)) in VGG_BLOCK_CONVS.iter().zip(&widths).enumerate() {
        let b = block + 1;
        let dilation = if b == 5 && !original { 2 } else { 1 };
        for i in 1..=n {
            let spec = LayerSpec::conv(in_ch, width, 3).with_padding(dilation).with_dilation(dilation);
            specs.push((format!("deep.conv{b}_{i}"), spec));
            specs.push((format!("deep.relu{b}_{i}"), LayerSpec::relu()));
            in_ch = width;
        }
        let pool = match b {
            1..=3 => Some(LayerSpec::max_pool(2, 2)),
            4 if original => Some(LayerSpec::max_pool(2, 2)),
            4 => {
                let k = cfg.pool4_kernel;
                let begin = (k - 1) / 2;
                Some(LayerSpec::max_pool(k, 1).with_asymmetric_padding(begin, k - 1 - begin))
            }
            _ => None,
        };
        if let Some(p) = pool {
            specs.push((format!("deep.pool{b}"), p));
        }
    }
    specs
}

/// `(receptive field, jump)` after each layer, from the recurrence
/// `rf += (k_eff - 1) * jump; jump *= stride` with
/// `k_eff = dilation * (k - 1) + 1`.
pub fn receptive_field(specs: &[LayerSpec]) -> Vec<(usize, usize)> {
    let (mut rf, mut jump) = (1usize, 1usize);
    specs
        .iter()
        .map(|s| {
            if matches!(s.kind, LayerKind::Conv | LayerKind::MaxPool | LayerKind::AvgPool) {
                rf += (s.effective_kernel() - 1) * jump;
                jump *= s.stride;
            }
            (rf, jump)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub spec: LayerSpec,
    pub weight: ParamState,
    pub bias: ParamState,
}

impl ConvLayer {
    fn new(name: String, spec: LayerSpec, scheme: InitScheme, seed: u64) -> Result<Self> {
        let (w, b) = init_weights(&spec, scheme, seed)?;
        let n = b.len();
        Ok(ConvLayer {
            name,
            spec,
            weight: ParamState::new(w),
            bias: ParamState::new(Tensor::from_vec(Shape::new(1, 1, 1, n), b)?),
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_forward(x, &self.weight.value, self.bias.value.data(), &self.spec)
    }

    /// Accumulates parameter gradients, returns the input gradient if asked.
    fn backward(&mut self, x: &Tensor, upstream: &Tensor, want_input: bool) -> Result<Option<Tensor>> {
        let grads = if want_input {
            conv2d_backward(x, &self.weight.value, &self.spec, upstream)?
        } else {
            conv2d_backward_params(x, &self.weight.value, &self.spec, upstream)?
        };
        self.weight.accumulate(grads.weight.data())?;
        self.bias.accumulate(&grads.bias)?;
        Ok(grads.input)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    MaxPool(LayerSpec),
    AvgPool(LayerSpec),
}

impl Layer {
    fn from_spec(name: String, spec: LayerSpec, scheme: InitScheme, seed: u64) -> Result<Self> {
        Ok(match spec.kind {
            LayerKind::Conv => Layer::Conv(ConvLayer::new(name, spec, scheme, seed)?),
            LayerKind::Relu => Layer::Relu,
            LayerKind::MaxPool => Layer::MaxPool(spec),
            LayerKind::AvgPool => Layer::AvgPool(spec),
            other => return Err(Error::invalid("Layer::from_spec", format!("{other:?} is not a branch layer"))),
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => c.spec,
            Layer::Relu => LayerSpec::relu(),
            Layer::MaxPool(s) | Layer::AvgPool(s) => *s,
        }
    }

    fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self {
            Layer::Relu => Ok((h, w)),
            _ => {
                let s = self.spec();
                Ok((s.output_len(h)?, s.output_len(w)?))
            }
        }
    }
}

/// Intermediate values of one branch: `acts[i]` is the input of layer `i`,
/// the last entry is the branch output.
struct BranchTape {
    acts: Vec<Tensor>,
    argmax: Vec<Option<Vec<u32>>>,
}

fn branch_forward(layers: &[Layer], input: Tensor, record: bool) -> Result<(Tensor, Option<BranchTape>)> {
    let mut tape = record.then(|| BranchTape {
        acts: Vec::with_capacity(layers.len() + 1),
        argmax: Vec::with_capacity(layers.len()),
    });
    let mut x = input;
    for layer in layers {
        let (y, arg) = match layer {
            Layer::Conv(c) => (c.forward(&x)?, None),
            Layer::Relu => (relu(&x), None),
            Layer::MaxPool(s) => {
                let out = max_pool(&x, s.kernel, s.stride, s.padding)?;
                (out.output, Some(out.argmax))
            }
            Layer::AvgPool(s) => (avg_pool(&x, s.kernel, s.stride)?, None),
        };
        if let Some(t) = tape.as_mut() {
            t.acts.push(x);
            t.argmax.push(arg);
        }
        x = y;
    }
    Ok((x, tape))
}

fn branch_backward(layers: &mut [Layer], tape: BranchTape, upstream: Tensor) -> Result<()> {
    let mut grad = upstream;
    let BranchTape { acts, argmax } = tape;
    for (i, ((layer, x), arg)) in layers.iter_mut().zip(acts).zip(argmax).enumerate().rev() {
        grad = match layer {
            Layer::Conv(c) => match c.backward(&x, &grad, i > 0)? {
                Some(g) => g,
                None => return Ok(()),
            },
            Layer::Relu => relu_backward(&x, &grad)?,
            Layer::MaxPool(_) => max_pool_backward(x.shape(), arg.as_deref().unwrap_or_default(), &grad)?,
            Layer::AvgPool(s) => avg_pool_backward(x.shape(), s.kernel, s.stride, &grad)?,
        };
    }
    Ok(())
}

struct ForwardTape {
    deep: BranchTape,
    shallow: BranchTape,
    deep_channels: usize,
    fusion_input: Tensor,
    fusion_output_shape: Shape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub deep: Vec<Layer>,
    pub shallow: Vec<Layer>,
    pub fusion: ConvLayer,
}

/// Original dimensions of an image padded by [`pad_to_multiple`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRecord {
    pub height: usize,
    pub width: usize,
}

impl CropRecord {
    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        t.crop(self.height, self.width)
    }
}

pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let mut layer_seed = seed;
    let mut next_seed = || {
        layer_seed = layer_seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        layer_seed
    };
    let mut build = |specs: Vec<(String, LayerSpec)>| -> Result<Vec<Layer>> {
        specs
            .into_iter()
            .map(|(name, spec)| Layer::from_spec(name, spec, config.init, next_seed()))
            .collect()
    };
    let deep = build(config.deep_layer_specs())?;
    let shallow = build(config.shallow_layer_specs())?;
    let fused_in = config.effective_deep_widths()[4] + config.effective_shallow_width();
    let fusion = ConvLayer::new("fusion".into(), LayerSpec::conv(fused_in, 1, 1), config.fusion_init, next_seed())?;
    let net = Network {
        config: config.clone(),
        deep,
        shallow,
        fusion,
    };
    // Both branches must land on the same grid for every admissible size.
    for m in [1, 2, 3, 7, 28, 29] {
        let side = m * OUTPUT_STRIDE;
        let (d, s) = net.branch_output_dims(side, side)?;
        if d != s || d != (m, m) {
            return Err(Error::Config(format!(
                "branch outputs disagree for {side}x{side} input: deep {d:?}, shallow {s:?}"
            )));
        }
    }
    Ok(net)
}

impl Network {
    pub fn fusion_input_channels(&self) -> usize {
        self.fusion.spec.in_channels
    }

    /// Spatial dims of the deep and shallow outputs for an `h x w` input.
    pub fn branch_output_dims(&self, h: usize, w: usize) -> Result<((usize, usize), (usize, usize))> {
        let walk = |layers: &[Layer]| {
            layers
                .iter()
                .try_fold((h, w), |(h, w), l| l.output_dims(h, w))
        };
        Ok((walk(&self.deep)?, walk(&self.shallow)?))
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.deep
            .iter()
            .chain(&self.shallow)
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c),
                _ => None,
            })
            .chain(std::iter::once(&self.fusion))
    }

    pub fn conv_layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.deep
            .iter_mut()
            .chain(self.shallow.iter_mut())
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c),
                _ => None,
            })
            .chain(std::iter::once(&mut self.fusion))
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_layers().map(|c| c.weight.value.len() + c.bias.value.len()).sum()
    }

    fn normalize(&self, image: &Tensor) -> Tensor {
        let (mean, scale) = (self.config.mean_pixel, self.config.pixel_scale);
        image.map(|v| (v - mean) / scale)
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        if s.channels != 1 {
            return Err(Error::DimensionMismatch {
                op: "forward_density",
                dim: "input channels",
                expected: 1,
                actual: s.channels,
            });
        }
        if !s.height.is_multiple_of(OUTPUT_STRIDE) || !s.width.is_multiple_of(OUTPUT_STRIDE) || s.height == 0 || s.width == 0 {
            return Err(Error::invalid(
                "forward_density",
                format!(
                    "input {}x{} is not a positive multiple of {OUTPUT_STRIDE}; use pad_to_multiple",
                    s.height, s.width
                ),
            ));
        }
        Ok(())
    }

    fn forward_impl(&self, image: &Tensor, record: bool) -> Result<(Tensor, Option<ForwardTape>)> {
        self.check_input(image)?;
        let s = image.shape();
        let normalized = self.normalize(image);
        let rgb = concat_channels(&concat_channels(&normalized, &normalized)?, &normalized)?;
        let (deep_out, deep_tape) = branch_forward(&self.deep, rgb, record)?;
        let (shallow_out, shallow_tape) = branch_forward(&self.shallow, normalized, record)?;
        let deep_channels = deep_out.shape().channels;
        let fused_in = concat_channels(&deep_out, &shallow_out)?;
        let fused = self.fusion.forward(&fused_in)?;
        let out = bilinear_resize(&fused, s.height, s.width)?;
        let tape = match (deep_tape, shallow_tape) {
            (Some(deep), Some(shallow)) => Some(ForwardTape {
                deep,
                shallow,
                deep_channels,
                fusion_output_shape: fused.shape(),
                fusion_input: fused_in,
            }),
            _ => None,
        };
        Ok((out, tape))
    }

    /// Raw (unclamped) density for training, shape `(B, 1, H, W)`.
    pub fn forward_train(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward_impl(image, false)?.0)
    }

    /// Intermediate branch outputs for an input, for shape inspection.
    pub fn branch_outputs(&self, image: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_input(image)?;
        let normalized = self.normalize(image);
        let rgb = concat_channels(&concat_channels(&normalized, &normalized)?, &normalized)?;
        let (deep, _) = branch_forward(&self.deep, rgb, false)?;
        let (shallow, _) = branch_forward(&self.shallow, normalized, false)?;
        let fused = self.fusion.forward(&concat_channels(&deep, &shallow)?)?;
        Ok((deep, shallow, fused))
    }

    /// One forward/backward pass on a batch of raw-pixel patches.
    ///
    /// Images are reflect-padded to a multiple of 8, the prediction is
    /// cropped back to the ground-truth size and compared under the L2 loss.
    /// Parameter gradients are accumulated; the loss is returned.
    pub fn accumulate_gradients(&mut self, images: &Tensor, targets: &Tensor, norm: LossNorm) -> Result<f64> {
        let (padded, crop) = pad_to_multiple(images, OUTPUT_STRIDE);
        let (full, tape) = self.forward_impl(&padded, true)?;
        let tape = tape.expect("tape recorded");
        let pred = crop.apply(&full)?;
        let (loss, grad) = l2_loss_with(&pred, targets, norm)?;
        let ps = padded.shape();
        let grad = grad.zero_extend(ps.height, ps.width)?;
        self.backward(tape, grad)?;
        Ok(loss)
    }

    fn backward(&mut self, tape: ForwardTape, grad: Tensor) -> Result<()> {
        let g_fused = bilinear_resize_backward(tape.fusion_output_shape, &grad)?;
        let g_cat = self
            .fusion
            .backward(&tape.fusion_input, &g_fused, true)?
            .expect("input gradient requested");
        let (g_deep, g_shallow) = concat_channels_backward(&g_cat, tape.deep_channels)?;
        branch_backward(&mut self.deep, tape.deep, g_deep)?;
        branch_backward(&mut self.shallow, tape.shallow, g_shallow)?;
        Ok(())
    }

    /// Loss of the current parameters without touching gradients.
    pub fn loss(&self, images: &Tensor, targets: &Tensor, norm: LossNorm) -> Result<f64> {
        let (padded, crop) = pad_to_multiple(images, OUTPUT_STRIDE);
        let pred = crop.apply(&self.forward_train(&padded)?)?;
        Ok(l2_loss_with(&pred, targets, norm)?.0)
    }

    /// Applies one SGD-with-momentum step to every parameter and clears the
    /// gradients.
    pub fn sgd_step(&mut self, lr: f32, momentum: f32) -> Result<()> {
        for c in self.conv_layers_mut() {
            sgd_update(&format!("{}.weight", c.name), &mut c.weight, lr, momentum)?;
            sgd_update(&format!("{}.bias", c.name), &mut c.bias, lr, momentum)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for c in self.conv_layers_mut() {
            c.weight.zero_grad();
            c.bias.zero_grad();
        }
    }

    pub fn max_abs_grad(&self) -> f32 {
        self.conv_layers()
            .map(|c| c.weight.gradient.max_abs().max(c.bias.gradient.max_abs()))
            .fold(0.0, |m, g| if m.is_nan() || g.is_nan() { f32::NAN } else { m.max(g) })
    }
}

/// Inference-mode density for an input whose sides are multiples of 8;
/// negative predictions are clamped to zero.
pub fn forward_density(net: &Network, image: &Tensor) -> Result<Tensor> {
    Ok(net.forward_train(image)?.map(|v| v.max(0.0)))
}

/// Inference on any image size via reflect padding and cropping.
pub fn predict_density(net: &Network, image: &Tensor) -> Result<Tensor> {
    let (padded, crop) = pad_to_multiple(image, OUTPUT_STRIDE);
    crop.apply(&forward_density(net, &padded)?)
}

/// Reflection about the edge pixel (the edge itself is not repeated).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflect-pads the bottom and right edges up to the next multiple of `m`.
pub fn pad_to_multiple(image: &Tensor, m: usize) -> (Tensor, CropRecord) {
    let s = image.shape();
    let m = m.max(1);
    let crop = CropRecord {
        height: s.height,
        width: s.width,
    };
    let h = s.height.div_ceil(m) * m;
    let w = s.width.div_ceil(m) * m;
    if (h, w) == (s.height, s.width) || s.height == 0 || s.width == 0 {
        return (image.clone(), crop);
    }
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, h, w));
    let xs: Vec<usize> = (0..w).map(|x| reflect(x, s.width)).collect();
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = image.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..h {
                let sy = reflect(y, s.height);
                let src_row = &src[sy * s.width..(sy + 1) * s.width];
                for (d, &sx) in dst[y * w..(y + 1) * w].iter_mut().zip(&xs) {
                    *d = src_row[sx];
                }
            }
        }
    }
    (out, crop)
}

/// Person count: the `f64` sum over the density map.
pub fn count_from_density(density: &Tensor) -> f64 {
    density.sum()
}

pub fn count_from_map(density: &DensityMap) -> f64 {
    density.sum()
}

//! The deep-prior generator: a MultiRes-style convolutional autoencoder
//! with residual skip paths, plus its fixed noise input.
//!
//! Architecture (depth `d`, base filter count `F`):
//!
//! - Encoder: `d` MultiRes blocks (filter budget `3F/2`) each followed by a
//!   2x2 stride-2 downsampling convolution with `F` filters.
//! - Bottleneck: one MultiRes block with budget `2F`.
//! - Decoder: per level, nearest-neighbor 2x upsampling followed by a 2x2
//!   convolution with `F` filters, concatenated with the residual skip path
//!   of that level ((d - l) conv units of width `F*(d+1-l)/8`), then a
//!   MultiRes block with budget `3F/2`.
//! - Head: linear 1x1 convolution to the output channel count.
//!
//! A MultiRes block chains three k x k convolutions with filter split
//! budget/6, budget/3, remainder; their concatenation is summed with a
//! normalized 1x1 shortcut and passed through the leaky activation.
//! Instance-style normalization and leaky activations (slope 0.1) follow
//! every convolution except residual-unit shortcuts and the head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SfrError};
use crate::nn::{
    upsample2x_backward, upsample2x_forward, Conv2d, InstanceNorm, LeakyRelu, ParamKind,
};
use crate::signal::ImpulseResponseGrid;
use crate::tensor::{Scalar, Tensor};

/// Architecture description; all widths derive deterministically from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of down/up-sampling stages.
    pub depth: usize,
    /// Base filter count; every internal width is a fixed multiple of it.
    pub base_filters: usize,
    /// Kernel size of the MultiRes block convolutions (odd).
    pub kernel_size: usize,
    /// Channels of the noise input tensor.
    pub input_channels: usize,
    /// Output channels (1 for an RIR grid).
    pub output_channels: usize,
    /// Seed for deterministic parameter initialization.
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_filters: 128,
            kernel_size: 3,
            input_channels: 128,
            output_channels: 1,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(SfrError::InvalidArgument("depth must be at least 1".into()));
        }
        if self.base_filters < 1 {
            return Err(SfrError::InvalidArgument(
                "base_filters must be at least 1".into(),
            ));
        }
        if self.kernel_size % 2 == 0 {
            return Err(SfrError::InvalidArgument(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.input_channels < 1 || self.output_channels < 1 {
            return Err(SfrError::InvalidArgument(
                "channel counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn block_budget(&self) -> usize {
        self.base_filters + self.base_filters / 2
    }
    fn bottleneck_budget(&self) -> usize {
        2 * self.base_filters
    }
    fn sampling_filters(&self) -> usize {
        self.base_filters
    }
    fn res_width(&self, level: usize) -> usize {
        1.max(self.base_filters * (self.depth + 1 - level) / 8)
    }
}

/// Chain filter split of a MultiRes block budget: ~1/6, ~1/3, remainder.
fn block_split(budget: usize) -> (usize, usize, usize) {
    let w1 = 1.max(budget / 6);
    let w2 = 1.max(budget / 3);
    let w3 = 1.max(budget.saturating_sub(w1 + w2));
    (w1, w2, w3)
}

fn block_out_channels(budget: usize) -> usize {
    let (w1, w2, w3) = block_split(budget);
    w1 + w2 + w3
}

/// Fixed noise tensor fed to the generator.
#[derive(Debug, Clone)]
pub struct NoiseInput {
    tensor: Tensor<f32>,
    variance: f64,
    seed: u64,
}

impl NoiseInput {
    /// Spatial rows (N).
    pub fn n(&self) -> usize {
        self.tensor.height()
    }
    /// Spatial columns (M).
    pub fn m(&self) -> usize {
        self.tensor.width()
    }
    pub fn channels(&self) -> usize {
        self.tensor.channels()
    }
    pub fn variance(&self) -> f64 {
        self.variance
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        self.tensor.cast()
    }
}

/// Draw an immutable i.i.d. Gaussian noise input of shape C×N×M.
pub fn sample_noise_input(
    n: usize,
    m: usize,
    c: usize,
    variance: f64,
    seed: u64,
) -> Result<NoiseInput> {
    if n < 1 || m < 1 || c < 1 {
        return Err(SfrError::InvalidArgument(format!(
            "noise dimensions must be positive, got {n}x{m}x{c}"
        )));
    }
    if !(variance.is_finite() && variance > 0.0) {
        return Err(SfrError::InvalidArgument(format!(
            "noise variance must be positive, got {variance}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, variance.sqrt()).expect("positive std");
    let data: Vec<f32> = (0..c * n * m)
        .map(|_| normal.sample(&mut rng) as f32)
        .collect();
    Ok(NoiseInput {
        tensor: Tensor::from_vec(data, c, n, m),
        variance,
        seed,
    })
}

/// Padded spatial dimensions plus the crop restoring the original ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadSpec {
    pub padded: (usize, usize),
    pub original: (usize, usize),
}

impl PadSpec {
    pub fn is_identity(&self) -> bool {
        self.padded == self.original
    }
}

/// Smallest dimensions >= the given ones divisible by 2^depth.
pub fn pad_to_grid(grid_dims: (usize, usize), depth: usize) -> PadSpec {
    let unit = 1usize << depth;
    let round_up = |v: usize| v.div_ceil(unit) * unit;
    PadSpec {
        padded: (round_up(grid_dims.0), round_up(grid_dims.1)),
        original: grid_dims,
    }
}

// ---------------------------------------------------------------- components

#[derive(Debug, Clone)]
struct MultiResBlock<T: Scalar> {
    conv1: Conv2d<T>,
    norm1: InstanceNorm<T>,
    act1: LeakyRelu<T>,
    conv2: Conv2d<T>,
    norm2: InstanceNorm<T>,
    act2: LeakyRelu<T>,
    conv3: Conv2d<T>,
    norm3: InstanceNorm<T>,
    act3: LeakyRelu<T>,
    shortcut: Conv2d<T>,
    shortcut_norm: InstanceNorm<T>,
    act_out: LeakyRelu<T>,
    split: (usize, usize, usize),
}

impl<T: Scalar> MultiResBlock<T> {
    fn new(prefix: &str, c_in: usize, budget: usize, k: usize, init: &mut InitStream) -> Self {
        let (w1, w2, w3) = block_split(budget);
        let out = w1 + w2 + w3;
        let mut conv1 = Conv2d::same(format!("{prefix}.conv1"), c_in, w1, k);
        let mut conv2 = Conv2d::same(format!("{prefix}.conv2"), w1, w2, k);
        let mut conv3 = Conv2d::same(format!("{prefix}.conv3"), w2, w3, k);
        let mut shortcut = Conv2d::same(format!("{prefix}.shortcut"), c_in, out, 1);
        init.leaky_conv(&mut conv1);
        init.leaky_conv(&mut conv2);
        init.leaky_conv(&mut conv3);
        init.leaky_conv(&mut shortcut);
        Self {
            norm1: InstanceNorm::new(format!("{prefix}.norm1"), w1),
            norm2: InstanceNorm::new(format!("{prefix}.norm2"), w2),
            norm3: InstanceNorm::new(format!("{prefix}.norm3"), w3),
            shortcut_norm: InstanceNorm::new(format!("{prefix}.shortcut_norm"), out),
            act1: LeakyRelu::new(LeakyRelu::<T>::DEFAULT_SLOPE),
            act2: LeakyRelu::new(LeakyRelu::<T>::DEFAULT_SLOPE),
            act3: LeakyRelu::new(LeakyRelu::<T>::DEFAULT_SLOPE),
            act_out: LeakyRelu::new(LeakyRelu::<T>::DEFAULT_SLOPE),
            conv1,
            conv2,
            conv3,
            shortcut,
            split: (w1, w2, w3),
        }
    }

    fn out_channels(&self) -> usize {
        self.split.0 + self.split.1 + self.split.2
    }

    fn forward(&mut self, x: &Tensor<T>, keep: bool) -> Tensor<T> {
        let y1 = self
            .act1
            .forward(&self.norm1.forward(&self.conv1.forward(x, keep), keep), keep);
        let y2 = self
            .act2
            .forward(&self.norm2.forward(&self.conv2.forward(&y1, keep), keep), keep);
        let y3 = self
            .act3
            .forward(&self.norm3.forward(&self.conv3.forward(&y2, keep), keep), keep);
        let s = self
            .shortcut_norm
            .forward(&self.shortcut.forward(x, keep), keep);
        let mut cat = Tensor::concat_channels(&[&y1, &y2, &y3]);
        cat.add_assign_tensor(&s);
        self.act_out.forward(&cat, keep)
    }

    fn backward(&mut self, dout: &Tensor<T>) -> Tensor<T> {
        let dsum = self.act_out.backward(dout);
        let dx_short = self
            .shortcut
            .backward(&self.shortcut_norm.backward(&dsum));
        let (w1, w2, w3) = self.split;
        let parts = dsum.split_channels(&[w1, w2, w3]);
        let (dy1, mut dy2, dy3) = {
            let mut it = parts.into_iter();
            (it.next().unwrap(), it.next().unwrap(), it.next().unwrap())
        };
        let dx3 = self
            .conv3
            .backward(&self.norm3.backward(&self.act3.backward(&dy3)));
        dy2.add_assign_tensor(&dx3);
        let mut dy1_total = dy1;
        let dx2 = self
            .conv2
            .backward(&self.norm2.backward(&self.act2.backward(&dy2)));
        dy1_total.add_assign_tensor(&dx2);
        let mut dx = self
            .conv1
            .backward(&self.norm1.backward(&self.act1.backward(&dy1_total)));
        dx.add_assign_tensor(&dx_short);
        dx
    }

    fn clear_caches(&mut self) {
        self.conv1.clear_cache();
        self.conv2.clear_cache();
        self.conv3.clear_cache();
        self.shortcut.clear_cache();
        self.norm1.clear_cache();
        self.norm2.clear_cache();
        self.norm3.clear_cache();
        self.shortcut_norm.clear_cache();
        self.act1.clear_cache();
        self.act2.clear_cache();
        self.act3.clear_cache();
        self.act_out.clear_cache();
    }
}

/// Down- or up-sampling stage: (optional nearest-neighbor 2x upsample),
/// 2x2 convolution, normalization, activation.
#[derive(Debug, Clone)]
struct Sampler<T: Scalar> {
    conv: Conv2d<T>,
    norm: InstanceNorm<T>,
    act: LeakyRelu<T>,
    upsample_first: bool,
}

impl<T: Scalar> Sampler<T> {
    fn down(prefix: &str, c_in: usize, c_out: usize, init: &mut InitStream) -> Self {
        // kernel = stride = 2: every input pixel covered exactly once.
        let mut conv = Conv2d::new(format!("{prefix}.conv"), c_in, c_out, 2, 2, 2, (0, 0, 0, 0));
        init.leaky_conv(&mut conv);
        Self {
            norm: InstanceNorm::new(format!("{prefix}.norm"), c_out),
            act: LeakyRelu::new(LeakyRelu::<T>::DEFAULT_SLOPE),
            conv,
            upsample_first: false,
        }
    }

    fn up(prefix: &str, c_in: usize, c_out: usize, init: &mut InitStream) -> Self {
        // 2x2 smoothing conv after nearest-neighbor upsampling; asymmetric
        // right/bottom padding keeps the spatial size.
        let mut conv = Conv2d::new(format!("{prefix}.conv"), c_in, c_out, 2, 2, 1, (0, 1, 0, 1));
        init.leaky_conv(&mut conv);
        Self {
            norm: InstanceNorm::new(format!("{prefix}.norm"), c_out),
            act: LeakyRelu::new(LeakyRelu::<T>::DEFAULT_SLOPE),
            conv,
            upsample_first: true,
        }
    }

    fn forward(&mut self, x: &Tensor<T>, keep: bool) -> Tensor<T> {
        let pre;
        let xin = if self.upsample_first {
            pre = upsample2x_forward(x);
            &pre
        } else {
            x
        };
        self.act
            .forward(&self.norm.forward(&self.conv.forward(xin, keep), keep), keep)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let dpre = self
            .conv
            .backward(&self.norm.backward(&self.act.backward(dy)));
        if self.upsample_first {
            upsample2x_backward(&dpre)
        } else {
            dpre
        }
    }

    fn clear_caches(&mut self) {
        self.conv.clear_cache();
        self.norm.clear_cache();
        self.act.clear_cache();
    }
}

/// One residual-path unit: 3x3 conv plus 1x1 shortcut, normalized sum,
/// leaky activation.
#[derive(Debug, Clone)]
struct ResUnit<T: Scalar> {
    conv: Conv2d<T>,
    shortcut: Conv2d<T>,
    norm: InstanceNorm<T>,
    act: LeakyRelu<T>,
}

impl<T: Scalar> ResUnit<T> {
    fn new(prefix: &str, c_in: usize, width: usize, init: &mut InitStream) -> Self {
        let mut conv = Conv2d::same(format!("{prefix}.conv"), c_in, width, 3);
        let mut shortcut = Conv2d::same(format!("{prefix}.shortcut"), c_in, width, 1);
        init.leaky_conv(&mut conv);
        init.leaky_conv(&mut shortcut);
        Self {
            norm: InstanceNorm::new(format!("{prefix}.norm"), width),
            act: LeakyRelu::new(LeakyRelu::<T>::DEFAULT_SLOPE),
            conv,
            shortcut,
        }
    }

    fn forward(&mut self, x: &Tensor<T>, keep: bool) -> Tensor<T> {
        let mut s = self.conv.forward(x, keep);
        s.add_assign_tensor(&self.shortcut.forward(x, keep));
        self.act.forward(&self.norm.forward(&s, keep), keep)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let ds = self.norm.backward(&self.act.backward(dy));
        let mut dx = self.conv.backward(&ds);
        dx.add_assign_tensor(&self.shortcut.backward(&ds));
        dx
    }

    fn clear_caches(&mut self) {
        self.conv.clear_cache();
        self.shortcut.clear_cache();
        self.norm.clear_cache();
        self.act.clear_cache();
    }
}

/// Deterministic parameter-initialization stream.
struct InitStream {
    rng: ChaCha8Rng,
}

impl InitStream {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-style Gaussian init matched to the leaky slope.
    fn leaky_conv<T: Scalar>(&mut self, conv: &mut Conv2d<T>) {
        let slope = LeakyRelu::<T>::DEFAULT_SLOPE;
        let (_, c_in, k_h, k_w) = conv.shape();
        let fan_in = (c_in * k_h * k_w) as f64;
        let std = (2.0 / (1.0 + slope * slope) / fan_in).sqrt();
        self.fill(&mut conv.weight, std);
    }

    /// Plain 1/sqrt(fan_in) Gaussian init for the linear head.
    fn linear_conv<T: Scalar>(&mut self, conv: &mut Conv2d<T>) {
        let (_, c_in, k_h, k_w) = conv.shape();
        let fan_in = (c_in * k_h * k_w) as f64;
        let std = (1.0 / fan_in).sqrt();
        self.fill(&mut conv.weight, std);
    }

    fn fill<T: Scalar>(&mut self, data: &mut [T], std: f64) {
        let normal = Normal::new(0.0f64, std).expect("positive std");
        for v in data {
            *v = T::from_f64(normal.sample(&mut self.rng));
        }
    }
}

// -------------------------------------------------------------------- network

/// The instantiated deep-prior generator.
#[derive(Debug, Clone)]
pub struct DpNetwork<T: Scalar> {
    config: NetworkConfig,
    enc: Vec<MultiResBlock<T>>,
    down: Vec<Sampler<T>>,
    bottleneck: MultiResBlock<T>,
    /// Indexed by level (0 = finest).
    up: Vec<Sampler<T>>,
    /// `res[l]` holds the (depth - l) units of level l's skip path.
    res: Vec<Vec<ResUnit<T>>>,
    dec: Vec<MultiResBlock<T>>,
    head: Conv2d<T>,
}

/// Build a deterministic network from its config.
pub fn build_network<T: Scalar>(config: &NetworkConfig) -> Result<DpNetwork<T>> {
    config.validate()?;
    let mut init = InitStream::new(config.seed);
    let depth = config.depth;
    let k = config.kernel_size;
    let f_samp = config.sampling_filters();
    let block_out = block_out_channels(config.block_budget());

    let mut enc = Vec::with_capacity(depth);
    let mut down = Vec::with_capacity(depth);
    let mut c_in = config.input_channels;
    for l in 0..depth {
        let block = MultiResBlock::new(&format!("enc{l}"), c_in, config.block_budget(), k, &mut init);
        down.push(Sampler::down(
            &format!("down{l}"),
            block.out_channels(),
            f_samp,
            &mut init,
        ));
        enc.push(block);
        c_in = f_samp;
    }
    let bottleneck = MultiResBlock::new("bottleneck", f_samp, config.bottleneck_budget(), k, &mut init);

    let mut up_rev = Vec::with_capacity(depth);
    let mut res_rev = Vec::with_capacity(depth);
    let mut dec_rev = Vec::with_capacity(depth);
    let mut prev = block_out_channels(config.bottleneck_budget());
    for l in (0..depth).rev() {
        up_rev.push(Sampler::up(&format!("up{l}"), prev, f_samp, &mut init));
        let width = config.res_width(l);
        let mut units = Vec::with_capacity(depth - l);
        let mut rin = block_out;
        for u in 0..depth - l {
            units.push(ResUnit::new(&format!("res{l}.unit{u}"), rin, width, &mut init));
            rin = width;
        }
        res_rev.push(units);
        let block = MultiResBlock::new(
            &format!("dec{l}"),
            f_samp + width,
            config.block_budget(),
            k,
            &mut init,
        );
        prev = block.out_channels();
        dec_rev.push(block);
    }
    up_rev.reverse();
    res_rev.reverse();
    dec_rev.reverse();

    let mut head = Conv2d::same("head", prev, config.output_channels, 1);
    init.linear_conv(&mut head);

    Ok(DpNetwork {
        config: config.clone(),
        enc,
        down,
        bottleneck,
        up: up_rev,
        res: res_rev,
        dec: dec_rev,
        head,
    })
}

impl<T: Scalar> DpNetwork<T> {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.config.input_channels {
            return Err(SfrError::ShapeMismatch(format!(
                "network expects {} input channels, got {}",
                self.config.input_channels,
                x.channels()
            )));
        }
        let unit = 1usize << self.config.depth;
        if x.height() % unit != 0 || x.width() % unit != 0 {
            return Err(SfrError::ShapeMismatch(format!(
                "spatial dims {}x{} must be divisible by 2^depth = {unit} (see pad_to_grid)",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// Full forward pass on a C×H×W tensor. With `keep_caches` the layers
    /// retain what [`DpNetwork::backward`] needs.
    pub fn forward_tensor(&mut self, x: &Tensor<T>, keep_caches: bool) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut cur = x.clone();
        for l in 0..depth {
            let e = self.enc[l].forward(&cur, keep_caches);
            cur = self.down[l].forward(&e, keep_caches);
            skips.push(e);
        }
        cur = self.bottleneck.forward(&cur, keep_caches);
        for l in (0..depth).rev() {
            let u = self.up[l].forward(&cur, keep_caches);
            let mut r = skips[l].clone();
            for unit in &mut self.res[l] {
                r = unit.forward(&r, keep_caches);
            }
            let cat = Tensor::concat_channels(&[&u, &r]);
            cur = self.dec[l].forward(&cat, keep_caches);
        }
        Ok(self.head.forward(&cur, keep_caches))
    }

    /// Back-propagate dL/dy, accumulating parameter gradients; returns
    /// dL/dx. Requires a preceding cached forward pass.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let depth = self.config.depth;
        let f_samp = self.config.sampling_filters();
        let mut d = self.head.backward(dy);
        let mut d_skips: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
        for l in 0..depth {
            let dcat = self.dec[l].backward(&d);
            let width = self.config.res_width(l);
            let parts = dcat.split_channels(&[f_samp, width]);
            let (du, mut dr) = {
                let mut it = parts.into_iter();
                (it.next().unwrap(), it.next().unwrap())
            };
            for unit in self.res[l].iter_mut().rev() {
                dr = unit.backward(&dr);
            }
            d_skips[l] = Some(dr);
            d = self.up[l].backward(&du);
        }
        d = self.bottleneck.backward(&d);
        for l in (0..depth).rev() {
            let mut de = self.down[l].backward(&d);
            if let Some(extra) = d_skips[l].take() {
                de.add_assign_tensor(&extra);
            }
            d = self.enc[l].backward(&de);
        }
        d
    }

    /// Generate the RIR grid estimate for a noise input.
    pub fn forward(&mut self, z: &NoiseInput) -> Result<ImpulseResponseGrid> {
        let y = self.forward_tensor(&z.to_tensor::<T>(), false)?;
        let (n, m) = (y.height(), y.width());
        let mut samples = Vec::with_capacity(n * m);
        for j in 0..m {
            for i in 0..n {
                samples.push(y.at(0, i, j).to_f64());
            }
        }
        ImpulseResponseGrid::new(samples, n, m, 1.0, 1.0, "dp-output")
    }

    /// Visit every parameter tensor (including frozen and adapter ones) in
    /// the canonical construction order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, ParamKind, &[T])) {
        self.traverse(&mut |part| part.visit(f));
    }

    /// Mutable visit over (value, gradient) pairs in canonical order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Vec<T>, &mut Vec<T>)) {
        self.traverse_mut(&mut |mut part| part.visit_mut(f));
    }

    /// Visit every convolution layer mutably in canonical order.
    pub fn visit_convs_mut(&mut self, f: &mut dyn FnMut(&mut Conv2d<T>)) {
        self.traverse_mut(&mut |part| {
            if let PartMut::Conv(c) = part {
                f(c)
            }
        });
    }

    /// Visit every convolution layer in canonical order.
    pub fn visit_convs(&self, f: &mut dyn FnMut(&Conv2d<T>)) {
        self.traverse(&mut |part| {
            if let Part::Conv(c) = part {
                f(c)
            }
        });
    }

    /// True once any adapter is attached.
    pub fn is_adapted(&self) -> bool {
        let mut adapted = false;
        self.visit_convs(&mut |c| adapted |= c.adapter.is_some());
        adapted
    }

    /// Count of currently trainable scalars: adapter parameters when
    /// adapters are attached, otherwise all base parameters.
    pub fn count_parameters(&self) -> usize {
        if self.is_adapted() {
            let mut n = 0;
            self.visit_params(&mut |_, kind, data| {
                if !kind.is_base() {
                    n += data.len();
                }
            });
            n
        } else {
            self.count_base_parameters()
        }
    }

    /// Count of base (non-adapter) parameters regardless of adapters.
    pub fn count_base_parameters(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, kind, data| {
            if kind.is_base() {
                n += data.len();
            }
        });
        n
    }

    /// SHA-256 over all base parameter values in canonical order.
    pub fn base_parameter_hash(&self) -> String {
        let mut hasher = Sha256::new();
        self.visit_params(&mut |name, kind, data| {
            if kind.is_base() {
                hasher.update(name.as_bytes());
                hasher.update([0u8]);
                hasher.update(kind.tag().as_bytes());
                for v in data {
                    hasher.update(v.to_f64().to_le_bytes());
                }
            }
        });
        hex_string(&hasher.finalize())
    }

    /// Stable architecture fingerprint over the config and the ordered
    /// convolution layer names and shapes (not the weights).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"dp-network-v1\n");
        let c = &self.config;
        hasher.update(
            format!(
                "depth={} base_filters={} kernel_size={} input_channels={} output_channels={}\n",
                c.depth, c.base_filters, c.kernel_size, c.input_channels, c.output_channels
            )
            .as_bytes(),
        );
        self.visit_convs(&mut |conv| {
            let (co, ci, kh, kw) = conv.shape();
            hasher.update(format!("{} {co} {ci} {kh} {kw}\n", conv.name()).as_bytes());
        });
        hex_string(&hasher.finalize())
    }

    /// Zero all gradients.
    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, _, _, grad| grad.fill(T::ZERO));
    }

    /// Drop all forward caches (frees activation memory).
    pub fn clear_caches(&mut self) {
        let depth = self.config.depth;
        for l in 0..depth {
            self.enc[l].clear_caches();
            self.down[l].clear_caches();
            self.up[l].clear_caches();
            for u in &mut self.res[l] {
                u.clear_caches();
            }
            self.dec[l].clear_caches();
        }
        self.bottleneck.clear_caches();
        self.head.clear_cache();
    }

    /// Cast the whole network (weights only, no caches) to another scalar
    /// type; used to run gradient checks in double precision. Only valid
    /// on non-adapted networks (adapters are separate value objects).
    pub fn cast<U: Scalar>(&self) -> DpNetwork<U> {
        assert!(!self.is_adapted(), "cast requires a detached network");
        let mut target: DpNetwork<U> =
            build_network(&self.config).expect("config was validated at construction");
        let mut values: Vec<(String, ParamKind, Vec<f64>)> = Vec::new();
        self.visit_params(&mut |name, kind, data| {
            values.push((name.to_string(), kind, data.iter().map(|v| v.to_f64()).collect()));
        });
        let mut i = 0;
        target.visit_params_mut(&mut |name, kind, data, _| {
            let (ref src_name, src_kind, ref src) = values[i];
            assert_eq!((src_name.as_str(), src_kind), (name, kind), "cast order");
            for (d, s) in data.iter_mut().zip(src.iter()) {
                *d = U::from_f64(*s);
            }
            i += 1;
        });
        target
    }

    fn traverse(&self, f: &mut dyn FnMut(Part<'_, T>)) {
        let depth = self.config.depth;
        for l in 0..depth {
            visit_block(&self.enc[l], f);
            f(Part::Conv(&self.down[l].conv));
            f(Part::Norm(&self.down[l].norm));
        }
        visit_block(&self.bottleneck, f);
        for l in (0..depth).rev() {
            f(Part::Conv(&self.up[l].conv));
            f(Part::Norm(&self.up[l].norm));
            for u in &self.res[l] {
                f(Part::Conv(&u.conv));
                f(Part::Conv(&u.shortcut));
                f(Part::Norm(&u.norm));
            }
            visit_block(&self.dec[l], f);
        }
        f(Part::Conv(&self.head));
    }

    fn traverse_mut(&mut self, f: &mut dyn FnMut(PartMut<'_, T>)) {
        let depth = self.config.depth;
        for l in 0..depth {
            visit_block_mut(&mut self.enc[l], f);
            f(PartMut::Conv(&mut self.down[l].conv));
            f(PartMut::Norm(&mut self.down[l].norm));
        }
        visit_block_mut(&mut self.bottleneck, f);
        for l in (0..depth).rev() {
            f(PartMut::Conv(&mut self.up[l].conv));
            f(PartMut::Norm(&mut self.up[l].norm));
            for u in &mut self.res[l] {
                f(PartMut::Conv(&mut u.conv));
                f(PartMut::Conv(&mut u.shortcut));
                f(PartMut::Norm(&mut u.norm));
            }
            visit_block_mut(&mut self.dec[l], f);
        }
        f(PartMut::Conv(&mut self.head));
    }
}

enum Part<'a, T: Scalar> {
    Conv(&'a Conv2d<T>),
    Norm(&'a InstanceNorm<T>),
}

enum PartMut<'a, T: Scalar> {
    Conv(&'a mut Conv2d<T>),
    Norm(&'a mut InstanceNorm<T>),
}

impl<'a, T: Scalar> Part<'a, T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &[T])) {
        match self {
            Part::Conv(c) => {
                f(&format!("{}.weight", c.name()), ParamKind::ConvWeight, &c.weight);
                f(&format!("{}.bias", c.name()), ParamKind::ConvBias, &c.bias);
                if let Some(ad) = &c.adapter {
                    f(&format!("{}.lora_a", c.name()), ParamKind::LoraA, &ad.a);
                    f(&format!("{}.lora_b", c.name()), ParamKind::LoraB, &ad.b);
                }
            }
            Part::Norm(n) => {
                f(&format!("{}.gain", n.name()), ParamKind::NormGain, &n.gain);
                f(&format!("{}.bias", n.name()), ParamKind::NormBias, &n.bias);
            }
        }
    }
}

impl<'a, T: Scalar> PartMut<'a, T> {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Vec<T>, &mut Vec<T>)) {
        match self {
            PartMut::Conv(c) => {
                let name = c.name().to_string();
                f(&format!("{name}.weight"), ParamKind::ConvWeight, &mut c.weight, &mut c.grad_weight);
                f(&format!("{name}.bias"), ParamKind::ConvBias, &mut c.bias, &mut c.grad_bias);
                if let Some(ad) = &mut c.adapter {
                    f(&format!("{name}.lora_a"), ParamKind::LoraA, &mut ad.a, &mut ad.grad_a);
                    f(&format!("{name}.lora_b"), ParamKind::LoraB, &mut ad.b, &mut ad.grad_b);
                }
            }
            PartMut::Norm(n) => {
                let name = n.name().to_string();
                f(&format!("{name}.gain"), ParamKind::NormGain, &mut n.gain, &mut n.grad_gain);
                f(&format!("{name}.bias"), ParamKind::NormBias, &mut n.bias, &mut n.grad_bias);
            }
        }
    }
}

fn visit_block<T: Scalar>(b: &MultiResBlock<T>, f: &mut dyn FnMut(Part<'_, T>)) {
    f(Part::Conv(&b.conv1));
    f(Part::Norm(&b.norm1));
    f(Part::Conv(&b.conv2));
    f(Part::Norm(&b.norm2));
    f(Part::Conv(&b.conv3));
    f(Part::Norm(&b.norm3));
    f(Part::Conv(&b.shortcut));
    f(Part::Norm(&b.shortcut_norm));
}

fn visit_block_mut<T: Scalar>(b: &mut MultiResBlock<T>, f: &mut dyn FnMut(PartMut<'_, T>)) {
    f(PartMut::Conv(&mut b.conv1));
    f(PartMut::Norm(&mut b.norm1));
    f(PartMut::Conv(&mut b.conv2));
    f(PartMut::Norm(&mut b.norm2));
    f(PartMut::Conv(&mut b.conv3));
    f(PartMut::Norm(&mut b.norm3));
    f(PartMut::Conv(&mut b.shortcut));
    f(PartMut::Norm(&mut b.shortcut_norm));
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

//! Low-rank adaptation of convolution layers.
//!
//! An adapter holds factors `A` (r×C_in×k_w) and `B` (C_out×k_h×r) whose
//! contraction, scaled by `alpha`, forms an additive weight delta
//! `dW[o,i,u,v] = alpha * sum_rho B[o,u,rho] * A[rho,i,v]`. `A` is Gaussian
//! initialized, `B` starts at zero, so a fresh adapter is an exact no-op.
//! Bundles group one adapter per adapted layer together with the base
//! model's architecture fingerprint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Result, SfrError};
use crate::net::DpNetwork;
use crate::nn::{AdapterState, Conv2d};
use crate::tensor::{Scalar, Tensor};

/// One convolution layer's low-rank factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub layer_name: String,
    /// Base weight shape (C_out, C_in, k_h, k_w).
    pub layer_shape: (usize, usize, usize, usize),
    pub rank: usize,
    pub alpha: f64,
    /// r × C_in × k_w, row-major.
    pub a: Vec<f32>,
    /// C_out × k_h × r, row-major.
    pub b: Vec<f32>,
}

impl LoraAdapter {
    pub fn a_len(shape: (usize, usize, usize, usize), rank: usize) -> usize {
        rank * shape.1 * shape.3
    }

    pub fn b_len(shape: (usize, usize, usize, usize), rank: usize) -> usize {
        shape.0 * shape.2 * rank
    }

    /// Trainable scalar count: r·C_in·k_w + C_out·k_h·r.
    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank < 1 {
            return Err(SfrError::InvalidArgument(format!(
                "adapter {}: rank must be >= 1",
                self.layer_name
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(SfrError::InvalidArgument(format!(
                "adapter {}: alpha must be positive, got {}",
                self.layer_name, self.alpha
            )));
        }
        let (c_out, c_in, k_h, k_w) = self.layer_shape;
        if c_out < 1 || c_in < 1 || k_h < 1 || k_w < 1 {
            return Err(SfrError::InvalidArgument(format!(
                "adapter {}: degenerate layer shape {:?}",
                self.layer_name, self.layer_shape
            )));
        }
        if self.a.len() != Self::a_len(self.layer_shape, self.rank)
            || self.b.len() != Self::b_len(self.layer_shape, self.rank)
        {
            return Err(SfrError::AdapterIncompatible(format!(
                "adapter {}: factor lengths ({}, {}) inconsistent with shape {:?} rank {}",
                self.layer_name,
                self.a.len(),
                self.b.len(),
                self.layer_shape,
                self.rank
            )));
        }
        if self.a.iter().chain(self.b.iter()).any(|v| !v.is_finite()) {
            return Err(SfrError::NonFinite(format!(
                "adapter {}: non-finite factor entry",
                self.layer_name
            )));
        }
        Ok(())
    }
}

/// One adapter per adapted layer plus provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterBundle {
    /// Adapters in the base model's canonical layer order.
    pub adapters: Vec<LoraAdapter>,
    pub base_model_fingerprint: String,
    pub rank: usize,
    pub alpha: f64,
    pub created_with_seed: u64,
}

impl AdapterBundle {
    pub fn get(&self, layer_name: &str) -> Option<&LoraAdapter> {
        self.adapters.iter().find(|a| a.layer_name == layer_name)
    }

    pub fn validate(&self) -> Result<()> {
        for ad in &self.adapters {
            ad.validate()?;
            if ad.rank != self.rank {
                return Err(SfrError::AdapterIncompatible(format!(
                    "bundle rank {} but adapter {} has rank {}",
                    self.rank, ad.layer_name, ad.rank
                )));
            }
        }
        let mut names: Vec<&str> = self.adapters.iter().map(|a| a.layer_name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.adapters.len() {
            return Err(SfrError::AdapterIncompatible(
                "bundle contains duplicate layer names".into(),
            ));
        }
        Ok(())
    }
}

/// The configured default scale: alpha = 2r.
pub fn default_alpha(rank: usize) -> f64 {
    2.0 * rank as f64
}

/// Fresh adapter: A ~ N(0, 1/(rank·C_in·k_w)) entrywise, B = 0, so the
/// initial delta is exactly zero.
pub fn init_adapter(
    layer_name: &str,
    layer_shape: (usize, usize, usize, usize),
    rank: usize,
    alpha: f64,
    seed: u64,
) -> Result<LoraAdapter> {
    if rank < 1 {
        return Err(SfrError::InvalidArgument("rank must be >= 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(SfrError::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let (_, c_in, _, k_w) = layer_shape;
    if layer_shape.0 < 1 || c_in < 1 || layer_shape.2 < 1 || k_w < 1 {
        return Err(SfrError::InvalidArgument(format!(
            "degenerate layer shape {layer_shape:?}"
        )));
    }
    let std = 1.0 / ((rank * c_in * k_w) as f64).sqrt();
    let normal = Normal::new(0.0f64, std).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f32> = (0..LoraAdapter::a_len(layer_shape, rank))
        .map(|_| normal.sample(&mut rng) as f32)
        .collect();
    let b = vec![0.0f32; LoraAdapter::b_len(layer_shape, rank)];
    let adapter = LoraAdapter {
        layer_name: layer_name.to_string(),
        layer_shape,
        rank,
        alpha,
        a,
        b,
    };
    adapter.validate()?;
    Ok(adapter)
}

/// Materialize the weight delta in the base layout (C_out, C_in, k_h, k_w),
/// accumulated in double precision.
pub fn compose_delta(adapter: &LoraAdapter) -> Vec<f64> {
    let (c_out, c_in, k_h, k_w) = adapter.layer_shape;
    let r = adapter.rank;
    let mut delta = vec![0.0f64; c_out * c_in * k_h * k_w];
    for o in 0..c_out {
        for u in 0..k_h {
            let brow = (o * k_h + u) * r;
            for i in 0..c_in {
                let wrow = ((o * c_in + i) * k_h + u) * k_w;
                for v in 0..k_w {
                    let mut acc = 0.0f64;
                    for rho in 0..r {
                        acc += adapter.b[brow + rho] as f64
                            * adapter.a[(rho * c_in + i) * k_w + v] as f64;
                    }
                    delta[wrow + v] = adapter.alpha * acc;
                }
            }
        }
    }
    delta
}

/// Convolution with (W + dW): materializes the adapted weight on a copy of
/// the base layer and runs its forward pass.
pub fn adapted_forward<T: Scalar>(
    x: &Tensor<T>,
    base: &Conv2d<T>,
    adapter: &LoraAdapter,
) -> Result<Tensor<T>> {
    adapter.validate()?;
    if base.shape() != adapter.layer_shape {
        return Err(SfrError::ShapeMismatch(format!(
            "conv {} has shape {:?} but adapter {} expects {:?}",
            base.name(),
            base.shape(),
            adapter.layer_name,
            adapter.layer_shape
        )));
    }
    if x.channels() != base.c_in() {
        return Err(SfrError::ShapeMismatch(format!(
            "input has {} channels, conv {} expects {}",
            x.channels(),
            base.name(),
            base.c_in()
        )));
    }
    let mut conv = base.clone();
    conv.adapter = Some(to_state::<T>(adapter));
    Ok(conv.forward(x, false))
}

fn to_state<T: Scalar>(adapter: &LoraAdapter) -> AdapterState<T> {
    AdapterState {
        rank: adapter.rank,
        alpha: adapter.alpha,
        a: adapter.a.iter().map(|&v| T::from_f64(v as f64)).collect(),
        b: adapter.b.iter().map(|&v| T::from_f64(v as f64)).collect(),
        grad_a: vec![T::ZERO; adapter.a.len()],
        grad_b: vec![T::ZERO; adapter.b.len()],
    }
}

/// Deterministic per-layer seed: a stable hash of (bundle seed, layer name)
/// so every layer draws an independent but reproducible A.
fn layer_seed(bundle_seed: u64, layer_name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"lora-init-v1");
    hasher.update(bundle_seed.to_le_bytes());
    hasher.update(layer_name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Fresh bundle covering every convolution layer of the network.
pub fn new_bundle<T: Scalar>(
    net: &DpNetwork<T>,
    rank: usize,
    alpha: Option<f64>,
    seed: u64,
) -> Result<AdapterBundle> {
    new_bundle_filtered(net, rank, alpha, seed, &|_| true)
}

/// Fresh bundle covering the convolution layers selected by `keep`.
pub fn new_bundle_filtered<T: Scalar>(
    net: &DpNetwork<T>,
    rank: usize,
    alpha: Option<f64>,
    seed: u64,
    keep: &dyn Fn(&str) -> bool,
) -> Result<AdapterBundle> {
    if rank < 1 {
        return Err(SfrError::InvalidArgument("rank must be >= 1".into()));
    }
    let alpha = alpha.unwrap_or_else(|| default_alpha(rank));
    let mut layers: Vec<(String, (usize, usize, usize, usize))> = Vec::new();
    net.visit_convs(&mut |conv| {
        if keep(conv.name()) {
            layers.push((conv.name().to_string(), conv.shape()));
        }
    });
    let mut adapters = Vec::with_capacity(layers.len());
    for (name, shape) in layers {
        adapters.push(init_adapter(&name, shape, rank, alpha, layer_seed(seed, &name))?);
    }
    let bundle = AdapterBundle {
        adapters,
        base_model_fingerprint: net.fingerprint(),
        rank,
        alpha,
        created_with_seed: seed,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Attach a bundle, turning the network into its adapted view: bundled
/// layers compute with W + dW and only adapter tensors are trainable.
pub fn attach_adapters<T: Scalar>(net: &mut DpNetwork<T>, bundle: &AdapterBundle) -> Result<()> {
    attach_adapters_with(net, bundle, false)
}

/// Attach with an explicit escape hatch for fingerprint mismatches
/// (adapters created for a same-shaped architecture variant). Per-layer
/// shape checks still apply.
pub fn attach_adapters_with<T: Scalar>(
    net: &mut DpNetwork<T>,
    bundle: &AdapterBundle,
    allow_fingerprint_mismatch: bool,
) -> Result<()> {
    bundle.validate()?;
    if net.is_adapted() {
        return Err(SfrError::InvalidArgument(
            "network already has adapters attached; detach or swap instead".into(),
        ));
    }
    if !allow_fingerprint_mismatch && bundle.base_model_fingerprint != net.fingerprint() {
        return Err(SfrError::AdapterIncompatible(format!(
            "bundle was created for fingerprint {} but the network has {}",
            bundle.base_model_fingerprint,
            net.fingerprint()
        )));
    }

    // Pre-flight: every bundled name must resolve to a shape-compatible conv.
    let mut shapes = std::collections::BTreeMap::new();
    net.visit_convs(&mut |conv| {
        shapes.insert(conv.name().to_string(), conv.shape());
    });
    for ad in &bundle.adapters {
        match shapes.get(&ad.layer_name) {
            None => return Err(SfrError::UnknownLayer(ad.layer_name.clone())),
            Some(&shape) if shape != ad.layer_shape => {
                return Err(SfrError::AdapterIncompatible(format!(
                    "layer {} has shape {:?} but adapter expects {:?}",
                    ad.layer_name, shape, ad.layer_shape
                )));
            }
            Some(_) => {}
        }
    }

    net.visit_convs_mut(&mut |conv| {
        if let Some(ad) = bundle.get(conv.name()) {
            conv.adapter = Some(to_state::<T>(ad));
        }
    });
    Ok(())
}

/// Remove all adapters, restoring the exact frozen base network. No-op on a
/// non-adapted network.
pub fn detach_adapters<T: Scalar>(net: &mut DpNetwork<T>) {
    net.visit_convs_mut(&mut |conv| conv.adapter = None);
}

/// Replace whatever adapters are attached with the given bundle.
pub fn swap_adapters<T: Scalar>(net: &mut DpNetwork<T>, bundle: &AdapterBundle) -> Result<()> {
    detach_adapters(net);
    attach_adapters(net, bundle)
}

/// Read the currently attached adapters back out as a bundle (e.g. after
/// training, before detaching).
pub fn extract_bundle<T: Scalar>(net: &DpNetwork<T>, created_with_seed: u64) -> Result<AdapterBundle> {
    let mut adapters = Vec::new();
    net.visit_convs(&mut |conv| {
        if let Some(st) = &conv.adapter {
            adapters.push(LoraAdapter {
                layer_name: conv.name().to_string(),
                layer_shape: conv.shape(),
                rank: st.rank,
                alpha: st.alpha,
                a: st.a.iter().map(|v| v.to_f64() as f32).collect(),
                b: st.b.iter().map(|v| v.to_f64() as f32).collect(),
            });
        }
    });
    if adapters.is_empty() {
        return Err(SfrError::InvalidArgument(
            "network has no adapters attached".into(),
        ));
    }
    let bundle = AdapterBundle {
        rank: adapters[0].rank,
        alpha: adapters[0].alpha,
        base_model_fingerprint: net.fingerprint(),
        created_with_seed,
        adapters,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Total adapter parameter count and its fraction of the base parameter
/// count.
pub fn bundle_param_count<T: Scalar>(bundle: &AdapterBundle, net: &DpNetwork<T>) -> (usize, f64) {
    let count: usize = bundle.adapters.iter().map(LoraAdapter::param_count).sum();
    if count == 0 {
        return (0, 0.0);
    }
    (count, count as f64 / net.count_base_parameters() as f64)
}

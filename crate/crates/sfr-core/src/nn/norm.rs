//! Batch-free per-channel (instance-style) normalization with affine
//! parameters.

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
struct NormCache<T: Scalar> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    h: usize,
    w: usize,
}

/// y_c = gain_c * (x_c - mean_c) / sqrt(var_c + eps) + bias_c, with the
/// statistics taken over the spatial extent of each channel.
#[derive(Debug, Clone)]
pub struct InstanceNorm<T: Scalar> {
    name: String,
    channels: usize,
    eps: f64,
    pub gain: Vec<T>,
    pub bias: Vec<T>,
    pub grad_gain: Vec<T>,
    pub grad_bias: Vec<T>,
    cache: Option<NormCache<T>>,
}

impl<T: Scalar> InstanceNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            eps: Self::DEFAULT_EPS,
            gain: vec![T::ONE; channels],
            bias: vec![T::ZERO; channels],
            grad_gain: vec![T::ZERO; channels],
            grad_bias: vec![T::ZERO; channels],
            cache: None,
        }
    }

    #[inline]
    pub fn name(&self) -> &str {
        &self.name
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&mut self, x: &Tensor<T>, keep_cache: bool) -> Tensor<T> {
        assert_eq!(x.channels(), self.channels, "norm {}: channels", self.name);
        let (c, h, w) = x.shape();
        let hw = h * w;
        let inv_n = T::from_f64(1.0 / hw as f64);
        let eps = T::from_f64(self.eps);

        let mut y = Tensor::zeros(c, h, w);
        let mut xhat = vec![T::ZERO; c * hw];
        let mut inv_stds = vec![T::ZERO; c];
        for ch in 0..c {
            let xc = x.channel(ch);
            let mut mean = T::ZERO;
            for &v in xc {
                mean += v;
            }
            mean *= inv_n;
            let mut var = T::ZERO;
            for &v in xc {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let inv_std = T::ONE / (var + eps).sqrt();
            inv_stds[ch] = inv_std;

            let (g, b) = (self.gain[ch], self.bias[ch]);
            let yc = y.channel_mut(ch);
            let xh = &mut xhat[ch * hw..(ch + 1) * hw];
            for i in 0..hw {
                let v = (xc[i] - mean) * inv_std;
                xh[i] = v;
                yc[i] = g * v + b;
            }
        }
        if keep_cache {
            self.cache = Some(NormCache {
                xhat,
                inv_std: inv_stds,
                h,
                w,
            });
        } else {
            self.cache = None;
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self
            .cache
            .take()
            .expect("norm backward requires a cached forward");
        let (c, h, w) = dy.shape();
        assert_eq!((c, h, w), (self.channels, cache.h, cache.w), "norm {}: dy shape", self.name);
        let hw = h * w;
        let inv_n = T::from_f64(1.0 / hw as f64);

        let mut dx = Tensor::zeros(c, h, w);
        for ch in 0..c {
            let dyc = dy.channel(ch);
            let xh = &cache.xhat[ch * hw..(ch + 1) * hw];
            let mut sum_dy = T::ZERO;
            let mut sum_dy_xhat = T::ZERO;
            for i in 0..hw {
                sum_dy += dyc[i];
                sum_dy_xhat += dyc[i] * xh[i];
            }
            self.grad_gain[ch] += sum_dy_xhat;
            self.grad_bias[ch] += sum_dy;

            let coeff = self.gain[ch] * cache.inv_std[ch];
            let mean_dy = sum_dy * inv_n;
            let mean_dy_xhat = sum_dy_xhat * inv_n;
            let dxc = dx.channel_mut(ch);
            for i in 0..hw {
                dxc[i] = coeff * (dyc[i] - mean_dy - xh[i] * mean_dy_xhat);
            }
        }
        dx
    }

    pub fn zero_grads(&mut self) {
        self.grad_gain.fill(T::ZERO);
        self.grad_bias.fill(T::ZERO);
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

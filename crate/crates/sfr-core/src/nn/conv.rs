//! 2-D convolution with explicit backward pass and optional low-rank
//! adapter, implemented as im2col + GEMM.

use crate::tensor::{matmul, matmul_nt, matmul_tn, Scalar, Tensor};

/// Attached low-rank adapter factors for one convolution.
///
/// `a` has shape r×C_in×k_w and `b` has shape C_out×k_h×r; the composed
/// delta is `dW[o,i,u,v] = alpha * sum_rho b[o,u,rho] * a[rho,i,v]`.
#[derive(Debug, Clone)]
pub struct AdapterState<T: Scalar> {
    pub rank: usize,
    pub alpha: f64,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub grad_a: Vec<T>,
    pub grad_b: Vec<T>,
}

#[derive(Debug, Clone)]
struct ForwardCache<T: Scalar> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
    /// Effective weight used in the forward pass (only stored when an
    /// adapter is attached; otherwise `weight` itself was used).
    w_eff: Option<Vec<T>>,
}

/// A named 2-D convolution layer.
///
/// Weight layout is row-major (C_out, C_in, k_h, k_w); inputs and outputs
/// are (C, H, W) tensors. Padding may be asymmetric (top, bottom, left,
/// right) to support even kernels with SAME-style output sizes.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    name: String,
    c_in: usize,
    c_out: usize,
    k_h: usize,
    k_w: usize,
    stride: usize,
    pad: (usize, usize, usize, usize),
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    pub adapter: Option<AdapterState<T>>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// New zero-initialized convolution; callers fill `weight` afterwards.
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        pad: (usize, usize, usize, usize),
    ) -> Self {
        let wlen = c_out * c_in * k_h * k_w;
        Self {
            name: name.into(),
            c_in,
            c_out,
            k_h,
            k_w,
            stride,
            pad,
            weight: vec![T::ZERO; wlen],
            bias: vec![T::ZERO; c_out],
            grad_weight: vec![T::ZERO; wlen],
            grad_bias: vec![T::ZERO; c_out],
            adapter: None,
            cache: None,
        }
    }

    /// Square-kernel SAME convolution with stride 1 (odd kernels).
    pub fn same(name: impl Into<String>, c_in: usize, c_out: usize, k: usize) -> Self {
        debug_assert!(k % 2 == 1, "SAME padding requires odd kernel");
        let p = k / 2;
        Self::new(name, c_in, c_out, k, k, 1, (p, p, p, p))
    }

    #[inline]
    pub fn name(&self) -> &str {
        &self.name
    }
    #[inline]
    pub fn c_in(&self) -> usize {
        self.c_in
    }
    #[inline]
    pub fn c_out(&self) -> usize {
        self.c_out
    }
    /// (C_out, C_in, k_h, k_w)
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.c_out, self.c_in, self.k_h, self.k_w)
    }
    #[inline]
    pub fn weight_len(&self) -> usize {
        self.weight.len()
    }

    /// Number of kernel positions (rows of the im2col matrix).
    #[inline]
    fn patch_len(&self) -> usize {
        self.c_in * self.k_h * self.k_w
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let (pt, pb, pl, pr) = self.pad;
        let hp = h + pt + pb;
        let wp = w + pl + pr;
        assert!(
            hp >= self.k_h && wp >= self.k_w,
            "conv {}: input {}x{} too small for kernel {}x{}",
            self.name,
            h,
            w,
            self.k_h,
            self.k_w
        );
        ((hp - self.k_h) / self.stride + 1, (wp - self.k_w) / self.stride + 1)
    }

    fn im2col(&self, x: &Tensor<T>, h_out: usize, w_out: usize, cols: &mut Vec<T>) {
        let (pt, _, pl, _) = self.pad;
        let (h, w) = (x.height(), x.width());
        let patches = h_out * w_out;
        cols.clear();
        cols.resize(self.patch_len() * patches, T::ZERO);
        for ci in 0..self.c_in {
            let xc = x.channel(ci);
            for u in 0..self.k_h {
                for v in 0..self.k_w {
                    let row = ((ci * self.k_h + u) * self.k_w + v) * patches;
                    for oh in 0..h_out {
                        let ih = (oh * self.stride + u) as isize - pt as isize;
                        if ih < 0 || ih as usize >= h {
                            continue;
                        }
                        let xrow = ih as usize * w;
                        let crow = row + oh * w_out;
                        for ow in 0..w_out {
                            let iw = (ow * self.stride + v) as isize - pl as isize;
                            if iw < 0 || iw as usize >= w {
                                continue;
                            }
                            cols[crow + ow] = xc[xrow + iw as usize];
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, dcols: &[T], in_shape: (usize, usize, usize), h_out: usize, w_out: usize) -> Tensor<T> {
        let (pt, _, pl, _) = self.pad;
        let (_, h, w) = in_shape;
        let patches = h_out * w_out;
        let mut dx = Tensor::zeros(self.c_in, h, w);
        for ci in 0..self.c_in {
            let dxc = dx.channel_mut(ci);
            for u in 0..self.k_h {
                for v in 0..self.k_w {
                    let row = ((ci * self.k_h + u) * self.k_w + v) * patches;
                    for oh in 0..h_out {
                        let ih = (oh * self.stride + u) as isize - pt as isize;
                        if ih < 0 || ih as usize >= h {
                            continue;
                        }
                        let xrow = ih as usize * w;
                        let crow = row + oh * w_out;
                        for ow in 0..w_out {
                            let iw = (ow * self.stride + v) as isize - pl as isize;
                            if iw < 0 || iw as usize >= w {
                                continue;
                            }
                            dxc[xrow + iw as usize] += dcols[crow + ow];
                        }
                    }
                }
            }
        }
        dx
    }

    /// Weight actually applied in the forward pass: base + composed adapter
    /// delta when attached, the base weight otherwise.
    pub fn effective_weight(&self) -> Vec<T> {
        match &self.adapter {
            None => self.weight.clone(),
            Some(ad) => {
                let mut w = self.weight.clone();
                add_composed_delta(
                    &mut w,
                    ad,
                    self.c_out,
                    self.c_in,
                    self.k_h,
                    self.k_w,
                );
                w
            }
        }
    }

    /// Forward pass. When `keep_cache` is false the layer stores nothing and
    /// cannot be back-propagated through until the next cached forward.
    pub fn forward(&mut self, x: &Tensor<T>, keep_cache: bool) -> Tensor<T> {
        assert_eq!(x.channels(), self.c_in, "conv {}: input channels", self.name);
        let (h_out, w_out) = self.out_dims(x.height(), x.width());
        let patches = h_out * w_out;

        let mut cols = match self.cache.take() {
            Some(c) => c.cols,
            None => Vec::new(),
        };
        self.im2col(x, h_out, w_out, &mut cols);

        let w_eff: Option<Vec<T>> = self.adapter.as_ref().map(|ad| {
            let mut w = self.weight.clone();
            add_composed_delta(&mut w, ad, self.c_out, self.c_in, self.k_h, self.k_w);
            w
        });
        let wref: &[T] = w_eff.as_deref().unwrap_or(&self.weight);

        let mut y = Tensor::zeros(self.c_out, h_out, w_out);
        matmul(self.c_out, self.patch_len(), patches, wref, &cols, T::ZERO, y.data_mut());
        for oc in 0..self.c_out {
            let b = self.bias[oc];
            for v in y.channel_mut(oc) {
                *v += b;
            }
        }

        if keep_cache {
            self.cache = Some(ForwardCache {
                cols,
                in_shape: x.shape(),
                out_hw: (h_out, w_out),
                w_eff,
            });
        } else {
            self.cache = None;
        }
        y
    }

    /// Backward pass: accumulates parameter gradients and returns dL/dx.
    ///
    /// With an adapter attached, gradients flow into the adapter factors
    /// only (the base weight stays frozen); otherwise into the base weight.
    /// Bias gradients always accumulate into `grad_bias` (the trainer picks
    /// which gradients to apply).
    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self
            .cache
            .take()
            .expect("conv backward requires a cached forward");
        let (h_out, w_out) = cache.out_hw;
        assert_eq!(dy.shape(), (self.c_out, h_out, w_out), "conv {}: dy shape", self.name);
        let patches = h_out * w_out;

        // Bias gradient: row sums of dy.
        for oc in 0..self.c_out {
            let mut s = T::ZERO;
            for &v in dy.channel(oc) {
                s += v;
            }
            self.grad_bias[oc] += s;
        }

        // Gradient of the effective weight: dY (c_out×P) · colsᵀ (P×K).
        let mut g_weff = vec![T::ZERO; self.weight.len()];
        matmul_nt(
            self.c_out,
            patches,
            self.patch_len(),
            dy.data(),
            &cache.cols,
            T::ZERO,
            &mut g_weff,
        );

        match &mut self.adapter {
            None => {
                for (g, s) in self.grad_weight.iter_mut().zip(g_weff.iter()) {
                    *g += *s;
                }
            }
            Some(ad) => {
                accumulate_adapter_grads(ad, &g_weff, self.c_out, self.c_in, self.k_h, self.k_w);
            }
        }

        // dX = W_effᵀ (K×c_out) · dY (c_out×P), then col2im.
        let wref: &[T] = cache.w_eff.as_deref().unwrap_or(&self.weight);
        let mut dcols = vec![T::ZERO; self.patch_len() * patches];
        matmul_tn(
            self.patch_len(),
            self.c_out,
            patches,
            wref,
            dy.data(),
            T::ZERO,
            &mut dcols,
        );
        self.col2im(&dcols, cache.in_shape, h_out, w_out)
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.fill(T::ZERO);
        self.grad_bias.fill(T::ZERO);
        if let Some(ad) = &mut self.adapter {
            ad.grad_a.fill(T::ZERO);
            ad.grad_b.fill(T::ZERO);
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// w += alpha * B·A composed to the (C_out, C_in, k_h, k_w) layout.
pub fn add_composed_delta<T: Scalar>(
    w: &mut [T],
    ad: &AdapterState<T>,
    c_out: usize,
    c_in: usize,
    k_h: usize,
    k_w: usize,
) {
    let r = ad.rank;
    let alpha = T::from_f64(ad.alpha);
    for o in 0..c_out {
        for i in 0..c_in {
            for u in 0..k_h {
                let brow = (o * k_h + u) * r;
                for v in 0..k_w {
                    let mut acc = T::ZERO;
                    for rho in 0..r {
                        acc += ad.b[brow + rho] * ad.a[(rho * c_in + i) * k_w + v];
                    }
                    let delta = alpha * acc;
                    // Skipping exact zeros keeps the zero-init adapter a
                    // bitwise no-op (x + 0.0 would flip the sign of -0.0).
                    if delta != T::ZERO {
                        w[((o * c_in + i) * k_h + u) * k_w + v] += delta;
                    }
                }
            }
        }
    }
}

/// Chain rule from the effective-weight gradient into the adapter factors:
/// gA[rho,i,v] = alpha * sum_{o,u} B[o,u,rho] * gW[o,i,u,v]
/// gB[o,u,rho] = alpha * sum_{i,v} gW[o,i,u,v] * A[rho,i,v]
fn accumulate_adapter_grads<T: Scalar>(
    ad: &mut AdapterState<T>,
    g_weff: &[T],
    c_out: usize,
    c_in: usize,
    k_h: usize,
    k_w: usize,
) {
    let r = ad.rank;
    let alpha = T::from_f64(ad.alpha);
    for o in 0..c_out {
        for u in 0..k_h {
            let brow = (o * k_h + u) * r;
            for rho in 0..r {
                let b_val = ad.b[brow + rho];
                let mut gb = T::ZERO;
                for i in 0..c_in {
                    let wrow = ((o * c_in + i) * k_h + u) * k_w;
                    let arow = (rho * c_in + i) * k_w;
                    for v in 0..k_w {
                        let gw = g_weff[wrow + v];
                        gb += gw * ad.a[arow + v];
                        ad.grad_a[arow + v] += alpha * b_val * gw;
                    }
                }
                ad.grad_b[brow + rho] += alpha * gb;
            }
        }
    }
}

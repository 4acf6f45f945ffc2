//! Parameter-free operations: leaky rectifier and nearest-neighbor 2x
//! resampling.

use crate::tensor::{Scalar, Tensor};

/// Leaky rectified linear activation with a cached sign mask for backward.
#[derive(Debug, Clone)]
pub struct LeakyRelu<T: Scalar> {
    slope: f64,
    mask: Vec<u8>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> LeakyRelu<T> {
    pub const DEFAULT_SLOPE: f64 = 0.1;

    pub fn new(slope: f64) -> Self {
        Self {
            slope,
            mask: Vec::new(),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, keep_cache: bool) -> Tensor<T> {
        let slope = T::from_f64(self.slope);
        let mut y = x.clone();
        if keep_cache {
            self.mask.clear();
            self.mask.reserve(x.len());
            for v in y.data_mut() {
                let pos = *v > T::ZERO;
                self.mask.push(pos as u8);
                if !pos {
                    *v *= slope;
                }
            }
        } else {
            self.mask = Vec::new();
            for v in y.data_mut() {
                if !(*v > T::ZERO) {
                    *v *= slope;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        assert_eq!(dy.len(), self.mask.len(), "leaky backward requires cached forward");
        let slope = T::from_f64(self.slope);
        let mut dx = dy.clone();
        for (v, &m) in dx.data_mut().iter_mut().zip(self.mask.iter()) {
            if m == 0 {
                *v *= slope;
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.mask = Vec::new();
    }
}

/// Nearest-neighbor 2x spatial upsampling.
pub fn upsample2x_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.shape();
    let mut y = Tensor::zeros(c, h * 2, w * 2);
    for ch in 0..c {
        let xc = x.channel(ch);
        let yc = y.channel_mut(ch);
        for i in 0..h * 2 {
            let xrow = (i / 2) * w;
            let yrow = i * (w * 2);
            for j in 0..w * 2 {
                yc[yrow + j] = xc[xrow + j / 2];
            }
        }
    }
    y
}

/// Gradient of [`upsample2x_forward`]: sums each 2x2 block.
pub fn upsample2x_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (c, h2, w2) = dy.shape();
    assert!(h2 % 2 == 0 && w2 % 2 == 0, "upsample backward needs even dims");
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let dyc = dy.channel(ch);
        let dxc = dx.channel_mut(ch);
        for i in 0..h2 {
            let xrow = (i / 2) * w;
            let yrow = i * w2;
            for j in 0..w2 {
                dxc[xrow + j / 2] += dyc[yrow + j];
            }
        }
    }
    dx
}

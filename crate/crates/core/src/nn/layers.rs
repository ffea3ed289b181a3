use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

use super::conv::Conv2d;
use super::params::ParamStore;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Act {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Act {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Act::Identity => v,
            Act::Relu => v.max(T::zero()),
            Act::LeakyRelu(slope) => {
                if v > T::zero() {
                    v
                } else {
                    v * T::from_f64_lossy(slope)
                }
            }
            Act::Tanh => v.tanh(),
        }
    }

    pub fn derivative<T: Scalar>(self, pre: T, out: T) -> T {
        match self {
            Act::Identity => T::one(),
            Act::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Act::LeakyRelu(slope) => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::from_f64_lossy(slope)
                }
            }
            Act::Tanh => T::one() - out * out,
        }
    }
}

/// Per-channel normalization to zero mean and unit variance (no affine
/// parameters). Returns the normalized tensor and per-channel `1/σ`.
pub fn instance_norm<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let n = T::from_usize(x.plane_len()).unwrap();
    let eps = T::from_f64_lossy(INSTANCE_NORM_EPS);
    let mut y = x.clone();
    let mut inv_std = Vec::with_capacity(x.channels);
    for c in 0..x.channels {
        let plane = y.plane_mut(c);
        let mean = plane.iter().copied().sum::<T>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        plane.iter_mut().for_each(|v| *v = (*v - mean) * is);
        inv_std.push(is);
    }
    (y, inv_std)
}

pub fn instance_norm_backward<T: Scalar>(
    normed: &Tensor<T>,
    inv_std: &[T],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let n = T::from_usize(normed.plane_len()).unwrap();
    let mut dx = dy.clone();
    for c in 0..normed.channels {
        let yhat = normed.plane(c);
        let g = dy.plane(c);
        let mean_g = g.iter().copied().sum::<T>() / n;
        let mean_gy = g.iter().zip(yhat).map(|(&a, &b)| a * b).sum::<T>() / n;
        let is = inv_std[c];
        for ((d, &gv), &yv) in dx.plane_mut(c).iter_mut().zip(g).zip(yhat) {
            *d = is * (gv - mean_g - yv * mean_gy);
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut y = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = y.plane_mut(c);
        for yy in 0..h {
            for xx in 0..w {
                dst[yy * w + xx] = src[(yy / 2) * x.width + xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let mut dx = Tensor::zeros(dy.channels, h, w);
    for c in 0..dy.channels {
        let src = dy.plane(c);
        let dst = dx.plane_mut(c);
        for yy in 0..dy.height {
            for xx in 0..dy.width {
                let i = (yy / 2) * w + xx / 2;
                dst[i] = dst[i] + src[yy * dy.width + xx];
            }
        }
    }
    dx
}

/// `[upsample] → conv → [instance norm] → activation`.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub upsample: bool,
    pub conv: Conv2d,
    pub norm: bool,
    pub act: Act,
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    conv_in: Tensor<T>,
    inv_std: Vec<T>,
    pre: Tensor<T>,
    out: Tensor<T>,
}

impl<T> BlockCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.out
    }
}

impl ConvBlock {
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let f = if self.upsample { 2 } else { 1 };
        self.conv.output_size(height * f, width * f)
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        keep_cache: bool,
    ) -> Result<(Tensor<T>, Option<BlockCache<T>>)> {
        let upsampled;
        let conv_in = if self.upsample {
            upsampled = upsample2(x);
            &upsampled
        } else {
            x
        };
        let z = self.conv.forward(store, conv_in)?;
        let (pre, inv_std) = if self.norm {
            instance_norm(&z)
        } else {
            (z, Vec::new())
        };
        let act = self.act;
        let out = pre.map(|v| act.apply(v));
        let cache = keep_cache.then(|| BlockCache {
            conv_in: conv_in.clone(),
            inv_std,
            pre,
            out: out.clone(),
        });
        Ok((out, cache))
    }

    pub fn backward<T: Scalar>(
        &self,
        values: &[Vec<T>],
        grads: &mut [Vec<T>],
        cache: &BlockCache<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let mut dpre = dy.clone();
        for ((d, &p), &o) in dpre
            .data
            .iter_mut()
            .zip(&cache.pre.data)
            .zip(&cache.out.data)
        {
            *d = *d * self.act.derivative(p, o);
        }
        let dz = if self.norm {
            instance_norm_backward(&cache.pre, &cache.inv_std, &dpre)
        } else {
            dpre
        };
        let dconv_in = self.conv.backward(values, grads, &cache.conv_in, &dz);
        if self.upsample {
            upsample2_backward(&dconv_in)
        } else {
            dconv_in
        }
    }
}

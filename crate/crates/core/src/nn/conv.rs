use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::params::{ParamId, ParamStore};

/// Upper bound on the im2col buffer, in elements. Larger layers are processed
/// in bands of output rows.
const MAX_COL_ELEMS: usize = 1 << 22;

/// Square-kernel 2-D convolution with zero padding, lowered to GEMM.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), vec![out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let ph = height + 2 * self.padding;
        let pw = width + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return Err(Error::Shape(format!(
                "{height}x{width} input too small for a {k}x{k} kernel with padding {p}",
                k = self.kernel,
                p = self.padding
            )));
        }
        Ok((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    fn rows_per_band(&self, out_w: usize) -> usize {
        (MAX_COL_ELEMS / (self.patch_len() * out_w).max(1)).max(1)
    }

    fn im2col<T: Scalar>(&self, x: &Tensor<T>, out_w: usize, rows: (usize, usize), col: &mut [T]) {
        let (r0, r1) = rows;
        let band = (r1 - r0) * out_w;
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        for ci in 0..self.in_channels {
            let plane = x.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * band..(row + 1) * band];
                    for oy in r0..r1 {
                        let iy = (oy * s + ky) as isize - p;
                        let out_row = &mut dst[(oy - r0) * out_w..(oy - r0 + 1) * out_w];
                        if iy < 0 || iy >= x.height as isize {
                            out_row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * x.width..(iy as usize + 1) * x.width];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *v = if ix < 0 || ix >= x.width as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], out_w: usize, rows: (usize, usize), dx: &mut Tensor<T>) {
        let (r0, r1) = rows;
        let band = (r1 - r0) * out_w;
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (h, w) = (dx.height, dx.width);
        for ci in 0..self.in_channels {
            let plane = dx.plane_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * band..(row + 1) * band];
                    for oy in r0..r1 {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src_row = &src[(oy - r0) * out_w..(oy - r0 + 1) * out_w];
                        for (ox, &g) in src_row.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let (oh, ow) = self.output_size(x.height, x.width)?;
        let kk = self.patch_len();
        let plane = oh * ow;
        let mut y = Tensor::zeros(self.out_channels, oh, ow);
        let w = store.value(self.weight);
        let step = self.rows_per_band(ow);
        let mut col = vec![T::zero(); kk * step.min(oh) * ow];
        let mut r0 = 0;
        while r0 < oh {
            let r1 = (r0 + step).min(oh);
            let band = (r1 - r0) * ow;
            self.im2col(x, ow, (r0, r1), &mut col[..kk * band]);
            T::gemm(
                self.out_channels,
                kk,
                band,
                T::one(),
                w,
                kk as isize,
                1,
                &col[..kk * band],
                band as isize,
                1,
                T::zero(),
                &mut y.data[r0 * ow..],
                plane as isize,
                1,
            );
            r0 = r1;
        }
        if let Some(b) = self.bias {
            for (co, &bv) in store.value(b).iter().enumerate() {
                y.plane_mut(co).iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        values: &[Vec<T>],
        grads: &mut [Vec<T>],
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let (oh, ow) = (dy.height, dy.width);
        let kk = self.patch_len();
        let plane = oh * ow;
        let w = &values[self.weight.0];
        let mut dx = Tensor::zeros(x.channels, x.height, x.width);
        let step = self.rows_per_band(ow);
        let cap = kk * step.min(oh) * ow;
        let mut col = vec![T::zero(); cap];
        let mut dcol = vec![T::zero(); cap];
        let mut r0 = 0;
        while r0 < oh {
            let r1 = (r0 + step).min(oh);
            let band = (r1 - r0) * ow;
            self.im2col(x, ow, (r0, r1), &mut col[..kk * band]);
            T::gemm(
                self.out_channels,
                band,
                kk,
                T::one(),
                &dy.data[r0 * ow..],
                plane as isize,
                1,
                &col[..kk * band],
                1,
                band as isize,
                T::one(),
                &mut grads[self.weight.0],
                kk as isize,
                1,
            );
            T::gemm(
                kk,
                self.out_channels,
                band,
                T::one(),
                w,
                1,
                kk as isize,
                &dy.data[r0 * ow..],
                plane as isize,
                1,
                T::zero(),
                &mut dcol[..kk * band],
                band as isize,
                1,
            );
            self.col2im(&dcol[..kk * band], ow, (r0, r1), &mut dx);
            r0 = r1;
        }
        if let Some(b) = self.bias {
            for (co, g) in grads[b.0].iter_mut().enumerate() {
                *g = *g + dy.plane(co).iter().copied().sum::<T>();
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Direct seven-loop convolution.
    fn naive(conv: &Conv2d, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_size(x.height, x.width).unwrap();
        let w = store.value(conv.weight);
        let k = conv.kernel;
        let mut y = Tensor::zeros(conv.out_channels, oh, ow);
        for co in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias.map_or(0.0, |b| store.value(b)[co]);
                    for ci in 0..conv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < x.height
                                    && (ix as usize) < x.width
                                {
                                    acc += w[((co * conv.in_channels + ci) * k + ky) * k + kx]
                                        * x.at(ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    y.data[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    fn random_setup(
        cin: usize,
        cout: usize,
        k: usize,
        s: usize,
        p: usize,
        hw: (usize, usize),
    ) -> (Conv2d, ParamStore<f64>, Tensor<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::new(&mut store, "c", cin, cout, k, s, p, true);
        store.init_gaussian(0.5, &mut rng);
        let b = conv.bias.unwrap();
        for (i, v) in store.values[b.0].iter_mut().enumerate() {
            *v = 0.1 * i as f64;
        }
        let data = (0..cin * hw.0 * hw.1)
            .map(|i| ((i * 37 % 17) as f64 / 8.0) - 1.0)
            .collect();
        let x = Tensor::from_vec(cin, hw.0, hw.1, data).unwrap();
        (conv, store, x)
    }

    #[test]
    fn forward_matches_naive_convolution() {
        for &(cin, cout, k, s, p, hw) in &[
            (2, 3, 3, 1, 1, (5, 6)),
            (3, 2, 4, 2, 1, (8, 8)),
            (1, 4, 7, 1, 3, (9, 7)),
            (2, 2, 3, 2, 1, (7, 5)),
        ] {
            let (conv, store, x) = random_setup(cin, cout, k, s, p, hw);
            let fast = conv.forward(&store, &x).unwrap();
            let slow = naive(&conv, &store, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <dy, conv(x)> is linear in x and w, so its gradient is exact.
        let (conv, mut store, x) = random_setup(2, 3, 3, 2, 1, (7, 6));
        let y = conv.forward(&store, &x).unwrap();
        let dy = y.map(|v| v.sin());
        store.zero_grad();
        let dx = conv.backward(&store.values.clone(), &mut store.grads, &x, &dy);
        let h = 1e-6;
        for i in [0, 5, 17, 40, 83] {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fp: f64 = conv
                .forward(&store, &xp)
                .unwrap()
                .data
                .iter()
                .zip(&dy.data)
                .map(|(a, b)| a * b)
                .sum();
            let fm: f64 = conv
                .forward(&store, &xm)
                .unwrap()
                .data
                .iter()
                .zip(&dy.data)
                .map(|(a, b)| a * b)
                .sum();
            assert!(((fp - fm) / (2.0 * h) - dx.data[i]).abs() < 1e-7);
        }
        let w = conv.weight.0;
        for i in [0, 7, 30, 53] {
            let mut sp = store.clone();
            sp.values[w][i] += h;
            let mut sm = store.clone();
            sm.values[w][i] -= h;
            let fp: f64 = conv
                .forward(&sp, &x)
                .unwrap()
                .data
                .iter()
                .zip(&dy.data)
                .map(|(a, b)| a * b)
                .sum();
            let fm: f64 = conv
                .forward(&sm, &x)
                .unwrap()
                .data
                .iter()
                .zip(&dy.data)
                .map(|(a, b)| a * b)
                .sum();
            assert!(((fp - fm) / (2.0 * h) - store.grads[w][i]).abs() < 1e-7);
        }
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let (conv, store, _) = random_setup(2, 3, 3, 1, 1, (4, 4));
        let x = Tensor::<f64>::zeros(3, 4, 4);
        assert!(conv.forward(&store, &x).is_err());
    }
}

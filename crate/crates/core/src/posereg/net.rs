//! Compact convolutional pose regressor: strided conv blocks, global average
//! pooling, a shared fully connected layer and separate position and
//! quaternion heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Act, BlockCache, Conv2d, ConvBlock, Linear, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseNetSpec {
    pub in_channels: usize,
    pub input_size: usize,
    /// Output channels of each stride-2 conv block.
    pub widths: Vec<usize>,
    pub fc_width: usize,
}

impl PoseNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.fc_width == 0
            || self.widths.is_empty()
            || self.widths.contains(&0)
        {
            return Err(Error::InvalidArgument(
                "pose network needs non-zero widths".into(),
            ));
        }
        if self.input_size >> self.widths.len() == 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} too small for {} stride-2 blocks",
                self.input_size,
                self.widths.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PoseTrace<T> {
    blocks: Vec<BlockCache<T>>,
    pooled: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct PoseNet<T> {
    pub spec: PoseNetSpec,
    pub params: ParamStore<T>,
    blocks: Vec<ConvBlock>,
    fc: Linear,
    head_x: Linear,
    head_q: Linear,
}

/// Raw network outputs: position (in the model's normalized frame) and an
/// unnormalized quaternion.
pub type RawPose<T> = ([T; 3], [T; 4]);

impl<T: Scalar> PoseNet<T> {
    /// Layer chain with zeroed parameters. All blocks but the last are
    /// instance-normalized; the last conv keeps a bias instead.
    pub fn new(spec: PoseNetSpec) -> Result<Self> {
        spec.validate()?;
        let mut p = ParamStore::new();
        let n = spec.widths.len();
        let mut cin = spec.in_channels;
        let mut blocks = Vec::with_capacity(n);
        for (i, &w) in spec.widths.iter().enumerate() {
            let last = i + 1 == n;
            blocks.push(ConvBlock {
                upsample: false,
                conv: Conv2d::new(&mut p, &format!("conv{}", i + 1), cin, w, 3, 2, 1, last),
                norm: !last,
                act: Act::Relu,
            });
            cin = w;
        }
        let fc = Linear::new(&mut p, "fc", cin, spec.fc_width);
        let head_x = Linear::new(&mut p, "head_x", spec.fc_width, 3);
        let head_q = Linear::new(&mut p, "head_q", spec.fc_width, 4);
        Ok(Self {
            spec,
            params: p,
            blocks,
            fc,
            head_x,
            head_q,
        })
    }

    /// Sets the quaternion head bias, so an untrained network starts at `q`.
    pub fn set_quaternion_bias(&mut self, q: [f64; 4]) {
        let b = &mut self.params.values[self.head_q.bias.0];
        for (v, q) in b.iter_mut().zip(q) {
            *v = T::from_f64_lossy(q);
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.spec.input_size;
        if x.shape() != (self.spec.in_channels, s, s) {
            return Err(Error::Shape(format!(
                "pose network expects {}x{s}x{s} input, got {}x{}x{}",
                self.spec.in_channels, x.channels, x.height, x.width
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, keep: bool) -> Result<(RawPose<T>, Option<PoseTrace<T>>)> {
        self.check_input(x)?;
        let mut caches = Vec::new();
        let mut h = x.clone();
        for b in &self.blocks {
            let (out, cache) = b.forward(&self.params, &h, keep)?;
            caches.extend(cache);
            h = out;
        }
        let area = T::from_usize(h.plane_len()).expect("plane size");
        let pooled: Vec<T> = (0..h.channels)
            .map(|c| h.plane(c).iter().copied().sum::<T>() / area)
            .collect();
        let hidden_pre = self.fc.forward(&self.params, &pooled);
        let hidden: Vec<T> = hidden_pre.iter().map(|&v| Act::Relu.apply(v)).collect();
        let xo = self.head_x.forward(&self.params, &hidden);
        let qo = self.head_q.forward(&self.params, &hidden);
        let raw = ([xo[0], xo[1], xo[2]], [qo[0], qo[1], qo[2], qo[3]]);
        let trace = keep.then_some(PoseTrace {
            blocks: caches,
            pooled,
            hidden_pre,
            hidden,
        });
        Ok((raw, trace))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<RawPose<T>> {
        Ok(self.run(x, false)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(RawPose<T>, PoseTrace<T>)> {
        let (raw, trace) = self.run(x, true)?;
        Ok((raw, trace.expect("trace requested")))
    }

    /// Accumulates parameter gradients for output gradients `(dx, dq)`.
    pub fn backward(&mut self, trace: &PoseTrace<T>, dx: &[T; 3], dq: &[T; 4]) {
        let ParamStore { values, grads, .. } = &mut self.params;
        let mut dh = self.head_x.backward(values, grads, &trace.hidden, dx);
        let dhq = self.head_q.backward(values, grads, &trace.hidden, dq);
        for ((d, e), &pre) in dh.iter_mut().zip(dhq).zip(&trace.hidden_pre) {
            *d = (*d + e) * Act::Relu.derivative(pre, Act::Relu.apply(pre));
        }
        let dpooled = self.fc.backward(values, grads, &trace.pooled, &dh);
        let last = trace.blocks.last().expect("at least one block").output();
        let area = T::from_usize(last.plane_len()).expect("plane size");
        let mut g = Tensor::zeros(last.channels, last.height, last.width);
        for (c, &d) in dpooled.iter().enumerate() {
            g.plane_mut(c).iter_mut().for_each(|v| *v = d / area);
        }
        for (b, cache) in self.blocks.iter().zip(&trace.blocks).rev() {
            g = b.backward(values, grads, cache, &g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn spec() -> PoseNetSpec {
        PoseNetSpec {
            in_channels: 1,
            input_size: 8,
            widths: vec![3, 4],
            fc_width: 5,
        }
    }

    #[test]
    fn output_has_seven_values_and_bias_init_shows() {
        let mut net = PoseNet::<f64>::new(spec()).unwrap();
        net.set_quaternion_bias([0.5, 0.5, 0.5, 0.5]);
        let (x, q) = net.forward(&Tensor::zeros(1, 8, 8)).unwrap();
        assert_eq!(x, [0.0; 3]);
        assert_eq!(q, [0.5; 4]);
    }

    #[test]
    fn rejects_wrong_input() {
        let net = PoseNet::<f32>::new(spec()).unwrap();
        assert!(net.forward(&Tensor::zeros(3, 8, 8)).is_err());
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut net = PoseNet::<f64>::new(spec()).unwrap();
        net.params.init_gaussian(0.5, &mut substream(3, "t"));
        let data = (0..64)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) / 4.0)
            .collect();
        let x = Tensor::from_vec(1, 8, 8, data).unwrap();
        // objective: fixed linear functional of the seven outputs
        let cx = [0.3, -0.7, 1.1];
        let cq = [0.2, 0.5, -0.4, 0.9];
        let f = |n: &PoseNet<f64>| {
            let (a, b) = n.forward(&x).unwrap();
            a.iter().zip(cx).map(|(a, c)| a * c).sum::<f64>()
                + b.iter().zip(cq).map(|(b, c)| b * c).sum::<f64>()
        };
        let (_, trace) = net.forward_train(&x).unwrap();
        net.params.zero_grad();
        net.backward(&trace, &cx, &cq);
        for pid in 0..net.params.len() {
            for k in [0, net.params.values[pid].len() - 1] {
                let h = 1e-6;
                let mut plus = net.clone();
                plus.params.values[pid][k] += h;
                let mut minus = net.clone();
                minus.params.values[pid][k] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let an = net.params.grads[pid][k];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "{} {k}: {an} vs {fd}",
                    net.params.names[pid]
                );
            }
        }
    }
}

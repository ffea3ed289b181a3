use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Act, BlockCache, Conv2d, ConvBlock, ParamStore};
use crate::tensor::{Scalar, Tensor};

const LEAK: f64 = 0.2;

/// Patch classifier: `n_layers` stride-2 4×4 convolutions, one stride-1
/// convolution, then a one-channel score map. `n_layers = 3` gives the
/// 70×70 receptive field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub image_channels: usize,
    pub base_channels: usize,
    pub n_layers: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            image_channels: 3,
            base_channels: 64,
            n_layers: 3,
        }
    }
}

impl DiscriminatorSpec {
    pub fn receptive_field(&self) -> usize {
        // two stride-1 k4 layers, then n stride-2 k4 layers going backwards
        let mut rf = 4 + 3;
        for _ in 0..self.n_layers {
            rf = (rf - 1) * 2 + 4;
        }
        rf
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorTrace<T> {
    caches: Vec<BlockCache<T>>,
}

#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub spec: DiscriminatorSpec,
    pub params: ParamStore<T>,
    blocks: Vec<ConvBlock>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(spec: DiscriminatorSpec) -> Result<Self> {
        if spec.n_layers == 0 || spec.base_channels == 0 || spec.image_channels == 0 {
            return Err(Error::InvalidArgument(
                "degenerate discriminator spec".into(),
            ));
        }
        let mut p = ParamStore::new();
        let width = |i: usize| spec.base_channels * (1 << i.min(3));
        let mut blocks = vec![ConvBlock {
            upsample: false,
            conv: Conv2d::new(
                &mut p,
                "layer0",
                spec.image_channels,
                width(0),
                4,
                2,
                1,
                true,
            ),
            norm: false,
            act: Act::LeakyRelu(LEAK),
        }];
        for i in 1..spec.n_layers {
            blocks.push(ConvBlock {
                upsample: false,
                conv: Conv2d::new(
                    &mut p,
                    &format!("layer{i}"),
                    width(i - 1),
                    width(i),
                    4,
                    2,
                    1,
                    false,
                ),
                norm: true,
                act: Act::LeakyRelu(LEAK),
            });
        }
        let n = spec.n_layers;
        blocks.push(ConvBlock {
            upsample: false,
            conv: Conv2d::new(
                &mut p,
                &format!("layer{n}"),
                width(n - 1),
                width(n),
                4,
                1,
                1,
                false,
            ),
            norm: true,
            act: Act::LeakyRelu(LEAK),
        });
        blocks.push(ConvBlock {
            upsample: false,
            conv: Conv2d::new(&mut p, "score", width(n), 1, 4, 1, 1, true),
            norm: false,
            act: Act::Identity,
        });
        Ok(Self {
            spec,
            params: p,
            blocks,
        })
    }

    fn run(&self, x: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Vec<BlockCache<T>>)> {
        let mut h = x.clone();
        let mut caches = Vec::new();
        for b in &self.blocks {
            let (out, cache) = b.forward(&self.params, &h, keep)?;
            caches.extend(cache);
            h = out;
        }
        Ok((h, caches))
    }

    /// Raw (pre-squashing) patch scores.
    pub fn score(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, false)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorTrace<T>)> {
        let (y, caches) = self.run(x, true)?;
        Ok((y, DiscriminatorTrace { caches }))
    }

    pub fn backward(&mut self, trace: &DiscriminatorTrace<T>, dy: &Tensor<T>) -> Tensor<T> {
        let ParamStore { values, grads, .. } = &mut self.params;
        let mut g = dy.clone();
        for (b, c) in self.blocks.iter().zip(&trace.caches).rev() {
            g = b.backward(values, grads, c, &g);
        }
        g
    }
}

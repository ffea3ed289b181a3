use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Act, BlockCache, Conv2d, ConvBlock, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// One of the generator's tap points, in forward order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerName {
    Conv(u8),
    Res(u8),
    Uconv(u8),
}

impl LayerName {
    /// Position in the forward chain for a generator with `n_res` residual blocks.
    pub fn index(self, n_res: usize) -> usize {
        match self {
            LayerName::Conv(i) => i as usize - 1,
            LayerName::Res(i) => 3 + i as usize - 1,
            LayerName::Uconv(i) => 3 + n_res + i as usize - 1,
        }
    }

    pub fn is_encoder(self) -> bool {
        !matches!(self, LayerName::Uconv(_))
    }
}

impl fmt::Display for LayerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerName::Conv(i) => write!(f, "Conv{i}"),
            LayerName::Res(i) => write!(f, "Res{i}"),
            LayerName::Uconv(i) => write!(f, "Uconv{i}"),
        }
    }
}

impl FromStr for LayerName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownLayer(s.to_string());
        let (kind, num): (fn(u8) -> LayerName, &str) = if let Some(n) = s.strip_prefix("Uconv") {
            (LayerName::Uconv, n)
        } else if let Some(n) = s.strip_prefix("Conv") {
            (LayerName::Conv, n)
        } else if let Some(n) = s.strip_prefix("Res") {
            (LayerName::Res, n)
        } else {
            return Err(unknown());
        };
        let i: u8 = num.parse().map_err(|_| unknown())?;
        let layer = kind(i);
        let ok = match layer {
            LayerName::Conv(i) | LayerName::Uconv(i) => (1..=3).contains(&i),
            LayerName::Res(i) => i >= 1,
        };
        ok.then_some(layer).ok_or_else(unknown)
    }
}

impl TryFrom<String> for LayerName {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerName> for String {
    fn from(l: LayerName) -> String {
        l.to_string()
    }
}

/// Encoder / residual / decoder translation network layout.
///
/// Widths are `base_channels × {1, 2, 4}`; the default of 64 with nine
/// residual blocks gives the 15-layer catalog with 64/128/256 channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub image_channels: usize,
    pub base_channels: usize,
    pub n_res_blocks: usize,
    pub image_size: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            image_channels: 3,
            base_channels: 64,
            n_res_blocks: 9,
            image_size: 256,
        }
    }
}

impl GeneratorSpec {
    pub fn layer_names(&self) -> Vec<LayerName> {
        let mut names = vec![LayerName::Conv(1), LayerName::Conv(2), LayerName::Conv(3)];
        names.extend((1..=self.n_res_blocks as u8).map(LayerName::Res));
        names.extend([
            LayerName::Uconv(1),
            LayerName::Uconv(2),
            LayerName::Uconv(3),
        ]);
        names
    }

    pub fn contains(&self, layer: LayerName) -> bool {
        match layer {
            LayerName::Res(i) => (i as usize) <= self.n_res_blocks,
            _ => true,
        }
    }

    /// `(channels, height, width)` of a tap for an input of `image_size`.
    pub fn tap_shape(&self, layer: LayerName) -> (usize, usize, usize) {
        let s = self.image_size;
        let c = self.base_channels;
        match layer {
            LayerName::Conv(1) => (c, s, s),
            LayerName::Conv(2) => (2 * c, s / 2, s / 2),
            LayerName::Conv(_) | LayerName::Res(_) | LayerName::Uconv(1) => (4 * c, s / 4, s / 4),
            LayerName::Uconv(2) => (2 * c, s / 2, s / 2),
            LayerName::Uconv(_) => (self.image_channels, s, s),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 || self.base_channels == 0 {
            return Err(Error::InvalidArgument(
                "generator widths must be positive".into(),
            ));
        }
        if self.image_size < 4 || !self.image_size.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "generator image size {} is not a positive multiple of 4",
                self.image_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Block(ConvBlock),
    Residual(ConvBlock, ConvBlock),
}

#[derive(Clone, Debug)]
enum LayerCache<T> {
    Block(BlockCache<T>),
    Residual(BlockCache<T>, BlockCache<T>),
}

/// Everything one forward pass needs to be differentiated.
#[derive(Clone, Debug)]
pub struct GeneratorTrace<T> {
    caches: Vec<LayerCache<T>>,
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub spec: GeneratorSpec,
    pub params: ParamStore<T>,
    layers: Vec<Layer>,
}

impl<T: Scalar> Generator<T> {
    /// Builds the layer chain with zeroed parameters.
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let mut p = ParamStore::new();
        let c = spec.base_channels;
        let ic = spec.image_channels;
        let block = |p: &mut ParamStore<T>, name: &str, cin, cout, k, s, up| ConvBlock {
            upsample: up,
            conv: Conv2d::new(p, name, cin, cout, k, s, k / 2, false),
            norm: true,
            act: Act::Relu,
        };
        let mut layers = vec![
            Layer::Block(block(&mut p, "conv1", ic, c, 7, 1, false)),
            Layer::Block(block(&mut p, "conv2", c, 2 * c, 3, 2, false)),
            Layer::Block(block(&mut p, "conv3", 2 * c, 4 * c, 3, 2, false)),
        ];
        for i in 1..=spec.n_res_blocks {
            let first = block(&mut p, &format!("res{i}.a"), 4 * c, 4 * c, 3, 1, false);
            let mut second = block(&mut p, &format!("res{i}.b"), 4 * c, 4 * c, 3, 1, false);
            second.act = Act::Identity;
            layers.push(Layer::Residual(first, second));
        }
        layers.push(Layer::Block(block(
            &mut p,
            "uconv1",
            4 * c,
            4 * c,
            3,
            1,
            false,
        )));
        layers.push(Layer::Block(block(
            &mut p,
            "uconv2",
            4 * c,
            2 * c,
            3,
            1,
            true,
        )));
        layers.push(Layer::Block(ConvBlock {
            upsample: true,
            conv: Conv2d::new(&mut p, "uconv3", 2 * c, ic, 7, 1, 3, true),
            norm: false,
            act: Act::Tanh,
        }));
        Ok(Self {
            spec,
            params: p,
            layers,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.spec.image_size;
        if x.shape() != (self.spec.image_channels, s, s) {
            return Err(Error::Shape(format!(
                "generator expects {}x{s}x{s} input, got {}x{}x{}",
                self.spec.image_channels, x.channels, x.height, x.width
            )));
        }
        Ok(())
    }

    /// Feature taps only need the encoder to tile evenly, so any square input
    /// whose side is a multiple of 4 is accepted there.
    fn check_tap_input(&self, x: &Tensor<T>) -> Result<()> {
        let c = self.spec.image_channels;
        if x.channels != c || x.height != x.width || x.height == 0 || !x.height.is_multiple_of(4) {
            return Err(Error::Shape(format!(
                "feature extraction expects a {c}xSxS input with S a multiple of 4, got {}x{}x{}",
                x.channels, x.height, x.width
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        x: &Tensor<T>,
        keep_cache: bool,
        stop_after: Option<usize>,
        mut on_layer: impl FnMut(usize, &Tensor<T>),
    ) -> Result<(Tensor<T>, Option<GeneratorTrace<T>>)> {
        let mut caches = Vec::with_capacity(if keep_cache { self.layers.len() } else { 0 });
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Block(b) => {
                    let (out, cache) = b.forward(&self.params, &h, keep_cache)?;
                    if let Some(c) = cache {
                        caches.push(LayerCache::Block(c));
                    }
                    out
                }
                Layer::Residual(a, b) => {
                    let (mid, ca) = a.forward(&self.params, &h, keep_cache)?;
                    let (mut out, cb) = b.forward(&self.params, &mid, keep_cache)?;
                    out.add_assign(&h);
                    if let (Some(ca), Some(cb)) = (ca, cb) {
                        caches.push(LayerCache::Residual(ca, cb));
                    }
                    out
                }
            };
            on_layer(i, &h);
            if stop_after == Some(i) {
                break;
            }
        }
        Ok((h, keep_cache.then_some(GeneratorTrace { caches })))
    }

    /// Translates one image.
    pub fn translate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        Ok(self.run(x, false, None, |_, _| {})?.0)
    }

    /// Forward pass that keeps what [`Generator::backward`] needs.
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, GeneratorTrace<T>)> {
        self.check_input(x)?;
        let (y, trace) = self.run(x, true, None, |_, _| {})?;
        Ok((y, trace.expect("trace requested")))
    }

    /// Forward pass returning the output image plus the activations of every
    /// requested tap.
    pub fn forward_taps(
        &self,
        x: &Tensor<T>,
        taps: &[LayerName],
    ) -> Result<(Tensor<T>, BTreeMap<LayerName, Tensor<T>>)> {
        let n_res = self.spec.n_res_blocks;
        for &t in taps {
            if !self.spec.contains(t) {
                return Err(Error::UnknownLayer(t.to_string()));
            }
        }
        self.check_input(x)?;
        let wanted: BTreeMap<usize, LayerName> =
            taps.iter().map(|&t| (t.index(n_res), t)).collect();
        let mut acts = BTreeMap::new();
        let (y, _) = self.run(x, false, None, |i, h| {
            if let Some(&name) = wanted.get(&i) {
                acts.insert(name, h.clone());
            }
        })?;
        Ok((y, acts))
    }

    /// Activations of the requested taps only; the forward pass stops at the
    /// deepest one.
    pub fn taps(
        &self,
        x: &Tensor<T>,
        taps: &[LayerName],
    ) -> Result<BTreeMap<LayerName, Tensor<T>>> {
        let n_res = self.spec.n_res_blocks;
        for &t in taps {
            if !self.spec.contains(t) {
                return Err(Error::UnknownLayer(t.to_string()));
            }
        }
        let wanted: BTreeMap<usize, LayerName> =
            taps.iter().map(|&t| (t.index(n_res), t)).collect();
        self.check_tap_input(x)?;
        let Some(&deepest) = wanted.keys().next_back() else {
            return Ok(BTreeMap::new());
        };
        let mut acts = BTreeMap::new();
        self.run(x, false, Some(deepest), |i, h| {
            if let Some(&name) = wanted.get(&i) {
                acts.insert(name, h.clone());
            }
        })?;
        Ok(acts)
    }

    /// Activation of a single tap, stopping the forward pass there.
    pub fn activation(&self, x: &Tensor<T>, layer: LayerName) -> Result<Tensor<T>> {
        if !self.spec.contains(layer) {
            return Err(Error::UnknownLayer(layer.to_string()));
        }
        self.check_tap_input(x)?;
        let idx = layer.index(self.spec.n_res_blocks);
        Ok(self.run(x, false, Some(idx), |_, _| {})?.0)
    }

    /// Accumulates parameter gradients for `dy` at the output; returns the
    /// gradient with respect to the input image.
    pub fn backward(&mut self, trace: &GeneratorTrace<T>, dy: &Tensor<T>) -> Tensor<T> {
        let ParamStore { values, grads, .. } = &mut self.params;
        let mut g = dy.clone();
        for (layer, cache) in self.layers.iter().zip(&trace.caches).rev() {
            g = match (layer, cache) {
                (Layer::Block(b), LayerCache::Block(c)) => b.backward(values, grads, c, &g),
                (Layer::Residual(a, b), LayerCache::Residual(ca, cb)) => {
                    let dmid = b.backward(values, grads, cb, &g);
                    let mut dx = a.backward(values, grads, ca, &dmid);
                    dx.add_assign(&g);
                    dx
                }
                _ => unreachable!("trace does not belong to this generator"),
            };
        }
        g
    }
}

/// Anything that maps an image to an image; lets the loss functions run on
/// hand-built translators as well as trained generators.
pub trait Translator<T> {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> Translator<T> for Generator<T> {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.translate(x)
    }
}

impl<T, F> Translator<T> for F
where
    F: Fn(&Tensor<T>) -> Tensor<T>,
{
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_names_round_trip() {
        let spec = GeneratorSpec::default();
        let names = spec.layer_names();
        assert_eq!(names.len(), 15);
        for (i, n) in names.iter().enumerate() {
            assert_eq!(n.index(9), i);
            assert_eq!(n.to_string().parse::<LayerName>().unwrap(), *n);
        }
        assert!("Conv4".parse::<LayerName>().is_err());
        assert!("Res0".parse::<LayerName>().is_err());
        assert!("Pool1".parse::<LayerName>().is_err());
    }

    #[test]
    fn tap_shapes_on_a_small_spec() {
        let spec = GeneratorSpec {
            image_channels: 3,
            base_channels: 4,
            n_res_blocks: 2,
            image_size: 16,
        };
        let g = Generator::<f32>::new(spec.clone()).unwrap();
        let x = Tensor::zeros(3, 16, 16);
        let (y, taps) = g.forward_taps(&x, &spec.layer_names()).unwrap();
        assert_eq!(y.shape(), (3, 16, 16));
        assert_eq!(taps.len(), 8);
        for (name, act) in &taps {
            assert_eq!(act.shape(), spec.tap_shape(*name), "{name}");
        }
        assert!(matches!(
            g.forward_taps(&x, &[LayerName::Res(3)]),
            Err(Error::UnknownLayer(_))
        ));
        assert!(g.translate(&Tensor::zeros(3, 8, 8)).is_err());
        // the encoder taps run at other sizes
        let conv3 = g
            .activation(&Tensor::zeros(3, 32, 32), LayerName::Conv(3))
            .unwrap();
        assert_eq!((conv3.height, conv3.width), (8, 8));
        assert!(g
            .activation(&Tensor::zeros(3, 30, 30), LayerName::Conv(3))
            .is_err());
        assert!(g
            .activation(&Tensor::zeros(3, 32, 16), LayerName::Conv(3))
            .is_err());
    }
}

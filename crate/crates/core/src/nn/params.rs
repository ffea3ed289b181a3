use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named parameter tensors of one network, with matching gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub values: Vec<Vec<T>>,
    pub grads: Vec<Vec<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.names.push(name.into());
        self.shapes.push(shape);
        self.values.push(vec![T::zero(); n]);
        self.grads.push(vec![T::zero(); n]);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn scale_grads(&mut self, factor: T) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    /// Fills every parameter whose name ends in `.weight` from N(0, σ²);
    /// everything else (biases) is zeroed.
    pub fn init_gaussian<R: Rng + ?Sized>(&mut self, sigma: f64, rng: &mut R) {
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        for (name, values) in self.names.iter().zip(&mut self.values) {
            let is_weight = name.ends_with(".weight");
            for v in values.iter_mut() {
                *v = if is_weight {
                    T::from_f64_lossy(normal.sample(rng))
                } else {
                    T::zero()
                };
            }
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Copies values from `(name, data)` pairs; every parameter must be present
    /// with the right length.
    pub fn load_named<'a>(
        &mut self,
        mut lookup: impl FnMut(&str) -> Option<&'a [f32]>,
    ) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = lookup(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
            if src.len() != self.values[i].len() {
                return Err(Error::Shape(format!(
                    "parameter `{name}`: stored {} values, network expects {}",
                    src.len(),
                    self.values[i].len()
                )));
            }
            for (d, &s) in self.values[i].iter_mut().zip(src) {
                *d = T::from_f64_lossy(s as f64);
            }
        }
        Ok(())
    }

    pub fn to_f32(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.values)
            .map(|((n, s), v)| {
                (
                    n.clone(),
                    s.clone(),
                    v.iter().map(|x| x.as_f64() as f32).collect(),
                )
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect())
                .collect(),
            grads: self
                .grads
                .iter()
                .map(|g| vec![U::zero(); g.len()])
                .collect(),
        }
    }
}

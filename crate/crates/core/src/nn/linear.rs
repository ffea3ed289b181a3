use crate::tensor::Scalar;

use super::params::{ParamId, ParamStore};

/// Fully connected layer, `y = W x + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), vec![outputs, inputs]),
            bias: store.add(format!("{name}.bias"), vec![outputs]),
            inputs,
            outputs,
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.inputs);
        let w = store.value(self.weight);
        store
            .value(self.bias)
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                b + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>()
            })
            .collect()
    }

    pub fn backward<T: Scalar>(
        &self,
        values: &[Vec<T>],
        grads: &mut [Vec<T>],
        x: &[T],
        dy: &[T],
    ) -> Vec<T> {
        let w = &values[self.weight.0];
        let mut dx = vec![T::zero(); self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            grads[self.bias.0][o] = grads[self.bias.0][o] + g;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grads[self.weight.0][row + i] = grads[self.weight.0][row + i] + g * x[i];
                dx[i] = dx[i] + g * w[row + i];
            }
        }
        dx
    }
}

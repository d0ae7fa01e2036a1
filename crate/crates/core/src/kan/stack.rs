//! Composition of KAN layers with chained dimensions.

use crate::error::{Error, Result};
use crate::kan::layer::{KanLayer, KanLayerGrads};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct KanStack<T: crate::scalar::Scalar> {
    layers: Vec<KanLayer<T>>,
}

impl<T: crate::scalar::Scalar> KanStack<T> {
    /// Dimension chaining (layer i's n_out == layer i+1's n_in) is checked
    /// here, at construction, never at forward time.
    pub fn new(layers: Vec<KanLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("KAN stack must contain at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].n_out(),
                    i + 1,
                    pair[1].n_in()
                )));
            }
        }
        Ok(KanStack { layers })
    }

    pub fn layers(&self) -> &[KanLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [KanLayer<T>] {
        &mut self.layers
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out()
    }

    /// Sequential application of the layers; identical to folding
    /// [`KanLayer::forward`].
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Gradients of <cotangent, forward(input)> with respect to every layer
    /// parameter and the input.
    pub fn gradients(
        &self,
        input: &Tensor<T>,
        cotangent: &Tensor<T>,
    ) -> Result<(Vec<KanLayerGrads<T>>, Tensor<T>)> {
        let (batch, vector) = match input.shape()[..] {
            [w] if w == self.n_in() => (1, true),
            [b, w] if w == self.n_in() => (b, false),
            _ => {
                return Err(Error::shape(format!(
                    "input shape {:?} does not match stack n_in {}",
                    input.shape(),
                    self.n_in()
                )))
            }
        };
        let expect_cot: &[usize] = if vector {
            &[self.n_out()]
        } else {
            &[batch, self.n_out()]
        };
        if cotangent.shape() != expect_cot {
            return Err(Error::shape(format!(
                "cotangent shape {:?}, expected {:?}",
                cotangent.shape(),
                expect_cot
            )));
        }

        // Forward, keeping every intermediate.
        let mut acts: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap())?;
            acts.push(next);
        }

        // Reverse sweep.
        let mut grads: Vec<KanLayerGrads<T>> =
            self.layers.iter().map(|l| l.zero_grads()).collect();
        let mut cot = cotangent.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut gin = vec![T::zero(); batch * layer.n_in()];
            layer.backward_kernel(acts[i].data(), batch, &cot, &mut grads[i], &mut gin);
            cot = gin;
        }
        let gin = if vector {
            Tensor::from_vec(&[self.n_in()], cot)?
        } else {
            Tensor::from_vec(&[batch, self.n_in()], cot)?
        };
        Ok((grads, gin))
    }
}

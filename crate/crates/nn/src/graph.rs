//! Feed-forward graph: a shared trunk followed by one or more heads.
//!
//! Single-head networks (the sleep stagers) use a trunk and one head; the
//! vital-sign network shares its convolutional trunk between a heart-rate
//! head and a respiration head, and gradients from both heads are summed
//! where they meet the trunk output.
//!
//! Shapes are validated once at construction, so a mismatched stack fails
//! before any data is seen.

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::layer::{Layer, LayerCache};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    /// Per-sample input shape, for example `[500, 56, 2]`.
    pub input_shape: Vec<usize>,
    pub trunk: Vec<Layer>,
    pub heads: Vec<Vec<Layer>>,
}

/// Caches from one training forward pass, consumed by [`ModelGraph::backward`].
pub struct Trace {
    trunk: Vec<LayerCache>,
    heads: Vec<Vec<LayerCache>>,
}

/// Parameter gradients mirroring the graph structure, plus the gradient
/// with respect to the network input (used by the finite-difference checks).
pub struct Gradients {
    pub input: Tensor,
    pub trunk: Vec<Vec<Tensor>>,
    pub heads: Vec<Vec<Vec<Tensor>>>,
}

impl ModelGraph {
    /// Validates that the trunk accepts `input_shape` and that every head
    /// accepts the trunk output shape.
    pub fn new(input_shape: Vec<usize>, trunk: Vec<Layer>, heads: Vec<Vec<Layer>>) -> Result<Self, NnError> {
        if heads.is_empty() {
            return Err(NnError::InvalidConfig("a graph needs at least one head".into()));
        }
        let graph = ModelGraph { input_shape, trunk, heads };
        graph.output_shapes()?;
        Ok(graph)
    }

    /// Per-sample output shape of each head; also re-runs shape validation.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = self.input_shape.clone();
        for layer in &self.trunk {
            shape = layer.spec.infer(&shape)?;
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut s = shape.clone();
            for layer in head {
                s = layer.spec.infer(&s)?;
            }
            outs.push(s);
        }
        Ok(outs)
    }

    /// Randomizes all conv and dense weights in a fixed order (trunk first,
    /// then heads), so a seeded generator reproduces the network exactly.
    pub fn init_params<R: rand::Rng>(&mut self, rng: &mut R) {
        for layer in &mut self.trunk {
            layer.init_params(rng);
        }
        for head in &mut self.heads {
            for layer in head {
                layer.init_params(rng);
            }
        }
    }

    pub fn num_params(&self) -> usize {
        let trunk: usize = self.trunk.iter().map(Layer::num_params).sum();
        let heads: usize = self
            .heads
            .iter()
            .flat_map(|h| h.iter())
            .map(Layer::num_params)
            .sum();
        trunk + heads
    }

    fn check_batch(&self, x: &Tensor) -> Result<(), NnError> {
        let expected: Vec<usize> = std::iter::once(0).chain(self.input_shape.iter().cloned()).collect();
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::shape("graph input", &expected, x.shape()));
        }
        Ok(())
    }

    /// Inference pass: one output tensor per head, batchnorm in eval mode.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<Tensor>, NnError> {
        self.check_batch(x)?;
        let mut h = x.clone();
        for layer in &self.trunk {
            h = layer.forward_eval(&h)?;
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut y = h.clone();
            for layer in head {
                y = layer.forward_eval(&y)?;
            }
            outs.push(y);
        }
        Ok(outs)
    }

    /// Training pass: outputs plus the caches needed for [`Self::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Vec<Tensor>, Trace), NnError> {
        self.check_batch(x)?;
        let mut h = x.clone();
        let mut trunk_caches = Vec::with_capacity(self.trunk.len());
        for layer in &mut self.trunk {
            let (y, cache) = layer.forward_train(&h)?;
            h = y;
            trunk_caches.push(cache);
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut head_caches = Vec::with_capacity(self.heads.len());
        for head in &mut self.heads {
            let mut y = h.clone();
            let mut caches = Vec::with_capacity(head.len());
            for layer in head.iter_mut() {
                let (z, cache) = layer.forward_train(&y)?;
                y = z;
                caches.push(cache);
            }
            outs.push(y);
            head_caches.push(caches);
        }
        Ok((
            outs,
            Trace {
                trunk: trunk_caches,
                heads: head_caches,
            },
        ))
    }

    /// Backpropagates one loss gradient per head and returns all parameter
    /// gradients. Head gradients are summed where the heads join the trunk.
    pub fn backward(&self, trace: &Trace, out_grads: &[Tensor]) -> Result<Gradients, NnError> {
        if out_grads.len() != self.heads.len() {
            return Err(NnError::shape(
                "backward head gradients",
                &[self.heads.len()],
                &[out_grads.len()],
            ));
        }
        let mut head_grads = Vec::with_capacity(self.heads.len());
        let mut trunk_out_grad: Option<Tensor> = None;
        for (hi, head) in self.heads.iter().enumerate() {
            let mut dy = out_grads[hi].clone();
            let mut grads_rev: Vec<Vec<Tensor>> = Vec::with_capacity(head.len());
            for (layer, cache) in head.iter().zip(&trace.heads[hi]).rev() {
                let (dx, dparams) = layer.backward(cache, &dy)?;
                grads_rev.push(dparams);
                dy = dx;
            }
            grads_rev.reverse();
            head_grads.push(grads_rev);
            match &mut trunk_out_grad {
                None => trunk_out_grad = Some(dy),
                Some(acc) => {
                    if acc.shape() != dy.shape() {
                        return Err(NnError::shape("head join", acc.shape(), dy.shape()));
                    }
                    for (a, b) in acc.data_mut().iter_mut().zip(dy.data()) {
                        *a += b;
                    }
                }
            }
        }
        let mut dy = trunk_out_grad.expect("at least one head");
        let mut trunk_rev: Vec<Vec<Tensor>> = Vec::with_capacity(self.trunk.len());
        for (layer, cache) in self.trunk.iter().zip(&trace.trunk).rev() {
            let (dx, dparams) = layer.backward(cache, &dy)?;
            trunk_rev.push(dparams);
            dy = dx;
        }
        trunk_rev.reverse();
        Ok(Gradients {
            input: dy,
            trunk: trunk_rev,
            heads: head_grads,
        })
    }

    /// Pairs every learned parameter with its gradient, in the fixed
    /// traversal order shared with [`Self::init_params`]. Optimizers index
    /// their per-parameter state by position in this sequence.
    pub fn zip_params_mut<'a>(
        &'a mut self,
        grads: &'a Gradients,
    ) -> Result<Vec<(&'a mut Tensor, &'a Tensor)>, NnError> {
        let mut pairs = Vec::new();
        if grads.trunk.len() != self.trunk.len() || grads.heads.len() != self.heads.len() {
            return Err(NnError::State("gradients do not match the graph layout".into()));
        }
        for (layer, g) in self.trunk.iter_mut().zip(&grads.trunk) {
            if layer.params.len() != g.len() {
                return Err(NnError::State("gradients do not match the graph layout".into()));
            }
            for (p, gp) in layer.params.iter_mut().zip(g) {
                pairs.push((p, gp));
            }
        }
        for (head, hg) in self.heads.iter_mut().zip(&grads.heads) {
            for (layer, g) in head.iter_mut().zip(hg) {
                if layer.params.len() != g.len() {
                    return Err(NnError::State("gradients do not match the graph layout".into()));
                }
                for (p, gp) in layer.params.iter_mut().zip(g) {
                    pairs.push((p, gp));
                }
            }
        }
        Ok(pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerSpec;
    use rand::SeedableRng;

    fn tiny_two_head() -> ModelGraph {
        let trunk = vec![
            Layer::new(LayerSpec::Conv2d { kh: 3, kw: 3, in_ch: 1, out_ch: 2 }),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::MaxPool { ph: 2, pw: 2 }),
            Layer::new(LayerSpec::Flatten),
        ];
        let head = || vec![Layer::new(LayerSpec::Dense { inputs: 2 * 2 * 2, outputs: 1 })];
        ModelGraph::new(vec![4, 4, 1], trunk, vec![head(), head()]).unwrap()
    }

    #[test]
    fn build_rejects_mismatched_stacks() {
        let trunk = vec![Layer::new(LayerSpec::Flatten)];
        let bad_head = vec![Layer::new(LayerSpec::Dense { inputs: 99, outputs: 1 })];
        let err = ModelGraph::new(vec![4, 4, 1], trunk, vec![bad_head]);
        assert!(err.is_err(), "dense expecting 99 inputs cannot follow a 16-wide flatten");
    }

    #[test]
    fn output_shapes_cover_all_heads() {
        let g = tiny_two_head();
        assert_eq!(g.output_shapes().unwrap(), vec![vec![1], vec![1]]);
    }

    #[test]
    fn predict_checks_batch_shape() {
        let g = tiny_two_head();
        let bad = Tensor::zeros(&[2, 4, 5, 1]);
        assert!(g.predict(&bad).is_err());
        let ok = Tensor::zeros(&[2, 4, 4, 1]);
        assert_eq!(g.predict(&ok).unwrap().len(), 2);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let mut a = tiny_two_head();
        let mut b = tiny_two_head();
        a.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(7));
        b.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        let mut c = tiny_two_head();
        c.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(8));
        assert_ne!(a, c, "different seeds give different weights");
    }

    #[test]
    fn two_heads_share_the_trunk_activation() {
        let mut g = tiny_two_head();
        g.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        // Make both heads identical: they must then produce identical outputs.
        g.heads[1] = g.heads[0].clone();
        let x = Tensor::filled(&[3, 4, 4, 1], 0.5);
        let outs = g.predict(&x).unwrap();
        assert_eq!(outs[0], outs[1]);
    }
}

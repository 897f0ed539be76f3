//! Gradient-descent optimizers.
//!
//! Both optimizers keep per-parameter state indexed by position in the
//! graph's fixed parameter traversal, so they must be used with the same
//! graph for their whole lifetime. Updates are applied in traversal order,
//! which keeps training bit-reproducible.

use crate::error::NnError;
use crate::graph::{Gradients, ModelGraph};
use crate::tensor::Tensor;

/// Stochastic gradient descent with optional classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64) -> Result<Self, NnError> {
        Self::with_momentum(lr, 0.0)
    }

    pub fn with_momentum(lr: f64, momentum: f64) -> Result<Self, NnError> {
        if !(lr > 0.0) {
            return Err(NnError::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NnError::InvalidConfig(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Sgd { lr, momentum, velocity: Vec::new() })
    }

    pub fn step(&mut self, graph: &mut ModelGraph, grads: &Gradients) -> Result<(), NnError> {
        let pairs = graph.zip_params_mut(grads)?;
        if self.velocity.is_empty() {
            self.velocity = pairs.iter().map(|(p, _)| Tensor::zeros(p.shape())).collect();
        }
        if self.velocity.len() != pairs.len() {
            return Err(NnError::State("optimizer state does not match the graph".into()));
        }
        for ((param, grad), vel) in pairs.into_iter().zip(&mut self.velocity) {
            if param.shape() != grad.shape() || param.shape() != vel.shape() {
                return Err(NnError::shape("sgd step", param.shape(), grad.shape()));
            }
            for ((p, g), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(vel.data_mut())
            {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction (Kingma and Ba defaults: beta1 0.9, beta2
/// 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self, NnError> {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self, NnError> {
        if !(lr > 0.0) {
            return Err(NnError::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(NnError::InvalidConfig("betas must be in [0, 1)".into()));
        }
        if !(eps > 0.0) {
            return Err(NnError::InvalidConfig("eps must be positive".into()));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn step(&mut self, graph: &mut ModelGraph, grads: &Gradients) -> Result<(), NnError> {
        let pairs = graph.zip_params_mut(grads)?;
        if self.first.is_empty() {
            self.first = pairs.iter().map(|(p, _)| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != pairs.len() {
            return Err(NnError::State("optimizer state does not match the graph".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((param, grad), m), v) in pairs
            .into_iter()
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            if param.shape() != grad.shape() {
                return Err(NnError::shape("adam step", param.shape(), grad.shape()));
            }
            for (((p, g), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{Layer, LayerSpec};
    use crate::loss::mse;
    use crate::tensor::Tensor;

    /// One-parameter quadratic bowl: a 1-input 1-output dense layer with a
    /// fixed input of 1 and target 0 minimizes (w + b)^2.
    fn bowl(start: f64) -> ModelGraph {
        let mut dense = Layer::new(LayerSpec::Dense { inputs: 1, outputs: 1 });
        dense.params[0].data_mut()[0] = start;
        ModelGraph::new(vec![1], vec![], vec![vec![dense]]).unwrap()
    }

    fn train_step(graph: &mut ModelGraph) -> (f64, Gradients) {
        let x = Tensor::filled(&[1, 1], 1.0);
        let target = Tensor::zeros(&[1, 1]);
        let (outs, trace) = graph.forward_train(&x).unwrap();
        let (loss, grad) = mse(&outs[0], &target).unwrap();
        let grads = graph.backward(&trace, &[grad]).unwrap();
        (loss, grads)
    }

    #[test]
    fn sgd_descends_a_quadratic_bowl() {
        let mut graph = bowl(5.0);
        let mut opt = Sgd::new(0.1).unwrap();
        let (first_loss, _) = train_step(&mut graph);
        for _ in 0..100 {
            let (_, grads) = train_step(&mut graph);
            opt.step(&mut graph, &grads).unwrap();
        }
        let (final_loss, _) = train_step(&mut graph);
        assert!(final_loss < 1e-6, "loss stuck at {final_loss} from {first_loss}");
    }

    #[test]
    fn adam_minimizes_a_quadratic_bowl() {
        // Loss |w|^2 over every parameter of a dense layer; the gradient is
        // simply 2w, fed to the optimizer directly.
        let mut dense = Layer::new(LayerSpec::Dense { inputs: 2, outputs: 2 });
        for (i, v) in dense.params[0].data_mut().iter_mut().enumerate() {
            *v = [1.0, -0.5, 2.0, 0.25][i];
        }
        dense.params[1] = Tensor::from_vec(&[2], vec![-1.0, 0.75]).unwrap();
        let mut graph = ModelGraph::new(vec![2], vec![], vec![vec![dense]]).unwrap();
        let mut opt = Adam::new(0.1).unwrap();
        for _ in 0..200 {
            let layer = &graph.heads[0][0];
            let to_grad = |t: &Tensor| {
                Tensor::from_vec(t.shape(), t.data().iter().map(|w| 2.0 * w).collect()).unwrap()
            };
            let grads = Gradients {
                input: Tensor::zeros(&[0]),
                trunk: vec![],
                heads: vec![vec![vec![to_grad(&layer.params[0]), to_grad(&layer.params[1])]]],
            };
            opt.step(&mut graph, &grads).unwrap();
        }
        for layer in &graph.heads[0] {
            for p in &layer.params {
                for w in p.data() {
                    assert!(w.abs() < 1e-3, "parameter stuck at {w}");
                }
            }
        }
    }

    #[test]
    fn sgd_leaves_params_alone_under_zero_gradient() {
        let mut graph = bowl(5.0);
        let before = graph.clone();
        let mut opt = Sgd::new(0.1).unwrap();
        let grads = Gradients {
            input: Tensor::zeros(&[0]),
            trunk: vec![],
            heads: vec![vec![vec![Tensor::zeros(&[1, 1]), Tensor::zeros(&[1])]]],
        };
        opt.step(&mut graph, &grads).unwrap();
        assert_eq!(graph, before);
    }

    #[test]
    fn momentum_accelerates_on_a_shallow_slope() {
        let mut plain_graph = bowl(5.0);
        let mut momentum_graph = bowl(5.0);
        let mut plain = Sgd::new(0.01).unwrap();
        let mut heavy = Sgd::with_momentum(0.01, 0.9).unwrap();
        for _ in 0..50 {
            let (_, g) = train_step(&mut plain_graph);
            plain.step(&mut plain_graph, &g).unwrap();
            let (_, g) = train_step(&mut momentum_graph);
            heavy.step(&mut momentum_graph, &g).unwrap();
        }
        let (plain_loss, _) = train_step(&mut plain_graph);
        let (heavy_loss, _) = train_step(&mut momentum_graph);
        assert!(heavy_loss < plain_loss, "momentum should make faster early progress");
    }

    #[test]
    fn constructors_reject_bad_settings() {
        assert!(Sgd::new(0.0).is_err());
        assert!(Sgd::with_momentum(0.1, 1.0).is_err());
        assert!(Adam::new(-1.0).is_err());
        assert!(Adam::with_betas(0.1, 0.9, 1.0, 1e-8).is_err());
    }
}

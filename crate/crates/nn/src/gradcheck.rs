//! Central finite-difference verification of the backward pass.
//!
//! For a sampled subset of parameters (and input elements) the checker
//! perturbs one value by ±step, re-evaluates the training-mode loss, and
//! compares `(loss(+) - loss(-)) / (2 step)` against the analytic
//! gradient. With `f64` and step 1e-5 the two agree to a relative error
//! far below the 1e-4 acceptance threshold unless the backward pass is
//! wrong.

use rand::Rng;

use crate::error::NnError;
use crate::graph::{Gradients, ModelGraph};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Number of scalar gradient entries compared.
    pub checked: usize,
    pub max_rel_err: f64,
    /// Location of the worst entry, for example `trunk[0].param[1][3]`.
    pub worst: String,
}

/// Relative error with a floor, so near-zero gradient pairs (where both
/// sides are dominated by rounding noise) do not spuriously fail.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-3);
    (a - b).abs() / denom
}

#[derive(Clone, Copy)]
enum Loc {
    Trunk { layer: usize, param: usize, elem: usize },
    Head { head: usize, layer: usize, param: usize, elem: usize },
    Input { elem: usize },
}

impl Loc {
    fn describe(&self) -> String {
        match self {
            Loc::Trunk { layer, param, elem } => format!("trunk[{layer}].param[{param}][{elem}]"),
            Loc::Head { head, layer, param, elem } => {
                format!("head[{head}][{layer}].param[{param}][{elem}]")
            }
            Loc::Input { elem } => format!("input[{elem}]"),
        }
    }
}

fn param_get(graph: &ModelGraph, x: &Tensor, loc: Loc) -> f64 {
    match loc {
        Loc::Trunk { layer, param, elem } => graph.trunk[layer].params[param].data()[elem],
        Loc::Head { head, layer, param, elem } => {
            graph.heads[head][layer].params[param].data()[elem]
        }
        Loc::Input { elem } => x.data()[elem],
    }
}

fn param_set(graph: &mut ModelGraph, x: &mut Tensor, loc: Loc, value: f64) {
    match loc {
        Loc::Trunk { layer, param, elem } => {
            graph.trunk[layer].params[param].data_mut()[elem] = value
        }
        Loc::Head { head, layer, param, elem } => {
            graph.heads[head][layer].params[param].data_mut()[elem] = value
        }
        Loc::Input { elem } => x.data_mut()[elem] = value,
    }
}

fn analytic_at(grads: &Gradients, loc: Loc) -> f64 {
    match loc {
        Loc::Trunk { layer, param, elem } => grads.trunk[layer][param].data()[elem],
        Loc::Head { head, layer, param, elem } => grads.heads[head][layer][param].data()[elem],
        Loc::Input { elem } => grads.input.data()[elem],
    }
}

/// Picks up to `count` distinct element indices from a tensor of length `len`.
fn sample_indices<R: Rng>(len: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut picked = Vec::with_capacity(count);
    while picked.len() < count {
        let i = rng.gen_range(0..len);
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked
}

/// Compares analytic gradients against central finite differences.
///
/// `loss` maps the head outputs to a scalar and its gradient per head
/// output. Up to `per_tensor` elements of every parameter tensor, and of
/// the input, are checked. The graph is evaluated in training mode for
/// both sides so batchnorm uses batch statistics consistently.
pub fn check_gradients<L, R>(
    graph: &mut ModelGraph,
    x: &Tensor,
    loss: &L,
    step: f64,
    per_tensor: usize,
    rng: &mut R,
) -> Result<GradCheckReport, NnError>
where
    L: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>), NnError>,
    R: Rng,
{
    if !(step > 0.0) {
        return Err(NnError::InvalidConfig("finite-difference step must be positive".into()));
    }
    let (outs, trace) = graph.forward_train(x)?;
    let (_, out_grads) = loss(&outs)?;
    let analytic = graph.backward(&trace, &out_grads)?;

    let mut locations = Vec::new();
    for (li, layer) in graph.trunk.iter().enumerate() {
        for (pi, p) in layer.params.iter().enumerate() {
            for elem in sample_indices(p.len(), per_tensor, rng) {
                locations.push(Loc::Trunk { layer: li, param: pi, elem });
            }
        }
    }
    for (hi, head) in graph.heads.iter().enumerate() {
        for (li, layer) in head.iter().enumerate() {
            for (pi, p) in layer.params.iter().enumerate() {
                for elem in sample_indices(p.len(), per_tensor, rng) {
                    locations.push(Loc::Head { head: hi, layer: li, param: pi, elem });
                }
            }
        }
    }
    for elem in sample_indices(x.len(), per_tensor, rng) {
        locations.push(Loc::Input { elem });
    }

    let mut x_work = x.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for loc in locations {
        let orig = param_get(graph, &x_work, loc);
        param_set(graph, &mut x_work, loc, orig + step);
        let plus = eval_loss(graph, &x_work, loss)?;
        param_set(graph, &mut x_work, loc, orig - step);
        let minus = eval_loss(graph, &x_work, loss)?;
        param_set(graph, &mut x_work, loc, orig);
        let fd = (plus - minus) / (2.0 * step);
        let a = analytic_at(&analytic, loc);
        let rel = relative_error(a, fd);
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = format!("{} (analytic {a:.6e}, fd {fd:.6e})", loc.describe());
        }
    }
    Ok(report)
}

fn eval_loss<L>(graph: &mut ModelGraph, x: &Tensor, loss: &L) -> Result<f64, NnError>
where
    L: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>), NnError>,
{
    let (outs, _) = graph.forward_train(x)?;
    loss(outs.as_slice()).map(|(l, _)| l)
}

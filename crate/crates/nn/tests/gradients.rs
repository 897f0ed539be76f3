//! Finite-difference verification of every layer's backward pass, plus the
//! closed-form dense-layer gradient and determinism checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wisp_nn::gradcheck::check_gradients;
use wisp_nn::graph::Gradients;
use wisp_nn::loss::{cross_entropy, mse};
use wisp_nn::{Layer, LayerSpec, ModelGraph, Tensor};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    t
}

/// Builds a network containing the given trunk, initializes it, and checks
/// its gradients against finite differences under an MSE loss.
fn check_regression_net(
    input_shape: Vec<usize>,
    trunk: Vec<Layer>,
    heads: Vec<Vec<Layer>>,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = ModelGraph::new(input_shape.clone(), trunk, heads).unwrap();
    graph.init_params(&mut rng);
    let batch_shape: Vec<usize> = std::iter::once(3).chain(input_shape).collect();
    let x = random_tensor(&batch_shape, &mut rng);
    let targets: Vec<Tensor> = graph
        .output_shapes()
        .unwrap()
        .iter()
        .map(|s| {
            let shape: Vec<usize> = std::iter::once(3).chain(s.iter().cloned()).collect();
            random_tensor(&shape, &mut rng)
        })
        .collect();
    let loss = move |outs: &[Tensor]| {
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(outs.len());
        for (o, t) in outs.iter().zip(&targets) {
            let (l, g) = mse(o, t)?;
            total += l;
            grads.push(g);
        }
        Ok((total, grads))
    };
    let report = check_gradients(&mut graph, &x, &loss, FD_STEP, 4, &mut rng).unwrap();
    assert!(
        report.max_rel_err < FD_TOL,
        "seed {seed}: worst gradient {} rel err {:.3e}",
        report.worst,
        report.max_rel_err
    );
    report.max_rel_err
}

#[test]
fn conv_relu_pool_stack_gradients_match_finite_differences() {
    for seed in 0..20 {
        let trunk = vec![
            Layer::new(LayerSpec::Conv2d { kh: 3, kw: 3, in_ch: 2, out_ch: 3 }),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::MaxPool { ph: 2, pw: 2 }),
            Layer::new(LayerSpec::Flatten),
        ];
        let head = vec![Layer::new(LayerSpec::Dense { inputs: 3 * 3 * 3, outputs: 2 })];
        check_regression_net(vec![6, 5, 2], trunk, vec![head], seed);
    }
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    for seed in 20..40 {
        let trunk = vec![
            Layer::new(LayerSpec::Conv2d { kh: 2, kw: 2, in_ch: 1, out_ch: 4 }),
            Layer::new(LayerSpec::batch_norm(4)),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::Flatten),
        ];
        let head = vec![Layer::new(LayerSpec::Dense { inputs: 4 * 4 * 4, outputs: 1 })];
        check_regression_net(vec![4, 4, 1], trunk, vec![head], seed);
    }
}

#[test]
fn two_head_graph_gradients_match_finite_differences() {
    // The shared-trunk case: both heads' losses flow back through the trunk.
    for seed in 40..50 {
        let trunk = vec![
            Layer::new(LayerSpec::Conv2d { kh: 3, kw: 3, in_ch: 2, out_ch: 2 }),
            Layer::new(LayerSpec::batch_norm(2)),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::MaxPool { ph: 2, pw: 2 }),
            Layer::new(LayerSpec::Flatten),
        ];
        let head = || {
            vec![
                Layer::new(LayerSpec::Dense { inputs: 3 * 2 * 2, outputs: 4 }),
                Layer::new(LayerSpec::Relu),
                Layer::new(LayerSpec::Dense { inputs: 4, outputs: 1 }),
            ]
        };
        check_regression_net(vec![5, 4, 2], trunk, vec![head(), head()], seed);
    }
}

#[test]
fn softmax_cross_entropy_gradients_match_finite_differences() {
    for seed in 50..70 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = vec![
            Layer::new(LayerSpec::Conv2d { kh: 3, kw: 3, in_ch: 1, out_ch: 2 }),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::MaxPool { ph: 2, pw: 2 }),
            Layer::new(LayerSpec::Flatten),
        ];
        let head = vec![
            Layer::new(LayerSpec::Dense { inputs: 2 * 2 * 2, outputs: 3 }),
            Layer::new(LayerSpec::Softmax),
        ];
        let mut graph = ModelGraph::new(vec![4, 4, 1], trunk, vec![head]).unwrap();
        graph.init_params(&mut rng);
        let x = random_tensor(&[4, 4, 4, 1], &mut rng);
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let weights = [1.0, 2.5, 0.5];
        let loss = move |outs: &[Tensor]| {
            let (l, g) = cross_entropy(&outs[0], &labels, Some(&weights))?;
            Ok((l, vec![g]))
        };
        let report = check_gradients(&mut graph, &x, &loss, FD_STEP, 4, &mut rng).unwrap();
        assert!(
            report.max_rel_err < FD_TOL,
            "seed {seed}: worst gradient {} rel err {:.3e}",
            report.worst,
            report.max_rel_err
        );
    }
}

#[test]
fn dense_gradient_matches_closed_form() {
    // Single dense layer under squared error: dL/dW = 2 (Wx + b - y) xᵀ / n.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut graph = ModelGraph::new(
        vec![3],
        vec![],
        vec![vec![Layer::new(LayerSpec::Dense { inputs: 3, outputs: 2 })]],
    )
    .unwrap();
    graph.init_params(&mut rng);
    let x = random_tensor(&[1, 3], &mut rng);
    let y = random_tensor(&[1, 2], &mut rng);
    let (outs, trace) = graph.forward_train(&x).unwrap();
    let (_, lg) = mse(&outs[0], &y).unwrap();
    let grads = graph.backward(&trace, &[lg]).unwrap();

    let residual: Vec<f64> = outs[0]
        .data()
        .iter()
        .zip(y.data())
        .map(|(o, t)| o - t)
        .collect();
    let n = 2.0; // mse averages over all output elements
    for i in 0..3 {
        for j in 0..2 {
            let expect = 2.0 * residual[j] * x.data()[i] / n;
            let got = grads.heads[0][0][0].at2(i, j);
            assert!(
                (got - expect).abs() < 1e-12,
                "dW[{i}][{j}]: analytic {got} vs closed form {expect}"
            );
        }
    }
    for j in 0..2 {
        let expect = 2.0 * residual[j] / n;
        let got = grads.heads[0][0][1].data()[j];
        assert!((got - expect).abs() < 1e-12, "db[{j}]");
    }
}

#[test]
fn zero_loss_gradient_gives_zero_parameter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trunk = vec![
        Layer::new(LayerSpec::Conv2d { kh: 3, kw: 3, in_ch: 1, out_ch: 2 }),
        Layer::new(LayerSpec::batch_norm(2)),
        Layer::new(LayerSpec::Relu),
        Layer::new(LayerSpec::Flatten),
    ];
    let head = vec![Layer::new(LayerSpec::Dense { inputs: 32, outputs: 1 })];
    let mut graph = ModelGraph::new(vec![4, 4, 1], trunk, vec![head]).unwrap();
    graph.init_params(&mut rng);
    let x = random_tensor(&[2, 4, 4, 1], &mut rng);
    let (outs, trace) = graph.forward_train(&x).unwrap();
    let zero = Tensor::zeros(outs[0].shape());
    let grads = graph.backward(&trace, &[zero]).unwrap();
    let all: Vec<&Tensor> = grads
        .trunk
        .iter()
        .chain(grads.heads.iter().flat_map(|h| h.iter()))
        .flat_map(|v| v.iter())
        .collect();
    assert!(!all.is_empty());
    for t in all {
        assert!(t.data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn backward_with_wrong_cache_is_a_state_error() {
    let layer = Layer::new(LayerSpec::Relu);
    let dy = Tensor::zeros(&[1, 2]);
    let err = layer.backward(&wisp_nn::layer::LayerCache::None, &dy);
    assert!(matches!(err, Err(wisp_nn::NnError::State(_))));
}

#[test]
fn training_trajectory_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let trunk = vec![
            Layer::new(LayerSpec::Conv2d { kh: 3, kw: 3, in_ch: 1, out_ch: 2 }),
            Layer::new(LayerSpec::batch_norm(2)),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::MaxPool { ph: 2, pw: 2 }),
            Layer::new(LayerSpec::Flatten),
        ];
        let head = vec![Layer::new(LayerSpec::Dense { inputs: 8, outputs: 1 })];
        let mut graph = ModelGraph::new(vec![4, 4, 1], trunk, vec![head]).unwrap();
        graph.init_params(&mut rng);
        let mut opt = wisp_nn::optim::Adam::new(0.01).unwrap();
        let x = random_tensor(&[4, 4, 4, 1], &mut rng);
        let y = random_tensor(&[4, 1], &mut rng);
        let mut losses = Vec::new();
        for _ in 0..10 {
            let (outs, trace) = graph.forward_train(&x).unwrap();
            let (l, g) = mse(&outs[0], &y).unwrap();
            losses.push(l);
            let grads = graph.backward(&trace, &[g]).unwrap();
            opt.step(&mut graph, &grads).unwrap();
        }
        (losses, graph)
    };
    let (losses_a, graph_a) = run();
    let (losses_b, graph_b) = run();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&losses_a), bits(&losses_b), "loss trajectories must be bit-identical");
    assert_eq!(graph_a, graph_b, "final weights must be bit-identical");
}

#[test]
fn manually_built_gradients_must_match_layout() {
    let mut graph = ModelGraph::new(
        vec![2],
        vec![],
        vec![vec![Layer::new(LayerSpec::Dense { inputs: 2, outputs: 1 })]],
    )
    .unwrap();
    let bad = Gradients {
        input: Tensor::zeros(&[0]),
        trunk: vec![vec![Tensor::zeros(&[1])]], // graph has an empty trunk
        heads: vec![],
    };
    assert!(graph.zip_params_mut(&bad).is_err());
}

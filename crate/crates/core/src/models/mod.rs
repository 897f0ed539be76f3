//! Network builders, training loops, and evaluation metrics for the three
//! estimator architectures: a two-head vitals regressor, a sleep stager on
//! raw feature windows, and a sleep stager on coupling maps.

mod data;
mod metrics;
mod registry;
mod train;

pub use data::{StageDataset, TargetScaler, VitalsDataset};
pub use metrics::{
    argmax_stage, evaluate_stages, evaluate_vitals, stage_metrics, vitals_metrics, RateMetrics,
    StageMetrics, VitalsMetrics,
};
pub use registry::{ModelRegistry, ModelStrategy};
pub use train::{train_stages, train_vitals, EpochReport, TrainConfig, TrainingReport};

use crate::error::{CoreError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use wisp_nn::{Layer, LayerSpec, ModelGraph};

/// Sleep stage labels, in the order used for class indices everywhere
/// (confusion matrices, class weights, dataset labels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SleepStage {
    Wake,
    Rem,
    Light,
    Deep,
}

impl SleepStage {
    pub const ALL: [SleepStage; 4] = [
        SleepStage::Wake,
        SleepStage::Rem,
        SleepStage::Light,
        SleepStage::Deep,
    ];

    pub const COUNT: usize = 4;

    /// Class index used for one-hot labels and confusion-matrix axes.
    pub fn index(self) -> usize {
        match self {
            SleepStage::Wake => 0,
            SleepStage::Rem => 1,
            SleepStage::Light => 2,
            SleepStage::Deep => 3,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        SleepStage::ALL
            .get(index)
            .copied()
            .ok_or_else(|| CoreError::Range(format!("sleep stage index {index} out of 0..4")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepStage::Wake => "WAKE",
            SleepStage::Rem => "REM",
            SleepStage::Light => "LIGHT",
            SleepStage::Deep => "DEEP",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "WAKE" => Ok(SleepStage::Wake),
            "REM" => Ok(SleepStage::Rem),
            "LIGHT" => Ok(SleepStage::Light),
            "DEEP" => Ok(SleepStage::Deep),
            other => Err(CoreError::Parse {
                source_name: "sleep stage".into(),
                line: 0,
                message: format!("unknown stage {other:?}"),
            }),
        }
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which kind of target a model predicts; decides loss, metrics, and the
/// training-report column layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Two scalar regressions (heart and respiration rate in bpm).
    Vitals,
    /// Four-class sleep stage classification.
    Stages,
}

/// Configuration of the two-head vitals regressor.
///
/// The trunk is three convolution blocks (kernel 5x5 then 3x3 then 2x2, max
/// pooling 4x4 then 2x2 then 3x3) shared by both heads; each head is a
/// hidden dense layer followed by a scalar output.
#[derive(Debug, Clone)]
pub struct H3rnConfig {
    /// Input rows, i.e. window length in samples.
    pub rows: usize,
    pub subcarriers: usize,
    /// Output channels of the three convolution blocks.
    pub filters: [usize; 3],
    /// Width of the hidden dense layer in each head.
    pub head_hidden: usize,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for H3rnConfig {
    fn default() -> Self {
        H3rnConfig {
            rows: 500,
            subcarriers: 56,
            filters: [4, 8, 16],
            head_hidden: 64,
            seed: 0,
        }
    }
}

/// Configuration of the sleep stager on raw feature windows.
///
/// A standalone 5x5 convolution is followed by three blocks with kernels
/// 3x3, 2x2, 2x2 and pooling 40x16, 20x4, 12x2, then a dense softmax
/// classifier over the four stages.
#[derive(Debug, Clone)]
pub struct W2snConfig {
    /// Input rows, i.e. epoch length in samples.
    pub rows: usize,
    pub subcarriers: usize,
    /// Output channels of the four convolution layers.
    pub filters: [usize; 4],
    pub seed: u64,
}

impl Default for W2snConfig {
    fn default() -> Self {
        W2snConfig {
            rows: 3000,
            subcarriers: 56,
            filters: [4, 8, 16, 24],
            seed: 0,
        }
    }
}

/// Configuration of the sleep stager on coupling-map patches.
///
/// Four convolution blocks with kernels 5, 3, 2, 2 and 2x2 pooling each,
/// then a dense softmax classifier.
#[derive(Debug, Clone)]
pub struct CpcNetConfig {
    /// Input rows, i.e. epochs per map patch.
    pub rows: usize,
    /// Input columns, i.e. frequency bins per map patch.
    pub cols: usize,
    pub filters: [usize; 4],
    pub seed: u64,
}

impl Default for CpcNetConfig {
    fn default() -> Self {
        CpcNetConfig {
            rows: 64,
            cols: 64,
            filters: [4, 8, 16, 16],
            seed: 0,
        }
    }
}

fn conv_block(kh: usize, kw: usize, in_ch: usize, out_ch: usize, pool: Option<(usize, usize)>) -> Vec<Layer> {
    let mut layers = vec![
        Layer::new(LayerSpec::Conv2d { kh, kw, in_ch, out_ch }),
        Layer::new(LayerSpec::batch_norm(out_ch)),
        Layer::new(LayerSpec::Relu),
    ];
    if let Some((ph, pw)) = pool {
        layers.push(Layer::new(LayerSpec::MaxPool { ph, pw }));
    }
    layers
}

fn check_filters(filters: &[usize]) -> Result<()> {
    if filters.iter().any(|f| *f == 0) {
        return Err(CoreError::Config("filter counts must be positive".into()));
    }
    Ok(())
}

/// Flattened feature count after running `trunk` on one sample of `input_shape`.
fn flat_features(input_shape: &[usize], trunk: &[Layer]) -> Result<usize> {
    let mut shape = input_shape.to_vec();
    for layer in trunk {
        shape = layer.spec.infer(&shape)?;
    }
    if shape.len() != 1 {
        return Err(CoreError::Config(format!(
            "trunk must end flattened, got shape {shape:?}"
        )));
    }
    Ok(shape[0])
}

/// Builds the two-head vitals regressor with seeded initial parameters.
///
/// Both pooled dimensions shrink by a factor of 24 across the trunk, so the
/// input must be at least 24x24 for the final feature map to be meaningful.
pub fn build_h3rn(cfg: &H3rnConfig) -> Result<ModelGraph> {
    check_filters(&cfg.filters)?;
    if cfg.rows < 24 || cfg.subcarriers < 24 {
        return Err(CoreError::Config(format!(
            "input {}x{} too small for the 4x4/2x2/3x3 pooling chain (needs at least 24x24)",
            cfg.rows, cfg.subcarriers
        )));
    }
    if cfg.head_hidden == 0 {
        return Err(CoreError::Config("head width must be positive".into()));
    }
    let [f0, f1, f2] = cfg.filters;
    let mut trunk = Vec::new();
    trunk.extend(conv_block(5, 5, 2, f0, Some((4, 4))));
    trunk.extend(conv_block(3, 3, f0, f1, Some((2, 2))));
    trunk.extend(conv_block(2, 2, f1, f2, Some((3, 3))));
    trunk.push(Layer::new(LayerSpec::Flatten));

    let input_shape = vec![cfg.rows, cfg.subcarriers, 2];
    let flat = flat_features(&input_shape, &trunk)?;
    let head = |hidden: usize| {
        vec![
            Layer::new(LayerSpec::Dense { inputs: flat, outputs: hidden }),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::Dense { inputs: hidden, outputs: 1 }),
        ]
    };
    let heads = vec![head(cfg.head_hidden), head(cfg.head_hidden)];
    let mut graph = ModelGraph::new(input_shape, trunk, heads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    graph.init_params(&mut rng);
    Ok(graph)
}

/// Builds the raw-window sleep stager with seeded initial parameters.
pub fn build_w2sn(cfg: &W2snConfig) -> Result<ModelGraph> {
    check_filters(&cfg.filters)?;
    if cfg.rows < 40 {
        return Err(CoreError::Config(format!(
            "epoch of {} rows is shorter than the 40-row first pooling window",
            cfg.rows
        )));
    }
    if cfg.subcarriers < 16 {
        return Err(CoreError::Config(format!(
            "{} subcarriers is narrower than the 16-column first pooling window",
            cfg.subcarriers
        )));
    }
    let [f0, f1, f2, f3] = cfg.filters;
    let mut trunk = Vec::new();
    trunk.extend(conv_block(5, 5, 2, f0, None));
    trunk.extend(conv_block(3, 3, f0, f1, Some((40, 16))));
    trunk.extend(conv_block(2, 2, f1, f2, Some((20, 4))));
    trunk.extend(conv_block(2, 2, f2, f3, Some((12, 2))));
    trunk.push(Layer::new(LayerSpec::Flatten));

    let input_shape = vec![cfg.rows, cfg.subcarriers, 2];
    let flat = flat_features(&input_shape, &trunk)?;
    let head = vec![
        Layer::new(LayerSpec::Dense { inputs: flat, outputs: SleepStage::COUNT }),
        Layer::new(LayerSpec::Softmax),
    ];
    let mut graph = ModelGraph::new(input_shape, trunk, vec![head])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    graph.init_params(&mut rng);
    Ok(graph)
}

/// Builds the coupling-map sleep stager with seeded initial parameters.
pub fn build_cpcnet(cfg: &CpcNetConfig) -> Result<ModelGraph> {
    check_filters(&cfg.filters)?;
    if cfg.rows < 16 || cfg.cols < 16 {
        return Err(CoreError::Config(format!(
            "map patch {}x{} too small for four halving pools (needs at least 16x16)",
            cfg.rows, cfg.cols
        )));
    }
    let [f0, f1, f2, f3] = cfg.filters;
    let mut trunk = Vec::new();
    trunk.extend(conv_block(5, 5, 1, f0, Some((2, 2))));
    trunk.extend(conv_block(3, 3, f0, f1, Some((2, 2))));
    trunk.extend(conv_block(2, 2, f1, f2, Some((2, 2))));
    trunk.extend(conv_block(2, 2, f2, f3, Some((2, 2))));
    trunk.push(Layer::new(LayerSpec::Flatten));

    let input_shape = vec![cfg.rows, cfg.cols, 1];
    let flat = flat_features(&input_shape, &trunk)?;
    let head = vec![
        Layer::new(LayerSpec::Dense { inputs: flat, outputs: SleepStage::COUNT }),
        Layer::new(LayerSpec::Softmax),
    ];
    let mut graph = ModelGraph::new(input_shape, trunk, vec![head])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    graph.init_params(&mut rng);
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wisp_nn::{Checkpoint, Tensor};

    /// Spatial trace of the trunk: shape after every layer, for one sample.
    fn trunk_trace(graph: &ModelGraph) -> Vec<Vec<usize>> {
        let mut shape = graph.input_shape.clone();
        let mut trace = Vec::new();
        for layer in &graph.trunk {
            shape = layer.spec.infer(&shape).unwrap();
            trace.push(shape.clone());
        }
        trace
    }

    fn shapes_after_pools(graph: &ModelGraph) -> Vec<Vec<usize>> {
        graph
            .trunk
            .iter()
            .zip(trunk_trace(graph))
            .filter(|(layer, _)| matches!(layer.spec, LayerSpec::MaxPool { .. }))
            .map(|(_, shape)| shape)
            .collect()
    }

    #[test]
    fn h3rn_trace_matches_documented_shapes() {
        let graph = build_h3rn(&H3rnConfig::default()).unwrap();
        let pools = shapes_after_pools(&graph);
        assert_eq!(pools[0][..2], [125, 14]);
        assert_eq!(pools[1][..2], [63, 7]);
        assert_eq!(pools[2][..2], [21, 3]);
        assert_eq!(graph.output_shapes().unwrap(), vec![vec![1], vec![1]]);
    }

    #[test]
    fn w2sn_trace_matches_documented_shapes() {
        let graph = build_w2sn(&W2snConfig::default()).unwrap();
        let pools = shapes_after_pools(&graph);
        assert_eq!(pools[0][..2], [75, 4]);
        assert_eq!(pools[1][..2], [4, 1]);
        assert_eq!(pools[2][..2], [1, 1]);
        assert_eq!(graph.output_shapes().unwrap(), vec![vec![4]]);
    }

    #[test]
    fn cpcnet_trace_halves_four_times() {
        let graph = build_cpcnet(&CpcNetConfig::default()).unwrap();
        let pools = shapes_after_pools(&graph);
        assert_eq!(pools[0][..2], [32, 32]);
        assert_eq!(pools[1][..2], [16, 16]);
        assert_eq!(pools[2][..2], [8, 8]);
        assert_eq!(pools[3][..2], [4, 4]);
        assert_eq!(graph.output_shapes().unwrap(), vec![vec![4]]);
    }

    #[test]
    fn h3rn_zeroed_heads_predict_zero() {
        let mut graph = build_h3rn(&H3rnConfig {
            rows: 24,
            subcarriers: 24,
            filters: [2, 3, 4],
            head_hidden: 8,
            seed: 3,
        })
        .unwrap();
        for head in &mut graph.heads {
            for layer in head {
                for p in &mut layer.params {
                    p.data_mut().fill(0.0);
                }
            }
        }
        let x = Tensor::zeros(&[1, 24, 24, 2]);
        let outs = graph.predict(&x).unwrap();
        assert_eq!(outs[0].data(), &[0.0]);
        assert_eq!(outs[1].data(), &[0.0]);
    }

    #[test]
    fn cpcnet_zeroed_classifier_is_uniform() {
        let mut graph = build_cpcnet(&CpcNetConfig {
            rows: 16,
            cols: 16,
            filters: [2, 2, 3, 3],
            seed: 9,
        })
        .unwrap();
        for layer in &mut graph.heads[0] {
            for p in &mut layer.params {
                p.data_mut().fill(0.0);
            }
        }
        let x = Tensor::zeros(&[2, 16, 16, 1]);
        let outs = graph.predict(&x).unwrap();
        for row in outs[0].data().chunks(4) {
            for p in row {
                assert!((p - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let a = Checkpoint::new(build_h3rn(&H3rnConfig { seed: 11, ..H3rnConfig::default() }).unwrap());
        let b = Checkpoint::new(build_h3rn(&H3rnConfig { seed: 11, ..H3rnConfig::default() }).unwrap());
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = Checkpoint::new(build_h3rn(&H3rnConfig { seed: 12, ..H3rnConfig::default() }).unwrap());
        assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn w2sn_outputs_are_probabilities() {
        let graph = build_w2sn(&W2snConfig {
            rows: 40,
            subcarriers: 16,
            filters: [2, 2, 3, 3],
            seed: 5,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut x = Tensor::zeros(&[3, 40, 16, 2]);
        for v in x.data_mut() {
            *v = rand::Rng::gen_range(&mut rng, -1.0..1.0);
        }
        let outs = graph.predict(&x).unwrap();
        assert_eq!(outs[0].shape(), &[3, 4]);
        for row in outs[0].data().chunks(4) {
            assert!(row.iter().all(|p| p.is_finite() && *p > 0.0));
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn undersized_inputs_are_rejected_at_build_time() {
        assert!(build_h3rn(&H3rnConfig { rows: 23, ..H3rnConfig::default() }).is_err());
        assert!(build_h3rn(&H3rnConfig { subcarriers: 23, ..H3rnConfig::default() }).is_err());
        assert!(build_w2sn(&W2snConfig { rows: 39, ..W2snConfig::default() }).is_err());
        assert!(build_w2sn(&W2snConfig { subcarriers: 15, ..W2snConfig::default() }).is_err());
        assert!(build_cpcnet(&CpcNetConfig { rows: 15, ..CpcNetConfig::default() }).is_err());
        assert!(build_h3rn(&H3rnConfig { filters: [0, 8, 16], ..H3rnConfig::default() }).is_err());
    }

    #[test]
    fn stage_round_trips_and_order_is_stable() {
        for (i, stage) in SleepStage::ALL.iter().enumerate() {
            assert_eq!(stage.index(), i);
            assert_eq!(SleepStage::from_index(i).unwrap(), *stage);
            assert_eq!(SleepStage::parse(stage.name()).unwrap(), *stage);
        }
        assert!(SleepStage::from_index(4).is_err());
        assert!(SleepStage::parse("NAP").is_err());
    }

    #[test]
    fn joint_gradients_are_the_sum_of_single_head_gradients() {
        let cfg = H3rnConfig {
            rows: 24,
            subcarriers: 24,
            filters: [2, 3, 4],
            head_hidden: 8,
            seed: 17,
        };
        let mut graph = build_h3rn(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut x = Tensor::zeros(&[2, 24, 24, 2]);
        for v in x.data_mut() {
            *v = rand::Rng::gen_range(&mut rng, -1.0..1.0);
        }
        let target_hr = Tensor::from_vec(&[2, 1], vec![0.3, -0.8]).unwrap();
        let target_rr = Tensor::from_vec(&[2, 1], vec![-0.1, 0.6]).unwrap();

        let grads_for = |graph: &mut ModelGraph, use_hr: bool, use_rr: bool| {
            let (outs, trace) = graph.forward_train(&x).unwrap();
            let (_, ghr) = wisp_nn::mse(&outs[0], &target_hr).unwrap();
            let (_, grr) = wisp_nn::mse(&outs[1], &target_rr).unwrap();
            let zero = Tensor::zeros(&[2, 1]);
            let out_grads = vec![
                if use_hr { ghr } else { zero.clone() },
                if use_rr { grr } else { zero },
            ];
            graph.backward(&trace, &out_grads).unwrap()
        };

        let joint = grads_for(&mut graph, true, true);
        let hr_only = grads_for(&mut graph, true, false);
        let rr_only = grads_for(&mut graph, false, true);

        for (layer, (j, (h, r))) in joint
            .trunk
            .iter()
            .zip(hr_only.trunk.iter().zip(rr_only.trunk.iter()))
            .enumerate()
        {
            for (pi, (gj, (gh, gr))) in j.iter().zip(h.iter().zip(r.iter())).enumerate() {
                for ((a, b), c) in gj.data().iter().zip(gh.data()).zip(gr.data()) {
                    assert!(
                        (a - (b + c)).abs() < 1e-10,
                        "trunk layer {layer} param {pi}: joint {a} vs split {}",
                        b + c
                    );
                }
            }
        }
        for (gj, gh) in joint.heads[0].iter().flatten().zip(hr_only.heads[0].iter().flatten()) {
            for (a, b) in gj.data().iter().zip(gh.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        for g in hr_only.heads[1].iter().flatten() {
            assert!(g.data().iter().all(|v| *v == 0.0));
        }
    }
}

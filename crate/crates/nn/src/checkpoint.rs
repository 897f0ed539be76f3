//! Model checkpointing.
//!
//! Checkpoints are JSON: layer specs, parameter tensors, and batchnorm
//! running statistics, plus a free-form metadata object for callers (model
//! name, normalization constants, training settings). JSON serialization
//! of `f64` uses the shortest exact decimal representation, so a
//! save/load round trip restores every weight bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::graph::ModelGraph;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Caller-defined metadata carried alongside the weights.
    pub meta: serde_json::Value,
    pub graph: ModelGraph,
}

impl Checkpoint {
    pub fn new(graph: ModelGraph) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            meta: serde_json::Value::Null,
            graph,
        }
    }

    pub fn with_meta(graph: ModelGraph, meta: serde_json::Value) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            meta,
            graph,
        }
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        self.check_finite()?;
        serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint format version {} (expected {FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let text = self.to_json()?;
        fs::write(path, text)
            .map_err(|e| NnError::Checkpoint(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = fs::read_to_string(path)
            .map_err(|e| NnError::Checkpoint(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// JSON cannot represent NaN or infinity, so refuse to write them
    /// rather than silently producing nulls.
    fn check_finite(&self) -> Result<(), NnError> {
        let all_layers = self
            .graph
            .trunk
            .iter()
            .chain(self.graph.heads.iter().flat_map(|h| h.iter()));
        for layer in all_layers {
            for t in layer.params.iter().chain(layer.state.iter()) {
                if !t.all_finite() {
                    return Err(NnError::Checkpoint(
                        "refusing to save non-finite parameters".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{Layer, LayerSpec};
    use rand::SeedableRng;

    fn sample_graph() -> ModelGraph {
        let trunk = vec![
            Layer::new(LayerSpec::Conv2d { kh: 3, kw: 3, in_ch: 2, out_ch: 4 }),
            Layer::new(LayerSpec::batch_norm(4)),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::MaxPool { ph: 2, pw: 2 }),
            Layer::new(LayerSpec::Flatten),
        ];
        let head = vec![
            Layer::new(LayerSpec::Dense { inputs: 3 * 3 * 4, outputs: 4 }),
            Layer::new(LayerSpec::Softmax),
        ];
        let mut g = ModelGraph::new(vec![6, 6, 2], trunk, vec![head]).unwrap();
        g.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(42));
        g
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let graph = sample_graph();
        let ckpt = Checkpoint::with_meta(graph, serde_json::json!({"model": "test"}));
        let json = ckpt.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back, ckpt, "every weight must survive the JSON round trip exactly");
    }

    #[test]
    fn round_trip_preserves_awkward_values() {
        let mut graph = sample_graph();
        // Values with no short decimal form.
        graph.trunk[0].params[0].data_mut()[0] = 1.0 / 3.0;
        graph.trunk[0].params[0].data_mut()[1] = f64::MIN_POSITIVE;
        graph.trunk[0].params[0].data_mut()[2] = 1e300;
        graph.trunk[0].params[0].data_mut()[3] = -0.1 + 0.2; // 0.1 with rounding dust
        let ckpt = Checkpoint::new(graph);
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        let a = ckpt.graph.trunk[0].params[0].data();
        let b = back.graph.trunk[0].params[0].data();
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ckpt = Checkpoint::new(sample_graph());
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_non_finite_weights() {
        let mut graph = sample_graph();
        graph.trunk[0].params[0].data_mut()[0] = f64::NAN;
        assert!(Checkpoint::new(graph).to_json().is_err());
    }

    #[test]
    fn rejects_unknown_format_version() {
        let ckpt = Checkpoint::new(sample_graph());
        let json = ckpt.to_json().unwrap().replace("\"format_version\":1", "\"format_version\":99");
        assert!(Checkpoint::from_json(&json).is_err());
    }

    #[test]
    fn loaded_model_predicts_identically() {
        let graph = sample_graph();
        let x = {
            let mut t = crate::tensor::Tensor::zeros(&[2, 6, 6, 2]);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = (i as f64 * 0.37).sin();
            }
            t
        };
        let before = graph.predict(&x).unwrap();
        let back = Checkpoint::from_json(&Checkpoint::new(graph).to_json().unwrap()).unwrap();
        let after = back.graph.predict(&x).unwrap();
        assert_eq!(before, after);
    }
}

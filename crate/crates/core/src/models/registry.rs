//! Name-keyed registry of the model architectures, so callers (the CLI in
//! particular) can pick one at runtime without hardcoding builders.

use crate::error::{CoreError, Result};
use crate::models::{
    build_cpcnet, build_h3rn, build_w2sn, CpcNetConfig, H3rnConfig, TaskKind, W2snConfig,
};
use std::collections::BTreeMap;
use wisp_nn::ModelGraph;

/// One selectable architecture: how to build it for a given input shape.
pub trait ModelStrategy {
    /// Stable lookup key, lowercase.
    fn name(&self) -> &'static str;
    fn task(&self) -> TaskKind;
    /// Per-sample input shape the architecture was designed around.
    fn default_input_shape(&self) -> Vec<usize>;
    /// Per-block convolution filter counts the architecture ships with.
    fn default_filters(&self) -> Vec<usize>;
    /// Builds the graph with the default filter counts.
    fn build(&self, input_shape: &[usize], seed: u64) -> Result<ModelGraph> {
        self.build_with_filters(input_shape, &self.default_filters(), seed)
    }
    /// Builds the graph for a (possibly non-default) per-sample input shape
    /// and filter counts, with seeded parameters.
    fn build_with_filters(
        &self,
        input_shape: &[usize],
        filters: &[usize],
        seed: u64,
    ) -> Result<ModelGraph>;
}

fn shape_dims(input_shape: &[usize], channels: usize, name: &str) -> Result<(usize, usize)> {
    match input_shape {
        [rows, cols, ch] if *ch == channels => Ok((*rows, *cols)),
        other => Err(CoreError::Config(format!(
            "{name} expects a rows x cols x {channels} input, got {other:?}"
        ))),
    }
}

fn filter_array<const N: usize>(filters: &[usize], name: &str) -> Result<[usize; N]> {
    filters.try_into().map_err(|_| {
        CoreError::Config(format!(
            "{name} takes {N} filter counts, got {}",
            filters.len()
        ))
    })
}

struct H3rnStrategy;

impl ModelStrategy for H3rnStrategy {
    fn name(&self) -> &'static str {
        "h3rn"
    }

    fn task(&self) -> TaskKind {
        TaskKind::Vitals
    }

    fn default_input_shape(&self) -> Vec<usize> {
        let cfg = H3rnConfig::default();
        vec![cfg.rows, cfg.subcarriers, 2]
    }

    fn default_filters(&self) -> Vec<usize> {
        H3rnConfig::default().filters.to_vec()
    }

    fn build_with_filters(
        &self,
        input_shape: &[usize],
        filters: &[usize],
        seed: u64,
    ) -> Result<ModelGraph> {
        let (rows, subcarriers) = shape_dims(input_shape, 2, self.name())?;
        build_h3rn(&H3rnConfig {
            rows,
            subcarriers,
            filters: filter_array(filters, self.name())?,
            seed,
            ..H3rnConfig::default()
        })
    }
}

struct W2snStrategy;

impl ModelStrategy for W2snStrategy {
    fn name(&self) -> &'static str {
        "w2sn"
    }

    fn task(&self) -> TaskKind {
        TaskKind::Stages
    }

    fn default_input_shape(&self) -> Vec<usize> {
        let cfg = W2snConfig::default();
        vec![cfg.rows, cfg.subcarriers, 2]
    }

    fn default_filters(&self) -> Vec<usize> {
        W2snConfig::default().filters.to_vec()
    }

    fn build_with_filters(
        &self,
        input_shape: &[usize],
        filters: &[usize],
        seed: u64,
    ) -> Result<ModelGraph> {
        let (rows, subcarriers) = shape_dims(input_shape, 2, self.name())?;
        build_w2sn(&W2snConfig {
            rows,
            subcarriers,
            filters: filter_array(filters, self.name())?,
            seed,
            ..W2snConfig::default()
        })
    }
}

struct CpcNetStrategy;

impl ModelStrategy for CpcNetStrategy {
    fn name(&self) -> &'static str {
        "cpcnet"
    }

    fn task(&self) -> TaskKind {
        TaskKind::Stages
    }

    fn default_input_shape(&self) -> Vec<usize> {
        let cfg = CpcNetConfig::default();
        vec![cfg.rows, cfg.cols, 1]
    }

    fn default_filters(&self) -> Vec<usize> {
        CpcNetConfig::default().filters.to_vec()
    }

    fn build_with_filters(
        &self,
        input_shape: &[usize],
        filters: &[usize],
        seed: u64,
    ) -> Result<ModelGraph> {
        let (rows, cols) = shape_dims(input_shape, 1, self.name())?;
        build_cpcnet(&CpcNetConfig {
            rows,
            cols,
            filters: filter_array(filters, self.name())?,
            seed,
            ..CpcNetConfig::default()
        })
    }
}

/// Lookup table from architecture name to strategy.
pub struct ModelRegistry {
    entries: BTreeMap<&'static str, Box<dyn ModelStrategy>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        ModelRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// Registry with the three built-in architectures.
    pub fn with_builtins() -> Self {
        let mut registry = ModelRegistry::new();
        for strategy in [
            Box::new(H3rnStrategy) as Box<dyn ModelStrategy>,
            Box::new(W2snStrategy),
            Box::new(CpcNetStrategy),
        ] {
            registry
                .register(strategy)
                .expect("builtin names are distinct");
        }
        registry
    }

    pub fn register(&mut self, strategy: Box<dyn ModelStrategy>) -> Result<()> {
        let name = strategy.name();
        if self.entries.contains_key(name) {
            return Err(CoreError::Config(format!("model {name:?} is already registered")));
        }
        self.entries.insert(name, strategy);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn ModelStrategy> {
        self.entries.get(name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        ModelRegistry::with_builtins()
    }
}

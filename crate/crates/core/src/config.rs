//! Run configuration. Every field has a default, so an empty file is a
//! valid configuration that reproduces the reference setup: 1- and 5-minute
//! returns at lags 0..=2, 1440-minute daily windows, 4 states, p = 0.01.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::diffusion::RwrConfig;
use crate::fusion::{FusionArchitecture, TrainOptions};
use crate::leadlag::LagSpec;
use crate::neural::AdamConfig;
use crate::synth::UniverseSpec;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    pub graphs: GraphConfig,
    pub rwr: RwrConfig,
    pub model: ModelConfig,
    pub seeds: Seeds,
    pub synth: UniverseSpec,
    pub postprocess: PostprocessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            data: DataConfig::default(),
            graphs: GraphConfig::default(),
            rwr: RwrConfig::default(),
            model: ModelConfig::default(),
            seeds: Seeds::default(),
            synth: UniverseSpec::default(),
            postprocess: PostprocessConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of per-asset price CSVs. Empty means `<out>/prices`.
    /// Relative paths resolve against the config file's directory.
    pub prices_dir: String,
    pub base_period_minutes: u32,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            prices_dir: String::new(),
            base_period_minutes: 1,
        }
    }
}

/// Explicit row count for windows at one sampling period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowRows {
    pub period_minutes: u32,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub specs: Vec<LagSpec>,
    /// Lookback length; a period `d` gets `window_minutes / d` rows unless
    /// `window_rows` overrides it.
    pub window_minutes: u32,
    pub window_rows: Vec<WindowRows>,
    /// Explicit window-end timestamps (epoch ms). Empty selects the end of
    /// every calendar day (UTC) covered by the data.
    pub window_ends: Vec<i64>,
    pub states: usize,
    pub p_value: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        let specs = [1, 5]
            .into_iter()
            .flat_map(|d| (0..=2).map(move |t| LagSpec::new(d, t)))
            .collect();
        GraphConfig {
            specs,
            window_minutes: 1440,
            window_rows: Vec::new(),
            window_ends: Vec::new(),
            states: 4,
            p_value: 0.01,
        }
    }
}

impl GraphConfig {
    pub fn window_rows_for(&self, period_minutes: u32) -> Result<usize> {
        if let Some(w) = self
            .window_rows
            .iter()
            .find(|w| w.period_minutes == period_minutes)
        {
            return Ok(w.rows);
        }
        if period_minutes == 0 || !self.window_minutes.is_multiple_of(period_minutes) {
            return Err(Error::InvalidArgument(format!(
                "window of {} min is not a whole number of {period_minutes}-min periods",
                self.window_minutes
            )));
        }
        Ok((self.window_minutes / period_minutes) as usize)
    }

    pub fn periods(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.specs.iter().map(|s| s.period_minutes).collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub graph_encoder_dims: Vec<usize>,
    pub shared_encoder_dims: Vec<usize>,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            graph_encoder_dims: vec![25, 10],
            shared_encoder_dims: vec![30, 15],
            max_epochs: 500,
            learning_rate: 0.001,
            train_fraction: 0.7,
            patience: 20,
            min_delta: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, graph_count: usize, input_dim: usize) -> FusionArchitecture {
        FusionArchitecture {
            graph_count,
            input_dim,
            graph_encoder_dims: self.graph_encoder_dims.clone(),
            shared_encoder_dims: self.shared_encoder_dims.clone(),
        }
    }

    pub fn train_options(&self, split_seed: u64) -> TrainOptions {
        TrainOptions {
            max_epochs: self.max_epochs,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            train_fraction: self.train_fraction,
            patience: (self.patience > 0).then_some(self.patience),
            min_delta: self.min_delta,
            split_seed,
        }
    }
}

/// Independent seeds for data synthesis, the train/validation split and
/// parameter initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub init: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 7,
            split: 11,
            init: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Asset pairs to track; empty tracks every unordered pair.
    pub pairs: Vec<[String; 2]>,
    pub pca_components: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            pairs: Vec::new(),
            pca_components: 2,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let base = self.data.base_period_minutes;
        if base == 0 {
            return bad("data.base_period_minutes must be positive".into());
        }
        let g = &self.graphs;
        if g.specs.is_empty() {
            return bad("graphs.specs is empty".into());
        }
        let unique: BTreeSet<_> = g.specs.iter().collect();
        if unique.len() != g.specs.len() {
            return bad("graphs.specs contains duplicate (period, lag) pairs".into());
        }
        if g.states < 2 {
            return bad(format!("graphs.states must be >= 2, got {}", g.states));
        }
        if !(g.p_value > 0.0 && g.p_value < 1.0) {
            return bad(format!("graphs.p_value {} outside (0, 1)", g.p_value));
        }
        for spec in &g.specs {
            if spec.period_minutes == 0 || !spec.period_minutes.is_multiple_of(base) {
                return bad(format!(
                    "spec {spec}: period is not a multiple of the base period {base}"
                ));
            }
            let rows = g.window_rows_for(spec.period_minutes)?;
            if rows < spec.lag + g.states {
                return bad(format!(
                    "spec {spec}: window of {rows} rows leaves fewer than {} samples after the lag",
                    g.states
                ));
            }
        }
        if g.window_ends.windows(2).any(|w| w[1] <= w[0]) {
            return bad("graphs.window_ends must be strictly increasing".into());
        }
        self.rwr.validate()?;
        let m = &self.model;
        if m.graph_encoder_dims.is_empty() || m.shared_encoder_dims.is_empty() {
            return bad("model encoder dims must not be empty".into());
        }
        if m.graph_encoder_dims.contains(&0) || m.shared_encoder_dims.contains(&0) {
            return bad("model dims must be positive".into());
        }
        if !(m.train_fraction > 0.0 && m.train_fraction < 1.0) {
            return bad(format!(
                "model.train_fraction {} outside (0, 1)",
                m.train_fraction
            ));
        }
        if !(m.learning_rate > 0.0) {
            return bad("model.learning_rate must be positive".into());
        }
        if self.postprocess.pca_components == 0 {
            return bad("postprocess.pca_components must be positive".into());
        }
        Ok(())
    }
}

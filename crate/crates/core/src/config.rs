//! Experiment configuration: TOML schema, defaults and validation.
//!
//! Every field is optional; an empty document yields the defaults below.
//!
//! ```toml
//! client_count = 100
//! active_ratio = 0.3
//! rounds = 100
//! cluster_count = 5
//! propagation_depth = 2
//! algorithm = "fedcedar"        # fedcedar | fedavg | as1 | as2 | as3
//! fedavg_weighting = "data_size" # data_size | uniform
//! hidden_layers = [64]
//! kmeans_max_iter = 50
//! kmeans_restarts = 10
//! master_seed = 0
//!
//! [train]
//! learning_rate = 0.01
//! local_epochs = 5
//! batch_size = 16
//!
//! [data]
//! source = "synthetic"          # synthetic | idx
//! partition = "shards"          # iid | shards | topology
//! shard = 2
//! class_count = 10
//! input_dim = 32
//! mean_scale = 3.0
//! noise_sigma = 1.0
//! examples_per_class = 6000
//!
//! [periodic_activation]         # optional; topology partitions only
//! period = 5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::TrainConfig;
use crate::topology::TopologySpec;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fedcedar,
    Fedavg,
    /// No clustering: every uploaded model is its own graph node.
    As1,
    /// Clustering only; centers are not propagated.
    As2,
    /// Full pipeline, then all centers averaged into one shared model.
    As3,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Self::Fedcedar, Self::Fedavg, Self::As1, Self::As2, Self::As3];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fedcedar => "fedcedar",
            Self::Fedavg => "fedavg",
            Self::As1 => "as1",
            Self::As2 => "as2",
            Self::As3 => "as3",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`; expected one of fedcedar, fedavg, as1, as2, as3"))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FedAvgWeighting {
    DataSize,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Iid,
    Shards,
    Topology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    pub partition: PartitionKind,
    pub shard: usize,
    pub class_count: usize,
    pub input_dim: usize,
    pub mean_scale: f64,
    pub noise_sigma: f64,
    pub examples_per_class: usize,
    /// Built-in topology 1, 2 or 3.
    pub topology_preset: Option<u8>,
    /// Topology TOML file; takes precedence over the preset.
    pub topology_file: Option<PathBuf>,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            partition: PartitionKind::Shards,
            shard: 2,
            class_count: 10,
            input_dim: 32,
            mean_scale: 3.0,
            noise_sigma: 1.0,
            examples_per_class: 6000,
            topology_preset: None,
            topology_file: None,
            idx_images: None,
            idx_labels: None,
        }
    }
}

impl DataConfig {
    /// The configured topology, loading the file if one is named.
    pub fn topology(&self) -> Result<Option<TopologySpec>, ConfigError> {
        if let Some(path) = &self.topology_file {
            return TopologySpec::load(path)
                .map(Some)
                .map_err(|e| invalid("data.topology_file", e.to_string()));
        }
        match self.topology_preset {
            None => Ok(None),
            Some(n) => TopologySpec::preset(n)
                .map(Some)
                .ok_or_else(|| invalid("data.topology_preset", format!("no preset {n}; expected 1, 2 or 3"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicActivation {
    /// Rounds that are multiples of `period` sample every node.
    pub period: usize,
}

impl PeriodicActivation {
    pub fn contains(&self, round: usize) -> bool {
        round.is_multiple_of(self.period)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub client_count: usize,
    pub active_ratio: f64,
    pub rounds: usize,
    pub cluster_count: usize,
    pub propagation_depth: usize,
    pub algorithm: Algorithm,
    pub fedavg_weighting: FedAvgWeighting,
    pub hidden_layers: Vec<usize>,
    pub kmeans_max_iter: usize,
    /// Independent k-means++ starts per round; the lowest objective wins.
    pub kmeans_restarts: usize,
    pub master_seed: u64,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub periodic_activation: Option<PeriodicActivation>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            client_count: 100,
            active_ratio: 0.3,
            rounds: 100,
            cluster_count: 5,
            propagation_depth: 2,
            algorithm: Algorithm::Fedcedar,
            fedavg_weighting: FedAvgWeighting::DataSize,
            hidden_layers: vec![64],
            kmeans_max_iter: crate::clustering::DEFAULT_MAX_ITER,
            kmeans_restarts: crate::clustering::DEFAULT_RESTARTS,
            master_seed: 0,
            train: TrainConfig::default(),
            data: DataConfig::default(),
            periodic_activation: None,
        }
    }
}

impl ExperimentConfig {
    /// Case-study setup on a topology preset: periodic activation, `rounds`
    /// rounds, `clusters` clusters.
    pub fn case_study(preset: u8, clusters: usize, rounds: usize, period: usize) -> Self {
        let mut cfg = Self {
            rounds,
            cluster_count: clusters,
            periodic_activation: Some(PeriodicActivation { period }),
            ..Self::default()
        };
        cfg.data.partition = PartitionKind::Topology;
        cfg.data.topology_preset = Some(preset);
        if let Some(topo) = TopologySpec::preset(preset) {
            cfg.client_count = topo.client_count();
        }
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut unknown = Vec::new();
        let cfg: Self = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(key) = unknown.into_iter().next() {
            return Err(ConfigError::UnknownKey(key));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Active clients per uniformly sampled round: `round(N·γ)`, at least 1.
    pub fn active_count(&self) -> usize {
        active_count(self.client_count, self.active_ratio)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.client_count == 0 {
            return Err(invalid("client_count", "must be at least 1"));
        }
        if !(self.active_ratio > 0.0 && self.active_ratio <= 1.0) {
            return Err(invalid(
                "active_ratio",
                format!("must lie in (0, 1], got {}", self.active_ratio),
            ));
        }
        if self.cluster_count == 0 {
            return Err(invalid("cluster_count", "must be at least 1"));
        }
        if self.kmeans_max_iter == 0 {
            return Err(invalid("kmeans_max_iter", "must be at least 1"));
        }
        if self.kmeans_restarts == 0 {
            return Err(invalid("kmeans_restarts", "must be at least 1"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(invalid("hidden_layers", "layer widths must be positive"));
        }
        self.train.validate().map_err(|e| invalid("train", e.to_string()))?;

        let d = &self.data;
        if d.shard == 0 {
            return Err(invalid("data.shard", "must be at least 1"));
        }
        if d.source == DataSource::Synthetic {
            if d.class_count < 2 {
                return Err(invalid("data.class_count", "need at least 2 classes"));
            }
            if d.input_dim == 0 {
                return Err(invalid("data.input_dim", "must be at least 1"));
            }
            if !(d.noise_sigma > 0.0 && d.noise_sigma.is_finite()) {
                return Err(invalid("data.noise_sigma", "must be positive"));
            }
            if !(d.mean_scale > 0.0 && d.mean_scale.is_finite()) {
                return Err(invalid("data.mean_scale", "must be positive"));
            }
            if d.examples_per_class == 0 {
                return Err(invalid("data.examples_per_class", "must be at least 1"));
            }
        } else if d.idx_images.is_none() || d.idx_labels.is_none() {
            return Err(invalid("data.source", "idx source needs idx_images and idx_labels"));
        }
        let topology = d.topology()?;
        match (d.partition, &topology) {
            (PartitionKind::Topology, None) => {
                return Err(invalid(
                    "data.partition",
                    "topology partition needs topology_preset or topology_file",
                ))
            }
            (PartitionKind::Topology, Some(t)) if t.client_count() != self.client_count => {
                return Err(invalid(
                    "client_count",
                    format!(
                        "topology hosts {} clients but client_count is {}",
                        t.client_count(),
                        self.client_count
                    ),
                ))
            }
            _ => {}
        }
        if let Some(p) = &self.periodic_activation {
            if p.period == 0 {
                return Err(invalid("periodic_activation.period", "must be at least 1"));
            }
            if d.partition != PartitionKind::Topology {
                return Err(invalid("periodic_activation", "requires a topology partition"));
            }
        }
        Ok(())
    }
}

pub fn active_count(population: usize, ratio: f64) -> usize {
    ((population as f64 * ratio).round() as usize).clamp(1, population.max(1))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    ExperimentConfig::from_toml_str(&text)
}

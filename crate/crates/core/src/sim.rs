//! Round-by-round federated simulation.
//!
//! A round samples the active set, hands every active client its starting
//! model, trains the clients in parallel, runs the server update for the
//! configured algorithm and records the result in the membership ledger.
//! Accuracy is measured over all clients, each with the model it currently
//! holds: active clients hold the model they will start from next round,
//! inactive clients keep the last model they received.
//!
//! Seeds derive from the master seed:
//!
//! | stream     | counters               | use                        |
//! |------------|------------------------|----------------------------|
//! | Data       | `[0]`                  | synthetic task             |
//! | Partition  | `[0]`                  | client partition           |
//! | ModelInit  | `[0]`                  | shared initial model       |
//! | Sampling   | `[t]`                  | active set of round `t`    |
//! | Shuffle    | `[t, client]`          | local mini-batch order     |
//! | Clustering | `[t]`                  | k-means++ seeding          |

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_restarts, ClusterAssignment, ClusterError};
use crate::config::{
    active_count, Algorithm, ConfigError, DataSource, ExperimentConfig, FedAvgWeighting, PartitionKind,
};
use crate::data::{self, ClientDataset, DataError, ExamplePool, SyntheticTaskSpec};
use crate::distributor::{DecisionSource, DistributeError, DistributionDecision, MembershipLedger};
use crate::graph::{aggregate_mean, build_graph, propagate, GraphError, WeightedGraph};
use crate::idx::{load_idx, IdxError};
use crate::metrics::{mean_accuracy, rand_index, MetricsError, Partition};
use crate::model::{LocalModel, MlpArchitecture, ModelError, TrainConfig};
use crate::param_space::{ParamError, ParamVector};
use crate::seed::{self, Stream};
use crate::topology::{build_topology_population, TopologySpec};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Distribute(#[from] DistributeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("no uploaded models")]
    NoUploads,
    #[error("{uploads} uploads but {sizes} data sizes")]
    SizeMismatch { uploads: usize, sizes: usize },
}

/// Uniform sample of `round(N·γ)` client ids without replacement, sorted.
pub fn sample_clients(client_count: usize, ratio: f64, round: usize, master_seed: u64) -> Vec<usize> {
    let b = active_count(client_count, ratio);
    let mut rng = seed::rng(seed::derive(master_seed, Stream::Sampling, &[round as u64]));
    let mut picked = index::sample(&mut rng, client_count, b).into_vec();
    picked.sort_unstable();
    picked
}

/// `⌈x⌉`, except values within 1e−9 of an integer snap to it, so `20 · 0.3`
/// counts as 6.
fn tolerant_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Clients sampled from one topology node at ratio `γ`: `⌈γ·S_i⌉`, at least 1.
pub fn per_node_count(node_size: usize, ratio: f64) -> usize {
    tolerant_ceil(node_size as f64 * ratio).clamp(1, node_size.max(1))
}

/// Active set for a periodic round: when `in_q`, every node contributes
/// `⌈γ·S_i⌉` clients; otherwise a plain uniform sample over all clients.
pub fn periodic_activate(
    topology: &TopologySpec,
    ratio: f64,
    round: usize,
    in_q: bool,
    master_seed: u64,
) -> Vec<usize> {
    if !in_q {
        return sample_clients(topology.client_count(), ratio, round, master_seed);
    }
    let mut picked = Vec::new();
    for node in 0..topology.node_count() {
        let range = topology.clients_of(node);
        let mut rng = seed::rng(seed::derive(
            master_seed,
            Stream::Sampling,
            &[round as u64, node as u64 + 1],
        ));
        let take = per_node_count(range.len(), ratio);
        picked.extend(
            index::sample(&mut rng, range.len(), take)
                .into_iter()
                .map(|i| range.start + i),
        );
    }
    picked.sort_unstable();
    picked
}

/// Server-side knobs used by [`apply_variant`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantParams {
    pub algorithm: Algorithm,
    pub cluster_count: usize,
    pub propagation_depth: usize,
    pub fedavg_weighting: FedAvgWeighting,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    pub kmeans_seed: u64,
}

impl VariantParams {
    pub fn from_config(cfg: &ExperimentConfig, round: usize) -> Self {
        Self {
            algorithm: cfg.algorithm,
            cluster_count: cfg.cluster_count,
            propagation_depth: cfg.propagation_depth,
            fedavg_weighting: cfg.fedavg_weighting,
            kmeans_max_iter: cfg.kmeans_max_iter,
            kmeans_restarts: cfg.kmeans_restarts,
            kmeans_seed: seed::derive(cfg.master_seed, Stream::Clustering, &[round as u64]),
        }
    }
}

/// Result of one server update.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerUpdate {
    /// Models handed out next round, indexed by `assignment`.
    pub centers: Vec<ParamVector>,
    /// Which entry of `centers` each uploading client maps to.
    pub assignment: ClusterAssignment,
    /// K-means partition of the uploads, when clustering ran.
    pub clustering: Option<ClusterAssignment>,
    pub objective: Option<f64>,
    pub graph: Option<WeightedGraph>,
}

impl ServerUpdate {
    pub fn effective_k(&self) -> usize {
        self.clustering
            .as_ref()
            .map_or(self.centers.len(), ClusterAssignment::cluster_count)
    }
}

/// Server update for one round. `uploads[i]` was trained on `data_sizes[i]`
/// examples.
pub fn apply_variant(
    params: &VariantParams,
    uploads: &[ParamVector],
    data_sizes: &[usize],
    round: usize,
) -> Result<ServerUpdate, SimError> {
    if uploads.is_empty() {
        return Err(SimError::NoUploads);
    }
    if uploads.len() != data_sizes.len() {
        return Err(SimError::SizeMismatch {
            uploads: uploads.len(),
            sizes: data_sizes.len(),
        });
    }
    let n = uploads.len();
    let cluster = || {
        kmeans_restarts(
            uploads,
            params.cluster_count,
            params.kmeans_seed,
            params.kmeans_max_iter,
            params.kmeans_restarts,
        )
    };

    match params.algorithm {
        Algorithm::Fedavg => {
            let weights: Vec<f64> = match params.fedavg_weighting {
                FedAvgWeighting::Uniform => vec![1.0 / n as f64; n],
                FedAvgWeighting::DataSize => {
                    let total: usize = data_sizes.iter().sum();
                    data_sizes.iter().map(|&s| s as f64 / total as f64).collect()
                }
            };
            Ok(ServerUpdate {
                centers: vec![ParamVector::weighted_sum(uploads, &weights)?],
                assignment: ClusterAssignment::single(n),
                clustering: None,
                objective: None,
                graph: None,
            })
        }
        Algorithm::As1 => {
            let graph = build_graph(uploads, round)?;
            Ok(ServerUpdate {
                centers: propagate(&graph, uploads, params.propagation_depth)?,
                assignment: ClusterAssignment::identity(n),
                clustering: None,
                objective: None,
                graph: Some(graph),
            })
        }
        Algorithm::As2 => {
            let state = cluster()?;
            let objective = state.objective();
            Ok(ServerUpdate {
                clustering: Some(state.assignment.clone()),
                assignment: state.assignment,
                centers: state.centers,
                objective: Some(objective),
                graph: None,
            })
        }
        Algorithm::Fedcedar | Algorithm::As3 => {
            let state = cluster()?;
            let objective = state.objective();
            let graph = build_graph(&state.centers, round)?;
            let propagated = propagate(&graph, &state.centers, params.propagation_depth)?;
            let (centers, assignment) = if params.algorithm == Algorithm::As3 {
                (vec![aggregate_mean(&propagated)?], ClusterAssignment::single(n))
            } else {
                (propagated, state.assignment.clone())
            };
            Ok(ServerUpdate {
                centers,
                assignment,
                clustering: Some(state.assignment),
                objective: Some(objective),
                graph: Some(graph),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionLog {
    pub client_id: usize,
    #[serde(flatten)]
    pub source: DecisionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub active: Vec<usize>,
    pub effective_k: usize,
    pub j_objective: Option<f64>,
    /// Row-stochastic weight matrix of the round's graph.
    pub graph_weights: Option<Vec<Vec<f64>>>,
    /// Cluster of each active client, aligned with `active`.
    pub cluster_labels: Option<Vec<usize>>,
    /// Accuracy of every client's held model on its own test set.
    pub client_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub rand_index: Option<f64>,
    pub cond1_count: usize,
    pub cond2_count: usize,
    pub initial_count: usize,
    pub decisions: Vec<DecisionLog>,
}

/// Clients, their ground-truth groups (topology runs only) and the topology.
pub struct Population {
    pub arch: MlpArchitecture,
    pub clients: Vec<ClientDataset>,
    pub ground_truth: Option<Vec<usize>>,
    pub topology: Option<TopologySpec>,
}

pub fn build_population(cfg: &ExperimentConfig) -> Result<Population, SimError> {
    let d = &cfg.data;
    let pool: ExamplePool = match d.source {
        DataSource::Synthetic => {
            let spec = SyntheticTaskSpec::random_means(
                d.class_count,
                d.input_dim,
                d.mean_scale,
                d.noise_sigma,
                d.examples_per_class,
                seed::derive(cfg.master_seed, Stream::Data, &[0]),
            );
            data::generate_task(&spec)?
        }
        DataSource::Idx => {
            let (images, labels) =
                d.idx_images
                    .as_ref()
                    .zip(d.idx_labels.as_ref())
                    .ok_or_else(|| ConfigError::Invalid {
                        field: "data.source",
                        reason: "idx source needs idx_images and idx_labels".into(),
                    })?;
            load_idx(images, labels)?
        }
    };
    let partition_seed = seed::derive(cfg.master_seed, Stream::Partition, &[0]);
    let topology = d.topology()?;
    let (clients, ground_truth) = match d.partition {
        PartitionKind::Iid => (data::partition_iid(&pool, cfg.client_count, partition_seed)?, None),
        PartitionKind::Shards => (
            data::partition_shards(&pool, cfg.client_count, d.shard, partition_seed)?,
            None,
        ),
        PartitionKind::Topology => {
            let spec = topology.as_ref().ok_or_else(|| ConfigError::Invalid {
                field: "data.partition",
                reason: "topology partition needs topology_preset or topology_file".into(),
            })?;
            let (clients, truth) = build_topology_population(spec, &pool, partition_seed)?;
            (clients, Some(truth))
        }
    };
    let arch = MlpArchitecture::relu(pool.input_dim, &cfg.hidden_layers, pool.class_count)?;
    Ok(Population {
        arch,
        clients,
        ground_truth,
        topology,
    })
}

pub struct Simulation {
    config: ExperimentConfig,
    population: Population,
    ledger: MembershipLedger,
    held: Vec<ParamVector>,
    accuracy: Vec<f64>,
    round: usize,
    last_decisions: Vec<DistributionDecision>,
}

impl Simulation {
    pub fn new(config: ExperimentConfig) -> Result<Self, SimError> {
        config.validate()?;
        let population = build_population(&config)?;
        let initial = LocalModel::init(
            &population.arch,
            seed::derive(config.master_seed, Stream::ModelInit, &[0]),
        )
        .flatten();
        let start = LocalModel::unflatten(&population.arch, &initial)?;
        let accuracy = population
            .clients
            .par_iter()
            .map(|c| start.evaluate(c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            held: vec![initial.clone(); population.clients.len()],
            ledger: MembershipLedger::new(initial),
            config,
            population,
            accuracy,
            round: 0,
            last_decisions: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn client_count(&self) -> usize {
        self.population.clients.len()
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn ledger(&self) -> &MembershipLedger {
        &self.ledger
    }

    /// Model each client currently holds.
    pub fn held_models(&self) -> &[ParamVector] {
        &self.held
    }

    /// Starting models handed out in the most recent round.
    pub fn last_decisions(&self) -> &[DistributionDecision] {
        &self.last_decisions
    }

    pub fn active_set(&self, round: usize) -> Vec<usize> {
        let cfg = &self.config;
        match (&cfg.periodic_activation, &self.population.topology) {
            (Some(p), Some(topo)) => {
                periodic_activate(topo, cfg.active_ratio, round, p.contains(round), cfg.master_seed)
            }
            _ => sample_clients(self.client_count(), cfg.active_ratio, round, cfg.master_seed),
        }
    }

    /// Runs round `self.round() + 1`.
    pub fn run_round(&mut self) -> Result<RoundRecord, SimError> {
        let t = self.round + 1;
        let cfg = &self.config;
        let active = self.active_set(t);
        let decisions = self.ledger.distribute(&active, t)?;

        let arch = &self.population.arch;
        let clients = &self.population.clients;
        let uploads = decisions
            .par_iter()
            .map(|d| {
                let train = TrainConfig {
                    rng_seed: seed::derive(cfg.master_seed, Stream::Shuffle, &[t as u64, d.client_id as u64]),
                    ..cfg.train
                };
                let start = LocalModel::unflatten(arch, &d.model)?;
                Ok(start.train_local(&clients[d.client_id], &train)?.flatten())
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        let sizes: Vec<usize> = active.iter().map(|&c| clients[c].train.len()).collect();

        let update = apply_variant(&VariantParams::from_config(cfg, t), &uploads, &sizes, t)?;

        let rand = match (
            &self.population.ground_truth,
            &cfg.periodic_activation,
            &update.clustering,
        ) {
            (Some(truth), Some(p), Some(found)) if p.contains(t) && active.len() >= 2 => {
                let truth = Partition::new(active.clone(), active.iter().map(|&c| truth[c]).collect())?;
                let found = Partition::new(active.clone(), found.labels().to_vec())?;
                Some(rand_index(&truth, &found)?)
            }
            _ => None,
        };

        for (&client, &k) in active.iter().zip(update.assignment.labels()) {
            self.held[client] = update.centers[k].clone();
        }
        let refreshed = active
            .par_iter()
            .map(|&c| LocalModel::unflatten(arch, &self.held[c])?.evaluate(&clients[c]))
            .collect::<Result<Vec<_>, ModelError>>()?;
        for (&c, acc) in active.iter().zip(refreshed) {
            self.accuracy[c] = acc;
        }

        let count = |f: fn(&DecisionSource) -> bool| decisions.iter().filter(|d| f(&d.source)).count();
        let record = RoundRecord {
            round: t,
            effective_k: update.effective_k(),
            j_objective: update.objective,
            graph_weights: update.graph.as_ref().map(|g| g.weights.clone()),
            cluster_labels: update.clustering.as_ref().map(|a| a.labels().to_vec()),
            client_accuracy: self.accuracy.clone(),
            mean_accuracy: mean_accuracy(&self.accuracy)?,
            rand_index: rand,
            cond1_count: count(|s| matches!(s, DecisionSource::Condition1(_))),
            cond2_count: count(|s| matches!(s, DecisionSource::Condition2Average)),
            initial_count: count(|s| matches!(s, DecisionSource::InitialSeed)),
            decisions: decisions
                .iter()
                .map(|d| DecisionLog {
                    client_id: d.client_id,
                    source: d.source,
                })
                .collect(),
            active: active.clone(),
        };

        self.ledger
            .record_round(t, &active, &update.assignment, update.centers)?;
        self.last_decisions = decisions;
        self.round = t;
        Ok(record)
    }

    /// Runs the remaining rounds up to `config.rounds`, passing each record to
    /// `sink` as it is produced.
    pub fn run_with(&mut self, mut sink: impl FnMut(&RoundRecord)) -> Result<Vec<RoundRecord>, SimError> {
        let mut records = Vec::with_capacity(self.config.rounds.saturating_sub(self.round));
        while self.round < self.config.rounds {
            let record = self.run_round()?;
            sink(&record);
            records.push(record);
        }
        Ok(records)
    }

    pub fn run(&mut self) -> Result<Vec<RoundRecord>, SimError> {
        self.run_with(|_| {})
    }
}

pub fn run_experiment(config: ExperimentConfig) -> Result<Vec<RoundRecord>, SimError> {
    Simulation::new(config)?.run()
}

//! Federated learning simulator with clustered, graph-propagated
//! personalized aggregation.
//!
//! Each round, active clients train locally from a personalized starting
//! model. The server clusters the uploads with k-means, links cluster centers
//! by cosine similarity, propagates knowledge over that graph, and hands each
//! client the model matching its previous cluster.

pub mod clustering;
pub mod config;
pub mod data;
pub mod distributor;
pub mod graph;
pub mod idx;
pub mod metrics;
pub mod model;
pub mod param_space;
pub mod report;
pub mod seed;
pub mod sim;
pub mod topology;

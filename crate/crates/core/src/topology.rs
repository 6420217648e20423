//! Structured client populations for the clustering case study.
//!
//! A topology is a set of nodes, each owning a label set. Every node hosts
//! `clients_per_node` clients whose data is drawn only from the node's labels,
//! and two nodes are linked exactly when their label sets intersect.
//!
//! Topology files are TOML:
//!
//! ```toml
//! clients_per_node = 20
//!
//! [[nodes]]
//! id = 1
//! labels = [0, 1, 2]
//!
//! [[nodes]]
//! id = 2
//! labels = [2, 3, 4]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{split_client, ClientDataset, DataError, Example, ExamplePool};
use crate::seed;

fn default_clients_per_node() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyNode {
    pub id: usize,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub nodes: Vec<TopologyNode>,
    #[serde(default = "default_clients_per_node")]
    pub clients_per_node: usize,
}

impl TopologySpec {
    pub fn new(label_sets: &[&[usize]], clients_per_node: usize) -> Result<Self, DataError> {
        let nodes = label_sets
            .iter()
            .enumerate()
            .map(|(i, labels)| TopologyNode {
                id: i + 1,
                labels: labels.to_vec(),
            })
            .collect();
        let spec = Self {
            nodes,
            clients_per_node,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Built-in chained topologies with 3, 4 and 5 nodes.
    ///
    /// Consecutive nodes share one label; the 5-node preset closes the chain
    /// into a ring.
    pub fn preset(number: u8) -> Option<Self> {
        let sets: &[&[usize]] = match number {
            1 => &[&[0, 1, 2], &[2, 3, 4], &[4, 5, 6]],
            2 => &[&[0, 1, 2], &[2, 3, 4], &[4, 5, 6], &[6, 7, 8]],
            3 => &[&[0, 1, 2], &[2, 3, 4], &[4, 5, 6], &[6, 7, 8], &[8, 9, 0]],
            _ => return None,
        };
        Some(Self::new(sets, default_clients_per_node()).expect("presets are valid"))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let spec: Self = toml::from_str(text).map_err(|e| DataError::InvalidTopology(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DataError::InvalidTopology(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidTopology(msg));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        if self.clients_per_node == 0 {
            return bad("clients_per_node must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id) {
                return bad(format!("duplicate node id {}", node.id));
            }
            if node.labels.is_empty() {
                return bad(format!("node {} has no labels", node.id));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn client_count(&self) -> usize {
        self.nodes.len() * self.clients_per_node
    }

    /// Client ids hosted by node index `node` (clients are numbered node-major).
    pub fn clients_of(&self, node: usize) -> std::ops::Range<usize> {
        node * self.clients_per_node..(node + 1) * self.clients_per_node
    }

    /// Node index of every client.
    pub fn ground_truth(&self) -> Vec<usize> {
        (0..self.client_count()).map(|c| c / self.clients_per_node).collect()
    }

    /// Node-index pairs `(i, j)`, `i < j`, whose label sets intersect.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let sets: Vec<BTreeSet<usize>> = self.nodes.iter().map(|n| n.labels.iter().copied().collect()).collect();
        let mut edges = Vec::new();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if !sets[i].is_disjoint(&sets[j]) {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    pub fn max_label(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|n| n.labels.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// Populates every node with clients drawn from the node's label set.
///
/// Examples of each label are divided evenly between all clients (across
/// nodes) that use the label, so clients never share an example. Returns the
/// client datasets and each client's node index.
pub fn build_topology_population(
    spec: &TopologySpec,
    pool: &ExamplePool,
    rng_seed: u64,
) -> Result<(Vec<ClientDataset>, Vec<usize>), DataError> {
    spec.validate()?;
    let mut users: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (node_idx, node) in spec.nodes.iter().enumerate() {
        let labels: BTreeSet<usize> = node.labels.iter().copied().collect();
        for label in labels {
            users.entry(label).or_default().extend(spec.clients_of(node_idx));
        }
    }

    let mut by_label: BTreeMap<usize, Vec<&Example>> = BTreeMap::new();
    for ex in &pool.examples {
        by_label.entry(ex.label).or_default().push(ex);
    }

    let mut per_client: Vec<Vec<Example>> = vec![Vec::new(); spec.client_count()];
    let mut rng = seed::rng(seed::child(rng_seed, u64::MAX));
    for (&label, clients) in &users {
        let mut group = by_label.get(&label).cloned().unwrap_or_default();
        if group.len() < clients.len() {
            return Err(DataError::LabelCoverage {
                label,
                users: clients.len(),
                available: group.len(),
            });
        }
        group.sort_by_key(|e| e.id);
        group.shuffle(&mut rng);
        let base = group.len() / clients.len();
        let mut rest = group.as_slice();
        for &client in clients {
            let (take, tail) = rest.split_at(base);
            rest = tail;
            per_client[client].extend(take.iter().map(|&e| e.clone()));
        }
    }

    let class_count = pool.class_count.max(spec.max_label() + 1);
    let datasets = per_client
        .into_iter()
        .enumerate()
        .map(|(client, examples)| split_client(client, examples, class_count, seed::child(rng_seed, client as u64)))
        .collect();
    Ok((datasets, spec.ground_truth()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_task, SyntheticTaskSpec};

    fn pool() -> ExamplePool {
        generate_task(&SyntheticTaskSpec::random_means(10, 4, 3.0, 1.0, 200, 3)).unwrap()
    }

    #[test]
    fn topology_one_links_nodes_sharing_labels() {
        let t = TopologySpec::preset(1).unwrap();
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.client_count(), 60);
        // nodes 1 and 2 share label 2, nodes 2 and 3 share label 4
        assert_eq!(t.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(TopologySpec::preset(3).unwrap().edges().len(), 5);
        assert!(TopologySpec::preset(4).is_none());
    }

    #[test]
    fn edges_match_intersection_rule() {
        let t = TopologySpec::new(&[&[0, 1], &[1, 2], &[3], &[0, 3], &[5]], 2).unwrap();
        let edges = t.edges();
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let shared = t.nodes[i].labels.iter().any(|l| t.nodes[j].labels.contains(l));
                let (a, b) = (i.min(j), i.max(j));
                assert_eq!(edges.contains(&(a, b)), shared, "pair {i},{j}");
            }
        }
    }

    #[test]
    fn population_respects_node_labels() {
        let t = TopologySpec::preset(1).unwrap();
        let (clients, truth) = build_topology_population(&t, &pool(), 7).unwrap();
        assert_eq!(clients.len(), 60);
        for (c, &node) in clients.iter().zip(&truth) {
            for e in c.train.iter().chain(&c.test) {
                assert!(t.nodes[node].labels.contains(&e.label));
            }
            assert_eq!(c.train_labels(), t.nodes[node].labels);
            assert!(!c.test.is_empty());
        }
        let mut groups = [0usize; 3];
        for &n in &truth {
            groups[n] += 1;
        }
        assert_eq!(groups, [20, 20, 20]);
        let mut ids: Vec<usize> = clients
            .iter()
            .flat_map(|c| c.train.iter().chain(&c.test))
            .map(|e| e.id)
            .collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n, "examples are not shared between clients");
    }

    #[test]
    fn single_label_node_gives_single_label_clients() {
        let t = TopologySpec::new(&[&[0], &[1, 2]], 5).unwrap();
        let (clients, truth) = build_topology_population(&t, &pool(), 1).unwrap();
        for (c, &node) in clients.iter().zip(&truth) {
            if node == 0 {
                assert_eq!(c.train_labels(), vec![0]);
            }
        }
    }

    #[test]
    fn missing_label_is_reported() {
        let t = TopologySpec::new(&[&[0, 11]], 3).unwrap();
        assert!(matches!(
            build_topology_population(&t, &pool(), 1),
            Err(DataError::LabelCoverage { label: 11, .. })
        ));
    }

    #[test]
    fn parses_topology_files() {
        let text = "clients_per_node = 4\n[[nodes]]\nid = 1\nlabels = [0, 1]\n[[nodes]]\nid = 2\nlabels = [1, 2]\n";
        let t = TopologySpec::from_toml_str(text).unwrap();
        assert_eq!(t.clients_per_node, 4);
        assert_eq!(t.edges(), vec![(0, 1)]);
        let defaulted = TopologySpec::from_toml_str("[[nodes]]\nid = 1\nlabels = [3]\n").unwrap();
        assert_eq!(defaulted.clients_per_node, 20);
        assert!(TopologySpec::from_toml_str("[[nodes]]\nid = 1\nlabels = []\n").is_err());
        assert!(TopologySpec::from_toml_str("[[nodes]]\nid = 1\nlabel = [3]\n").is_err());
    }
}

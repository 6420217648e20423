//! K-means over uploaded client parameter vectors.
//!
//! Lloyd iterations with k-means++ seeding, squared Euclidean distance on the
//! full flattened vectors. The effective cluster count drops below the
//! requested `k` when there are fewer distinct vectors than clusters; every
//! returned cluster is non-empty.

use rand::Rng;

use crate::param_space::{distance_sq, ParamError, ParamVector};
use crate::seed;

pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("no vectors to cluster")]
    Empty,
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("max_iter must be at least 1")]
    ZeroIterations,
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Dense form of the cluster indicator: one cluster index per vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl ClusterAssignment {
    /// Fails if any cluster in `0..k` is empty or a label is out of range.
    pub fn new(labels: Vec<usize>, k: usize) -> Option<Self> {
        let mut sizes = vec![0; k];
        for &l in &labels {
            *sizes.get_mut(l)? += 1;
        }
        if sizes.contains(&0) {
            return None;
        }
        Some(Self { labels, sizes })
    }

    /// Everything in cluster 0.
    pub fn single(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            sizes: vec![n],
        }
    }

    /// Item `i` in cluster `i`.
    pub fn identity(n: usize) -> Self {
        Self {
            labels: (0..n).collect(),
            sizes: vec![1; n],
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub centers: Vec<ParamVector>,
    pub assignment: ClusterAssignment,
    /// Objective after seeding, then after every Lloyd iteration.
    pub objective_trace: Vec<f64>,
    pub requested_k: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterState {
    pub fn effective_k(&self) -> usize {
        self.centers.len()
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Index of the nearest center; ties go to the lowest index.
pub fn assign_to_nearest(vector: &ParamVector, centers: &[ParamVector]) -> usize {
    nearest(vector.as_slice(), centers).0
}

fn nearest(v: &[f64], centers: &[ParamVector]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = distance_sq(v, c.as_slice());
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// `Σ_b ‖center(b) − v_b‖²` under the given labels.
pub fn objective(vectors: &[ParamVector], centers: &[ParamVector], labels: &[usize]) -> f64 {
    vectors
        .iter()
        .zip(labels)
        .map(|(v, &k)| distance_sq(v.as_slice(), centers[k].as_slice()))
        .sum()
}

pub fn kmeans(vectors: &[ParamVector], k: usize, rng_seed: u64, max_iter: usize) -> Result<ClusterState, ClusterError> {
    let first = vectors.first().ok_or(ClusterError::Empty)?;
    if k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if max_iter == 0 {
        return Err(ClusterError::ZeroIterations);
    }
    if vectors.iter().any(|v| !v.same_manifest(first)) {
        return Err(ParamError::ManifestMismatch.into());
    }

    let mut centers = kmeans_plus_plus(vectors, k, rng_seed);
    let mut labels = assign_all(vectors, &centers);
    repair_empty(vectors, &mut centers, &mut labels);
    let mut trace = vec![objective(vectors, &centers, &labels)];

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        centers = member_means(vectors, &labels, centers.len())?;
        let mut next = assign_all(vectors, &centers);
        repair_empty(vectors, &mut centers, &mut next);
        trace.push(objective(vectors, &centers, &next));
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    if !converged {
        centers = member_means(vectors, &labels, centers.len())?;
        trace.push(objective(vectors, &centers, &labels));
    }

    let effective = centers.len();
    Ok(ClusterState {
        centers,
        assignment: ClusterAssignment::new(labels, effective).expect("repair leaves no empty cluster"),
        objective_trace: trace,
        requested_k: k,
        iterations,
        converged,
    })
}

/// Best of `restarts` independent [`kmeans`] runs by final objective; ties go
/// to the earlier run. Run 0 uses `rng_seed` itself, run `r` uses
/// `seed::child(rng_seed, r)`.
pub fn kmeans_restarts(
    vectors: &[ParamVector],
    k: usize,
    rng_seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<ClusterState, ClusterError> {
    let mut best = kmeans(vectors, k, rng_seed, max_iter)?;
    for r in 1..restarts {
        let run = kmeans(vectors, k, seed::child(rng_seed, r as u64), max_iter)?;
        if run.objective() < best.objective() {
            best = run;
        }
    }
    Ok(best)
}

/// k-means++ seeding. Stops early once every vector coincides with a chosen
/// center, which is how the effective cluster count shrinks.
fn kmeans_plus_plus(vectors: &[ParamVector], k: usize, rng_seed: u64) -> Vec<ParamVector> {
    let mut rng = seed::rng(rng_seed);
    let mut centers = vec![vectors[rng.random_range(0..vectors.len())].clone()];
    let mut d2: Vec<f64> = vectors
        .iter()
        .map(|v| distance_sq(v.as_slice(), centers[0].as_slice()))
        .collect();
    while centers.len() < k.min(vectors.len()) {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let chosen = vectors[pick.expect("positive total weight")].clone();
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(distance_sq(v.as_slice(), chosen.as_slice()));
        }
        centers.push(chosen);
    }
    centers
}

fn assign_all(vectors: &[ParamVector], centers: &[ParamVector]) -> Vec<usize> {
    vectors.iter().map(|v| nearest(v.as_slice(), centers).0).collect()
}

/// Moves the point farthest from its own center (taken from a cluster with at
/// least two members) into each empty cluster, and makes it that cluster's center.
fn repair_empty(vectors: &[ParamVector], centers: &mut [ParamVector], labels: &mut [usize]) {
    loop {
        let mut sizes = vec![0usize; centers.len()];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, v) in vectors.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = distance_sq(v.as_slice(), centers[labels[i]].as_slice());
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("an empty cluster implies a cluster with two or more members");
        labels[i] = empty;
        centers[empty] = vectors[i].clone();
    }
}

fn member_means(vectors: &[ParamVector], labels: &[usize], k: usize) -> Result<Vec<ParamVector>, ParamError> {
    let mut members: Vec<Vec<&ParamVector>> = vec![Vec::new(); k];
    for (v, &l) in vectors.iter().zip(labels) {
        members[l].push(v);
    }
    members.iter().map(|m| ParamVector::mean(m)).collect()
}

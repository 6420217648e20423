//! Labeled example pools and client partitioning.
//!
//! A synthetic Gaussian task stands in for image data: every class has a
//! mean vector and examples are isotropic Gaussian draws around it. Pools are
//! split across clients either uniformly at random or by label-sorted shards,
//! and each client's share is divided 80/20 into train and test, stratified by
//! label so the test set follows the client's own label distribution.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed;

/// Fraction of each client's examples held out for testing.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("pool of {pool} examples cannot serve {needed} (client count × shards)")]
    PoolTooSmall { pool: usize, needed: usize },
    #[error("client count must be positive")]
    NoClients,
    #[error("shard count must be positive")]
    ZeroShard,
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("label {label} is needed by {users} clients but the pool has {available} examples of it")]
    LabelCoverage {
        label: usize,
        users: usize,
        available: usize,
    },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// Position in the originating pool.
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePool {
    pub class_count: usize,
    pub input_dim: usize,
    pub examples: Vec<Example>,
}

impl ExamplePool {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        histogram(self.examples.iter(), self.class_count)
    }
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    /// Per-class counts of the training examples.
    pub label_histogram: Vec<usize>,
}

impl ClientDataset {
    pub fn new(client_id: usize, train: Vec<Example>, test: Vec<Example>, class_count: usize) -> Self {
        let label_histogram = histogram(train.iter(), class_count);
        Self {
            client_id,
            train,
            test,
            label_histogram,
        }
    }

    pub fn train_labels(&self) -> Vec<usize> {
        labels_present(&self.label_histogram)
    }

    pub fn test_labels(&self) -> Vec<usize> {
        let classes = self.label_histogram.len();
        labels_present(&histogram(self.test.iter(), classes))
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.test.is_empty()
    }
}

fn histogram<'a>(examples: impl Iterator<Item = &'a Example>, classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for ex in examples {
        if ex.label >= counts.len() {
            counts.resize(ex.label + 1, 0);
        }
        counts[ex.label] += 1;
    }
    counts
}

fn labels_present(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(l, _)| l)
        .collect()
}

/// Class-conditional Gaussian task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub class_count: usize,
    pub input_dim: usize,
    /// `[class_count][input_dim]`
    pub class_means: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub examples_per_class: usize,
    pub rng_seed: u64,
}

impl SyntheticTaskSpec {
    /// Means drawn from a seeded standard normal and multiplied by `mean_scale`.
    pub fn random_means(
        class_count: usize,
        input_dim: usize,
        mean_scale: f64,
        noise_sigma: f64,
        examples_per_class: usize,
        rng_seed: u64,
    ) -> Self {
        let mut rng = seed::rng(seed::child(rng_seed, 0));
        let class_means = (0..class_count)
            .map(|_| {
                (0..input_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mean_scale * z
                    })
                    .collect()
            })
            .collect();
        Self {
            class_count,
            input_dim,
            class_means,
            noise_sigma,
            examples_per_class,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidTask(msg));
        if self.class_count == 0 || self.input_dim == 0 || self.examples_per_class == 0 {
            return bad("class_count, input_dim and examples_per_class must be positive".into());
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        if self.class_means.len() != self.class_count || self.class_means.iter().any(|m| m.len() != self.input_dim) {
            return bad("class_means must be class_count × input_dim".into());
        }
        if self.class_means.iter().flatten().any(|x| !x.is_finite()) {
            return bad("class means must be finite".into());
        }
        for i in 0..self.class_count {
            for j in i + 1..self.class_count {
                if self.class_means[i] == self.class_means[j] {
                    return bad(format!("classes {i} and {j} share a mean"));
                }
            }
        }
        Ok(())
    }
}

/// Draws `examples_per_class` examples per class, ordered by class.
pub fn generate_task(spec: &SyntheticTaskSpec) -> Result<ExamplePool, DataError> {
    spec.validate()?;
    let mut rng = seed::rng(seed::child(spec.rng_seed, 1));
    let mut examples = Vec::with_capacity(spec.class_count * spec.examples_per_class);
    for (label, mean) in spec.class_means.iter().enumerate() {
        for _ in 0..spec.examples_per_class {
            let features = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.noise_sigma * z
                })
                .collect();
            examples.push(Example {
                id: examples.len(),
                features,
                label,
            });
        }
    }
    Ok(ExamplePool {
        class_count: spec.class_count,
        input_dim: spec.input_dim,
        examples,
    })
}

/// Number of test examples for a label with `count` examples on one client.
///
/// Nearest-integer 20%, but at least one whenever that still leaves five or
/// more for training.
pub fn test_count(count: usize) -> usize {
    let n = (count as f64 * TEST_FRACTION).round() as usize;
    if n == 0 && count >= 6 {
        1
    } else {
        n
    }
}

/// Stratified train/test split of one client's examples.
pub fn split_client(client_id: usize, examples: Vec<Example>, class_count: usize, split_seed: u64) -> ClientDataset {
    let mut by_label: BTreeMap<usize, Vec<Example>> = BTreeMap::new();
    for ex in examples {
        by_label.entry(ex.label).or_default().push(ex);
    }
    let mut rng = seed::rng(split_seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut group) in by_label {
        group.sort_by_key(|e| e.id);
        group.shuffle(&mut rng);
        let n_test = test_count(group.len());
        let rest = group.split_off(n_test);
        test.extend(group);
        train.extend(rest);
    }
    ClientDataset::new(client_id, train, test, class_count)
}

/// Random disjoint shares of near-equal size (sizes differ by at most one).
pub fn partition_iid(pool: &ExamplePool, client_count: usize, rng_seed: u64) -> Result<Vec<ClientDataset>, DataError> {
    if client_count == 0 {
        return Err(DataError::NoClients);
    }
    if pool.len() < client_count {
        return Err(DataError::PoolTooSmall {
            pool: pool.len(),
            needed: client_count,
        });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut seed::rng(seed::child(rng_seed, u64::MAX)));
    let sizes = even_sizes(pool.len(), client_count);
    let mut start = 0;
    Ok(sizes
        .into_iter()
        .enumerate()
        .map(|(client, size)| {
            let share = order[start..start + size]
                .iter()
                .map(|&i| pool.examples[i].clone())
                .collect();
            start += size;
            split_client(client, share, pool.class_count, seed::child(rng_seed, client as u64))
        })
        .collect())
}

/// Label-sorted shard partitioning: the pool is cut into
/// `client_count × shard` shards and every client is dealt `shard` of them.
///
/// Shards never straddle a label boundary when the pool has no more distinct
/// labels than shards, so each client sees at most `shard` labels. Shard
/// counts per label are proportional to label frequency.
pub fn partition_shards(
    pool: &ExamplePool,
    client_count: usize,
    shard: usize,
    rng_seed: u64,
) -> Result<Vec<ClientDataset>, DataError> {
    if client_count == 0 {
        return Err(DataError::NoClients);
    }
    if shard == 0 {
        return Err(DataError::ZeroShard);
    }
    let total_shards = client_count * shard;
    if pool.len() < total_shards {
        return Err(DataError::PoolTooSmall {
            pool: pool.len(),
            needed: total_shards,
        });
    }
    let mut rng = seed::rng(seed::child(rng_seed, u64::MAX));

    let mut groups: BTreeMap<usize, Vec<&Example>> = BTreeMap::new();
    for ex in &pool.examples {
        groups.entry(ex.label).or_default().push(ex);
    }
    for group in groups.values_mut() {
        group.sort_by_key(|e| e.id);
        group.shuffle(&mut rng);
    }

    let shards: Vec<Vec<&Example>> = if groups.len() <= total_shards {
        let counts: Vec<usize> = groups.values().map(Vec::len).collect();
        let per_label = allocate_shards(&counts, total_shards);
        groups
            .values()
            .zip(per_label)
            .flat_map(|(group, m)| cut(group, m))
            .collect()
    } else {
        let sorted: Vec<&Example> = groups.values().flatten().copied().collect();
        cut(&sorted, total_shards)
    };

    let mut order: Vec<usize> = (0..shards.len()).collect();
    order.shuffle(&mut rng);
    Ok(order
        .chunks(shard)
        .enumerate()
        .map(|(client, ids)| {
            let examples = ids.iter().flat_map(|&s| shards[s].iter().map(|&e| e.clone())).collect();
            split_client(client, examples, pool.class_count, seed::child(rng_seed, client as u64))
        })
        .collect())
}

/// Splits `total` shards across labels: one each, then greedily to the label
/// whose shards are currently largest. A label never gets more shards than
/// examples.
fn allocate_shards(counts: &[usize], total: usize) -> Vec<usize> {
    let mut alloc = vec![1; counts.len()];
    for _ in counts.len()..total {
        let mut best: Option<usize> = None;
        for (l, (&c, &a)) in counts.iter().zip(&alloc).enumerate() {
            if a >= c {
                continue;
            }
            // c / a > cb / ab without division
            let better = match best {
                None => true,
                Some(b) => c * alloc[b] > counts[b] * a,
            };
            if better {
                best = Some(l);
            }
        }
        alloc[best.expect("pool has at least as many examples as shards")] += 1;
    }
    alloc
}

fn even_sizes(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let extra = n % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

fn cut<'a>(items: &[&'a Example], parts: usize) -> Vec<Vec<&'a Example>> {
    let mut start = 0;
    even_sizes(items.len(), parts)
        .into_iter()
        .map(|size| {
            let piece = items[start..start + size].to_vec();
            start += size;
            piece
        })
        .collect()
}

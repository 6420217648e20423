//! Clustering agreement and accuracy aggregation.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("partitions cover different items")]
    ItemMismatch,
    #[error("the Rand index needs at least two items, got {0}")]
    TooFewItems(usize),
    #[error("partition has {labels} labels but {items} item ids")]
    Malformed { labels: usize, items: usize },
    #[error("no accuracies to average")]
    Empty,
}

/// Group label per item over a fixed item set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    items: Vec<usize>,
    labels: Vec<usize>,
}

impl Partition {
    pub fn new(items: Vec<usize>, labels: Vec<usize>) -> Result<Self, MetricsError> {
        if items.len() != labels.len() {
            return Err(MetricsError::Malformed {
                labels: labels.len(),
                items: items.len(),
            });
        }
        Ok(Self { items, labels })
    }

    /// Items are `0..labels.len()`.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        Self {
            items: (0..labels.len()).collect(),
            labels,
        }
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Labels re-ordered to follow `items`.
    fn labels_for(&self, items: &[usize]) -> Result<Vec<usize>, MetricsError> {
        if self.items == items {
            return Ok(self.labels.clone());
        }
        let mut sorted: Vec<(usize, usize)> = self.items.iter().copied().zip(self.labels.iter().copied()).collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(MetricsError::ItemMismatch);
        }
        items
            .iter()
            .map(|item| {
                sorted
                    .binary_search_by_key(item, |&(i, _)| i)
                    .map(|pos| sorted[pos].1)
                    .map_err(|_| MetricsError::ItemMismatch)
            })
            .collect()
    }
}

/// Pair-counting agreement `(α + β) / C(n, 2)` over all item pairs.
///
/// `α` counts pairs grouped together in both partitions, `β` pairs separated
/// in both. Computed from the contingency table.
pub fn rand_index(a: &Partition, b: &Partition) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ItemMismatch);
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricsError::TooFewItems(n));
    }
    let b_labels = b.labels_for(a.items())?;

    let mut joint = std::collections::HashMap::new();
    let mut left = std::collections::HashMap::new();
    let mut right = std::collections::HashMap::new();
    for (&x, &y) in a.labels.iter().zip(&b_labels) {
        *joint.entry((x, y)).or_insert(0u64) += 1;
        *left.entry(x).or_insert(0u64) += 1;
        *right.entry(y).or_insert(0u64) += 1;
    }
    let pairs = |c: &u64| c * c.saturating_sub(1) / 2;
    let together_both: u64 = joint.values().map(pairs).sum();
    let together_a: u64 = left.values().map(pairs).sum();
    let together_b: u64 = right.values().map(pairs).sum();
    let total = (n as u64) * (n as u64 - 1) / 2;
    let separated_both = total + together_both - together_a - together_b;
    Ok((together_both + separated_both) as f64 / total as f64)
}

/// Unweighted mean, accumulated as a running mean so a constant list
/// returns its value exactly.
pub fn mean_accuracy(per_client: &[f64]) -> Result<f64, MetricsError> {
    if per_client.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut mean = 0.0;
    for (i, &a) in per_client.iter().enumerate() {
        mean += (a - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let mut agree = 0;
        let mut total = 0;
        for i in 0..n {
            for j in i + 1..n {
                total += 1;
                if (a[i] == a[j]) == (b[i] == b[j]) {
                    agree += 1;
                }
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn crossed_two_by_two_is_one_third() {
        // {{1,2},{3,4}} vs {{1,3},{2,4}}
        let a = Partition::from_labels(vec![0, 0, 1, 1]);
        let b = Partition::from_labels(vec![0, 1, 0, 1]);
        assert!((rand_index(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rand_index(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn relabeling_and_item_order_do_not_matter() {
        let a = Partition::new(vec![10, 11, 12, 13, 14], vec![0, 0, 1, 1, 2]).unwrap();
        let relabeled = Partition::new(vec![10, 11, 12, 13, 14], vec![7, 7, 3, 3, 9]).unwrap();
        assert_eq!(rand_index(&a, &relabeled).unwrap(), 1.0);
        let shuffled = Partition::new(vec![14, 12, 10, 13, 11], vec![2, 1, 0, 1, 0]).unwrap();
        assert_eq!(rand_index(&a, &shuffled).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        let one = Partition::from_labels(vec![0]);
        assert_eq!(rand_index(&one, &one), Err(MetricsError::TooFewItems(1)));
        let a = Partition::new(vec![1, 2], vec![0, 1]).unwrap();
        let b = Partition::new(vec![1, 3], vec![0, 1]).unwrap();
        assert_eq!(rand_index(&a, &b), Err(MetricsError::ItemMismatch));
        assert_eq!(
            rand_index(&a, &Partition::from_labels(vec![0, 0, 0])),
            Err(MetricsError::ItemMismatch)
        );
        assert!(Partition::new(vec![1], vec![0, 1]).is_err());
    }

    #[test]
    fn mean_accuracy_cases() {
        assert_eq!(mean_accuracy(&[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(mean_accuracy(&[0.35; 9]).unwrap(), 0.35);
        assert_eq!(mean_accuracy(&[]), Err(MetricsError::Empty));
        let xs: Vec<f64> = (0..97).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let mut naive = 0.0;
        for x in &xs {
            naive += x;
        }
        assert!((mean_accuracy(&xs).unwrap() - naive / 97.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pair in (2usize..=30).prop_flat_map(|n| (
                prop::collection::vec(0usize..5, n),
                prop::collection::vec(0usize..5, n),
            ))
        ) {
            let (a, b) = pair;
            let ri = rand_index(&Partition::from_labels(a.clone()), &Partition::from_labels(b.clone())).unwrap();
            prop_assert_eq!(ri, brute_force(&a, &b));
            let sym = rand_index(&Partition::from_labels(b.clone()), &Partition::from_labels(a.clone())).unwrap();
            prop_assert_eq!(ri, sym);
            prop_assert_eq!(rand_index(&Partition::from_labels(a.clone()), &Partition::from_labels(a)).unwrap(), 1.0);
        }
    }
}

//! Dynamic weighted graph over cluster centers and knowledge propagation.
//!
//! Node `i` is a cluster center. The weight from `i` to `j` is the cosine
//! similarity of the two centers clamped at zero, normalized so each row sums
//! to one; self-edges are included. Propagation applies the frozen weight
//! matrix `depth` times: `center_k ← Σ_i r[k][i] · center_i`.

use serde::{Deserialize, Serialize};

use crate::param_space::{ParamError, ParamVector};

pub const DEFAULT_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("graph has {graph} nodes but {centers} centers were given")]
    NodeCountMismatch { graph: usize, centers: usize },
    #[error("no centers")]
    Empty,
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub round: usize,
    /// Row-stochastic `K × K` matrix.
    pub weights: Vec<Vec<f64>>,
    /// Rows that fell back to a pure self-loop (degenerate center or no
    /// positive similarity to anything).
    pub fallback_rows: Vec<usize>,
}

impl WeightedGraph {
    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// Dense matrix product `self · other`; both must be `K × K`.
    pub fn compose(&self, other: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.node_count();
        let mut out = vec![vec![0.0; k]; k];
        for i in 0..k {
            for m in 0..k {
                let a = self.weights[i][m];
                for j in 0..k {
                    out[i][j] += a * other[m][j];
                }
            }
        }
        out
    }
}

pub fn build_graph(centers: &[ParamVector], round: usize) -> Result<WeightedGraph, GraphError> {
    let k = centers.len();
    if k == 0 {
        return Err(GraphError::Empty);
    }
    let mut raw = vec![vec![0.0; k]; k];
    let mut degenerate = vec![false; k];
    for i in 0..k {
        for j in i..k {
            let sim = match centers[i].cosine_similarity(&centers[j]) {
                Ok(c) => c.max(0.0),
                Err(ParamError::DegenerateVector { .. }) => {
                    degenerate[i] |= centers[i].norm() < crate::param_space::DEGENERATE_NORM;
                    degenerate[j] |= centers[j].norm() < crate::param_space::DEGENERATE_NORM;
                    0.0
                }
                Err(e) => return Err(e.into()),
            };
            raw[i][j] = sim;
            raw[j][i] = sim;
        }
    }
    for (i, row) in raw.iter_mut().enumerate() {
        if !degenerate[i] {
            row[i] = 1.0;
        }
    }

    let mut fallback_rows = Vec::new();
    let weights = raw
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let sum: f64 = row.iter().sum();
            if degenerate[i] || sum <= 0.0 {
                fallback_rows.push(i);
                let mut own = vec![0.0; k];
                own[i] = 1.0;
                own
            } else {
                row.into_iter().map(|r| r / sum).collect()
            }
        })
        .collect();
    Ok(WeightedGraph {
        round,
        weights,
        fallback_rows,
    })
}

/// `depth` steps of `centers ← R · centers`; `depth = 0` returns the input.
pub fn propagate(graph: &WeightedGraph, centers: &[ParamVector], depth: usize) -> Result<Vec<ParamVector>, GraphError> {
    if graph.node_count() != centers.len() {
        return Err(GraphError::NodeCountMismatch {
            graph: graph.node_count(),
            centers: centers.len(),
        });
    }
    let mut current = centers.to_vec();
    for _ in 0..depth {
        current = graph
            .weights
            .iter()
            .map(|row| ParamVector::weighted_sum(&current, row))
            .collect::<Result<_, _>>()?;
    }
    Ok(current)
}

/// Unweighted mean of the centers.
pub fn aggregate_mean(centers: &[ParamVector]) -> Result<ParamVector, GraphError> {
    if centers.is_empty() {
        return Err(GraphError::Empty);
    }
    Ok(ParamVector::mean(centers)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn pv(xs: &[f64]) -> ParamVector {
        ParamVector::from_flat(xs.to_vec()).unwrap()
    }

    fn shared(points: &[Vec<f64>]) -> Vec<ParamVector> {
        let m = pv(&points[0]).manifest().clone();
        points
            .iter()
            .map(|p| ParamVector::new(p.clone(), m.clone()).unwrap())
            .collect()
    }

    fn random_centers(rng: &mut impl Rng, k: usize, dim: usize) -> Vec<ParamVector> {
        let pts: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        shared(&pts)
    }

    #[test]
    fn identical_centers_give_uniform_rows() {
        let c = shared(&vec![vec![0.3, -1.1, 2.7, 0.01]; 5]);
        let g = build_graph(&c, 0).unwrap();
        for row in &g.weights {
            assert!(row.iter().all(|&w| w == 1.0 / 5.0));
        }
        let one = build_graph(&c[..1], 3).unwrap();
        assert_eq!(one.weights, vec![vec![1.0]]);
        assert_eq!(one.round, 3);
    }

    #[test]
    fn hand_normalized_three_node_example() {
        let c = shared(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let g = build_graph(&c, 0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = 2.0 * h + 1.0;
        let expected = [h / s, h / s, 1.0 / s];
        for (w, e) in g.weights[2].iter().zip(expected) {
            assert!((w - e).abs() < 1e-12);
        }
        assert!((g.weights[2][0] - 0.2929).abs() < 1e-4);
        assert!((g.weights[2][2] - 0.4142).abs() < 1e-4);
        // orthogonal pair: row 0 = (1, 0, √2/2) / (1 + √2/2)
        assert!((g.weights[0][1]).abs() < 1e-15);
    }

    #[test]
    fn negative_similarity_is_clamped() {
        let c = shared(&[vec![1.0, 0.0], vec![-1.0, 0.1]]);
        let g = build_graph(&c, 0).unwrap();
        assert_eq!(g.weights, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn degenerate_center_becomes_self_loop() {
        let c = shared(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 0.5]]);
        let g = build_graph(&c, 0).unwrap();
        assert_eq!(g.fallback_rows, vec![0]);
        assert_eq!(g.weights[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(g.weights[1][0], 0.0);
        assert!((g.weights[1].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn propagation_basics() {
        let mut rng = seed::rng(1);
        let c = random_centers(&mut rng, 4, 6);
        let g = build_graph(&c, 0).unwrap();
        assert_eq!(propagate(&g, &c, 0).unwrap(), c);
        let uniform = WeightedGraph {
            round: 0,
            weights: vec![vec![0.25; 4]; 4],
            fallback_rows: vec![],
        };
        let out = propagate(&uniform, &c, 1).unwrap();
        let mean = aggregate_mean(&c).unwrap();
        for o in &out {
            assert!(o.max_abs_diff(&mean).unwrap() < 1e-12);
        }
        assert!(matches!(
            propagate(&g, &c[..3], 1),
            Err(GraphError::NodeCountMismatch { .. })
        ));
    }

    #[test]
    fn matches_matrix_power_oracle() {
        let mut rng = seed::rng(8);
        let c = random_centers(&mut rng, 4, 9);
        let g = build_graph(&c, 0).unwrap();
        let r2 = g.compose(&g.weights);
        let r3 = g.compose(&r2);
        let out = propagate(&g, &c, 3).unwrap();
        for k in 0..4 {
            for d in 0..9 {
                let oracle: f64 = (0..4).map(|i| r3[k][i] * c[i].as_slice()[d]).sum();
                assert!((out[k].as_slice()[d] - oracle).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn aggregate_mean_cases() {
        let c = shared(&[vec![0.0, 0.0], vec![2.0, 4.0]]);
        assert_eq!(aggregate_mean(&c).unwrap().as_slice(), &[1.0, 2.0]);
        assert_eq!(aggregate_mean(&c[..1]).unwrap(), c[0]);
        let v = pv(&[0.1, 0.7, -3.3]);
        assert_eq!(aggregate_mean(&vec![v.clone(); 6]).unwrap(), v);
        assert_eq!(aggregate_mean(&[]), Err(GraphError::Empty));
    }

    proptest! {
        #[test]
        fn graph_and_propagation_invariants(seed_value in any::<u64>(), k in 1usize..7, dim in 1usize..10, p1 in 0usize..3, p2 in 0usize..3) {
            let mut rng = seed::rng(seed_value);
            let c = random_centers(&mut rng, k, dim);
            let g = build_graph(&c, 0).unwrap();
            for row in &g.weights {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            }
            let out = propagate(&g, &c, p1 + p2).unwrap();
            for d in 0..dim {
                let lo = c.iter().map(|v| v.as_slice()[d]).fold(f64::INFINITY, f64::min);
                let hi = c.iter().map(|v| v.as_slice()[d]).fold(f64::NEG_INFINITY, f64::max);
                for o in &out {
                    prop_assert!(o.as_slice()[d] >= lo - 1e-10 && o.as_slice()[d] <= hi + 1e-10);
                }
            }
            let split = propagate(&g, &propagate(&g, &c, p1).unwrap(), p2).unwrap();
            for (a, b) in out.iter().zip(&split) {
                prop_assert!(a.max_abs_diff(b).unwrap() < 1e-10);
            }
            let fixed = vec![c[0].clone(); k];
            let gf = build_graph(&fixed, 0).unwrap();
            for o in propagate(&gf, &fixed, p1 + 1).unwrap() {
                prop_assert!(o.max_abs_diff(&c[0]).unwrap() < 1e-10);
            }
        }

        #[test]
        fn permutation_equivariance(seed_value in any::<u64>(), k in 2usize..6) {
            use rand::seq::SliceRandom;
            let mut rng = seed::rng(seed_value);
            let c = random_centers(&mut rng, k, 5);
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<ParamVector> = perm.iter().map(|&i| c[i].clone()).collect();
            let g = build_graph(&c, 0).unwrap();
            let gp = build_graph(&permuted, 0).unwrap();
            for a in 0..k {
                for b in 0..k {
                    prop_assert!((gp.weights[a][b] - g.weights[perm[a]][perm[b]]).abs() < 1e-14);
                }
            }
        }
    }
}

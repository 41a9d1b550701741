//! Policy entropy, sampled-label skew, and node-count accounting.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::LabelData;
use crate::error::{Error, Result};
use crate::sampler::{SampledSubgraph, Trajectory};

/// Mean and standard deviation of per-node Bernoulli entropy, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerEntropy {
    pub mean: f64,
    pub std: f64,
}

/// Entropy of a Bernoulli variable in bits.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Entropy statistics of one layer's inclusion probabilities.
pub fn layer_entropy(probs: &[f64]) -> Result<LayerEntropy> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("entropy_stats"));
    }
    let n = probs.len() as f64;
    let h: Vec<f64> = probs.iter().map(|&p| bernoulli_entropy(p)).collect();
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(LayerEntropy { mean, std: var.sqrt() })
}

/// Per-layer entropy statistics; every layer must be non-empty.
pub fn entropy_stats(probs_per_layer: &[Vec<f64>]) -> Result<Vec<LayerEntropy>> {
    if probs_per_layer.is_empty() {
        return Err(Error::EmptyInput("entropy_stats"));
    }
    probs_per_layer.iter().map(|p| layer_entropy(p)).collect()
}

/// Per class: share of all nodes carrying the class minus share of sampled nodes carrying it.
///
/// The sampled nodes are the distinct members of every layer set of `sub`.
pub fn label_distribution_diff(sub: &SampledSubgraph, labels: &LabelData) -> Vec<f64> {
    let sampled: HashSet<usize> = sub.layer_sets().iter().flatten().copied().collect();
    let c = labels.num_classes();
    let share = |nodes: &mut dyn Iterator<Item = usize>| {
        let mut counts = vec![0usize; c];
        let mut total = 0usize;
        for v in nodes {
            total += 1;
            for &k in labels.label_set(v) {
                counts[k] += 1;
            }
        }
        counts
            .into_iter()
            .map(|k| if total == 0 { 0.0 } else { k as f64 / total as f64 })
            .collect::<Vec<f64>>()
    };
    let full = share(&mut (0..labels.num_nodes()));
    let part = share(&mut sampled.into_iter());
    full.iter().zip(part).map(|(f, s)| f - s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBudget {
    pub candidates: usize,
    pub selected: usize,
}

/// Node counts of one trajectory; `union` is the number of distinct nodes it touches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeBudget {
    pub layers: Vec<LayerBudget>,
    pub union: usize,
}

pub fn node_budget_report(traj: &Trajectory) -> NodeBudget {
    let mut nodes: HashSet<usize> = traj.targets.iter().copied().collect();
    let layers = traj
        .layers
        .iter()
        .map(|l| {
            nodes.extend(&l.selected);
            LayerBudget {
                candidates: l.candidates.len(),
                selected: l.selected.len(),
            }
        })
        .collect();
    NodeBudget {
        layers,
        union: nodes.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::data::Features;
    use crate::graph::Graph;
    use crate::sampler::{sample_trajectory, Policy, Selection, PROB_EPS};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_examples() {
        let e = entropy_stats(&[vec![0.5; 6], vec![0.5]]).unwrap();
        assert!(e.iter().all(|l| l.mean == 1.0 && l.std == 0.0));
        let low = layer_entropy(&[PROB_EPS; 4]).unwrap();
        assert!(low.mean < 1e-4 && low.std < 1e-12);
        let quarter = layer_entropy(&[0.25]).unwrap();
        let direct = -(0.25 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        assert_abs_diff_eq!(quarter.mean, direct, epsilon = 1e-15);
        assert_abs_diff_eq!(quarter.mean, 0.811278, epsilon = 1e-6);
        assert!(matches!(entropy_stats(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(layer_entropy(&[]), Err(Error::EmptyInput(_))));
    }

    proptest! {
        #[test]
        fn entropy_is_symmetric_and_bounded(ps in proptest::collection::vec(1e-6f64..(1.0 - 1e-6), 1..30)) {
            let flipped: Vec<f64> = ps.iter().map(|p| 1.0 - p).collect();
            let a = layer_entropy(&ps).unwrap();
            let b = layer_entropy(&flipped).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-12 && (a.std - b.std).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.mean) && a.std >= 0.0);
        }
    }

    #[test]
    fn label_distribution_examples() {
        let g = Graph::complete(6);
        let labels = LabelData::multi_class(2, vec![0, 0, 0, 1, 1, 1]).unwrap();
        let all = SampledSubgraph::full(&g, 1).unwrap();
        assert_eq!(label_distribution_diff(&all, &labels), vec![0.0, 0.0]);

        let single = LabelData::multi_class(1, vec![0; 6]).unwrap();
        let sub = SampledSubgraph::new(&g, vec![vec![0], vec![0, 3]]).unwrap();
        assert_eq!(label_distribution_diff(&sub, &single), vec![0.0]);

        // Sampled {0, 1, 2, 3}: three of class 0, one of class 1.
        let skewed = SampledSubgraph::new(&g, vec![vec![0, 1], vec![0, 1, 2, 3]]).unwrap();
        let diff = label_distribution_diff(&skewed, &labels);
        assert_abs_diff_eq!(diff[0], 0.5 - 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(diff[1], 0.5 - 0.25, epsilon = 1e-15);
    }

    #[test]
    fn budget_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Graph::complete(30);
        let x = Features::zeros((30, 1));
        let mut tape = Tape::new();
        let (traj, _) =
            sample_trajectory(&Policy::Uniform, &mut tape, &g, &x, &[0, 1], 4, 2, Selection::Gumbel, &mut rng)
                .unwrap();
        let report = node_budget_report(&traj);
        assert!(report.union <= 2 + 4 + 4);

        let small = Graph::from_edges(&[(0, 1), (0, 2)], 3).unwrap();
        let (traj, _) = sample_trajectory(
            &Policy::Uniform,
            &mut tape,
            &small,
            &Features::zeros((3, 1)),
            &[0],
            5,
            1,
            Selection::Gumbel,
            &mut rng,
        )
        .unwrap();
        let report = node_budget_report(&traj);
        assert_eq!(report.layers[0].selected, report.layers[0].candidates);
    }

    #[test]
    fn union_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = 25;
            let edges: Vec<(usize, usize)> = (0..60).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
            let g = Graph::from_edges(&edges, n).unwrap();
            let mut tape = Tape::new();
            let (traj, sub) = sample_trajectory(
                &Policy::Degree,
                &mut tape,
                &g,
                &Features::zeros((n, 1)),
                &[0, 5, 9],
                3,
                3,
                Selection::Gumbel,
                &mut rng,
            )
            .unwrap();
            let brute: HashSet<usize> = sub.layer_sets().iter().flatten().copied().collect();
            let report = node_budget_report(&traj);
            assert_eq!(report.union, brute.len());
            assert!(report.union <= 3 + 3 * 3);
        }
    }
}

//! Generated graphs: the complete-graph family with matched partners, on which a node's label is
//! its partner's second feature, plus a homophilous block model used as a sanity fixture.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Features, LabelData, Splits};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::sampler::{sample_trajectory, Policy, Selection, PROB_EPS};
use crate::autodiff::Tape;

/// Complete graph on an even number of nodes with a hidden perfect matching.
///
/// Feature 0 is shared by exactly the two nodes of a pair; feature 1 is a fair coin. Each node's
/// label is its partner's coin.
#[derive(Debug, Clone)]
pub struct MatchedInstance {
    pub graph: Graph,
    pub features: Features,
    pub labels: LabelData,
    pub partner: Vec<usize>,
}

/// Draws a matched instance on `n` nodes.
pub fn generate_matched<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<MatchedInstance> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Config(format!("matched instances need an even node count of at least 4, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut partner = vec![0; n];
    let mut features = Features::zeros((n, 2));
    for (p, pair) in order.chunks_exact(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        partner[a] = b;
        partner[b] = a;
        features[[a, 0]] = (p + 1) as f64;
        features[[b, 0]] = (p + 1) as f64;
    }
    for v in 0..n {
        features[[v, 1]] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    }
    let classes = (0..n).map(|v| features[[partner[v], 1]] as usize).collect();
    let inst = MatchedInstance {
        graph: Graph::complete(n),
        features,
        labels: LabelData::multi_class(2, classes)?,
        partner,
    };
    debug_assert!(inst.check().is_ok());
    Ok(inst)
}

impl MatchedInstance {
    pub fn num_nodes(&self) -> usize {
        self.partner.len()
    }

    /// Verifies the matching, feature and label invariants.
    pub fn check(&self) -> Result<()> {
        let n = self.num_nodes();
        let LabelData::MultiClass { classes, .. } = &self.labels else {
            return Err(Error::Contract("matched instance labels must be multi-class".into()));
        };
        for i in 0..n {
            let j = self.partner[i];
            if j == i || j >= n || self.partner[j] != i {
                return Err(Error::Contract(format!("partner map is not a fixed-point-free involution at {i}")));
            }
            if classes[i] as f64 != self.features[[j, 1]] {
                return Err(Error::Contract(format!("label of {i} differs from its partner's second feature")));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let same = self.features[[i, 0]] == self.features[[j, 0]];
                if same != (self.partner[i] == j) {
                    return Err(Error::Contract(format!("first feature does not identify the pair ({i}, {j})")));
                }
            }
        }
        if self.graph.num_edges() != n * (n - 1) / 2 {
            return Err(Error::Contract("matched instance graph is not complete".into()));
        }
        Ok(())
    }

    pub fn to_dataset(&self, splits: Splits) -> Result<Dataset> {
        Dataset::new(self.graph.clone(), self.features.clone(), self.labels.clone(), splits)
    }
}

/// Partner lookup for the oracle policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartnerOracle {
    partner: Vec<Option<usize>>,
}

impl PartnerOracle {
    pub fn from_instance(inst: &MatchedInstance) -> Self {
        PartnerOracle {
            partner: inst.partner.iter().map(|&p| Some(p)).collect(),
        }
    }

    /// Pairs nodes that share the value of feature 0; values held by other than exactly two
    /// nodes leave those nodes unmatched.
    pub fn from_first_feature(x: &Features) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::Config("oracle needs at least one feature column".into()));
        }
        let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
        for v in 0..x.nrows() {
            groups.entry(x[[v, 0]].to_bits()).or_default().push(v);
        }
        let mut partner = vec![None; x.nrows()];
        for members in groups.values() {
            if let [a, b] = members[..] {
                partner[a] = Some(b);
                partner[b] = Some(a);
            }
        }
        Ok(PartnerOracle { partner })
    }

    pub fn partner(&self, v: usize) -> Option<usize> {
        self.partner.get(v).copied().flatten()
    }

    /// `1 - ε` for candidates matched to a member of `layer_set`, `ε` for the rest.
    pub fn probs(&self, layer_set: &[usize], candidates: &[usize]) -> Result<Vec<f64>> {
        let n = self.partner.len();
        if let Some(&bad) = layer_set.iter().chain(candidates).find(|&&v| v >= n) {
            return Err(Error::NodeOutOfRange { node: bad, num_nodes: n });
        }
        let wanted: HashSet<usize> = layer_set.iter().filter_map(|&v| self.partner(v)).collect();
        Ok(candidates
            .iter()
            .map(|c| if wanted.contains(c) { 1.0 - PROB_EPS } else { PROB_EPS })
            .collect())
    }
}

/// The three-layer rule on arbitrary sampled neighborhoods.
///
/// `h1_i = [x_i, mean_{j∈N(i)} x_j]`; `h2_i = h1_i[1]` when `h1_i[0]` and `h1_i[2]` agree within
/// 1e-9, else 0; `h3_i = mean_{j∈N(i)} h2_j`, and the prediction is `round(h3_i)`. Nodes with
/// empty neighborhoods predict 0.
pub fn constructed_gcn_forward(x: &Features, neighborhoods: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = x.nrows();
    if neighborhoods.len() != n || x.ncols() != 2 {
        return Err(Error::shape(
            "constructed_gcn",
            format!("{} neighborhoods and {} feature columns for {n} nodes", neighborhoods.len(), x.ncols()),
        ));
    }
    if let Some(&bad) = neighborhoods.iter().flatten().find(|&&v| v >= n) {
        return Err(Error::NodeOutOfRange { node: bad, num_nodes: n });
    }
    let mean_of = |nbrs: &[usize], col: usize, values: &dyn Fn(usize, usize) -> f64| -> f64 {
        if nbrs.is_empty() {
            0.0
        } else {
            nbrs.iter().map(|&j| values(j, col)).sum::<f64>() / nbrs.len() as f64
        }
    };
    let feat = |j: usize, c: usize| x[[j, c]];
    let h2: Vec<f64> = (0..n)
        .map(|i| {
            let h1 = [x[[i, 0]], x[[i, 1]], mean_of(&neighborhoods[i], 0, &feat), mean_of(&neighborhoods[i], 1, &feat)];
            if (h1[0] - h1[2]).abs() <= 1e-9 {
                h1[1]
            } else {
                0.0
            }
        })
        .collect();
    let f_out = |j: usize, _: usize| h2[j];
    Ok((0..n)
        .map(|i| mean_of(&neighborhoods[i], 0, &f_out).round().max(0.0) as usize)
        .collect())
}

/// The three-layer rule in the regime it is built for: every node's neighborhood is exactly its
/// partner. Any other neighborhood is a contract violation.
pub fn constructed_gcn_oracle(inst: &MatchedInstance, neighborhoods: &[Vec<usize>]) -> Result<Vec<usize>> {
    if neighborhoods.len() != inst.num_nodes() {
        return Err(Error::shape(
            "constructed_gcn",
            format!("{} neighborhoods for {} nodes", neighborhoods.len(), inst.num_nodes()),
        ));
    }
    for (i, nbrs) in neighborhoods.iter().enumerate() {
        if nbrs[..] != [inst.partner[i]] {
            return Err(Error::Contract(format!(
                "neighborhood of node {i} is {nbrs:?}, expected only its partner {}",
                inst.partner[i]
            )));
        }
    }
    constructed_gcn_forward(&inst.features, neighborhoods)
}

/// Fraction of correct predictions.
pub fn accuracy(predictions: &[usize], labels: &LabelData) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .enumerate()
        .filter(|&(v, &p)| labels.label_set(v) == [p])
        .count();
    hits as f64 / predictions.len() as f64
}

/// Probability that a policy blind to features reaches a node's partner within `layers` layers
/// of `k` uniformly drawn nodes each: `Σ_{i<L} k / (n - i·k - 1)`.
pub fn nonadaptive_hit_probability(n: usize, k: usize, layers: usize) -> Result<f64> {
    if n <= layers * k {
        return Err(Error::Config(format!("need n > L·k, got n={n}, L={layers}, k={k}")));
    }
    Ok((0..layers).map(|i| k as f64 / (n - i * k - 1) as f64).sum())
}

/// Empirical frequency with which `policy`, started from one uniformly drawn target, selects the
/// target's partner in some layer.
pub fn monte_carlo_hit_rate<R: Rng + ?Sized>(
    policy: &Policy<'_>,
    inst: &MatchedInstance,
    k: usize,
    layers: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::EmptyInput("monte_carlo_hit_rate trials"));
    }
    let n = inst.num_nodes();
    let mut hits = 0usize;
    let mut tape = Tape::new();
    for _ in 0..trials {
        let target = rng.random_range(0..n);
        let (traj, _) = sample_trajectory(
            policy,
            &mut tape,
            &inst.graph,
            &inst.features,
            &[target],
            k,
            layers,
            Selection::Gumbel,
            rng,
        )?;
        let partner = inst.partner[target];
        if traj.layers.iter().any(|l| l.selected.contains(&partner)) {
            hits += 1;
        }
        tape = Tape::new();
    }
    Ok(hits as f64 / trials as f64)
}

/// Parameters of the homophilous block model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbmConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    /// Edge probability inside a class.
    pub p_in: f64,
    /// Edge probability across classes.
    pub p_out: f64,
    pub num_features: usize,
    /// Standard deviation of the Gaussian noise around each class mean.
    pub feature_noise: f64,
}

/// Stochastic block graph with balanced classes and noisy class-dependent features.
pub fn homophilous_sbm<R: Rng + ?Sized>(config: &SbmConfig, rng: &mut R) -> Result<(Graph, Features, LabelData)> {
    let SbmConfig {
        num_nodes: n,
        num_classes: c,
        p_in,
        p_out,
        num_features: f,
        feature_noise,
    } = *config;
    if n == 0 || c == 0 || f == 0 {
        return Err(Error::Config("block model sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(Error::Config("edge probabilities must lie in [0, 1]".into()));
    }
    let noise = Normal::new(0.0, feature_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut classes: Vec<usize> = (0..n).map(|v| v % c).collect();
    classes.shuffle(rng);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if classes[u] == classes[v] { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let means = Features::from_shape_fn((c, f), |_| rng.random_range(-1.0..1.0));
    let features = Features::from_shape_fn((n, f), |(v, j)| means[[classes[v], j]] + noise.sample(rng));
    Ok((Graph::from_edges(&edges, n)?, features, LabelData::multi_class(c, classes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edge_homophily;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn partner_only(inst: &MatchedInstance) -> Vec<Vec<usize>> {
        inst.partner.iter().map(|&p| vec![p]).collect()
    }

    #[test]
    fn small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let four = generate_matched(4, &mut rng).unwrap();
        four.check().unwrap();
        assert_eq!(four.graph.num_edges(), 6);
        let pairs: HashSet<(usize, usize)> = (0..4).map(|v| (v.min(four.partner[v]), v.max(four.partner[v]))).collect();
        assert_eq!(pairs.len(), 2);
        assert_eq!(generate_matched(8, &mut rng).unwrap().graph.num_edges(), 28);
        assert!(matches!(generate_matched(7, &mut rng), Err(Error::Config(_))));
        assert!(matches!(generate_matched(2, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn every_generated_instance_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in (4..40).step_by(2) {
            generate_matched(n, &mut rng).unwrap().check().unwrap();
        }
    }

    #[test]
    fn figure_six_labeling_has_homophily_twelve_over_twenty_eight() {
        // Four nodes per class on the complete graph: 6 + 6 same-class edges out of 28.
        let classes = vec![0, 0, 1, 1, 0, 0, 1, 1];
        let labels = LabelData::multi_class(2, classes).unwrap();
        let h = edge_homophily(&Graph::complete(8), &labels).unwrap();
        assert_abs_diff_eq!(h, 12.0 / 28.0, epsilon = 1e-15);
    }

    #[test]
    fn oracle_policy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = generate_matched(10, &mut rng).unwrap();
        let oracle = PartnerOracle::from_instance(&inst);
        let i = 3;
        let cands = inst.graph.candidates(&[i]);
        let probs = oracle.probs(&[i], &cands).unwrap();
        for (c, p) in cands.iter().zip(&probs) {
            let expected = if *c == inst.partner[i] { 1.0 - PROB_EPS } else { PROB_EPS };
            assert_eq!(*p, expected);
        }
        let pair = [i, inst.partner[i]];
        let cands = inst.graph.candidates(&pair);
        assert!(oracle.probs(&pair, &cands).unwrap().iter().all(|&p| p == PROB_EPS));
        assert_eq!(PartnerOracle::from_first_feature(&inst.features).unwrap(), oracle);
    }

    #[test]
    fn oracle_finds_partner_almost_always() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = generate_matched(100, &mut rng).unwrap();
        let oracle = PartnerOracle::from_instance(&inst);
        let rate = monte_carlo_hit_rate(&Policy::Oracle(&oracle), &inst, 1, 1, 10_000, &mut rng).unwrap();
        assert!(rate >= 0.999, "{rate}");
    }

    #[test]
    fn constructed_gcn_is_exact_on_partner_neighborhoods() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let four = generate_matched(4, &mut rng).unwrap();
        let preds = constructed_gcn_oracle(&four, &partner_only(&four)).unwrap();
        assert_eq!(accuracy(&preds, &four.labels), 1.0);
        for _ in 0..50 {
            let inst = generate_matched(100, &mut rng).unwrap();
            let preds = constructed_gcn_oracle(&inst, &partner_only(&inst)).unwrap();
            assert_eq!(accuracy(&preds, &inst.labels), 1.0);
        }
    }

    #[test]
    fn constructed_gcn_rejects_other_neighborhoods() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = generate_matched(6, &mut rng).unwrap();
        let mut nbrs = partner_only(&inst);
        nbrs[0] = vec![(inst.partner[0] + 1) % 6];
        if nbrs[0] == [0] {
            nbrs[0] = vec![(inst.partner[0] + 2) % 6];
        }
        assert!(matches!(constructed_gcn_oracle(&inst, &nbrs), Err(Error::Contract(_))));
    }

    #[test]
    fn broken_match_predicts_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut inst = generate_matched(8, &mut rng).unwrap();
        // Make sure the partner's coin is 1 so a zero prediction is visibly the else-branch.
        let a = 0;
        let p = inst.partner[a];
        inst.features[[a, 1]] = 1.0;
        inst.features[[a, 0]] += 0.5;
        let preds = constructed_gcn_oracle(&inst, &partner_only(&inst)).unwrap();
        assert_eq!(preds[p], 0);
        assert_eq!(preds[a], 0);
    }

    #[test]
    fn hit_probability_examples() {
        assert_abs_diff_eq!(nonadaptive_hit_probability(8, 1, 1).unwrap(), 1.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(nonadaptive_hit_probability(8, 1, 1).unwrap(), 0.142857, epsilon = 1e-6);
        assert_abs_diff_eq!(
            nonadaptive_hit_probability(20, 2, 3).unwrap(),
            2.0 / 19.0 + 2.0 / 17.0 + 2.0 / 15.0,
            epsilon = 1e-15
        );
        assert!(nonadaptive_hit_probability(4, 2, 2).is_err());
    }

    #[test]
    fn uniform_hit_rate_matches_analytic_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inst = generate_matched(100, &mut rng).unwrap();
        let trials = 50_000;
        let rate = monte_carlo_hit_rate(&Policy::Uniform, &inst, 1, 1, trials, &mut rng).unwrap();
        let p = nonadaptive_hit_probability(100, 1, 1).unwrap();
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((rate - p).abs() < 3.0 * sd, "rate {rate} vs {p}");
    }

    #[test]
    fn block_model_is_homophilous() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = SbmConfig {
            num_nodes: 120,
            num_classes: 3,
            p_in: 0.2,
            p_out: 0.01,
            num_features: 4,
            feature_noise: 0.5,
        };
        let (g, x, labels) = homophilous_sbm(&config, &mut rng).unwrap();
        assert_eq!(x.dim(), (120, 4));
        assert!(edge_homophily(&g, &labels).unwrap() > 0.7);
    }
}

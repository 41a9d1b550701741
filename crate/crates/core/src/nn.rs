//! The networks trained by the method: the classifier GCN, the sampler GCN that scores
//! candidate nodes, the Z-network that predicts the log-partition of a batch, and a pairwise
//! comparator classifier for the matching-label graph family.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::Rng;

use crate::autodiff::{Matrix, ParamId, ParamSet, Tape, Var};
use crate::data::Features;
use crate::error::{Error, Result};
use crate::graph::{layer_adjacency, Graph, NormalizedAdjacency};
use crate::sampler::SampledSubgraph;
use crate::sparse::CsrMatrix;

/// Uniform Glorot initialization, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-a..=a))
}

/// Shape of the classifier GCN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl GcnConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        GcnConfig {
            num_layers: 2,
            hidden_dim: 256,
            input_dim,
            output_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!("GCN dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|t| {
                let fan_in = if t == 0 { self.input_dim } else { self.hidden_dim };
                let fan_out = if t + 1 == self.num_layers { self.output_dim } else { self.hidden_dim };
                (fan_in, fan_out)
            })
            .collect()
    }
}

/// `H ← σ(Â H W)` stacked `L` times, without bias. ReLU follows every layer but the last.
#[derive(Debug, Clone)]
pub struct ClassifierGcn {
    config: GcnConfig,
    params: ParamSet,
    weights: Vec<ParamId>,
}

impl ClassifierGcn {
    pub fn new<R: Rng + ?Sized>(config: GcnConfig, rng: &mut R) -> Result<Self> {
        Self::build(config, |r, c| glorot(r, c, rng))
    }

    pub fn zeros(config: GcnConfig) -> Result<Self> {
        Self::build(config, |r, c| Matrix::zeros((r, c)))
    }

    fn build(config: GcnConfig, mut init: impl FnMut(usize, usize) -> Matrix) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let weights = config
            .layer_dims()
            .into_iter()
            .enumerate()
            .map(|(t, (r, c))| params.add(format!("classifier.w{}", t + 1), init(r, c)))
            .collect();
        Ok(ClassifierGcn {
            config,
            params,
            weights,
        })
    }

    pub fn config(&self) -> &GcnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn weight(&self, layer: usize) -> ParamId {
        self.weights[layer]
    }

    fn propagate(&self, tape: &mut Tape, blocks: &[Arc<CsrMatrix>], input: Matrix) -> Result<Var> {
        if input.ncols() != self.config.input_dim {
            return Err(Error::shape(
                "classifier",
                format!("{} input features, expected {}", input.ncols(), self.config.input_dim),
            ));
        }
        let mut h = tape.constant(input);
        for (t, (block, &w)) in blocks.iter().zip(&self.weights).enumerate() {
            let agg = tape.spmm(Arc::clone(block), h)?;
            let wv = tape.param(&self.params, w);
            h = tape.matmul(agg, wv)?;
            if t + 1 < blocks.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Logits of the targets `K^(0)` of a sampled subgraph, evaluated deepest layer first.
    pub fn forward(&self, tape: &mut Tape, sub: &SampledSubgraph, x: &Features) -> Result<Var> {
        let depth = sub.num_layers();
        if depth != self.config.num_layers {
            return Err(Error::shape(
                "classifier",
                format!("subgraph has {depth} layers, network has {}", self.config.num_layers),
            ));
        }
        let blocks: Vec<Arc<CsrMatrix>> = (1..=depth).rev().map(|l| sub.block(l).shared()).collect();
        let input = x.select(ndarray::Axis(0), sub.layer_set(depth));
        self.propagate(tape, &blocks, input)
    }

    /// Logits of every node using the full normalized adjacency at each layer.
    pub fn forward_full(&self, tape: &mut Tape, adj: &NormalizedAdjacency, x: &Features) -> Result<Var> {
        let shared = Arc::new(adj.matrix().clone());
        let blocks = vec![shared; self.config.num_layers];
        self.propagate(tape, &blocks, x.clone())
    }
}

/// Shape of the sampler GCN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    /// Message-passing layers of the sampler itself.
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    /// Layers of the classifier being sampled for; sets the indicator width to this plus one.
    pub sampling_layers: usize,
}

impl SamplerConfig {
    pub fn indicator_width(&self) -> usize {
        self.sampling_layers + 1
    }
}

#[derive(Debug, Clone, Copy)]
struct SamplerLayer {
    self_w: ParamId,
    nbr_w: ParamId,
    bias: ParamId,
}

/// Scores candidate nodes with inclusion logits.
///
/// Each layer computes `relu(H W_self + mean_nbr(H) W_nbr + b)` over the subgraph made of the
/// current layer set and its candidates; a linear head maps the last hidden state to one logit.
/// Candidate-candidate edges are left out so each candidate is compared against the nodes
/// already chosen rather than against its fellow candidates.
#[derive(Debug, Clone)]
pub struct SamplerGcn {
    config: SamplerConfig,
    params: ParamSet,
    layers: Vec<SamplerLayer>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Candidates of a layer set together with their logits (absent when there are none).
#[derive(Debug, Clone)]
pub struct CandidateScores {
    pub candidates: Vec<usize>,
    pub logits: Option<Var>,
}

impl SamplerGcn {
    pub fn new<R: Rng + ?Sized>(config: SamplerConfig, rng: &mut R) -> Result<Self> {
        Self::build(config, |r, c| glorot(r, c, rng))
    }

    pub fn zeros(config: SamplerConfig) -> Result<Self> {
        Self::build(config, |r, c| Matrix::zeros((r, c)))
    }

    fn build(config: SamplerConfig, mut init: impl FnMut(usize, usize) -> Matrix) -> Result<Self> {
        if config.num_layers == 0 || config.hidden_dim == 0 || config.input_dim == 0 || config.sampling_layers == 0 {
            return Err(Error::Config(format!("sampler dimensions must be positive: {config:?}")));
        }
        let mut params = ParamSet::new();
        let width = config.input_dim + config.indicator_width();
        let mut layers = Vec::with_capacity(config.num_layers);
        for j in 0..config.num_layers {
            let fan_in = if j == 0 { width } else { config.hidden_dim };
            let h = config.hidden_dim;
            layers.push(SamplerLayer {
                self_w: params.add(format!("sampler.l{}.self", j + 1), init(fan_in, h)),
                nbr_w: params.add(format!("sampler.l{}.nbr", j + 1), init(fan_in, h)),
                bias: params.add(format!("sampler.l{}.bias", j + 1), Matrix::zeros((1, h))),
            });
        }
        let head_w = params.add("sampler.head.w", init(config.hidden_dim, 1));
        let head_b = params.add("sampler.head.b", Matrix::zeros((1, 1)));
        Ok(SamplerGcn {
            config,
            params,
            layers,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Logits for the candidates of `layer_set` when building layer `layer` (1-based).
    ///
    /// Members of `layer_set` that are targets carry indicator slot 0, the others slot
    /// `layer - 1`; candidates carry slot `layer`.
    pub fn logits(
        &self,
        tape: &mut Tape,
        g: &Graph,
        x: &Features,
        targets: &[usize],
        layer_set: &[usize],
        layer: usize,
    ) -> Result<CandidateScores> {
        if layer_set.is_empty() {
            return Err(Error::EmptyInput("sampler layer set"));
        }
        if layer == 0 || layer > self.config.sampling_layers {
            return Err(Error::Config(format!(
                "layer index {layer} outside [1, {}]",
                self.config.sampling_layers
            )));
        }
        if x.ncols() != self.config.input_dim {
            return Err(Error::shape(
                "sampler",
                format!("{} input features, expected {}", x.ncols(), self.config.input_dim),
            ));
        }
        let candidates = g.candidates(layer_set);
        if candidates.is_empty() {
            return Ok(CandidateScores {
                candidates,
                logits: None,
            });
        }
        let k_len = layer_set.len();
        let nodes: Vec<usize> = layer_set.iter().chain(&candidates).copied().collect();
        let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();

        let mut rows = Vec::with_capacity(nodes.len());
        for (i, &v) in nodes.iter().enumerate() {
            let is_candidate = i >= k_len;
            let nbrs: Vec<usize> = g
                .neighbors(v)
                .iter()
                .filter_map(|u| pos.get(u).copied())
                .filter(|&j| !(is_candidate && j >= k_len))
                .collect();
            let w = if nbrs.is_empty() { 0.0 } else { 1.0 / nbrs.len() as f64 };
            rows.push(nbrs.into_iter().map(|j| (j, w)).collect());
        }
        let mean_adj = Arc::new(CsrMatrix::from_row_entries(nodes.len(), nodes.len(), rows)?);

        let target_set: HashSet<usize> = targets.iter().copied().collect();
        let f = self.config.input_dim;
        let mut input = Array2::zeros((nodes.len(), f + self.config.indicator_width()));
        for (i, &v) in nodes.iter().enumerate() {
            input.slice_mut(s![i, ..f]).assign(&x.row(v));
            let slot = if i >= k_len {
                layer
            } else if target_set.contains(&v) {
                0
            } else {
                layer - 1
            };
            input[[i, f + slot]] = 1.0;
        }

        let mut h = tape.constant(input);
        for layer_params in &self.layers {
            let agg = tape.spmm(Arc::clone(&mean_adj), h)?;
            let ws = tape.param(&self.params, layer_params.self_w);
            let wn = tape.param(&self.params, layer_params.nbr_w);
            let b = tape.param(&self.params, layer_params.bias);
            let own = tape.matmul(h, ws)?;
            let msg = tape.matmul(agg, wn)?;
            let pre = tape.add(own, msg)?;
            let pre = tape.add_row(pre, b)?;
            h = tape.relu(pre);
        }
        let hw = tape.param(&self.params, self.head_w);
        let hb = tape.param(&self.params, self.head_b);
        let out = tape.matmul(h, hw)?;
        let out = tape.add_row(out, hb)?;
        let logits = tape.select_rows(out, (k_len..nodes.len()).collect())?;
        Ok(CandidateScores {
            candidates,
            logits: Some(logits),
        })
    }
}

/// Predicts `log Z` from the targets of a batch: one GCN layer over the target-induced
/// subgraph, mean pooling, and an affine map to a scalar.
#[derive(Debug, Clone)]
pub struct ZNet {
    params: ParamSet,
    w: ParamId,
    b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    input_dim: usize,
}

impl ZNet {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        Self::build(input_dim, hidden_dim, |r, c| glorot(r, c, rng))
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        Self::build(input_dim, hidden_dim, |r, c| Matrix::zeros((r, c)))
    }

    fn build(input_dim: usize, hidden_dim: usize, mut init: impl FnMut(usize, usize) -> Matrix) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("Z-network dimensions must be positive".into()));
        }
        let mut params = ParamSet::new();
        let w = params.add("z.w", init(input_dim, hidden_dim));
        let b = params.add("z.b", Matrix::zeros((1, hidden_dim)));
        let out_w = params.add("z.out.w", init(hidden_dim, 1));
        let out_b = params.add("z.out.b", Matrix::zeros((1, 1)));
        Ok(ZNet {
            params,
            w,
            b,
            out_w,
            out_b,
            input_dim,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `1×1` estimate of `log Z` for a batch. Repeated targets count once.
    pub fn forward(&self, tape: &mut Tape, g: &Graph, x: &Features, targets: &[usize]) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::EmptyInput("Z-network targets"));
        }
        if x.ncols() != self.input_dim {
            return Err(Error::shape(
                "z_forward",
                format!("{} input features, expected {}", x.ncols(), self.input_dim),
            ));
        }
        let mut unique = targets.to_vec();
        unique.sort_unstable();
        unique.dedup();
        let adj = layer_adjacency(g, &unique, &unique)?;
        let h = tape.constant(x.select(ndarray::Axis(0), &unique));
        let agg = tape.spmm(adj.shared(), h)?;
        let w = tape.param(&self.params, self.w);
        let b = tape.param(&self.params, self.b);
        let hw = tape.matmul(agg, w)?;
        let pre = tape.add_row(hw, b)?;
        let hidden = tape.relu(pre);
        let pooled = tape.mean_rows(hidden)?;
        let ow = tape.param(&self.params, self.out_w);
        let ob = tape.param(&self.params, self.out_b);
        let out = tape.matmul(pooled, ow)?;
        tape.add(out, ob)
    }
}

/// Three-layer classifier for graphs whose labels depend on a matched neighbor.
///
/// Layer one gives every sampled node `s` the vector `[x_s, mean of x_t over adjacent targets t]`
/// with fixed weights. Layer two is a trainable MLP `f` applied to that vector alone. Layer three
/// gives each target the mean of `f` over its adjacent sampled nodes, or zero when it has none.
/// Only the first sampled hop is used.
#[derive(Debug, Clone)]
pub struct ComparatorGcn {
    params: ParamSet,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    input_dim: usize,
}

impl ComparatorGcn {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, num_classes: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_classes == 0 {
            return Err(Error::Config("comparator dimensions must be positive".into()));
        }
        let mut params = ParamSet::new();
        let w1 = params.add("comparator.f1.w", glorot(2 * input_dim, hidden_dim, rng));
        let b1 = params.add("comparator.f1.b", Matrix::zeros((1, hidden_dim)));
        let w2 = params.add("comparator.f2.w", glorot(hidden_dim, num_classes, rng));
        let b2 = params.add("comparator.f2.b", Matrix::zeros((1, num_classes)));
        Ok(ComparatorGcn {
            params,
            w1,
            b1,
            w2,
            b2,
            input_dim,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Logits of the targets `K^(0)`.
    pub fn forward(&self, tape: &mut Tape, sub: &SampledSubgraph, x: &Features) -> Result<Var> {
        if x.ncols() != self.input_dim {
            return Err(Error::shape(
                "comparator",
                format!("{} input features, expected {}", x.ncols(), self.input_dim),
            ));
        }
        if sub.num_layers() == 0 {
            return Err(Error::shape("comparator", "subgraph has no sampled layer"));
        }
        let targets = sub.layer_set(0);
        let block = sub.block(1);
        let t_len = targets.len();
        let sampled = &block.cols()[t_len..];
        let f = self.input_dim;

        // Adjacency between targets (rows) and sampled nodes, read off the block pattern.
        let matrix = block.matrix();
        let mut by_sampled: Vec<Vec<usize>> = vec![Vec::new(); sampled.len()];
        for a in 0..t_len {
            for (b, _) in matrix.row(a) {
                if b >= t_len {
                    by_sampled[b - t_len].push(a);
                }
            }
        }
        let n_s = sampled.len().max(1);
        let mut h1 = Matrix::zeros((n_s, 2 * f));
        for (i, &v) in sampled.iter().enumerate() {
            h1.slice_mut(s![i, ..f]).assign(&x.row(v));
            let adj = &by_sampled[i];
            if !adj.is_empty() {
                let w = 1.0 / adj.len() as f64;
                for &a in adj {
                    h1.slice_mut(s![i, f..]).scaled_add(w, &x.row(targets[a]));
                }
            }
        }
        let mut pool_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); t_len];
        for (i, adj) in by_sampled.iter().enumerate() {
            for &a in adj {
                pool_rows[a].push((i, 1.0));
            }
        }
        for row in &mut pool_rows {
            let w = if row.is_empty() { 0.0 } else { 1.0 / row.len() as f64 };
            row.iter_mut().for_each(|e| e.1 = w);
        }
        let pool = Arc::new(CsrMatrix::from_row_entries(t_len, n_s, pool_rows)?);

        let h = tape.constant(h1);
        let w1 = tape.param(&self.params, self.w1);
        let b1 = tape.param(&self.params, self.b1);
        let w2 = tape.param(&self.params, self.w2);
        let b2 = tape.param(&self.params, self.b2);
        let z = tape.matmul(h, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, w2)?;
        let fx = tape.add_row(z, b2)?;
        tape.spmm(pool, fx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SampledSubgraph;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        Graph::from_edges(&edges, n).unwrap()
    }

    fn random_features(n: usize, f: usize, rng: &mut ChaCha8Rng) -> Features {
        Features::from_shape_fn((n, f), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_node_identity_classifier() {
        let g = Graph::from_edges(&[], 1).unwrap();
        let x = array![[3.0, -2.0]];
        let mut net = ClassifierGcn::zeros(GcnConfig {
            num_layers: 1,
            hidden_dim: 4,
            input_dim: 2,
            output_dim: 2,
        })
        .unwrap();
        let w = net.weight(0);
        *net.params_mut().value_mut(w) = Matrix::eye(2);
        let sub = SampledSubgraph::new(&g, vec![vec![0], vec![0]]).unwrap();
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &sub, &x).unwrap();
        assert_eq!(tape.value(out), &x);
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(10, 0.3, &mut rng);
        let x = random_features(10, 3, &mut rng);
        let net = ClassifierGcn::zeros(GcnConfig {
            num_layers: 2,
            hidden_dim: 5,
            input_dim: 3,
            output_dim: 2,
        })
        .unwrap();
        let sub = SampledSubgraph::new(&g, vec![vec![0, 1], vec![0, 1, 4], vec![0, 1, 7]]).unwrap();
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &sub, &x).unwrap();
        assert_eq!(tape.value(out), &Matrix::zeros((2, 2)));
    }

    #[test]
    fn all_nodes_subgraph_matches_dense_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_graph(12, 0.25, &mut rng);
        let x = random_features(12, 4, &mut rng);
        let config = GcnConfig {
            num_layers: 3,
            hidden_dim: 6,
            input_dim: 4,
            output_dim: 3,
        };
        let net = ClassifierGcn::new(config, &mut rng).unwrap();
        let all: Vec<usize> = (0..12).collect();
        let sub = SampledSubgraph::new(&g, vec![all.clone(); 4]).unwrap();
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &sub, &x).unwrap();

        // Dense oracle built straight from the definition.
        let mut a = Matrix::eye(12);
        for (u, v) in g.edges() {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        let d: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
        let a_hat = Matrix::from_shape_fn((12, 12), |(i, j)| a[[i, j]] / (d[i] * d[j]).sqrt());
        let mut h = x.clone();
        for t in 0..3 {
            h = a_hat.dot(&h).dot(net.params().value(net.weight(t)));
            if t < 2 {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        assert_abs_diff_eq!(tape.value(out), &h, epsilon = 1e-10);
    }

    fn sampler_config(f: usize) -> SamplerConfig {
        SamplerConfig {
            num_layers: 2,
            hidden_dim: 8,
            input_dim: f,
            sampling_layers: 2,
        }
    }

    #[test]
    fn zero_sampler_gives_half_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(15, 0.3, &mut rng);
        let x = random_features(15, 3, &mut rng);
        let net = SamplerGcn::zeros(sampler_config(3)).unwrap();
        let mut tape = Tape::new();
        let scores = net.logits(&mut tape, &g, &x, &[0, 1], &[0, 1], 1).unwrap();
        let logits = tape.value(scores.logits.unwrap()).clone();
        assert_eq!(logits.nrows(), scores.candidates.len());
        assert!(logits.iter().all(|&z| crate::autodiff::sigmoid(z) == 0.5));
    }

    #[test]
    fn sampler_is_equivariant_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let g = random_graph(14, 0.3, &mut rng);
            let x = random_features(14, 3, &mut rng);
            let net = SamplerGcn::new(sampler_config(3), &mut rng).unwrap();
            let score = |targets: &[usize], set: &[usize], g: &Graph, x: &Features| {
                let mut tape = Tape::new();
                let s = net.logits(&mut tape, g, x, targets, set, 2).unwrap();
                let vals: Vec<f64> = s.logits.map(|v| tape.value(v).iter().copied().collect()).unwrap_or_default();
                s.candidates.into_iter().zip(vals).collect::<HashMap<usize, f64>>()
            };
            let base = score(&[0, 3], &[0, 3, 5], &g, &x);
            let reordered = score(&[3, 0], &[5, 0, 3], &g, &x);
            for (v, z) in &base {
                assert_abs_diff_eq!(*z, reordered[v], epsilon = 1e-12);
            }

            // Relabel the nodes: candidate ids move, their logits move with them.
            let perm: Vec<usize> = {
                use rand::seq::SliceRandom;
                let mut p: Vec<usize> = (0..14).collect();
                p.shuffle(&mut rng);
                p
            };
            let edges: Vec<(usize, usize)> = g.edges().map(|(u, v)| (perm[u], perm[v])).collect();
            let g2 = Graph::from_edges(&edges, 14).unwrap();
            let mut x2 = x.clone();
            for v in 0..14 {
                x2.row_mut(perm[v]).assign(&x.row(v));
            }
            let permuted = score(&[perm[0], perm[3]], &[perm[0], perm[3], perm[5]], &g2, &x2);
            for (v, z) in &base {
                assert_abs_diff_eq!(*z, permuted[&perm[*v]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sampler_without_candidates_returns_empty() {
        let g = Graph::complete(3);
        let x = Features::zeros((3, 2));
        let net = SamplerGcn::zeros(sampler_config(2)).unwrap();
        let mut tape = Tape::new();
        let s = net.logits(&mut tape, &g, &x, &[0, 1, 2], &[0, 1, 2], 1).unwrap();
        assert!(s.candidates.is_empty() && s.logits.is_none());
    }

    #[test]
    fn znet_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(10, 0.4, &mut rng);
        let x = random_features(10, 3, &mut rng);
        let zero = ZNet::zeros(3, 4).unwrap();
        let mut tape = Tape::new();
        let z = zero.forward(&mut tape, &g, &x, &[1, 2, 3]).unwrap();
        assert_eq!(tape.scalar(z), 0.0);

        let net = ZNet::new(3, 4, &mut rng).unwrap();
        let once = net.forward(&mut tape, &g, &x, &[1, 2, 3]).unwrap();
        let twice = net.forward(&mut tape, &g, &x, &[1, 2, 3, 1, 2, 3]).unwrap();
        assert_eq!(tape.scalar(once), tape.scalar(twice));

        let mut moved = x.clone();
        moved.row_mut(2).mapv_inplace(|v| v + 0.7);
        let changed = net.forward(&mut tape, &g, &moved, &[1, 2, 3]).unwrap();
        assert_ne!(tape.scalar(once), tape.scalar(changed));
    }

    #[test]
    fn comparator_pools_sampled_neighbors() {
        // Target 0 with sampled nodes 1 and 2; node 3 is not adjacent to the target.
        let g = Graph::from_edges(&[(0, 1), (0, 2), (2, 3)], 4).unwrap();
        let x = array![[1.0, 0.0], [1.0, 1.0], [2.0, 0.0], [5.0, 5.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = ComparatorGcn::new(2, 5, 2, &mut rng).unwrap();
        let sub = SampledSubgraph::new(&g, vec![vec![0], vec![0, 1, 2]]).unwrap();
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &sub, &x).unwrap();

        let f = |h: ndarray::Array1<f64>| -> ndarray::Array1<f64> {
            let p = net.params();
            let ids: Vec<ParamId> = p.ids().collect();
            let z = (h.dot(p.value(ids[0])) + &p.value(ids[1]).row(0)).mapv(|v| v.max(0.0));
            z.dot(p.value(ids[2])) + &p.value(ids[3]).row(0)
        };
        let f1 = f(array![1.0, 1.0, 1.0, 0.0]);
        let f2 = f(array![2.0, 0.0, 1.0, 0.0]);
        let expected = (&f1 + &f2) / 2.0;
        assert_abs_diff_eq!(tape.value(out).row(0), expected.view(), epsilon = 1e-12);

        let lonely = SampledSubgraph::new(&g, vec![vec![0], vec![0, 3]]).unwrap();
        let out = net.forward(&mut tape, &lonely, &x).unwrap();
        assert_eq!(tape.value(out), &Matrix::zeros((1, 2)));
    }
}

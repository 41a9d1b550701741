//! Layer-wise node sampling: inclusion policies, Gumbel-Top-k selection, and the trajectory
//! record whose Bernoulli log-likelihood trains the adaptive sampler.

use std::collections::HashSet;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::data::Features;
use crate::error::{Error, Result};
use crate::graph::{layer_adjacency, Graph, LayerAdjacency};
use crate::nn::SamplerGcn;
use crate::synthetic::PartnerOracle;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logarithms.
pub const PROB_EPS: f64 = 1e-6;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// How inclusion probabilities are assigned to candidates.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Every candidate gets probability one half.
    Uniform,
    /// `deg(i) / max_deg`, clamped.
    Degree,
    /// Probabilities from a trainable sampler network.
    Adaptive(&'a SamplerGcn),
    /// Near-certain inclusion for matched partners of the current layer set.
    Oracle(&'a PartnerOracle),
}

impl Policy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Uniform => "uniform",
            Policy::Degree => "degree",
            Policy::Adaptive(_) => "adaptive",
            Policy::Oracle(_) => "oracle",
        }
    }
}

/// Whether top-k selection perturbs log-probabilities with Gumbel noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    Gumbel,
    /// Plain arg-top-k of the log-probabilities; no randomness is consumed.
    Greedy,
}

/// Candidates and probabilities of one layer; for adaptive policies also the logits on the tape.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub candidates: Vec<usize>,
    pub probs: Vec<f64>,
    pub logits: Option<Var>,
}

/// Inclusion probabilities for the candidates of `layer_set` at layer `layer` (1-based).
pub fn policy_probs(
    policy: &Policy<'_>,
    tape: &mut Tape,
    g: &Graph,
    x: &Features,
    targets: &[usize],
    layer_set: &[usize],
    layer: usize,
) -> Result<PolicyOutput> {
    match policy {
        Policy::Adaptive(net) => {
            let scores = net.logits(tape, g, x, targets, layer_set, layer)?;
            let probs = match scores.logits {
                Some(v) => tape.value(v).iter().map(|&z| clamp_prob(sigmoid(z))).collect(),
                None => Vec::new(),
            };
            Ok(PolicyOutput {
                candidates: scores.candidates,
                probs,
                logits: scores.logits,
            })
        }
        Policy::Uniform => {
            let candidates = g.candidates(layer_set);
            let probs = vec![0.5; candidates.len()];
            Ok(PolicyOutput {
                candidates,
                probs,
                logits: None,
            })
        }
        Policy::Degree => {
            let candidates = g.candidates(layer_set);
            let max = g.max_degree().max(1) as f64;
            let probs = candidates.iter().map(|&v| clamp_prob(g.degree(v) as f64 / max)).collect();
            Ok(PolicyOutput {
                candidates,
                probs,
                logits: None,
            })
        }
        Policy::Oracle(oracle) => {
            let candidates = g.candidates(layer_set);
            let probs = oracle.probs(layer_set, &candidates)?;
            Ok(PolicyOutput {
                candidates,
                probs,
                logits: None,
            })
        }
    }
}

/// Standard Gumbel noise `-ln(-ln u)`, `u ~ U(0, 1)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

/// Indices of the `k` largest `log_p[i] + ε_i`, sorted ascending.
///
/// When `k` covers the whole array every index is returned and no noise is drawn. Ties go to the
/// lower index.
pub fn gumbel_topk<R: Rng + ?Sized>(log_p: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    topk(log_p, k, Selection::Gumbel, rng)
}

/// [`gumbel_topk`] with the noise optionally switched off.
pub fn topk<R: Rng + ?Sized>(log_p: &[f64], k: usize, mode: Selection, rng: &mut R) -> Result<Vec<usize>> {
    if log_p.is_empty() {
        return Err(Error::EmptyInput("gumbel_topk"));
    }
    if k == 0 {
        return Err(Error::Config("top-k budget must be at least 1".into()));
    }
    let n = log_p.len();
    if k >= n {
        return Ok((0..n).collect());
    }
    let keys: Vec<f64> = match mode {
        Selection::Gumbel => log_p.iter().map(|&lp| lp + gumbel(rng)).collect(),
        Selection::Greedy => log_p.to_vec(),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Layer sets `K^(0..L)` and the normalized blocks between consecutive sets.
///
/// Block `l` has rows `K^(l-1)` and columns `K^(l)`.
#[derive(Debug, Clone)]
pub struct SampledSubgraph {
    layer_sets: Vec<Vec<usize>>,
    blocks: Vec<LayerAdjacency>,
}

impl SampledSubgraph {
    pub fn new(g: &Graph, layer_sets: Vec<Vec<usize>>) -> Result<Self> {
        if layer_sets.is_empty() || layer_sets[0].is_empty() {
            return Err(Error::EmptyInput("sampled subgraph targets"));
        }
        let blocks = layer_sets
            .windows(2)
            .map(|w| layer_adjacency(g, &w[0], &w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledSubgraph { layer_sets, blocks })
    }

    /// Every layer set is the whole node set.
    pub fn full(g: &Graph, num_layers: usize) -> Result<Self> {
        let all: Vec<usize> = (0..g.num_nodes()).collect();
        Self::new(g, vec![all; num_layers + 1])
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn targets(&self) -> &[usize] {
        &self.layer_sets[0]
    }

    pub fn layer_set(&self, l: usize) -> &[usize] {
        &self.layer_sets[l]
    }

    pub fn layer_sets(&self) -> &[Vec<usize>] {
        &self.layer_sets
    }

    /// Block `l` for `l` in `1..=L`.
    pub fn block(&self, l: usize) -> &LayerAdjacency {
        &self.blocks[l - 1]
    }
}

/// Record of one sampled layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub candidates: Vec<usize>,
    pub probs: Vec<f64>,
    /// Selected node ids, ascending.
    pub selected: Vec<usize>,
}

impl LayerRecord {
    pub fn selection_mask(&self) -> Vec<bool> {
        let chosen: HashSet<usize> = self.selected.iter().copied().collect();
        self.candidates.iter().map(|v| chosen.contains(v)).collect()
    }
}

/// One sampling pass over `L` layers.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub targets: Vec<usize>,
    pub layers: Vec<LayerRecord>,
    log_q: f64,
    log_q_var: Option<Var>,
}

impl Trajectory {
    /// Unconditional Bernoulli log-likelihood of every layer's selection.
    pub fn log_q_value(&self) -> f64 {
        self.log_q
    }

    /// The log-likelihood on `tape`; differentiable with respect to the sampler when the
    /// trajectory came from an adaptive policy, a constant otherwise.
    pub fn log_q(&self, tape: &mut Tape) -> Var {
        match self.log_q_var {
            Some(v) => v,
            None => tape.constant_scalar(self.log_q),
        }
    }

    pub fn is_differentiable(&self) -> bool {
        self.log_q_var.is_some()
    }

    /// All candidate probabilities of layer `l` (0-based).
    pub fn layer_probs(&self, l: usize) -> &[f64] {
        &self.layers[l].probs
    }
}

/// Direct evaluation of `Σ_l Σ_i [i selected]·ln p_i + [i not selected]·ln(1 - p_i)` over
/// clamped probabilities.
pub fn bernoulli_log_likelihood(layers: &[LayerRecord]) -> f64 {
    layers
        .iter()
        .map(|layer| {
            layer
                .probs
                .iter()
                .zip(layer.selection_mask())
                .map(|(&p, s)| {
                    let p = clamp_prob(p);
                    if s {
                        p.ln()
                    } else {
                        (1.0 - p).ln()
                    }
                })
                .sum::<f64>()
        })
        .sum()
}

/// Samples `L` layers of at most `k` nodes each, starting from `targets`.
///
/// Layer `l` draws from the candidates of `K^(l-1)`, and `K^(l)` is the targets (batch order)
/// followed by the selected nodes (ascending).
#[allow(clippy::too_many_arguments)]
pub fn sample_trajectory<R: Rng + ?Sized>(
    policy: &Policy<'_>,
    tape: &mut Tape,
    g: &Graph,
    x: &Features,
    targets: &[usize],
    k: usize,
    num_layers: usize,
    mode: Selection,
    rng: &mut R,
) -> Result<(Trajectory, SampledSubgraph)> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("sample_trajectory targets"));
    }
    if k == 0 || num_layers == 0 {
        return Err(Error::Config("budget and layer count must be at least 1".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&v| v >= g.num_nodes()) {
        return Err(Error::NodeOutOfRange {
            node: bad,
            num_nodes: g.num_nodes(),
        });
    }
    let mut seen = HashSet::with_capacity(targets.len());
    if !targets.iter().all(|v| seen.insert(*v)) {
        return Err(Error::Contract("batch targets contain duplicates".into()));
    }

    let mut layer_sets = vec![targets.to_vec()];
    let mut layers = Vec::with_capacity(num_layers);
    let mut ll_vars = Vec::new();
    let mut log_q = 0.0;
    for l in 1..=num_layers {
        let out = policy_probs(policy, tape, g, x, targets, &layer_sets[l - 1], l)?;
        let selected = if out.candidates.is_empty() {
            log::debug!("layer {l} has no candidates");
            Vec::new()
        } else {
            let log_p: Vec<f64> = out.probs.iter().map(|p| p.ln()).collect();
            topk(&log_p, k, mode, rng)?
                .into_iter()
                .map(|i| out.candidates[i])
                .collect()
        };
        let record = LayerRecord {
            candidates: out.candidates,
            probs: out.probs,
            selected,
        };
        let mask = record.selection_mask();
        match out.logits {
            Some(z) => {
                let ll = tape.bernoulli_log_likelihood(z, &mask, PROB_EPS)?;
                log_q += tape.scalar(ll);
                ll_vars.push(ll);
            }
            None => {
                log_q += bernoulli_log_likelihood(std::slice::from_ref(&record));
            }
        }
        let mut next = targets.to_vec();
        next.extend_from_slice(&record.selected);
        layer_sets.push(next);
        layers.push(record);
    }
    let log_q_var = match ll_vars.split_first() {
        Some((&first, rest)) => {
            let mut acc = first;
            for &v in rest {
                acc = tape.add(acc, v)?;
            }
            Some(acc)
        }
        None => None,
    };
    let sub = SampledSubgraph::new(g, layer_sets)?;
    Ok((
        Trajectory {
            targets: targets.to_vec(),
            layers,
            log_q,
            log_q_var,
        },
        sub,
    ))
}

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    pub batch: usize,
    pub targets: Vec<usize>,
    pub layers: Vec<LayerRecord>,
    pub log_q: f64,
}

impl TrajectoryRecord {
    pub fn new(epoch: usize, batch: usize, traj: &Trajectory) -> Self {
        TrajectoryRecord {
            epoch,
            batch,
            targets: traj.targets.clone(),
            layers: traj.layers.clone(),
            log_q: traj.log_q,
        }
    }
}

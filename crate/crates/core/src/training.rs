//! Classification and sampler losses, the per-epoch training loop, and micro-F1 evaluation.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, ParamSet, Tape, Var};
use crate::data::{Dataset, Features, LabelData};
use crate::diagnostics::{layer_entropy, LayerEntropy};
use crate::error::{Error, Result};
use crate::graph::{normalize_full, Graph};
use crate::nn::{ClassifierGcn, ComparatorGcn, GcnConfig, SamplerConfig, SamplerGcn, ZNet};
use crate::optim::{Adam, AdamConfig};
use crate::sampler::{sample_trajectory, Policy, Selection, Trajectory};
use crate::synthetic::PartnerOracle;

/// How the sampler is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Score-function gradient of the classification loss.
    Rl,
    /// Trajectory balance against the reward `exp(-α·loss)`.
    Gfn,
    /// The sampler is used as is.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Gcn,
    Comparator,
}

/// How validation and test predictions are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Unsampled forward pass over the whole graph.
    FullBatch,
    /// Sampled subgraphs, arg-top-k of the policy.
    Greedy,
    /// Sampled subgraphs, Gumbel-Top-k of the policy.
    Sampled,
}

/// Training hyperparameters and network sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub budget: usize,
    pub num_layers: usize,
    pub epochs: usize,
    pub lr_classifier: f64,
    pub lr_sampler: f64,
    pub alpha: f64,
    pub estimator: Estimator,
    pub seed: u64,
    pub hidden_dim: usize,
    pub sampler_hidden_dim: usize,
    pub sampler_layers: usize,
    pub classifier: ClassifierKind,
    pub eval_mode: EvalMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            budget: 256,
            num_layers: 2,
            epochs: 50,
            lr_classifier: 1e-3,
            lr_sampler: 1e-3,
            alpha: 1.0,
            estimator: Estimator::Rl,
            seed: 0,
            hidden_dim: 256,
            sampler_hidden_dim: 256,
            sampler_layers: 2,
            classifier: ClassifierKind::Gcn,
            eval_mode: EvalMode::FullBatch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("budget", self.budget),
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("sampler_hidden_dim", self.sampler_hidden_dim),
            ("sampler_layers", self.sampler_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        for (name, lr) in [("lr_classifier", self.lr_classifier), ("lr_sampler", self.lr_sampler)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        if self.estimator == Estimator::Gfn && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive for gfn, got {}", self.alpha)));
        }
        if self.classifier == ClassifierKind::Comparator && self.eval_mode == EvalMode::FullBatch {
            return Err(Error::Config("the comparator classifier needs sampled evaluation".into()));
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy (multi-class) or mean logistic loss (multi-label) of `logits`,
/// whose rows align with `nodes`.
pub fn classification_loss(tape: &mut Tape, logits: Var, labels: &LabelData, nodes: &[usize]) -> Result<Var> {
    let (rows, cols) = tape.shape(logits);
    if rows != nodes.len() || cols != labels.num_classes() {
        return Err(Error::shape(
            "classification_loss",
            format!("{rows}x{cols} logits for {} nodes and {} classes", nodes.len(), labels.num_classes()),
        ));
    }
    match labels {
        LabelData::MultiClass { .. } => {
            let classes = labels.class_ids(nodes)?;
            tape.softmax_cross_entropy(logits, &classes)
        }
        LabelData::MultiLabel { .. } => tape.binary_cross_entropy(logits, &labels.indicator(nodes)),
    }
}

/// `loss_value · log q`; `loss_value` is a plain number so only the sampler receives gradients.
pub fn reinforce_loss(tape: &mut Tape, traj: &Trajectory, loss_value: f64) -> Var {
    let log_q = traj.log_q(tape);
    tape.scale(log_q, loss_value)
}

/// `(log Z + log q + α·loss_value)²`.
pub fn gfn_loss(tape: &mut Tape, traj: &Trajectory, log_z: Var, loss_value: f64, alpha: f64) -> Result<Var> {
    let log_q = traj.log_q(tape);
    gfn_loss_from(tape, log_z, log_q, loss_value, alpha)
}

/// [`gfn_loss`] from an explicit log-likelihood node.
pub fn gfn_loss_from(tape: &mut Tape, log_z: Var, log_q: Var, loss_value: f64, alpha: f64) -> Result<Var> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("reward scale must be positive, got {alpha}")));
    }
    let reward = tape.constant_scalar(alpha * loss_value);
    let balance = tape.add(log_z, log_q)?;
    let balance = tape.add(balance, reward)?;
    Ok(tape.square(balance))
}

/// Micro-averaged F1 of `logits` (rows aligned with `nodes`). Multi-class predictions are the
/// arg-max, multi-label predictions every label with positive logit.
pub fn micro_f1(logits: &Matrix, labels: &LabelData, nodes: &[usize]) -> Result<f64> {
    if logits.nrows() != nodes.len() || logits.ncols() != labels.num_classes() {
        return Err(Error::shape(
            "micro_f1",
            format!("{:?} logits for {} nodes", logits.dim(), nodes.len()),
        ));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (row, &v) in nodes.iter().enumerate() {
        let truth = labels.label_set(v);
        let predicted: Vec<usize> = match labels {
            LabelData::MultiClass { .. } => {
                let r = logits.row(row);
                let best = (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b });
                vec![best]
            }
            LabelData::MultiLabel { .. } => (0..logits.ncols()).filter(|&j| logits[[row, j]] > 0.0).collect(),
        };
        let hit = predicted.iter().filter(|p| truth.contains(p)).count();
        tp += hit;
        fp += predicted.len() - hit;
        fn_ += truth.len() - hit;
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Full-batch micro-F1 of a classifier GCN on `nodes`.
pub fn evaluate_f1(net: &ClassifierGcn, g: &Graph, x: &Features, labels: &LabelData, nodes: &[usize]) -> Result<f64> {
    let logits = full_batch_logits(net, g, x)?;
    micro_f1(&logits.select(ndarray::Axis(0), nodes), labels, nodes)
}

fn full_batch_logits(net: &ClassifierGcn, g: &Graph, x: &Features) -> Result<Matrix> {
    let mut tape = Tape::new();
    let adj = normalize_full(g);
    let out = net.forward_full(&mut tape, &adj, x)?;
    Ok(tape.value(out).clone())
}

/// The classification network being trained.
#[derive(Debug, Clone)]
pub enum Classifier {
    Gcn(ClassifierGcn),
    Comparator(ComparatorGcn),
}

impl Classifier {
    pub fn forward(&self, tape: &mut Tape, sub: &crate::sampler::SampledSubgraph, x: &Features) -> Result<Var> {
        match self {
            Classifier::Gcn(net) => net.forward(tape, sub, x),
            Classifier::Comparator(net) => net.forward(tape, sub, x),
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Classifier::Gcn(net) => net.params(),
            Classifier::Comparator(net) => net.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Classifier::Gcn(net) => net.params_mut(),
            Classifier::Comparator(net) => net.params_mut(),
        }
    }
}

/// The sampling policy of a run.
#[derive(Debug, Clone)]
pub enum SamplerModel {
    Uniform,
    Degree,
    Oracle(PartnerOracle),
    Learned { net: SamplerGcn, znet: ZNet },
}

impl SamplerModel {
    pub fn policy(&self) -> Policy<'_> {
        match self {
            SamplerModel::Uniform => Policy::Uniform,
            SamplerModel::Degree => Policy::Degree,
            SamplerModel::Oracle(o) => Policy::Oracle(o),
            SamplerModel::Learned { net, .. } => Policy::Adaptive(net),
        }
    }
}

/// Sampler names accepted by run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerChoice {
    Random,
    Degree,
    GrapesRl,
    GrapesGfn,
    Oracle,
}

impl SamplerChoice {
    pub const ALL: [SamplerChoice; 5] = [
        SamplerChoice::Random,
        SamplerChoice::Degree,
        SamplerChoice::GrapesRl,
        SamplerChoice::GrapesGfn,
        SamplerChoice::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerChoice::Random => "random",
            SamplerChoice::Degree => "degree",
            SamplerChoice::GrapesRl => "grapes-rl",
            SamplerChoice::GrapesGfn => "grapes-gfn",
            SamplerChoice::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<SamplerChoice> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampler {s:?}; expected one of random, degree, grapes-rl, grapes-gfn, oracle")))
    }

    pub fn estimator(self) -> Estimator {
        match self {
            SamplerChoice::GrapesRl => Estimator::Rl,
            SamplerChoice::GrapesGfn => Estimator::Gfn,
            _ => Estimator::None,
        }
    }
}

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Batch-size weighted mean classification loss.
    pub train_loss: f64,
    /// Mean sampler loss, absent when the sampler is not trained.
    pub sampler_loss: Option<f64>,
    pub val_f1: Option<f64>,
    /// Entropy of every candidate probability seen in each layer; absent for layers without
    /// candidates.
    pub entropy: Vec<Option<LayerEntropy>>,
    /// Distinct nodes in any sampled subgraph of the epoch.
    pub nodes_touched: usize,
    /// Largest number of distinct nodes in a single batch's subgraph.
    pub max_batch_nodes: usize,
    pub wall_time_s: f64,
}

/// Networks, optimizers and random state of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    classifier: Classifier,
    classifier_opt: Adam,
    sampler: SamplerModel,
    sampler_opt: Option<(Adam, Adam)>,
    rng: ChaCha8Rng,
    epochs_done: usize,
}

impl Trainer {
    /// Builds freshly initialized networks for `choice`, seeded by `config.seed`.
    pub fn new(mut config: TrainConfig, data: &Dataset, choice: SamplerChoice) -> Result<Self> {
        config.estimator = choice.estimator();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let f = data.num_features();
        let c = data.labels.num_classes();
        let classifier = match config.classifier {
            ClassifierKind::Gcn => Classifier::Gcn(ClassifierGcn::new(
                GcnConfig {
                    num_layers: config.num_layers,
                    hidden_dim: config.hidden_dim,
                    input_dim: f,
                    output_dim: c,
                },
                &mut rng,
            )?),
            ClassifierKind::Comparator => Classifier::Comparator(ComparatorGcn::new(f, config.hidden_dim, c, &mut rng)?),
        };
        let sampler = match choice {
            SamplerChoice::Random => SamplerModel::Uniform,
            SamplerChoice::Degree => SamplerModel::Degree,
            SamplerChoice::Oracle => SamplerModel::Oracle(PartnerOracle::from_first_feature(&data.features)?),
            SamplerChoice::GrapesRl | SamplerChoice::GrapesGfn => SamplerModel::Learned {
                net: SamplerGcn::new(
                    SamplerConfig {
                        num_layers: config.sampler_layers,
                        hidden_dim: config.sampler_hidden_dim,
                        input_dim: f,
                        sampling_layers: config.num_layers,
                    },
                    &mut rng,
                )?,
                znet: ZNet::new(f, config.sampler_hidden_dim, &mut rng)?,
            },
        };
        Self::assemble(config, classifier, sampler, rng)
    }

    /// Uses the given networks; random state is seeded from `config.seed`.
    pub fn with_models(config: TrainConfig, classifier: Classifier, sampler: SamplerModel) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::assemble(config, classifier, sampler, rng)
    }

    fn assemble(config: TrainConfig, classifier: Classifier, sampler: SamplerModel, rng: ChaCha8Rng) -> Result<Self> {
        let classifier_opt = Adam::new(classifier.params(), AdamConfig::with_lr(config.lr_classifier));
        let sampler_opt = match &sampler {
            SamplerModel::Learned { net, znet } => Some((
                Adam::new(net.params(), AdamConfig::with_lr(config.lr_sampler)),
                Adam::new(znet.params(), AdamConfig::with_lr(config.lr_sampler)),
            )),
            _ => None,
        };
        Ok(Trainer {
            config,
            classifier,
            classifier_opt,
            sampler,
            sampler_opt,
            rng,
            epochs_done: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Classifier {
        &mut self.classifier
    }

    pub fn sampler(&self) -> &SamplerModel {
        &self.sampler
    }

    pub fn sampler_mut(&mut self) -> &mut SamplerModel {
        &mut self.sampler
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Every trainable parameter set of the run: classifier, then sampler and Z-network.
    pub fn param_sets(&self) -> Vec<&ParamSet> {
        let mut sets = vec![self.classifier.params()];
        if let SamplerModel::Learned { net, znet } = &self.sampler {
            sets.push(net.params());
            sets.push(znet.params());
        }
        sets
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut sets = vec![self.classifier.params_mut()];
        if let SamplerModel::Learned { net, znet } = &mut self.sampler {
            sets.push(net.params_mut());
            sets.push(znet.params_mut());
        }
        sets
    }

    fn trains_sampler(&self) -> bool {
        self.config.estimator != Estimator::None && matches!(self.sampler, SamplerModel::Learned { .. })
    }

    /// One pass over the shuffled training nodes.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochReport> {
        self.train_epoch_observed(data, &mut |_, _| Ok(()))
    }

    /// [`Trainer::train_epoch`], handing every trajectory to `observe` with its batch index.
    pub fn train_epoch_observed(
        &mut self,
        data: &Dataset,
        observe: &mut dyn FnMut(usize, &Trajectory) -> Result<()>,
    ) -> Result<EpochReport> {
        let start = Instant::now();
        let cfg = self.config.clone();
        if data.splits.train.is_empty() {
            return Err(Error::EmptyInput("training nodes"));
        }
        let mut order = data.splits.train.clone();
        order.shuffle(&mut self.rng);

        let trains_sampler = self.trains_sampler();
        let mut probs_seen: Vec<Vec<f64>> = vec![Vec::new(); cfg.num_layers];
        let mut touched: HashSet<usize> = HashSet::new();
        let mut max_batch_nodes = 0;
        let (mut loss_sum, mut sampler_sum, mut seen) = (0.0, 0.0, 0usize);

        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let (traj, sub) = sample_trajectory(
                &self.sampler.policy(),
                &mut tape,
                &data.graph,
                &data.features,
                batch,
                cfg.budget,
                cfg.num_layers,
                Selection::Gumbel,
                &mut self.rng,
            )?;
            let logits = self.classifier.forward(&mut tape, &sub, &data.features)?;
            let loss = classification_loss(&mut tape, logits, &data.labels, batch)?;
            let loss_value = tape.scalar(loss);
            let grads = tape.backward(loss)?;
            let params = self.classifier.params_mut();
            params.zero_grad();
            params.accumulate(&grads);
            self.classifier_opt.step(params);

            if trains_sampler && traj.is_differentiable() {
                let SamplerModel::Learned { net, znet } = &mut self.sampler else {
                    unreachable!("checked by trains_sampler")
                };
                let s_loss = match cfg.estimator {
                    Estimator::Rl => reinforce_loss(&mut tape, &traj, loss_value),
                    Estimator::Gfn => {
                        let log_z = znet.forward(&mut tape, &data.graph, &data.features, batch)?;
                        gfn_loss(&mut tape, &traj, log_z, loss_value, cfg.alpha)?
                    }
                    Estimator::None => unreachable!("checked by trains_sampler"),
                };
                sampler_sum += tape.scalar(s_loss) * batch.len() as f64;
                let grads = tape.backward(s_loss)?;
                let (net_opt, z_opt) = self.sampler_opt.as_mut().expect("learned samplers have optimizers");
                net.params_mut().zero_grad();
                net.params_mut().accumulate(&grads);
                net_opt.step(net.params_mut());
                if cfg.estimator == Estimator::Gfn {
                    znet.params_mut().zero_grad();
                    znet.params_mut().accumulate(&grads);
                    z_opt.step(znet.params_mut());
                }
            }

            for (l, layer) in traj.layers.iter().enumerate() {
                probs_seen[l].extend_from_slice(&layer.probs);
            }
            let batch_nodes: HashSet<usize> = sub.layer_sets().iter().flatten().copied().collect();
            max_batch_nodes = max_batch_nodes.max(batch_nodes.len());
            touched.extend(batch_nodes);
            loss_sum += loss_value * batch.len() as f64;
            seen += batch.len();
            observe(b, &traj)?;
        }

        let val_f1 = if data.splits.val.is_empty() {
            None
        } else {
            Some(self.evaluate(data, &data.splits.val)?)
        };
        let report = EpochReport {
            epoch: self.epochs_done,
            train_loss: loss_sum / seen as f64,
            sampler_loss: trains_sampler.then(|| sampler_sum / seen as f64),
            val_f1,
            entropy: probs_seen.iter().map(|p| layer_entropy(p).ok()).collect(),
            nodes_touched: touched.len(),
            max_batch_nodes,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        self.epochs_done += 1;
        Ok(report)
    }

    /// Micro-F1 on `nodes` using the configured evaluation mode.
    pub fn evaluate(&self, data: &Dataset, nodes: &[usize]) -> Result<f64> {
        self.evaluate_with(data, nodes, self.config.eval_mode)
    }

    /// Micro-F1 on `nodes` with an explicit evaluation mode. Sampled modes draw from a generator
    /// derived from the run seed, so repeated calls give the same answer.
    pub fn evaluate_with(&self, data: &Dataset, nodes: &[usize], mode: EvalMode) -> Result<f64> {
        if nodes.is_empty() {
            return Err(Error::EmptyInput("evaluation nodes"));
        }
        let selection = match mode {
            EvalMode::FullBatch => {
                let Classifier::Gcn(net) = &self.classifier else {
                    return Err(Error::Config("the comparator classifier needs sampled evaluation".into()));
                };
                return evaluate_f1(net, &data.graph, &data.features, &data.labels, nodes);
            }
            EvalMode::Greedy => Selection::Greedy,
            EvalMode::Sampled => Selection::Gumbel,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_e7a1);
        let mut logits = Matrix::zeros((nodes.len(), data.labels.num_classes()));
        let policy = self.sampler.policy();
        for (b, batch) in nodes.chunks(self.config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let (_, sub) = sample_trajectory(
                &policy,
                &mut tape,
                &data.graph,
                &data.features,
                batch,
                self.config.budget,
                self.config.num_layers,
                selection,
                &mut rng,
            )?;
            let out = self.classifier.forward(&mut tape, &sub, &data.features)?;
            let start = b * self.config.batch_size;
            logits
                .slice_mut(ndarray::s![start..start + batch.len(), ..])
                .assign(tape.value(out));
        }
        micro_f1(&logits, &data.labels, nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Splits;
    use crate::nn::SamplerConfig;
    use crate::synthetic::{homophilous_sbm, SbmConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn classification_loss_examples() {
        let labels = LabelData::multi_class(7, vec![0, 3, 6]).unwrap();
        let mut tape = Tape::new();
        let uniform = tape.constant(Matrix::zeros((3, 7)));
        let l = classification_loss(&mut tape, uniform, &labels, &[0, 1, 2]).unwrap();
        assert_abs_diff_eq!(tape.scalar(l), 7f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(tape.scalar(l), 1.9459, epsilon = 1e-4);

        let mut sure = Matrix::zeros((3, 7));
        for (r, c) in [0, 3, 6].into_iter().enumerate() {
            sure[[r, c]] = 40.0;
        }
        let sure = tape.constant(sure);
        let l = classification_loss(&mut tape, sure, &labels, &[0, 1, 2]).unwrap();
        assert!(tape.scalar(l) < 1e-12);

        let wrong = tape.constant(Matrix::zeros((2, 7)));
        assert!(classification_loss(&mut tape, wrong, &labels, &[0, 1, 2]).is_err());
    }

    #[test]
    fn multilabel_loss_matches_formula() {
        let labels = LabelData::multi_label(3, vec![vec![0, 2], vec![], vec![1]], true).unwrap();
        let x: Matrix = array![[0.3, -1.0, 2.0], [0.1, 0.0, -0.5], [-2.0, 1.5, 0.7]];
        let y = labels.indicator(&[0, 1, 2]);
        let mut expected = 0.0;
        for (xi, yi) in x.iter().zip(y.iter()) {
            let p: f64 = 1.0 / (1.0 + (-xi).exp());
            expected -= yi * p.ln() + (1.0 - yi) * (1.0 - p).ln();
        }
        expected /= 9.0;
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let l = classification_loss(&mut tape, v, &labels, &[0, 1, 2]).unwrap();
        assert_abs_diff_eq!(tape.scalar(l), expected, epsilon = 1e-12);
    }

    fn adaptive_trajectory(seed: u64) -> (Tape, Trajectory, SamplerGcn) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Graph::complete(8);
        let x = Features::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
        let net = SamplerGcn::new(
            SamplerConfig {
                num_layers: 2,
                hidden_dim: 5,
                input_dim: 2,
                sampling_layers: 2,
            },
            &mut rng,
        )
        .unwrap();
        let mut tape = Tape::new();
        let (traj, _) =
            sample_trajectory(&Policy::Adaptive(&net), &mut tape, &g, &x, &[0, 1], 2, 2, Selection::Gumbel, &mut rng)
                .unwrap();
        (tape, traj, net)
    }

    #[test]
    fn reinforce_examples() {
        let (mut tape, traj, mut net) = adaptive_trajectory(1);
        let zero = reinforce_loss(&mut tape, &traj, 0.0);
        assert_eq!(tape.scalar(zero), 0.0);
        net.params_mut().accumulate(&tape.backward(zero).unwrap());
        assert!(net.params().grads().iter().all(|g| g.iter().all(|&v| v == 0.0)));

        let log_q = traj.log_q(&mut tape);
        let g_logq = tape.backward(log_q).unwrap();
        let one = reinforce_loss(&mut tape, &traj, 1.0);
        let two = reinforce_loss(&mut tape, &traj, 2.0);
        let g1 = tape.backward(one).unwrap();
        let g2 = tape.backward(two).unwrap();
        for id in net.params().ids() {
            let key = net.params().key(id);
            let (a, b, c) = (g_logq.param(key).unwrap(), g1.param(key).unwrap(), g2.param(key).unwrap());
            assert_eq!(a, b);
            for (x, y) in b.iter().zip(c.iter()) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gfn_examples() {
        let mut tape = Tape::new();
        let (alpha, loss_value) = (3.0, 0.4);
        let log_q = tape.constant_scalar(-2.5);
        let balanced = tape.constant_scalar(2.5 - alpha * loss_value);
        let l = gfn_loss_from(&mut tape, balanced, log_q, loss_value, alpha).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        let z = tape.constant_scalar(0.7);
        let base = gfn_loss_from(&mut tape, z, log_q, loss_value, alpha).unwrap();
        let z_shift = tape.constant_scalar(0.7 + 1.25);
        let q_shift = tape.constant_scalar(-2.5 - 1.25);
        let shifted = gfn_loss_from(&mut tape, z_shift, q_shift, loss_value, alpha).unwrap();
        assert_abs_diff_eq!(tape.scalar(base), tape.scalar(shifted), epsilon = 1e-12);
        assert!(gfn_loss_from(&mut tape, z, log_q, loss_value, 0.0).is_err());
        assert!(gfn_loss_from(&mut tape, z, log_q, loss_value, -1.0).is_err());

        let (mut tape, traj, _) = adaptive_trajectory(2);
        let log_z = tape.input(array![[0.3]]);
        let l = gfn_loss(&mut tape, &traj, log_z, 0.9, 10.0).unwrap();
        let direct = (0.3 + traj.log_q_value() + 10.0 * 0.9).powi(2);
        assert_abs_diff_eq!(tape.scalar(l), direct, epsilon = 1e-12);
        assert!(tape.scalar(l) >= 0.0);
    }

    #[test]
    fn micro_f1_examples() {
        let labels = LabelData::multi_class(3, vec![0, 1, 2]).unwrap();
        let right = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(micro_f1(&right, &labels, &[0, 1, 2]).unwrap(), 1.0);
        let wrong = array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        assert_eq!(micro_f1(&wrong, &labels, &[0, 1, 2]).unwrap(), 0.0);

        let multi = LabelData::multi_label(3, vec![vec![1, 2]], false).unwrap();
        let logits = array![[-1.0, 1.0, -1.0]];
        assert_abs_diff_eq!(micro_f1(&logits, &multi, &[0]).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
    }

    fn sbm_dataset(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, x, labels) = homophilous_sbm(
            &SbmConfig {
                num_nodes: n,
                num_classes: 2,
                p_in: 0.2,
                p_out: 0.02,
                num_features: 4,
                feature_noise: 1.0,
            },
            &mut rng,
        )
        .unwrap();
        let splits = Splits::random(n, 0.6, 0.2, &mut rng);
        Dataset::new(g, x, labels, splits).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 10,
            budget: 8,
            num_layers: 2,
            epochs: 20,
            lr_classifier: 0.01,
            lr_sampler: 0.01,
            hidden_dim: 16,
            sampler_hidden_dim: 8,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fixed_uniform_policy_reduces_loss() {
        let data = sbm_dataset(0, 50);
        let mut trainer = Trainer::new(small_config(), &data, SamplerChoice::Random).unwrap();
        let reports: Vec<EpochReport> = (0..20).map(|_| trainer.train_epoch(&data).unwrap()).collect();
        assert!(reports[19].train_loss < reports[0].train_loss);
        assert!(reports.iter().all(|r| r.sampler_loss.is_none()));
    }

    #[test]
    fn zero_learning_rates_freeze_the_loss() {
        let mut data = sbm_dataset(1, 30);
        data.splits.train = (0..30).collect();
        data.splits.val = vec![];
        data.splits.test = vec![];
        let config = TrainConfig {
            batch_size: 30,
            lr_classifier: 0.0,
            lr_sampler: 0.0,
            ..small_config()
        };
        let mut trainer = Trainer::new(config, &data, SamplerChoice::GrapesRl).unwrap();
        let a = trainer.train_epoch(&data).unwrap();
        let b = trainer.train_epoch(&data).unwrap();
        // Only the summation order of the shuffled batch differs.
        assert_abs_diff_eq!(a.train_loss, b.train_loss, epsilon = 1e-12);
    }

    #[test]
    fn single_full_batch_matches_dense_training_step() {
        let mut data = sbm_dataset(2, 24);
        data.splits.train = (0..24).collect();
        let config = TrainConfig {
            batch_size: 24,
            budget: 100,
            ..small_config()
        };
        let trainer_before = Trainer::new(config.clone(), &data, SamplerChoice::Random).unwrap();
        let Classifier::Gcn(net) = trainer_before.classifier().clone() else { unreachable!() };
        let mut trainer = trainer_before;
        let report = trainer.train_epoch(&data).unwrap();

        // Dense full-batch loss on the same weights, ignoring the shuffled order.
        let n = 24;
        let mut a = Matrix::eye(n);
        for (u, v) in data.graph.edges() {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        let d: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
        let a_hat = Matrix::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (d[i] * d[j]).sqrt());
        let h1 = a_hat.dot(&data.features).dot(net.params().value(net.weight(0))).mapv(|v| v.max(0.0));
        let logits = a_hat.dot(&h1).dot(net.params().value(net.weight(1)));
        let LabelData::MultiClass { classes, .. } = &data.labels else { unreachable!() };
        let mut loss = 0.0;
        for v in 0..n {
            let row = logits.row(v);
            let lse = row.iter().map(|z| z.exp()).sum::<f64>().ln();
            loss += lse - row[classes[v]];
        }
        loss /= n as f64;
        assert_abs_diff_eq!(report.train_loss, loss, epsilon = 1e-8);
    }

    #[test]
    fn sampler_loss_leaves_classifier_alone() {
        let data = sbm_dataset(3, 40);
        let config = TrainConfig {
            lr_classifier: 0.0,
            ..small_config()
        };
        for choice in [SamplerChoice::GrapesRl, SamplerChoice::GrapesGfn] {
            let mut trainer = Trainer::new(config.clone(), &data, choice).unwrap();
            let before = trainer.classifier().params().clone();
            let SamplerModel::Learned { net, .. } = trainer.sampler() else { unreachable!() };
            let sampler_before = net.params().clone();
            let report = trainer.train_epoch(&data).unwrap();
            assert!(report.sampler_loss.is_some());
            for id in before.ids() {
                assert_eq!(before.value(id), trainer.classifier().params().value(id));
            }
            let SamplerModel::Learned { net, .. } = trainer.sampler() else { unreachable!() };
            assert!(sampler_before.ids().any(|id| sampler_before.value(id) != net.params().value(id)));
        }
    }

    #[test]
    fn same_seed_same_reports() {
        let data = sbm_dataset(4, 40);
        let run = || {
            let mut t = Trainer::new(small_config(), &data, SamplerChoice::GrapesGfn).unwrap();
            (0..3)
                .map(|_| {
                    let mut r = t.train_epoch(&data).unwrap();
                    r.wall_time_s = 0.0;
                    r
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gfn_requires_positive_alpha() {
        let data = sbm_dataset(5, 20);
        let config = TrainConfig {
            alpha: 0.0,
            ..small_config()
        };
        assert!(matches!(
            Trainer::new(config, &data, SamplerChoice::GrapesGfn),
            Err(Error::Config(_))
        ));
    }
}

//! Adaptive layer-wise sampling for graph convolutional networks.
//!
//! A GCN classifier is trained on sampled subgraphs while a second GCN learns which neighbors to
//! sample, either with a REINFORCE estimator or with a GFlowNet trajectory-balance objective.
//! Uniform, degree-proportional and oracle policies serve as baselines, and [`synthetic`] builds
//! the matched-partner graph family on which only an adaptive sampler can classify well.

pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod io;
pub mod nn;
pub mod optim;
pub mod sampler;
pub mod sparse;
pub mod synthetic;
pub mod training;

pub use autodiff::{Gradients, Matrix, ParamId, ParamSet, Tape, Var};
pub use data::{Dataset, Features, LabelData, SplitTag, Splits, Task};
pub use diagnostics::{entropy_stats, label_distribution_diff, node_budget_report, LayerEntropy, NodeBudget};
pub use error::{Error, Result};
pub use graph::{edge_homophily, layer_adjacency, normalize_full, Graph, LayerAdjacency, NormalizedAdjacency};
pub use io::{load_dataset, save_dataset, Checkpoint, JsonLines, MetricsHeader, MetricsRecord, MetricsSink, RunConfig};
pub use nn::{ClassifierGcn, ComparatorGcn, GcnConfig, SamplerConfig, SamplerGcn, ZNet};
pub use optim::{Adam, AdamConfig};
pub use sampler::{gumbel_topk, sample_trajectory, Policy, SampledSubgraph, Selection, Trajectory, PROB_EPS};
pub use sparse::CsrMatrix;
pub use synthetic::{generate_matched, PartnerOracle, MatchedInstance};
pub use training::{
    classification_loss, evaluate_f1, gfn_loss, micro_f1, reinforce_loss, Classifier, ClassifierKind, EpochReport,
    EvalMode, Estimator, SamplerChoice, SamplerModel, TrainConfig, Trainer,
};

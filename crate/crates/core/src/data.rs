//! Node features, task labels and train/validation/test splits.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Dense node features, one row per node.
pub type Features = Array2<f64>;

/// Kind of node classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    MultiClass,
    MultiLabel,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::MultiClass => "multiclass",
            Task::MultiLabel => "multilabel",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "multiclass" | "multi-class" => Some(Task::MultiClass),
            "multilabel" | "multi-label" => Some(Task::MultiLabel),
            _ => None,
        }
    }
}

/// Task labels for every node of a graph.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelData {
    /// One class id per node.
    MultiClass { num_classes: usize, classes: Vec<usize> },
    /// A sorted, duplicate-free label set per node.
    MultiLabel {
        num_classes: usize,
        sets: Vec<Vec<usize>>,
        allow_empty: bool,
    },
}

impl LabelData {
    pub fn multi_class(num_classes: usize, classes: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Config(format!("class id {bad} outside [0, {num_classes})")));
        }
        Ok(LabelData::MultiClass { num_classes, classes })
    }

    pub fn multi_label(num_classes: usize, mut sets: Vec<Vec<usize>>, allow_empty: bool) -> Result<Self> {
        for (node, set) in sets.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&c| c >= num_classes) {
                return Err(Error::Config(format!(
                    "label {bad} of node {node} outside [0, {num_classes})"
                )));
            }
            if set.is_empty() && !allow_empty {
                return Err(Error::Config(format!("node {node} has an empty label set")));
            }
        }
        Ok(LabelData::MultiLabel {
            num_classes,
            sets,
            allow_empty,
        })
    }

    pub fn task(&self) -> Task {
        match self {
            LabelData::MultiClass { .. } => Task::MultiClass,
            LabelData::MultiLabel { .. } => Task::MultiLabel,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            LabelData::MultiClass { num_classes, .. } | LabelData::MultiLabel { num_classes, .. } => *num_classes,
        }
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            LabelData::MultiClass { classes, .. } => classes.len(),
            LabelData::MultiLabel { sets, .. } => sets.len(),
        }
    }

    /// Labels of node `v` as a set of class ids.
    pub fn label_set(&self, v: usize) -> &[usize] {
        match self {
            LabelData::MultiClass { classes, .. } => std::slice::from_ref(&classes[v]),
            LabelData::MultiLabel { sets, .. } => &sets[v],
        }
    }

    /// Class ids of `nodes` (multi-class only).
    pub fn class_ids(&self, nodes: &[usize]) -> Result<Vec<usize>> {
        match self {
            LabelData::MultiClass { classes, .. } => Ok(nodes.iter().map(|&v| classes[v]).collect()),
            LabelData::MultiLabel { .. } => Err(Error::Config("class ids requested for a multi-label task".into())),
        }
    }

    /// `|nodes| × C` indicator matrix of label membership.
    pub fn indicator(&self, nodes: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((nodes.len(), self.num_classes()));
        for (row, &v) in nodes.iter().enumerate() {
            for &c in self.label_set(v) {
                out[[row, c]] = 1.0;
            }
        }
        out
    }
}

/// Node ids assigned to each split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split membership tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<SplitTag> {
        match s {
            "train" => Some(SplitTag::Train),
            "val" => Some(SplitTag::Val),
            "test" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

impl Splits {
    /// Shuffles `0..n` and cuts it by the given train and validation fractions; the rest is test.
    pub fn random<R: rand::Rng + ?Sized>(n: usize, train_frac: f64, val_frac: f64, rng: &mut R) -> Splits {
        use rand::seq::SliceRandom;
        let mut nodes: Vec<usize> = (0..n).collect();
        nodes.shuffle(rng);
        let n_train = (n as f64 * train_frac).round() as usize;
        let n_val = ((n as f64 * val_frac).round() as usize).min(n - n_train);
        let mut train = nodes[..n_train].to_vec();
        let mut val = nodes[n_train..n_train + n_val].to_vec();
        let mut test = nodes[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Splits { train, val, test }
    }

    /// `(node, tag)` pairs sorted by node id.
    pub fn tagged(&self) -> Vec<(usize, SplitTag)> {
        let mut out: Vec<(usize, SplitTag)> = self
            .train
            .iter()
            .map(|&v| (v, SplitTag::Train))
            .chain(self.val.iter().map(|&v| (v, SplitTag::Val)))
            .chain(self.test.iter().map(|&v| (v, SplitTag::Test)))
            .collect();
        out.sort_by_key(|&(v, _)| v);
        out
    }
}

/// A graph with features, labels and splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Features,
    pub labels: LabelData,
    pub splits: Splits,
}

impl Dataset {
    pub fn new(graph: Graph, features: Features, labels: LabelData, splits: Splits) -> Result<Self> {
        let n = graph.num_nodes();
        if features.nrows() != n {
            return Err(Error::shape("dataset", format!("{} feature rows for {n} nodes", features.nrows())));
        }
        if labels.num_nodes() != n {
            return Err(Error::shape("dataset", format!("{} labels for {n} nodes", labels.num_nodes())));
        }
        let mut seen = vec![false; n];
        for (v, _) in splits.tagged() {
            if v >= n {
                return Err(Error::NodeOutOfRange { node: v, num_nodes: n });
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::Config(format!("node {v} appears in more than one split")));
            }
        }
        Ok(Dataset {
            graph,
            features,
            labels,
            splits,
        })
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }
}

//! Plain-text dataset bundles, run configurations, checkpoints and line-delimited JSON metrics.
//!
//! A dataset bundle is a directory holding five files:
//!
//! | file           | content                                                         |
//! |----------------|-----------------------------------------------------------------|
//! | `manifest.txt` | `key=value` lines: `n_nodes`, `n_features`, `n_classes`, `task` |
//! | `edges.tsv`    | `u<TAB>v` per undirected edge, 0-based                          |
//! | `features.txt` | one row of space-separated reals per node                       |
//! | `labels.txt`   | one line per node: a class id, or comma-separated ids           |
//! | `splits.tsv`   | `node<TAB>train|val|test` per labeled node                      |
//!
//! Multi-label manifests may add `allow_empty=true` to accept nodes without labels.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::data::{Dataset, Features, LabelData, SplitTag, Splits, Task};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::training::{EpochReport, SamplerChoice, TrainConfig, Trainer};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const SPLITS_FILE: &str = "splits.tsv";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn parse_usize(path: &Path, line: usize, field: &str, what: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("{what} {field:?} is not a non-negative integer")))
}

struct Manifest {
    n_nodes: usize,
    n_features: usize,
    n_classes: usize,
    task: Task,
    allow_empty: bool,
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let (mut n_nodes, mut n_features, mut n_classes, mut task, mut allow_empty) = (None, None, None, None, false);
    for (i, raw) in read_lines(path)?.iter().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| parse_err(path, line, format!("expected key=value, got {text:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "n_nodes" => n_nodes = Some(parse_usize(path, line, value, key)?),
            "n_features" => n_features = Some(parse_usize(path, line, value, key)?),
            "n_classes" => n_classes = Some(parse_usize(path, line, value, key)?),
            "task" => {
                task = Some(Task::parse(value).ok_or_else(|| {
                    parse_err(path, line, format!("unknown task {value:?}; expected multiclass or multilabel"))
                })?)
            }
            "allow_empty" => {
                allow_empty = value
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("allow_empty must be true or false, got {value:?}")))?
            }
            _ => return Err(parse_err(path, line, format!("unknown key {key:?}"))),
        }
    }
    let missing = |key: &str| parse_err(path, 0, format!("missing key {key}"));
    Ok(Manifest {
        n_nodes: n_nodes.ok_or_else(|| missing("n_nodes"))?,
        n_features: n_features.ok_or_else(|| missing("n_features"))?,
        n_classes: n_classes.ok_or_else(|| missing("n_classes"))?,
        task: task.ok_or_else(|| missing("task"))?,
        allow_empty,
    })
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, raw) in read_lines(path)?.iter().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split('\t').collect();
        let [u, v] = fields[..] else {
            return Err(parse_err(path, line, format!("expected two tab-separated node ids, got {raw:?}")));
        };
        let u = parse_usize(path, line, u, "node id")?;
        let v = parse_usize(path, line, v, "node id")?;
        if let Some(bad) = [u, v].into_iter().find(|&x| x >= n) {
            return Err(parse_err(path, line, format!("node id {bad} out of range for {n} nodes")));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn read_features(path: &Path, n: usize, f: usize) -> Result<Features> {
    let lines = read_lines(path)?;
    if lines.len() < n {
        return Err(parse_err(path, lines.len() + 1, format!("expected {n} feature rows, found {}", lines.len())));
    }
    if lines.len() > n {
        return Err(parse_err(path, n + 1, format!("more than {n} feature rows")));
    }
    let mut x = Features::zeros((n, f));
    for (v, raw) in lines.iter().enumerate() {
        let line = v + 1;
        let values: Vec<&str> = raw.split_whitespace().collect();
        if values.len() != f {
            return Err(parse_err(path, line, format!("expected {f} values, found {}", values.len())));
        }
        for (j, s) in values.into_iter().enumerate() {
            let value: f64 = s.parse().map_err(|_| parse_err(path, line, format!("{s:?} is not a number")))?;
            if !value.is_finite() {
                return Err(parse_err(path, line, format!("non-finite feature {s:?}")));
            }
            x[[v, j]] = value;
        }
    }
    Ok(x)
}

fn read_labels(path: &Path, m: &Manifest) -> Result<LabelData> {
    let lines = read_lines(path)?;
    let n = m.n_nodes;
    if lines.len() < n {
        return Err(parse_err(path, lines.len() + 1, format!("expected {n} label lines, found {}", lines.len())));
    }
    if lines.len() > n {
        return Err(parse_err(path, n + 1, format!("more than {n} label lines")));
    }
    let class = |line: usize, s: &str| -> Result<usize> {
        let c = parse_usize(path, line, s, "class id")?;
        if c >= m.n_classes {
            return Err(parse_err(path, line, format!("class id {c} outside [0, {})", m.n_classes)));
        }
        Ok(c)
    };
    match m.task {
        Task::MultiClass => {
            let classes = lines.iter().enumerate().map(|(i, s)| class(i + 1, s)).collect::<Result<_>>()?;
            LabelData::multi_class(m.n_classes, classes)
        }
        Task::MultiLabel => {
            let mut sets = Vec::with_capacity(n);
            for (i, raw) in lines.iter().enumerate() {
                let line = i + 1;
                if raw.trim().is_empty() {
                    if !m.allow_empty {
                        return Err(parse_err(path, line, "empty label set; set allow_empty=true in the manifest"));
                    }
                    sets.push(Vec::new());
                    continue;
                }
                sets.push(raw.split(',').map(|s| class(line, s)).collect::<Result<Vec<_>>>()?);
            }
            LabelData::multi_label(m.n_classes, sets, m.allow_empty)
        }
    }
}

fn read_splits(path: &Path, n: usize) -> Result<Splits> {
    let mut splits = Splits::default();
    let mut seen = vec![false; n];
    for (i, raw) in read_lines(path)?.iter().enumerate() {
        let line = i + 1;
        let Some((node, tag)) = raw.split_once('\t') else {
            return Err(parse_err(path, line, format!("expected node<TAB>tag, got {raw:?}")));
        };
        let v = parse_usize(path, line, node, "node id")?;
        if v >= n {
            return Err(parse_err(path, line, format!("node id {v} out of range for {n} nodes")));
        }
        if std::mem::replace(&mut seen[v], true) {
            return Err(parse_err(path, line, format!("node {v} listed twice")));
        }
        match SplitTag::parse(tag.trim()) {
            Some(SplitTag::Train) => splits.train.push(v),
            Some(SplitTag::Val) => splits.val.push(v),
            Some(SplitTag::Test) => splits.test.push(v),
            None => return Err(parse_err(path, line, format!("unknown split tag {tag:?}"))),
        }
    }
    for part in [&mut splits.train, &mut splits.val, &mut splits.test] {
        part.sort_unstable();
    }
    Ok(splits)
}

/// Reads a dataset bundle from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let m = read_manifest(&dir.join(MANIFEST_FILE))?;
    let edges = read_edges(&dir.join(EDGES_FILE), m.n_nodes)?;
    let features = read_features(&dir.join(FEATURES_FILE), m.n_nodes, m.n_features)?;
    let labels = read_labels(&dir.join(LABELS_FILE), &m)?;
    let splits = read_splits(&dir.join(SPLITS_FILE), m.n_nodes)?;
    Dataset::new(Graph::from_edges(&edges, m.n_nodes)?, features, labels, splits)
}

/// Writes `data` as a bundle into `dir`, creating it if needed. Reals are written in their
/// shortest round-trip form, so loading returns bit-identical features.
pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = data.graph.num_nodes();

    let mut manifest = format!(
        "n_nodes={n}\nn_features={}\nn_classes={}\ntask={}\n",
        data.num_features(),
        data.labels.num_classes(),
        data.labels.task().as_str()
    );
    if let LabelData::MultiLabel { allow_empty: true, .. } = data.labels {
        manifest.push_str("allow_empty=true\n");
    }
    write_file(&dir.join(MANIFEST_FILE), &manifest)?;

    let mut edges = String::new();
    for (u, v) in data.graph.edges() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    write_file(&dir.join(EDGES_FILE), &edges)?;

    let mut features = String::new();
    for row in data.features.rows() {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        features.push_str(&cells.join(" "));
        features.push('\n');
    }
    write_file(&dir.join(FEATURES_FILE), &features)?;

    let mut labels = String::new();
    for v in 0..n {
        let ids: Vec<String> = data.labels.label_set(v).iter().map(|c| c.to_string()).collect();
        labels.push_str(&ids.join(","));
        labels.push('\n');
    }
    write_file(&dir.join(LABELS_FILE), &labels)?;

    let mut splits = String::new();
    for (v, tag) in data.splits.tagged() {
        writeln!(splits, "{v}\t{}", tag.as_str()).unwrap();
    }
    write_file(&dir.join(SPLITS_FILE), &splits)
}

/// A training run as read from a TOML file.
///
/// ```toml
/// sampler = "grapes-gfn"
/// data = "bundle"
/// out = "runs/gfn"
///
/// [train]
/// epochs = 20
/// alpha = 100.0
/// ```
///
/// Relative paths are resolved against the directory of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sampler: SamplerChoice,
    pub data: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    /// Also write every training trajectory to `trajectories.jsonl`.
    #[serde(default)]
    pub dump_trajectories: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            parse_err(path, line, e.message().to_owned())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data = base.join(&cfg.data);
        cfg.out = base.join(&cfg.out);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configurations always serialize")
    }
}

/// Writes serializable records one JSON object per line, flushing after each.
pub struct JsonLines<W: Write> {
    out: W,
    path: PathBuf,
}

impl JsonLines<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonLines {
            out: BufWriter::new(file),
            path,
        })
    }
}

impl<W: Write> JsonLines<W> {
    pub fn new(out: W, path: impl Into<PathBuf>) -> Self {
        JsonLines { out, path: path.into() }
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Contract(format!("unserializable record: {e}")))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Reads every line of a JSON-lines file as `T`.
pub fn read_json_lines<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// First record of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub sampler: SamplerChoice,
    pub config: TrainConfig,
    pub num_nodes: usize,
    pub num_train: usize,
}

/// One line of a metrics file. Floats are written in shortest round-trip form and parse back to
/// the identical value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum MetricsRecord {
    Header(MetricsHeader),
    Epoch(EpochReport),
}

/// Append-only metrics file: a header, then one record per epoch.
pub struct MetricsSink<W: Write> {
    lines: JsonLines<W>,
    last_epoch: Option<usize>,
}

impl MetricsSink<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: MetricsHeader) -> Result<Self> {
        Self::with_writer(JsonLines::create(path)?, header)
    }
}

impl<W: Write> MetricsSink<W> {
    pub fn with_writer(mut lines: JsonLines<W>, header: MetricsHeader) -> Result<Self> {
        lines.write(&MetricsRecord::Header(header))?;
        Ok(MetricsSink { lines, last_epoch: None })
    }

    pub fn write_epoch(&mut self, report: &EpochReport) -> Result<()> {
        if self.last_epoch.is_some_and(|e| report.epoch <= e) {
            return Err(Error::Contract(format!("epoch {} written after epoch {:?}", report.epoch, self.last_epoch)));
        }
        if !report.train_loss.is_finite() {
            return Err(Error::Contract(format!("epoch {} has non-finite training loss", report.epoch)));
        }
        self.lines.write(&MetricsRecord::Epoch(report.clone()))?;
        self.last_epoch = Some(report.epoch);
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.lines.into_inner()
    }
}

/// Parses a metrics file into its header and epoch records.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<(MetricsHeader, Vec<EpochReport>)> {
    let path = path.as_ref();
    let mut records = read_json_lines::<MetricsRecord>(path)?.into_iter();
    let Some(MetricsRecord::Header(header)) = records.next() else {
        return Err(parse_err(path, 1, "metrics file must start with a header record"));
    };
    let mut epochs = Vec::new();
    for (i, r) in records.enumerate() {
        match r {
            MetricsRecord::Epoch(e) => epochs.push(e),
            MetricsRecord::Header(_) => return Err(parse_err(path, i + 2, "second header record")),
        }
    }
    Ok((header, epochs))
}

const CHECKPOINT_MAGIC: &str = "grapes-checkpoint 1";

/// Weights of every network of a run plus what is needed to rebuild them.
///
/// The text layout is a magic line, `sampler <name>`, `config <json>`, then per tensor a line
/// `param <name> <rows> <cols>` followed by one line per row. Values use `{:e}`, which
/// round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub sampler: SamplerChoice,
    pub config: TrainConfig,
    pub params: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn from_trainer(sampler: SamplerChoice, trainer: &Trainer) -> Checkpoint {
        let params = trainer
            .param_sets()
            .into_iter()
            .flat_map(|set| set.named_values().map(|(n, v)| (n.to_owned(), v.clone())).collect::<Vec<_>>())
            .collect();
        Checkpoint {
            sampler,
            config: trainer.config().clone(),
            params,
        }
    }

    /// Rebuilds the networks for `data` and loads the stored weights into them.
    pub fn restore(&self, data: &Dataset) -> Result<Trainer> {
        let mut trainer = Trainer::new(self.config.clone(), data, self.sampler)?;
        let mut expected: usize = trainer.param_sets().iter().map(|s| s.len()).sum();
        for (name, value) in &self.params {
            let mut found = false;
            for set in trainer.param_sets_mut() {
                if let Some(id) = set.find(name) {
                    let slot = set.value_mut(id);
                    if slot.dim() != value.dim() {
                        return Err(Error::shape("checkpoint", format!("{name} is {:?}, network expects {:?}", value.dim(), slot.dim())));
                    }
                    slot.assign(value);
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(Error::Contract(format!("checkpoint tensor {name} has no matching parameter")));
            }
            expected -= 1;
        }
        if expected != 0 {
            return Err(Error::Contract(format!("checkpoint lacks {expected} parameter tensors")));
        }
        Ok(trainer)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC}\nsampler {}\n", self.sampler.as_str());
        let config = serde_json::to_string(&self.config).expect("configurations always serialize");
        writeln!(out, "config {config}").unwrap();
        for (name, value) in &self.params {
            writeln!(out, "param {name} {} {}", value.nrows(), value.ncols()).unwrap();
            for row in value.rows() {
                let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Checkpoint> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| lines.next().ok_or_else(|| parse_err(path, 0, format!("unexpected end of file, expected {what}")));
        let (line, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(parse_err(path, line, "not a checkpoint file"));
        }
        let (line, s) = next("sampler")?;
        let sampler = s
            .strip_prefix("sampler ")
            .ok_or_else(|| parse_err(path, line, "expected sampler line"))
            .and_then(|name| SamplerChoice::parse(name).map_err(|e| parse_err(path, line, e.to_string())))?;
        let (line, s) = next("config")?;
        let config = s
            .strip_prefix("config ")
            .ok_or_else(|| parse_err(path, line, "expected config line"))
            .and_then(|json| serde_json::from_str(json).map_err(|e| parse_err(path, line, e.to_string())))?;
        let mut params = Vec::new();
        while let Ok((line, s)) = next("param") {
            let fields: Vec<&str> = s.split(' ').collect();
            let ["param", name, rows, cols] = fields[..] else {
                return Err(parse_err(path, line, format!("expected param <name> <rows> <cols>, got {s:?}")));
            };
            let rows = parse_usize(path, line, rows, "row count")?;
            let cols = parse_usize(path, line, cols, "column count")?;
            let mut value = Matrix::zeros((rows, cols));
            for r in 0..rows {
                let (line, s) = next("tensor row")?;
                let cells: Vec<&str> = s.split_whitespace().collect();
                if cells.len() != cols {
                    return Err(parse_err(path, line, format!("expected {cols} values, found {}", cells.len())));
                }
                for (c, cell) in cells.into_iter().enumerate() {
                    value[[r, c]] = cell.parse().map_err(|_| parse_err(path, line, format!("{cell:?} is not a number")))?;
                }
            }
            params.push((name.to_owned(), value));
        }
        Ok(Checkpoint { sampler, config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::generate_matched;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Dataset {
        let g = Graph::from_edges(&[(0, 1)], 2).unwrap();
        let x = ndarray::array![[0.1, -2.5e-300], [1.0 / 3.0, 7.0]];
        let labels = LabelData::multi_class(2, vec![1, 0]).unwrap();
        let splits = Splits {
            train: vec![0],
            val: vec![],
            test: vec![1],
        };
        Dataset::new(g, x, labels, splits).unwrap()
    }

    fn read_all(dir: &Path) -> Vec<Vec<u8>> {
        [MANIFEST_FILE, EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE]
            .iter()
            .map(|f| fs::read(dir.join(f)).unwrap())
            .collect()
    }

    #[test]
    fn toy_bundle_round_trips_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        let data = toy();
        save_dataset(tmp.path(), &data).unwrap();
        let back = load_dataset(tmp.path()).unwrap();
        assert_eq!(back.graph, data.graph);
        assert_eq!(back.labels, data.labels);
        assert_eq!(back.splits, data.splits);
        for (a, b) in back.features.iter().zip(data.features.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let first = read_all(tmp.path());
        save_dataset(tmp.path(), &back).unwrap();
        assert_eq!(read_all(tmp.path()), first);
    }

    #[test]
    fn multilabel_bundle_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let g = Graph::from_edges(&[(0, 1), (1, 2)], 3).unwrap();
        let labels = LabelData::multi_label(3, vec![vec![2, 0], vec![], vec![1]], true).unwrap();
        let splits = Splits {
            train: vec![0, 2],
            val: vec![1],
            test: vec![],
        };
        let data = Dataset::new(g, Features::zeros((3, 1)), labels, splits).unwrap();
        save_dataset(tmp.path(), &data).unwrap();
        assert_eq!(fs::read_to_string(tmp.path().join(LABELS_FILE)).unwrap(), "0,2\n\n1\n");
        let back = load_dataset(tmp.path()).unwrap();
        assert_eq!(back.labels, data.labels);
    }

    #[test]
    fn missing_feature_row_is_reported_at_its_line() {
        let tmp = tempfile::tempdir().unwrap();
        let g = Graph::from_edges(&[(0, 1), (1, 2)], 3).unwrap();
        let labels = LabelData::multi_class(2, vec![0, 1, 0]).unwrap();
        let data = Dataset::new(g, Features::zeros((3, 2)), labels, Splits::default()).unwrap();
        save_dataset(tmp.path(), &data).unwrap();
        write_file(&tmp.path().join(FEATURES_FILE), "0 0\n0 0\n").unwrap();
        match load_dataset(tmp.path()) {
            Err(Error::Parse { path, line, .. }) => {
                assert!(path.ends_with(FEATURES_FILE));
                assert_eq!(line, 3);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_rows_name_file_and_line() {
        let tmp = tempfile::tempdir().unwrap();
        save_dataset(tmp.path(), &toy()).unwrap();
        let cases = [
            (SPLITS_FILE, "0\ttrain\n1\tholdout\n", 2),
            (EDGES_FILE, "0\t1\n0\t5\n", 2),
            (LABELS_FILE, "1\n2\n", 2),
            (MANIFEST_FILE, "n_nodes=2\nn_features=2\nn_classes=2\ntask=ranking\n", 4),
        ];
        for (file, content, want) in cases {
            save_dataset(tmp.path(), &toy()).unwrap();
            write_file(&tmp.path().join(file), content).unwrap();
            match load_dataset(tmp.path()) {
                Err(Error::Parse { path, line, .. }) => {
                    assert!(path.ends_with(file), "{file}");
                    assert_eq!(line, want, "{file}");
                }
                other => panic!("{file}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn matched_instance_loads_into_the_same_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = generate_matched(20, &mut rng).unwrap();
        let data = inst.to_dataset(Splits::random(20, 0.5, 0.25, &mut rng)).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        save_dataset(tmp.path(), &data).unwrap();
        let back = load_dataset(tmp.path()).unwrap();
        let edges: Vec<_> = back.graph.edges().collect();
        assert_eq!(edges, data.graph.edges().collect::<Vec<_>>());
        assert_eq!(back.features, data.features);
    }

    #[test]
    fn run_config_defaults_and_errors() {
        let path = Path::new("run.toml");
        let cfg = RunConfig::from_toml("sampler = \"random\"\ndata = \"d\"\nout = \"o\"\n", path).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.train.batch_size, 256);
        let again = RunConfig::from_toml(&cfg.to_toml(), path).unwrap();
        assert_eq!(again, cfg);
        let err = RunConfig::from_toml("sampler = \"random\"\ndata = \"d\"\nout = \"o\"\n[train]\nlr = 1.0\n", path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
        let err = RunConfig::from_toml("sampler = \"ladies\"\ndata = \"d\"\nout = \"o\"\n", path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    fn report(epoch: usize) -> EpochReport {
        EpochReport {
            epoch,
            train_loss: 0.1 + 0.2,
            sampler_loss: Some(-1.0 / 3.0),
            val_f1: None,
            entropy: vec![Some(crate::diagnostics::LayerEntropy { mean: 0.9, std: 1e-17 }), None],
            nodes_touched: 10,
            max_batch_nodes: 4,
            wall_time_s: 0.25,
        }
    }

    #[test]
    fn metrics_round_trip_at_full_precision() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("metrics.jsonl");
        let header = MetricsHeader {
            sampler: SamplerChoice::GrapesGfn,
            config: TrainConfig::default(),
            num_nodes: 5,
            num_train: 3,
        };
        let mut sink = MetricsSink::create(&path, header.clone()).unwrap();
        sink.write_epoch(&report(0)).unwrap();
        sink.write_epoch(&report(1)).unwrap();
        assert!(sink.write_epoch(&report(1)).is_err());
        drop(sink);
        let (h, epochs) = read_metrics(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(epochs, vec![report(0), report(1)]);
        assert_eq!(epochs[0].train_loss.to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn header_only_metrics_parse() {
        let mut buf = Vec::new();
        let header = MetricsHeader {
            sampler: SamplerChoice::Random,
            config: TrainConfig::default(),
            num_nodes: 1,
            num_train: 1,
        };
        MetricsSink::with_writer(JsonLines::new(&mut buf, "mem"), header).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("{\"record\":\"header\""));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inst = generate_matched(12, &mut rng).unwrap();
        let data = inst.to_dataset(Splits::random(12, 0.5, 0.25, &mut rng)).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            budget: 2,
            num_layers: 2,
            hidden_dim: 5,
            sampler_hidden_dim: 3,
            epochs: 1,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg, &data, SamplerChoice::GrapesGfn).unwrap();
        trainer.train_epoch(&data).unwrap();
        let ckpt = Checkpoint::from_trainer(SamplerChoice::GrapesGfn, &trainer);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ckpt.txt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let restored = back.restore(&data).unwrap();
        for (a, b) in restored.param_sets().iter().zip(trainer.param_sets()) {
            for ((na, va), (nb, vb)) in a.named_values().zip(b.named_values()) {
                assert_eq!(na, nb);
                assert!(va.iter().zip(vb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        let mut truncated = ckpt.clone();
        truncated.params.pop();
        assert!(matches!(truncated.restore(&data), Err(Error::Contract(_))));
    }
}

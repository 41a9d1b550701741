//! `grapes`: generate matched-partner graphs, train and compare samplers, inspect runs.
//!
//! Every failure prints a single JSON object `{"error": {"kind": ..., "message": ...}}` on stderr
//! and exits nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grapes_core::io::{read_json_lines, read_metrics, JsonLines, MetricsHeader, MetricsSink};
use grapes_core::sampler::TrajectoryRecord;
use grapes_core::{
    edge_homophily, generate_matched, label_distribution_diff, load_dataset, save_dataset, Checkpoint, Dataset,
    EvalMode, RunConfig, SampledSubgraph, SamplerChoice, Splits, TrainConfig, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "grapes", version, about = "Adaptive layer-wise sampling for GCN training")]
struct Cli {
    /// Worker threads for `compare` cells; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a matched-partner complete graph as a dataset bundle.
    GenerateSynthetic {
        #[arg(long)]
        n: usize,
        #[arg(long, env = "GRAPES_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        train_frac: f64,
        #[arg(long, default_value_t = 0.1)]
        val_frac: f64,
    },
    /// Train one run described by a TOML file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the file.
        #[arg(long, env = "GRAPES_SEED")]
        seed: Option<u64>,
    },
    /// Dataset statistics, plus micro-F1 of a checkpoint when one is given.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// full-batch, greedy or sampled; defaults to the checkpoint's mode.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Train several samplers over several seeds and tabulate test micro-F1.
    Compare {
        /// Comma-separated sampler names.
        #[arg(long, value_delimiter = ',', required = true)]
        samplers: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated seeds, or a half-open range `a..b`.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// TOML file with training hyperparameters (the keys of a run's `[train]` table).
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entropy and sampled-label summaries of a finished run.
    Diagnostics {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Core(grapes_core::Error),
    Usage(String),
}

impl From<grapes_core::Error> for CliError {
    fn from(e: grapes_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn record(&self) -> Value {
        let (kind, message) = match self {
            CliError::Core(e) => (e.kind(), e.to_string()),
            CliError::Usage(m) => ("usage", m.clone()),
        };
        json!({ "error": { "kind": kind, "message": message } })
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(grapes_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", CliError::Usage(msg.trim_end().to_owned()).record());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Core(_) => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli) -> CliResult<String> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::GenerateSynthetic {
            n,
            seed,
            out,
            train_frac,
            val_frac,
        } => generate(n, seed, &out, train_frac, val_frac),
        Command::Train { config, seed } => train(&config, seed),
        Command::Evaluate {
            data,
            checkpoint,
            split,
            mode,
        } => evaluate(&data, checkpoint.as_deref(), &split, mode.as_deref()),
        Command::Compare {
            samplers,
            data,
            seeds,
            train_config,
            out,
        } => compare(&samplers, &data, &seeds, train_config.as_deref(), &out),
        Command::Diagnostics { run } => diagnostics(&run),
    }
}

fn generate(n: usize, seed: u64, out: &Path, train_frac: f64, val_frac: f64) -> CliResult<String> {
    if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac) || train_frac + val_frac > 1.0 {
        return Err(CliError::Usage("split fractions must lie in [0, 1] and sum to at most 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = generate_matched(n, &mut rng)?;
    let data = inst.to_dataset(Splits::random(n, train_frac, val_frac, &mut rng))?;
    save_dataset(out, &data)?;
    Ok(json!({
        "out": out,
        "num_nodes": n,
        "num_edges": data.graph.num_edges(),
        "edge_homophily": edge_homophily(&data.graph, &data.labels)?,
    })
    .to_string())
}

fn parse_mode(s: &str) -> CliResult<EvalMode> {
    match s {
        "full-batch" => Ok(EvalMode::FullBatch),
        "greedy" => Ok(EvalMode::Greedy),
        "sampled" => Ok(EvalMode::Sampled),
        _ => Err(CliError::Usage(format!("unknown evaluation mode {s:?}; expected full-batch, greedy or sampled"))),
    }
}

fn split_nodes<'a>(data: &'a Dataset, split: &str) -> CliResult<&'a [usize]> {
    match split {
        "train" => Ok(&data.splits.train),
        "val" => Ok(&data.splits.val),
        "test" => Ok(&data.splits.test),
        _ => Err(CliError::Usage(format!("unknown split {split:?}; expected train, val or test"))),
    }
}

/// Trains `epochs` epochs, writing metrics (and optionally trajectories); returns the trainer.
fn train_run(
    config: TrainConfig,
    sampler: SamplerChoice,
    data: &Dataset,
    metrics: &Path,
    trajectories: Option<&Path>,
) -> CliResult<Trainer> {
    let mut trainer = Trainer::new(config, data, sampler)?;
    let header = MetricsHeader {
        sampler,
        config: trainer.config().clone(),
        num_nodes: data.graph.num_nodes(),
        num_train: data.splits.train.len(),
    };
    let mut sink = MetricsSink::create(metrics, header)?;
    let mut dump = trajectories.map(JsonLines::create).transpose()?;
    for epoch in 0..trainer.config().epochs {
        let report = match dump.as_mut() {
            Some(lines) => trainer.train_epoch_observed(data, &mut |batch, traj| {
                lines.write(&TrajectoryRecord::new(epoch, batch, traj))
            })?,
            None => trainer.train_epoch(data)?,
        };
        sink.write_epoch(&report)?;
    }
    Ok(trainer)
}

fn f1_or_null(trainer: &Trainer, data: &Dataset, nodes: &[usize]) -> CliResult<Value> {
    if nodes.is_empty() {
        return Ok(Value::Null);
    }
    Ok(json!(trainer.evaluate(data, nodes)?))
}

fn train(config_path: &Path, seed: Option<u64>) -> CliResult<String> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let data = load_dataset(&cfg.data)?;
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    let trajectories = cfg.dump_trajectories.then(|| cfg.out.join("trajectories.jsonl"));
    let trainer = train_run(
        cfg.train.clone(),
        cfg.sampler,
        &data,
        &cfg.out.join("metrics.jsonl"),
        trajectories.as_deref(),
    )?;
    Checkpoint::from_trainer(cfg.sampler, &trainer).save(cfg.out.join("checkpoint.txt"))?;

    let mut resolved = cfg.clone();
    resolved.data = fs::canonicalize(&cfg.data).map_err(|e| io_err(&cfg.data, e))?;
    resolved.out = PathBuf::from(".");
    resolved.train = trainer.config().clone();
    let run_toml = cfg.out.join("run.toml");
    fs::write(&run_toml, resolved.to_toml()).map_err(|e| io_err(&run_toml, e))?;

    let result = json!({
        "sampler": cfg.sampler.as_str(),
        "epochs": trainer.epochs_done(),
        "val_f1": f1_or_null(&trainer, &data, &data.splits.val)?,
        "test_f1": f1_or_null(&trainer, &data, &data.splits.test)?,
    });
    let path = cfg.out.join("result.json");
    fs::write(&path, format!("{result}\n")).map_err(|e| io_err(&path, e))?;
    Ok(result.to_string())
}

fn evaluate(data_dir: &Path, checkpoint: Option<&Path>, split: &str, mode: Option<&str>) -> CliResult<String> {
    let data = load_dataset(data_dir)?;
    let nodes = split_nodes(&data, split)?;
    let mut out = json!({
        "num_nodes": data.graph.num_nodes(),
        "num_edges": data.graph.num_edges(),
        "edge_homophily": edge_homophily(&data.graph, &data.labels)?,
    });
    if let Some(path) = checkpoint {
        let trainer = Checkpoint::load(path)?.restore(&data)?;
        let mode = mode.map(parse_mode).transpose()?.unwrap_or(trainer.config().eval_mode);
        out["split"] = json!(split);
        out["micro_f1"] = json!(trainer.evaluate_with(&data, nodes, mode)?);
    } else if mode.is_some() {
        return Err(CliError::Usage("--mode needs --checkpoint".into()));
    }
    Ok(out.to_string())
}

fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::Usage(format!("cannot parse seeds {s:?}; use 1,2,3 or 0..5"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn compare(
    samplers: &[String],
    data_dir: &Path,
    seeds: &str,
    train_config: Option<&Path>,
    out: &Path,
) -> CliResult<String> {
    let samplers = samplers
        .iter()
        .map(|s| SamplerChoice::parse(s.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let seeds = parse_seeds(seeds)?;
    let base = match train_config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            toml::from_str::<TrainConfig>(&text).map_err(|e| {
                CliError::Core(grapes_core::Error::Parse {
                    path: path.to_path_buf(),
                    line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
                    message: e.message().to_owned(),
                })
            })?
        }
        None => TrainConfig::default(),
    };
    let data = load_dataset(data_dir)?;
    if data.splits.test.is_empty() {
        return Err(CliError::Core(grapes_core::Error::EmptyInput("test split")));
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let cells: Vec<(SamplerChoice, u64)> = samplers
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let scores = cells
        .par_iter()
        .map(|&(sampler, seed)| {
            let cfg = TrainConfig { seed, ..base.clone() };
            let metrics = out.join(format!("{}-seed{seed}.jsonl", sampler.as_str()));
            let trainer = train_run(cfg, sampler, &data, &metrics, None)?;
            Ok(trainer.evaluate(&data, &data.splits.test)?)
        })
        .collect::<CliResult<Vec<f64>>>()?;

    let mut table = String::from("sampler\tmean_test_f1\tstd_test_f1\truns\n");
    let mut summary = Vec::new();
    for (i, sampler) in samplers.iter().enumerate() {
        let xs = &scores[i * seeds.len()..(i + 1) * seeds.len()];
        let (mean, std) = mean_std(xs);
        table.push_str(&format!("{}\t{mean:.4}\t{std:.4}\t{}\n", sampler.as_str(), xs.len()));
        summary.push(json!({ "sampler": sampler.as_str(), "mean": mean, "std": std, "test_f1": xs }));
    }
    let path = out.join("summary.tsv");
    fs::write(&path, &table).map_err(|e| io_err(&path, e))?;
    eprint!("{table}");
    Ok(json!({ "summary": summary }).to_string())
}

fn diagnostics(run: &Path) -> CliResult<String> {
    let (header, epochs) = read_metrics(run.join("metrics.jsonl"))?;
    let layers = header.config.num_layers;
    let entropy: Vec<Value> = (0..layers)
        .map(|l| {
            let series: Vec<Option<f64>> = epochs.iter().map(|e| e.entropy.get(l).copied().flatten().map(|h| h.mean)).collect();
            json!({
                "layer": l + 1,
                "first": series.first().copied().flatten(),
                "last": series.last().copied().flatten(),
                "min": series.iter().flatten().copied().reduce(f64::min),
            })
        })
        .collect();
    let mut out = json!({
        "sampler": header.sampler.as_str(),
        "epochs": epochs.len(),
        "entropy": entropy,
        "max_batch_nodes": epochs.iter().map(|e| e.max_batch_nodes).max(),
        "final_val_f1": epochs.last().and_then(|e| e.val_f1),
    });

    let traj_path = run.join("trajectories.jsonl");
    let run_toml = run.join("run.toml");
    if traj_path.exists() && run_toml.exists() {
        let cfg = RunConfig::load(&run_toml)?;
        let data = load_dataset(&cfg.data)?;
        let records: Vec<TrajectoryRecord> = read_json_lines(&traj_path)?;
        let last = records.iter().map(|r| r.epoch).max();
        let mut diff = vec![0.0; data.labels.num_classes()];
        let mut count = 0usize;
        for r in records.iter().filter(|r| Some(r.epoch) == last) {
            let mut sets = vec![r.targets.clone()];
            for layer in &r.layers {
                let mut set = r.targets.clone();
                set.extend(&layer.selected);
                sets.push(set);
            }
            let sub = SampledSubgraph::new(&data.graph, sets)?;
            for (d, x) in diff.iter_mut().zip(label_distribution_diff(&sub, &data.labels)) {
                *d += x;
            }
            count += 1;
        }
        if count > 0 {
            diff.iter_mut().for_each(|d| *d /= count as f64);
            out["label_distribution_diff"] = json!(diff);
        }
    }
    Ok(out.to_string())
}

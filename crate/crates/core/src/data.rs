//! Dataset, split and run-configuration files, plus metrics emission.
//!
//! A dataset directory holds `nodes.csv` (an `id` column, a label column, a
//! sensitive column, then one column per feature), `edges.csv` (`src,dst`)
//! and optionally `split_train.txt`, `split_val.txt` and `split_test.txt`
//! with one node index per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, Split};
use crate::metrics::EvalReport;
use crate::model::{EpochRecord, ModelParams, TrainConfig};
use crate::tensor::DenseMatrix;

pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const METRICS_HEADER: [&str; 8] = ["epoch", "loss", "acc", "f1", "auc", "dp", "eo", "sim"];

const SPLIT_FILES: [(Split, &str); 3] = [
    (Split::Train, "split_train.txt"),
    (Split::Val, "split_val.txt"),
    (Split::Test, "split_test.txt"),
];

/// Where a dataset lives and how to read it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDescriptor {
    pub dir: PathBuf,
    pub id_column: String,
    pub label_column: String,
    pub sensitive_column: String,
    /// Min-max scale every feature column to `[0, 1]`.
    pub normalize: bool,
    /// Fallback split when no split files exist, as per-class fractions.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl DatasetDescriptor {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            id_column: "id".into(),
            label_column: "label".into(),
            sensitive_column: "sens".into(),
            normalize: true,
            train_fraction: 0.5,
            val_fraction: 0.25,
        }
    }

    fn validate(&self) -> Result<()> {
        let (t, v) = (self.train_fraction, self.val_fraction);
        if !(t > 0.0 && v >= 0.0 && t + v < 1.0) {
            return Err(Error::Config(format!(
                "split fractions need train > 0, val >= 0 and train + val < 1, got {t} and {v}"
            )));
        }
        Ok(())
    }

    pub fn has_split_files(&self) -> bool {
        SPLIT_FILES.iter().any(|(_, f)| self.dir.join(f).exists())
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, column: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("line {line}: column {column} has unparsable value {raw:?}")))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn binary(path: &Path, what: &'static str, index: usize, raw: &str) -> Result<u8> {
    let value: i64 = parse_field(path, index + 2, what, raw)?;
    match value {
        0 | 1 => Ok(value as u8),
        _ => Err(Error::NonBinary { what, index, value }),
    }
}

/// Reads a dataset directory into a graph. Split tags are all `Split::None`;
/// see [`load_or_make_splits`].
pub fn load_dataset(desc: &DatasetDescriptor) -> Result<AttributedGraph> {
    let nodes_path = desc.dir.join(NODES_FILE);
    let mut reader = csv_reader(&nodes_path)?;
    let header = reader
        .headers()
        .map_err(|e| Error::parse(&nodes_path, e.to_string()))?
        .clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(&nodes_path, format!("missing column {name:?}")))
    };
    let (id_col, label_col, sens_col) = (find(&desc.id_column)?, find(&desc.label_column)?, find(&desc.sensitive_column)?);
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|c| ![id_col, label_col, sens_col].contains(c))
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::parse(&nodes_path, "no feature columns"));
    }

    let mut rows: Vec<(usize, u8, u8, Vec<f64>)> = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(&nodes_path, e.to_string()))?;
        let id: usize = parse_field(&nodes_path, index + 2, &desc.id_column, &record[id_col])?;
        let label = binary(&nodes_path, "label", index, &record[label_col])?;
        let sens = binary(&nodes_path, "sensitive attribute", index, &record[sens_col])?;
        let feats = feature_cols
            .iter()
            .map(|&c| parse_field::<f64>(&nodes_path, index + 2, &header[c], &record[c]))
            .collect::<Result<Vec<_>>>()?;
        if feats.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(&nodes_path, format!("line {}: non-finite feature", index + 2)));
        }
        rows.push((id, label, sens, feats));
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    rows.sort_by_key(|r| r.0);
    if let Some((pos, r)) = rows.iter().enumerate().find(|(pos, r)| r.0 != *pos) {
        return Err(Error::parse(
            &nodes_path,
            format!("node ids must be exactly 0..{n}; found {} at sorted position {pos}", r.0),
        ));
    }
    let d = feature_cols.len();
    let mut features = DenseMatrix::from_fn(n, d, |i, j| rows[i].3[j]);
    if desc.normalize {
        features = min_max_normalize(&features);
    }
    let labels = rows.iter().map(|r| r.1).collect();
    let sensitive = rows.iter().map(|r| r.2).collect();

    let edges_path = desc.dir.join(EDGES_FILE);
    let mut reader = csv_reader(&edges_path)?;
    let mut edges = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(&edges_path, e.to_string()))?;
        if record.len() != 2 {
            return Err(Error::parse(&edges_path, format!("line {}: expected src,dst", index + 2)));
        }
        let a: usize = parse_field(&edges_path, index + 2, "src", &record[0])?;
        let b: usize = parse_field(&edges_path, index + 2, "dst", &record[1])?;
        edges.push((a, b));
    }
    AttributedGraph::new(n, edges, features, labels, sensitive, vec![Split::None; n])
}

/// Scales each column to `[0, 1]`; constant columns become 0. Idempotent.
pub fn min_max_normalize(x: &DenseMatrix) -> DenseMatrix {
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..x.cols())
        .map(|j| {
            (0..x.rows()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                (lo.min(x[(i, j)]), hi.max(x[(i, j)]))
            })
        })
        .unzip();
    DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
        let span = hi[j] - lo[j];
        if span > 0.0 {
            (x[(i, j)] - lo[j]) / span
        } else {
            0.0
        }
    })
}

fn read_index_file(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (line, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let i: usize = parse_field(path, line + 1, "index", raw)?;
        if i >= n {
            return Err(Error::parse(path, format!("line {}: index {i} out of range for {n} nodes", line + 1)));
        }
        out.push(i);
    }
    Ok(out)
}

/// Split tags from the dataset's split files when any exist, otherwise a
/// label-stratified random split seeded by `seed`.
pub fn load_or_make_splits(desc: &DatasetDescriptor, graph: &AttributedGraph, seed: u64) -> Result<Vec<Split>> {
    desc.validate()?;
    let n = graph.num_nodes();
    if !desc.has_split_files() {
        return Ok(stratified_split(graph.labels(), desc.train_fraction, desc.val_fraction, seed));
    }
    let mut split = vec![Split::None; n];
    for (tag, name) in SPLIT_FILES {
        let path = desc.dir.join(name);
        if !path.exists() {
            continue;
        }
        for i in read_index_file(&path, n)? {
            if split[i] != Split::None {
                return Err(Error::parse(&path, format!("node {i} appears in more than one split")));
            }
            split[i] = tag;
        }
    }
    Ok(split)
}

/// Per-class shuffle, then the first `round(train_fraction · n_c)` go to
/// training and the next `round(val_fraction · n_c)` to validation.
pub fn stratified_split(labels: &[u8], train_fraction: f64, val_fraction: f64, seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = vec![Split::Test; labels.len()];
    let classes: BTreeSet<u8> = labels.iter().copied().collect();
    for c in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_train = (train_fraction * members.len() as f64).round() as usize;
        let n_val = ((val_fraction * members.len() as f64).round() as usize).min(members.len() - n_train);
        for (rank, &i) in members.iter().enumerate() {
            if rank < n_train {
                split[i] = Split::Train;
            } else if rank < n_train + n_val {
                split[i] = Split::Val;
            }
        }
    }
    split
}

/// Writes `graph` in the dataset directory layout, including split files for tagged nodes.
pub fn dump_dataset(graph: &AttributedGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nodes_path = dir.join(NODES_FILE);
    let mut header = vec!["id".to_string(), "label".to_string(), "sens".to_string()];
    header.extend((0..graph.feature_dim()).map(|j| format!("x{j}")));
    let rows = (0..graph.num_nodes()).map(|i| {
        let mut row = vec![i.to_string(), graph.labels()[i].to_string(), graph.sensitive()[i].to_string()];
        row.extend(graph.features().row(i).iter().map(f64::to_string));
        row
    });
    write_table(&nodes_path, &header, rows)?;
    let edges = graph.edges().iter().map(|&(a, b)| vec![a.to_string(), b.to_string()]);
    write_table(&dir.join(EDGES_FILE), &["src", "dst"], edges)?;
    for (tag, name) in SPLIT_FILES {
        let members = graph.mask(tag);
        if members.is_empty() {
            continue;
        }
        let text: String = members.iter().map(|i| format!("{i}\n")).collect();
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Writes a CSV with the given header, creating parent directories.
pub fn write_table<H, R, C>(path: &Path, header: &[H], rows: R) -> Result<()>
where
    H: AsRef<str>,
    R: IntoIterator<Item = Vec<C>>,
    C: AsRef<str>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header.iter().map(AsRef::as_ref)).map_err(to_err)?;
    for row in rows {
        w.write_record(row.iter().map(AsRef::as_ref)).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-epoch CSV; the metric columns are test-split values.
pub fn write_metrics_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    let rows = records.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            r.loss.to_string(),
            r.test.accuracy.to_string(),
            r.test.f1.to_string(),
            r.test.auc.to_string(),
            r.test.delta_dp.to_string(),
            r.test.delta_eo.to_string(),
            r.sim.to_string(),
        ]
    });
    write_table(path, &METRICS_HEADER, rows)
}

/// One row of a metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
    pub f1: f64,
    pub auc: f64,
    pub dp: f64,
    pub eo: f64,
    pub sim: f64,
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::parse(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let f = |c: usize| parse_field::<f64>(path, line + 2, METRICS_HEADER[c], &record[c]);
        out.push(MetricsRow {
            epoch: parse_field(path, line + 2, "epoch", &record[0])?,
            loss: f(1)?,
            acc: f(2)?,
            f1: f(3)?,
            auc: f(4)?,
            dp: f(5)?,
            eo: f(6)?,
            sim: f(7)?,
        });
    }
    Ok(out)
}

/// Mean and population standard deviation of one metric across repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// `(mean, population std)`; NaN for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates test reports in percent, the scale results are usually quoted in.
pub fn summarize(reports: &[EvalReport]) -> Vec<SummaryRow> {
    let metrics: [(&str, fn(&EvalReport) -> f64); 5] = [
        ("acc", |r| r.accuracy),
        ("f1", |r| r.f1),
        ("auc", |r| r.auc),
        ("dp", |r| r.delta_dp),
        ("eo", |r| r.delta_eo),
    ];
    metrics
        .iter()
        .map(|(name, get)| {
            let values: Vec<f64> = reports.iter().map(|r| 100.0 * get(r)).collect();
            let (mean, std) = mean_std(&values);
            SummaryRow {
                metric: name.to_string(),
                mean,
                std,
                runs: reports.len(),
            }
        })
        .collect()
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let body = rows.iter().map(|r| {
        vec![
            r.metric.clone(),
            r.mean.to_string(),
            r.std.to_string(),
            r.runs.to_string(),
            format!("{:.2} ± {:.2}", r.mean, r.std),
        ]
    });
    write_table(path, &["metric", "mean", "std", "runs", "formatted"], body)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv_reader(path)?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        out.push(SummaryRow {
            metric: record[0].to_string(),
            mean: parse_field(path, line + 2, "mean", &record[1])?,
            std: parse_field(path, line + 2, "std", &record[2])?,
            runs: parse_field(path, line + 2, "runs", &record[3])?,
        });
    }
    Ok(out)
}

/// Trained parameters plus what is needed to replay the selected epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub seed: u64,
    pub best_epoch: usize,
    pub params: ModelParams,
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string(model).map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: SavedModel = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    if !model.params.is_finite() {
        return Err(Error::parse(path, "parameters contain non-finite values"));
    }
    Ok(model)
}

/// Settings for the random bound-check instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheorySettings {
    pub instances: usize,
    pub nodes: usize,
    pub features: usize,
    pub edge_prob: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TheorySettings {
    fn default() -> Self {
        Self {
            instances: 100,
            nodes: 20,
            features: 4,
            edge_prob: 0.3,
            alpha: 1.0,
            seed: 0,
        }
    }
}

/// Everything a run needs, read from flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetDescriptor,
    /// Whether `dataset.path` was given at all.
    pub has_dataset: bool,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub repetitions: usize,
    pub output_dir: PathBuf,
    pub theory: TheorySettings,
    /// Node pairs written by the similarity dump.
    pub dump_pairs: usize,
    /// `sweep.<key>` grids: key to deduplicated values in first-seen order.
    pub sweep: BTreeMap<String, Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetDescriptor::new(""),
            has_dataset: false,
            split_seed: 0,
            train: TrainConfig::default(),
            repetitions: 5,
            output_dir: PathBuf::from("runs"),
            theory: TheorySettings::default(),
            dump_pairs: 200,
            sweep: BTreeMap::new(),
        }
    }
}

fn enum_value<T: DeserializeOwned>(key: &str, raw: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(raw.to_string()))
        .map_err(|_| Error::Config(format!("{key}: unknown value {raw:?}")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("enum did not serialize to a string: {other:?}"),
    }
}

fn number<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {raw:?}")))
}

fn boolean(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {raw:?}"))),
    }
}

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`], in manifest order.
    pub const KEYS: [&'static str; 37] = [
        "dataset.path",
        "dataset.id_column",
        "dataset.label_column",
        "dataset.sensitive_column",
        "dataset.normalize",
        "split.train_fraction",
        "split.val_fraction",
        "split.seed",
        "train.lr",
        "train.weight_decay",
        "train.epochs",
        "train.seed",
        "train.hidden",
        "train.mlp_layers",
        "train.loss",
        "train.ablation",
        "train.reduction",
        "propagation.variant",
        "propagation.backbone",
        "propagation.layers",
        "propagation.lambda_s",
        "propagation.lambda_f",
        "propagation.alpha",
        "propagation.kernel_grad",
        "propagation.gin_epsilon",
        "propagation.sample_size",
        "propagation.smooth",
        "propagation.gat_slope",
        "repetitions",
        "output.dir",
        "theory.instances",
        "theory.nodes",
        "theory.features",
        "theory.edge_prob",
        "theory.alpha",
        "theory.seed",
        "dump.pairs",
    ];

    /// Parses config text over the defaults. Later lines win.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", line_no + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(detail) => Error::Config(format!("{}: {detail}", path.display())),
            other => other,
        })
    }

    /// Applies `key=value` overrides, then revalidates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(inner) = key.strip_prefix("sweep.") {
            let mut probe = self.clone();
            let mut values: Vec<String> = Vec::new();
            for v in value.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                probe.set(inner, v)?;
                if !values.iter().any(|seen| seen == v) {
                    values.push(v.to_string());
                }
            }
            if inner.starts_with("sweep.") || matches!(inner, "dataset.path" | "output.dir") {
                return Err(Error::Config(format!("{key}: cannot sweep over {inner}")));
            }
            if values.is_empty() {
                return Err(Error::Config(format!("{key}: empty grid")));
            }
            self.sweep.insert(inner.to_string(), values);
            return Ok(());
        }
        let t = &mut self.train;
        let p = &mut t.propagation;
        match key {
            "dataset.path" => {
                self.dataset.dir = PathBuf::from(value);
                self.has_dataset = !value.is_empty();
            }
            "dataset.id_column" => self.dataset.id_column = value.to_string(),
            "dataset.label_column" => self.dataset.label_column = value.to_string(),
            "dataset.sensitive_column" => self.dataset.sensitive_column = value.to_string(),
            "dataset.normalize" => self.dataset.normalize = boolean(key, value)?,
            "split.train_fraction" => self.dataset.train_fraction = number(key, value)?,
            "split.val_fraction" => self.dataset.val_fraction = number(key, value)?,
            "split.seed" => self.split_seed = number(key, value)?,
            "train.lr" => t.lr = number(key, value)?,
            "train.weight_decay" => t.weight_decay = number(key, value)?,
            "train.epochs" => t.epochs = number(key, value)?,
            "train.seed" => t.seed = number(key, value)?,
            "train.hidden" => t.hidden = number(key, value)?,
            "train.mlp_layers" => t.mlp_layers = number(key, value)?,
            "train.loss" => t.loss = enum_value(key, value)?,
            "train.ablation" => t.ablation = enum_value(key, value)?,
            "train.reduction" => t.reduction = enum_value(key, value)?,
            "propagation.variant" => p.variant = enum_value(key, value)?,
            "propagation.backbone" => p.backbone = enum_value(key, value)?,
            "propagation.layers" => p.layers = number(key, value)?,
            "propagation.lambda_s" => p.lambda_s = number(key, value)?,
            "propagation.lambda_f" => p.lambda_f = number(key, value)?,
            "propagation.alpha" => p.alpha = number(key, value)?,
            "propagation.kernel_grad" => p.kernel_grad = enum_value(key, value)?,
            "propagation.gin_epsilon" => p.gin_epsilon = number(key, value)?,
            "propagation.sample_size" => p.sample_size = number(key, value)?,
            "propagation.smooth" => p.smooth = boolean(key, value)?,
            "propagation.gat_slope" => p.gat_slope = number(key, value)?,
            "repetitions" => self.repetitions = number(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            "theory.instances" => self.theory.instances = number(key, value)?,
            "theory.nodes" => self.theory.nodes = number(key, value)?,
            "theory.features" => self.theory.features = number(key, value)?,
            "theory.edge_prob" => self.theory.edge_prob = number(key, value)?,
            "theory.alpha" => self.theory.alpha = number(key, value)?,
            "theory.seed" => self.theory.seed = number(key, value)?,
            "dump.pairs" => self.dump_pairs = number(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of a key, formatted so that `set` reads it back unchanged.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let p = &t.propagation;
        let th = &self.theory;
        let v = match key {
            "dataset.path" => self.dataset.dir.display().to_string(),
            "dataset.id_column" => self.dataset.id_column.clone(),
            "dataset.label_column" => self.dataset.label_column.clone(),
            "dataset.sensitive_column" => self.dataset.sensitive_column.clone(),
            "dataset.normalize" => self.dataset.normalize.to_string(),
            "split.train_fraction" => self.dataset.train_fraction.to_string(),
            "split.val_fraction" => self.dataset.val_fraction.to_string(),
            "split.seed" => self.split_seed.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.weight_decay" => t.weight_decay.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.hidden" => t.hidden.to_string(),
            "train.mlp_layers" => t.mlp_layers.to_string(),
            "train.loss" => enum_name(&t.loss),
            "train.ablation" => enum_name(&t.ablation),
            "train.reduction" => enum_name(&t.reduction),
            "propagation.variant" => enum_name(&p.variant),
            "propagation.backbone" => enum_name(&p.backbone),
            "propagation.layers" => p.layers.to_string(),
            "propagation.lambda_s" => p.lambda_s.to_string(),
            "propagation.lambda_f" => p.lambda_f.to_string(),
            "propagation.alpha" => p.alpha.to_string(),
            "propagation.kernel_grad" => enum_name(&p.kernel_grad),
            "propagation.gin_epsilon" => p.gin_epsilon.to_string(),
            "propagation.sample_size" => p.sample_size.to_string(),
            "propagation.smooth" => p.smooth.to_string(),
            "propagation.gat_slope" => p.gat_slope.to_string(),
            "repetitions" => self.repetitions.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            "theory.instances" => th.instances.to_string(),
            "theory.nodes" => th.nodes.to_string(),
            "theory.features" => th.features.to_string(),
            "theory.edge_prob" => th.edge_prob.to_string(),
            "theory.alpha" => th.alpha.to_string(),
            "theory.seed" => th.seed.to_string(),
            "dump.pairs" => self.dump_pairs.to_string(),
            _ => return None,
        };
        Some(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        let th = &self.theory;
        if th.nodes < 2 || th.features == 0 {
            return Err(Error::Config("theory.nodes must be >= 2 and theory.features >= 1".into()));
        }
        if !(th.edge_prob > 0.0 && th.edge_prob <= 1.0) {
            return Err(Error::Config(format!("theory.edge_prob must lie in (0, 1], got {}", th.edge_prob)));
        }
        if !(th.alpha > 0.0 && th.alpha.is_finite()) {
            return Err(Error::Config(format!("theory.alpha must be positive, got {}", th.alpha)));
        }
        Ok(())
    }

    /// All resolved values as config text; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let v = self.get(key).expect("listed key");
            if key == "dataset.path" && !self.has_dataset {
                continue;
            }
            out.push_str(&format!("{key} = {v}\n"));
        }
        for (key, values) in &self.sweep {
            out.push_str(&format!("sweep.{key} = {}\n", values.join(", ")));
        }
        out
    }

    /// Cartesian product of the sweep grids, as lists of `(key, value)` assignments.
    /// An empty grid yields one empty assignment.
    pub fn grid_points(&self) -> Vec<Vec<(String, String)>> {
        let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (key, values) in &self.sweep {
            points = points
                .into_iter()
                .flat_map(|base| {
                    values.iter().map(move |v| {
                        let mut next = base.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        points
    }

    /// Loads the configured dataset with its splits applied.
    pub fn load_graph(&self) -> Result<AttributedGraph> {
        if !self.has_dataset {
            return Err(Error::Config("dataset.path is not set".into()));
        }
        let graph = load_dataset(&self.dataset)?;
        let split = load_or_make_splits(&self.dataset, &graph, self.split_seed)?;
        graph.with_split(split)
    }
}

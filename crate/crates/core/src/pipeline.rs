//! Experiment orchestration: encoder training, frozen-encoder decoding,
//! metric logs, grid sweeps, timing and histogram export.
//!
//! In the inductive setting the encoder is trained on the subgraph induced
//! by the observed nodes (relabeled to `0..k`), so unobserved nodes never
//! enter training. Test embeddings come from the frozen encoder run over
//! training plus inference edges on all nodes.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{canonical, load_dataset, FeatureMatrix, Graph};
use crate::linkpred::{
    evaluate, hits_at_k, similarity_histogram, train_decoder, BucketMetrics, DecoderConfig, DecoderMlp, DecoderTask,
    HistBin, ScoredEdge, DECODER_HIDDEN, HITS_K,
};
use crate::methods::{train, EpochRecord, Method, TrainConfig, TrainData, TrainOutput, View, PAPER_SSL_EPOCHS};
use crate::nn::GcnEncoder;
use crate::params::ParamSet;
use crate::rng::{derive_seed, stream, tag};
use crate::splits::{inductive_split, transductive_split, Edge, Setting, SplitBundle};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const DEFAULT_SWEEP_CAP: usize = 16;
pub const DEFAULT_FRAC: f64 = 0.3;
pub const DEFAULT_HIST_BINS: usize = 50;

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_frac() -> f64 {
    DEFAULT_FRAC
}

fn default_cap() -> usize {
    DEFAULT_SWEEP_CAP
}

fn default_setting() -> Setting {
    Setting::Transductive
}

/// Frozen-encoder decoder hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSettings {
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
}

impl Default for DecoderSettings {
    fn default() -> Self {
        let d = DecoderConfig::default();
        DecoderSettings {
            epochs: d.epochs,
            patience: d.patience,
            lr: d.lr,
            weight_decay: d.weight_decay,
            hidden: DECODER_HIDDEN,
        }
    }
}

impl DecoderSettings {
    fn with_seed(&self, seed: u64) -> DecoderConfig {
        DecoderConfig {
            epochs: self.epochs,
            patience: self.patience,
            lr: self.lr,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

/// One experiment: dataset, split, method, overrides, grid and seeds.
///
/// `train` and `grid` keys name [`TrainConfig`] fields; nested fields use
/// dots (`"aug1.p_edge"`) or nested objects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Name used in metric records; defaults to the dataset directory name.
    #[serde(default)]
    pub dataset_name: Option<String>,
    pub method: Method,
    #[serde(default = "default_setting")]
    pub setting: Setting,
    #[serde(default = "default_frac")]
    pub frac: f64,
    /// Split file to use; generated from `split_seed` when absent.
    #[serde(default)]
    pub split: Option<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub train: Map<String, Value>,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<Value>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_cap")]
    pub sweep_cap: usize,
    #[serde(default)]
    pub decoder: DecoderSettings,
    /// Default SSL epochs become 10,000 instead of 2,000.
    #[serde(default)]
    pub paper_epochs: bool,
}

/// Grid assignment: `(key, value)` pairs in key order.
pub type Cell = Vec<(String, Value)>;

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, method: Method) -> Self {
        RunConfig {
            dataset: dataset.into(),
            dataset_name: None,
            method,
            setting: Setting::Transductive,
            frac: DEFAULT_FRAC,
            split: None,
            split_seed: 0,
            train: Map::new(),
            grid: BTreeMap::new(),
            seeds: default_seeds(),
            sweep_cap: DEFAULT_SWEEP_CAP,
            decoder: DecoderSettings::default(),
            paper_epochs: false,
        }
    }

    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.dataset.is_relative() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        if let Some(s) = &mut cfg.split {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn dataset_name(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| {
            self.dataset
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    /// Cross product of the grid, in key order. Errors above `sweep_cap`.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut cells: Vec<Cell> = vec![Vec::new()];
        for (key, values) in &self.grid {
            if values.is_empty() {
                return Err(Error::Config(format!("grid key {key:?} has no values")));
            }
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        if cells.len() > self.sweep_cap {
            return Err(Error::Config(format!("grid has {} cells, cap is {}", cells.len(), self.sweep_cap)));
        }
        Ok(cells)
    }

    /// Method defaults, then `train` overrides, then the cell, then `seed`.
    pub fn train_config(&self, cell: &[(String, Value)], seed: u64) -> Result<TrainConfig> {
        let mut base = TrainConfig::for_method(self.method);
        if self.paper_epochs && !self.method.is_supervised() {
            base.epochs = PAPER_SSL_EPOCHS;
        }
        let mut v = serde_json::to_value(&base)?;
        for (k, x) in self.train.iter().chain(cell.iter().map(|(k, x)| (k, x))) {
            if k == "method" || k == "seed" {
                return Err(Error::Config(format!("{k:?} cannot be overridden here")));
            }
            set_path(&mut v, k, x.clone())?;
        }
        let mut cfg: TrainConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Identifies everything that determines a run except its seed.
    pub fn config_hash(&self, cfg: &TrainConfig) -> Result<String> {
        #[derive(Serialize)]
        struct Key<'a> {
            dataset: String,
            setting: Setting,
            frac: f64,
            split: Option<&'a Path>,
            split_seed: u64,
            train: TrainConfig,
            decoder: DecoderSettings,
        }
        let key = Key {
            dataset: self.dataset_name(),
            setting: self.setting,
            frac: self.frac,
            split: self.split.as_deref(),
            split_seed: self.split_seed,
            train: TrainConfig { seed: 0, ..cfg.clone() },
            decoder: self.decoder,
        };
        let digest = Sha256::digest(serde_json::to_vec(&key)?);
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Sets a dotted `key` inside `root`. Unknown keys are errors; objects merge.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let unknown = || Error::Config(format!("unknown config key {key:?}"));
    let mut cur = root;
    let mut parts = key.split('.').peekable();
    while let Some(p) = parts.next() {
        let obj = cur.as_object_mut().ok_or_else(unknown)?;
        let slot = obj.get_mut(p).ok_or_else(unknown)?;
        if parts.peek().is_none() {
            match value {
                Value::Object(m) if slot.is_object() => {
                    for (k, v) in m {
                        set_path(slot, &k, v)?;
                    }
                }
                v => *slot = v,
            }
            return Ok(());
        }
        cur = slot;
    }
    Err(unknown())
}

/// Loaded dataset plus the split that all runs share.
pub struct Experiment {
    pub name: String,
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub split: SplitBundle,
}

/// Old node id to training id, for the observed-node subgraph.
struct NodeMap {
    new_of_old: Vec<Option<usize>>,
    len: usize,
}

impl NodeMap {
    fn relabel(&self, edges: &[Edge]) -> Result<Vec<Edge>> {
        edges
            .iter()
            .map(|&(u, v)| match (self.new_of_old[u], self.new_of_old[v]) {
                (Some(a), Some(b)) => Ok(canonical(a, b)),
                _ => Err(Error::Split(format!("pair ({u}, {v}) touches an unobserved node"))),
            })
            .collect()
    }
}

impl Experiment {
    pub fn new(name: impl Into<String>, graph: Graph, features: FeatureMatrix, split: SplitBundle) -> Result<Self> {
        if features.rows() != graph.num_nodes() {
            return Err(Error::Dataset(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                graph.num_nodes()
            )));
        }
        split.validate(&graph)?;
        Ok(Experiment {
            name: name.into(),
            graph,
            features,
            split,
        })
    }

    /// Loads the dataset and either the configured split file or a fresh split.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let (graph, features) = load_dataset(&cfg.dataset)?;
        let split = match &cfg.split {
            Some(p) => {
                let s = SplitBundle::load(p)?;
                if s.setting != cfg.setting {
                    return Err(Error::Config(format!("split file is {}, config asks for {}", s.setting, cfg.setting)));
                }
                s
            }
            None => make_split(&graph, cfg.setting, cfg.split_seed, cfg.frac)?,
        };
        Experiment::new(cfg.dataset_name(), graph, features, split)
    }

    fn node_map(&self) -> NodeMap {
        let n = self.graph.num_nodes();
        match self.split.setting {
            Setting::Transductive => NodeMap {
                new_of_old: (0..n).map(Some).collect(),
                len: n,
            },
            Setting::Inductive => {
                let mut new_of_old = vec![None; n];
                for (i, &u) in self.split.observed_nodes.iter().enumerate() {
                    new_of_old[u] = Some(i);
                }
                NodeMap {
                    new_of_old,
                    len: self.split.observed_nodes.len(),
                }
            }
        }
    }

    /// Training message graph with validation pairs, in training ids.
    pub fn training_data(&self) -> Result<TrainData<f32>> {
        let map = self.node_map();
        let g = Graph::from_edges(map.len, map.relabel(&self.split.train)?)?;
        let x = match self.split.setting {
            Setting::Transductive => self.features.clone(),
            Setting::Inductive => self.features.select_rows(&self.split.observed_nodes),
        };
        let valid_pos = map.relabel(&self.split.valid_pos)?;
        let valid_neg = map.relabel(&self.split.valid_neg)?;
        check_message_graph(&g, &[&valid_pos])?;
        Ok(TrainData::new(g, &x)?.with_validation(valid_pos, valid_neg))
    }

    /// Message graph used at test time, in original ids: training edges in
    /// the transductive setting, training plus inference edges otherwise.
    pub fn eval_graph(&self) -> Result<Graph> {
        let g = match self.split.setting {
            Setting::Transductive => self.split.train_graph()?,
            Setting::Inductive => self.split.inference_graph()?,
        };
        check_message_graph(&g, &[&self.split.valid_pos, &self.split.test_pos])?;
        Ok(g)
    }

    /// Frozen-encoder embeddings of every node over [`Self::eval_graph`].
    pub fn eval_embeddings(&self, params: &ParamSet<f32>) -> Result<Tensor<f32>> {
        let view = View::new(&self.eval_graph()?, Arc::new(self.features.to_csr()));
        encode(params, &view)
    }
}

/// Errors if any held-out positive appears in the message graph.
fn check_message_graph(g: &Graph, held_out: &[&[Edge]]) -> Result<()> {
    for set in held_out {
        if let Some(&(u, v)) = set.iter().find(|&&(u, v)| g.has_edge(u, v)) {
            return Err(Error::Split(format!("held-out edge ({u}, {v}) is in the message graph")));
        }
    }
    Ok(())
}

pub fn make_split(g: &Graph, setting: Setting, seed: u64, frac: f64) -> Result<SplitBundle> {
    match setting {
        Setting::Transductive => transductive_split(g, seed),
        Setting::Inductive => inductive_split(g, seed, frac),
    }
}

/// Runs the `enc.*` encoder in `params` over `view`.
pub fn encode(params: &ParamSet<f32>, view: &View<f32>) -> Result<Tensor<f32>> {
    let w1 = params.get("enc.w1")?;
    let enc = GcnEncoder::new("enc", w1.rows(), w1.cols());
    let mut tape = Tape::new();
    let h = enc.forward(&mut tape, params, &view.adj, &view.x, false)?;
    Ok(tape.value(h).clone())
}

pub fn train_encoder(exp: &Experiment, cfg: &TrainConfig) -> Result<TrainOutput<f32>> {
    train(&exp.training_data()?, cfg)
}

/// Outcome of evaluating one encoder.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Encoder plus decoder (`dec.*`) parameters.
    pub params: ParamSet<f32>,
    pub valid_hits: f64,
    pub test: Vec<BucketMetrics>,
    /// Decoder epochs run (0 when the checkpoint already had a decoder).
    pub decoder_epochs: usize,
}

/// Scores the split's test pairs with the encoder in `params`. A decoder is
/// trained on the frozen training embeddings unless `params` already holds
/// one (E2E checkpoints or evaluated ones).
pub fn evaluate_params(exp: &Experiment, params: &ParamSet<f32>, dec: &DecoderSettings, seed: u64) -> Result<Evaluation> {
    let data = exp.training_data()?;
    let h_train = encode(params, &data.full)?;
    let d = h_train.cols();
    let mut params = {
        let mut p = params.subset("enc.");
        p.extend(params.subset("dec."))?;
        p
    };
    let mut decoder_epochs = 0;
    let mlp = if params.contains("dec.w1") {
        DecoderMlp::with_hidden(d, params.get("dec.w1")?.cols())
    } else {
        let mlp = DecoderMlp::with_hidden(d, dec.hidden);
        let mut init = ParamSet::new();
        mlp.init(&mut init, &mut stream(derive_seed(seed, tag::INIT), tag::DECODER))?;
        let task = DecoderTask {
            h: &h_train,
            train_pos: data.graph.edges(),
            valid_pos: &data.valid_pos,
            valid_neg: &data.valid_neg,
        };
        let fit = train_decoder(&mlp, init, &task, &dec.with_seed(seed))?;
        decoder_epochs = fit.epochs_run;
        params.extend(fit.params)?;
        mlp
    };
    let valid_hits = if data.valid_pos.is_empty() || data.valid_neg.is_empty() {
        0.0
    } else {
        hits_at_k(
            &mlp.decode(&params, &h_train, &data.valid_pos)?,
            &mlp.decode(&params, &h_train, &data.valid_neg)?,
            HITS_K,
        )?
    };
    let h_eval = match exp.split.setting {
        Setting::Transductive => h_train,
        Setting::Inductive => exp.eval_embeddings(&params)?,
    };
    let s = &exp.split;
    let pos = mlp.decode(&params, &h_eval, &s.test_pos)?;
    let neg = mlp.decode(&params, &h_eval, &s.test_neg)?;
    let tagged = s.setting == Setting::Inductive;
    let mut scored = Vec::with_capacity(pos.len() + neg.len());
    for (pairs, scores, buckets, positive) in [
        (&s.test_pos, &pos, &s.test_pos_buckets, true),
        (&s.test_neg, &neg, &s.test_neg_buckets, false),
    ] {
        for (i, (&(u, v), &score)) in pairs.iter().zip(scores).enumerate() {
            scored.push(ScoredEdge {
                u,
                v,
                score,
                positive,
                bucket: if tagged { buckets.get(i).copied() } else { None },
            });
        }
    }
    Ok(Evaluation {
        params,
        valid_hits,
        test: evaluate(&scored, HITS_K)?,
        decoder_epochs,
    })
}

/// Positive/negative similarity histogram of the test pairs under the
/// evaluation message graph.
pub fn export_histogram(exp: &Experiment, params: &ParamSet<f32>, bins: usize) -> Result<Vec<HistBin>> {
    let h = exp.eval_embeddings(params)?;
    similarity_histogram(&h, &exp.split.test_pos, &exp.split.test_neg, bins)
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: String,
    pub dataset: String,
    pub setting: String,
    pub bucket: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub config_hash: String,
    pub checkpoint: String,
}

pub const METRIC_VALID_HITS: &str = "valid_hits@50";
pub const METRIC_HITS: &str = "hits@50";
pub const METRIC_AUC: &str = "auc";

/// Records for one evaluated run: validation Hits@50, then Hits@50 and AUC
/// per test bucket.
pub fn records_for(
    exp: &Experiment,
    method: Method,
    seed: u64,
    config_hash: &str,
    checkpoint: &Path,
    eval: &Evaluation,
) -> Vec<MetricRecord> {
    let rec = |bucket: &str, metric: &str, value: f64| MetricRecord {
        method: method.name().into(),
        dataset: exp.name.clone(),
        setting: exp.split.setting.to_string(),
        bucket: bucket.into(),
        seed,
        metric: metric.into(),
        value,
        config_hash: config_hash.into(),
        checkpoint: checkpoint.display().to_string(),
    };
    let mut out = vec![rec("all", METRIC_VALID_HITS, eval.valid_hits)];
    for b in &eval.test {
        out.push(rec(&b.bucket, METRIC_HITS, b.hits));
        out.push(rec(&b.bucket, METRIC_AUC, b.auc));
    }
    out
}

/// Append-only JSON-lines writer; every record is flushed.
pub struct MetricLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricLog {
    pub fn append(path: &Path) -> Result<Self> {
        let f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricLog {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, r: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(r)?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metric_log(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_curve_csv(mut w: impl Write, curve: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,loss,epoch_ms")?;
    for r in curve {
        writeln!(w, "{},{},{:.3}", r.epoch, r.loss, r.epoch_ms)?;
    }
    Ok(())
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub dataset: String,
    pub setting: String,
    pub config_hash: String,
    pub bucket: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Groups records by (config, bucket, metric) in first-seen order.
pub fn summarize(records: &[MetricRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, String, String, String, String)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in records {
        let k = (
            r.method.clone(),
            r.dataset.clone(),
            r.setting.clone(),
            r.config_hash.clone(),
            r.bucket.clone(),
            r.metric.clone(),
        );
        match keys.iter().position(|x| *x == k) {
            Some(i) => values[i].push(r.value),
            None => {
                keys.push(k);
                values.push(vec![r.value]);
            }
        }
    }
    keys.into_iter()
        .zip(values)
        .map(|((method, dataset, setting, config_hash, bucket, metric), v)| {
            let (mean, std) = mean_std(&v);
            SummaryRow {
                method,
                dataset,
                setting,
                config_hash,
                bucket,
                metric,
                mean,
                std,
                n: v.len(),
            }
        })
        .collect()
}

pub fn write_summary_csv(mut w: impl Write, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(w, "method,dataset,setting,config_hash,bucket,metric,mean,std,n,mean_pm_std")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.6},{:.6},{},{:.4} ± {:.4}",
            r.method, r.dataset, r.setting, r.config_hash, r.bucket, r.metric, r.mean, r.std, r.n, r.mean, r.std
        )?;
    }
    Ok(())
}

/// Per-cell result of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub config_hash: String,
    pub overrides: Map<String, Value>,
    pub mean_valid_hits: f64,
    pub mean_test_hits: f64,
    pub std_test_hits: f64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    /// Index into `cells` with the highest mean validation Hits@50.
    pub best: usize,
    pub records: Vec<MetricRecord>,
}

impl SweepReport {
    pub fn best(&self) -> &CellResult {
        &self.cells[self.best]
    }
}

/// Runs every (cell, seed) pair: train the encoder, freeze it, fit the
/// decoder, evaluate, and append metric records. Writes into `out_dir`:
/// `metrics.jsonl`, `summary.csv`, `best.json`, `checkpoints/` and
/// `curves/`. Records already written stay on disk if a later run fails.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path, progress: &mut dyn FnMut(&str)) -> Result<SweepReport> {
    let exp = Experiment::load(cfg)?;
    run_pipeline_on(&exp, cfg, out_dir, progress)
}

pub fn run_pipeline_on(
    exp: &Experiment,
    cfg: &RunConfig,
    out_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<SweepReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let cells = cfg.cells()?;
    let ckpt_dir = out_dir.join("checkpoints");
    let curve_dir = out_dir.join("curves");
    for d in [out_dir, &ckpt_dir, &curve_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let log_path = out_dir.join("metrics.jsonl");
    if log_path.exists() {
        fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
    }
    let mut log = MetricLog::append(&log_path)?;
    let mut records = Vec::new();
    let mut results = Vec::new();
    for cell in &cells {
        let hash = cfg.config_hash(&cfg.train_config(cell, 0)?)?;
        let mut valid = Vec::new();
        let mut test = Vec::new();
        for &seed in &cfg.seeds {
            let tcfg = cfg.train_config(cell, seed)?;
            let out = train_encoder(exp, &tcfg)?;
            let eval = evaluate_params(exp, &out.model.online, &cfg.decoder, seed)?;
            let stem = format!("{hash}-seed{seed}");
            let ckpt = ckpt_dir.join(format!("{stem}.nclp"));
            eval.params.save(&ckpt)?;
            let curve_path = curve_dir.join(format!("{stem}.csv"));
            let f = File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
            write_curve_csv(BufWriter::new(f), &out.curve).map_err(|e| Error::io(&curve_path, e))?;
            for r in records_for(exp, cfg.method, seed, &hash, &ckpt, &eval) {
                log.write(&r)?;
                records.push(r);
            }
            let all = eval.test.iter().find(|b| b.bucket == "all").map_or(f64::NAN, |b| b.hits);
            progress(&format!(
                "{} {hash} seed {seed}: valid hits@50 {:.4}, test hits@50 {all:.4}",
                cfg.method, eval.valid_hits
            ));
            valid.push(eval.valid_hits);
            test.push(all);
        }
        let (mean_test, std_test) = mean_std(&test);
        results.push(CellResult {
            config_hash: hash,
            overrides: cell.iter().cloned().collect(),
            mean_valid_hits: mean_std(&valid).0,
            mean_test_hits: mean_test,
            std_test_hits: std_test,
        });
    }
    let best = (0..results.len())
        .fold(0, |b, i| if results[i].mean_valid_hits > results[b].mean_valid_hits { i } else { b });
    let summary_path = out_dir.join("summary.csv");
    let f = File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    write_summary_csv(BufWriter::new(f), &summarize(&records)).map_err(|e| Error::io(&summary_path, e))?;
    let best_path = out_dir.join("best.json");
    fs::write(&best_path, serde_json::to_string_pretty(&results[best])?).map_err(|e| Error::io(&best_path, e))?;
    Ok(SweepReport {
        cells: results,
        best,
        records,
    })
}

/// Timing of one method, medians over runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: Method,
    pub epochs: usize,
    pub runs: usize,
    pub epoch_ms_median: f64,
    pub epoch_ms_std: f64,
    pub train_ms_median: f64,
    pub train_ms_std: f64,
    pub setup_ms_median: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Trains each method `runs` times for `epochs` epochs (seeds `0..runs`) on
/// the experiment's training graph. Per-run epoch time is the mean over its
/// epochs; setup (initialization) time is reported separately.
pub fn benchmark(exp: &Experiment, base: &RunConfig, methods: &[Method], epochs: usize, runs: usize) -> Result<Vec<BenchRow>> {
    if runs == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one run".into()));
    }
    let data = exp.training_data()?;
    let mut rows = Vec::new();
    for &m in methods {
        let cfg = RunConfig { method: m, ..base.clone() };
        let (mut per_epoch, mut total, mut setup) = (Vec::new(), Vec::new(), Vec::new());
        for run in 0..runs as u64 {
            let mut tcfg = cfg.train_config(&[], run)?;
            tcfg.epochs = epochs;
            let out = train(&data, &tcfg)?;
            let sum: f64 = out.curve.iter().map(|r| r.epoch_ms).sum();
            per_epoch.push(if out.curve.is_empty() { 0.0 } else { sum / out.curve.len() as f64 });
            total.push(sum);
            setup.push(out.setup_ms);
        }
        rows.push(BenchRow {
            method: m,
            epochs,
            runs,
            epoch_ms_median: median(&per_epoch),
            epoch_ms_std: mean_std(&per_epoch).1,
            train_ms_median: median(&total),
            train_ms_std: mean_std(&total).1,
            setup_ms_median: median(&setup),
        });
    }
    Ok(rows)
}

pub fn write_bench_csv(mut w: impl Write, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(w, "method,epochs,runs,epoch_ms_median,epoch_ms_std,train_ms_median,train_ms_std,setup_ms_median")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}",
            r.method, r.epochs, r.runs, r.epoch_ms_median, r.epoch_ms_std, r.train_ms_median, r.train_ms_std, r.setup_ms_median
        )?;
    }
    Ok(())
}

/// Distinct nodes whose embeddings are identical in every coordinate.
pub fn duplicate_rows(h: &Tensor<f32>) -> usize {
    let mut seen = HashSet::new();
    (0..h.rows())
        .filter(|&r| !seen.insert(h.row(r).iter().map(|x| x.to_bits()).collect::<Vec<u32>>()))
        .count()
}

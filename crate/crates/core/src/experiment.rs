//! Experiment protocol: random train/test splits, model fitting, outlier-excluded
//! evaluation, and training-ratio × outlier-ratio sweeps written as CSV.
//!
//! For repeat `r` (1-based) of a cell, the split seed is `base_seed + r`.
//! The forest seed and solver seed are derived from it, so every method run
//! under the same `base_seed` sees the same train/test partition and the same
//! retained test set.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    infer_dense_shape, parse_dynamic_quads, parse_sparse_triples, parse_static_dense, DatasetKind,
    DatasetMeta, Metric, ObservationMatrix, ObservationTensor, Observations,
};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::loss::LossKind;
use crate::metrics::{evaluate_retained, EvalReport};
use crate::mf::{self, MfConfig};
use crate::outlier::{exclusion_mask, fit_score_grouped, mix_seed, removal_count, ForestConfig};
use crate::synth::{generate_synthetic, SyntheticObservations, SyntheticSpec};
use crate::tf::{self, TfConfig};

const FOREST_SALT: u64 = 0x0f0e_5717;
const SOLVER_SALT: u64 = 0x5017_e7a1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Cauchy-loss matrix factorization.
    #[serde(rename = "cmf")]
    Cmf,
    /// L2 matrix factorization baseline.
    #[serde(rename = "mf2")]
    Mf2,
    /// L1 matrix factorization baseline.
    #[serde(rename = "mf1")]
    Mf1,
    /// Cauchy-weighted nonnegative CP factorization.
    #[serde(rename = "ctf")]
    Ctf,
    /// CP factorization at `γ = 10⁶, λ = 0`, standing in for Frobenius nonnegative CP.
    #[serde(rename = "tf-l2-limit")]
    TfL2Limit,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Cmf => "cmf",
            Method::Mf2 => "mf2",
            Method::Mf1 => "mf1",
            Method::Ctf => "ctf",
            Method::TfL2Limit => "tf-l2-limit",
        }
    }

    pub fn is_tensor(&self) -> bool {
        matches!(self, Method::Ctf | Method::TfL2Limit)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cmf" => Ok(Method::Cmf),
            "mf2" => Ok(Method::Mf2),
            "mf1" => Ok(Method::Mf1),
            "ctf" => Ok(Method::Ctf),
            "tf-l2-limit" => Ok(Method::TfL2Limit),
            other => Err(Error::config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Dense,
    Triples,
    Quads,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(DataFormat::Dense),
            "triples" => Ok(DataFormat::Triples),
            "quads" => Ok(DataFormat::Quads),
            other => Err(Error::config(format!("unknown data format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File {
        path: PathBuf,
        format: DataFormat,
        /// Dense files need a shape; it is inferred from the file when absent.
        shape: Option<(usize, usize)>,
        missing_marker: f64,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Matrix(ObservationMatrix),
    Tensor(ObservationTensor),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Matrix(m) => m.len(),
            Dataset::Tensor(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Loads a dataset file in the given format.
pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    shape: Option<(usize, usize)>,
    missing_marker: f64,
    metric: Metric,
) -> Result<Dataset> {
    match format {
        DataFormat::Triples => Ok(Dataset::Matrix(parse_sparse_triples(open(path)?)?)),
        DataFormat::Quads => Ok(Dataset::Tensor(parse_dynamic_quads(open(path)?)?)),
        DataFormat::Dense => {
            let (users, services) = match shape {
                Some(s) => s,
                None => infer_dense_shape(open(path)?)?,
            };
            let meta = DatasetMeta {
                kind: DatasetKind::Static,
                metric,
                users,
                services,
                times: 1,
                value_range: (f64::NEG_INFINITY, f64::INFINITY),
                missing_marker,
            };
            Ok(Dataset::Matrix(parse_static_dense(open(path)?, &meta)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    /// Label written to the `metric` column.
    pub metric: String,
    pub methods: Vec<Method>,
    /// Base matrix solver settings; the loss is chosen per method.
    pub mf: MfConfig,
    pub tf: TfConfig,
    pub train_ratios: Vec<f64>,
    pub outlier_ratios: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    pub forest: ForestConfig,
    /// When false, `mean_fit_seconds` is written as 0 so output is reproducible byte for byte.
    pub timing: bool,
}

const KNOWN_KEYS: &[&str] = &[
    "data", "format", "users", "services", "missing_marker", "synthetic", "metric", "profile",
    "method", "methods", "rank", "gamma", "lambda", "lambda_u", "lambda_s", "lambda_t", "eta",
    "eta_u", "eta_s", "max_iters", "rel_tol", "seed", "init_scale", "mu_floor", "train_ratios",
    "outlier_ratios", "repeats", "base_seed", "num_trees", "subsample_size", "timing",
];

impl ExperimentConfig {
    /// Builds a config from flat keys; see the README for the key list.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        if let Some(bad) = kv
            .keys()
            .find(|k| !KNOWN_KEYS.contains(k) && !k.starts_with("synth."))
        {
            return Err(Error::config(format!("unknown key `{bad}`")));
        }

        let synthetic = kv.get_or("synthetic", false)?;
        let source = match (kv.raw("data"), synthetic) {
            (Some(_), true) => {
                return Err(Error::config("`data` and `synthetic = true` are mutually exclusive"))
            }
            (Some(path), false) => {
                let shape = match (kv.get::<usize>("users")?, kv.get::<usize>("services")?) {
                    (Some(m), Some(n)) => Some((m, n)),
                    (None, None) => None,
                    _ => return Err(Error::config("give both `users` and `services` or neither")),
                };
                DataSource::File {
                    path: PathBuf::from(path),
                    format: kv.get_or("format", DataFormat::Triples)?,
                    shape,
                    missing_marker: kv.get_or("missing_marker", -1.0)?,
                }
            }
            (None, true) => DataSource::Synthetic(SyntheticSpec::from_kv(kv, "synth.")?),
            (None, false) => return Err(Error::config("either `data` or `synthetic = true` is required")),
        };

        let profile: Metric = kv.get_or("profile", Metric::ResponseTime)?;
        let (mut mf, mut tf) = match profile {
            Metric::ResponseTime => (MfConfig::response_time(), TfConfig::response_time_mae()),
            Metric::Throughput => (MfConfig::throughput(), TfConfig::throughput()),
        };
        let default_metric = match source {
            DataSource::Synthetic(_) => "synthetic".to_string(),
            DataSource::File { .. } => profile.to_string(),
        };

        if let Some(rank) = kv.get("rank")? {
            mf.rank = rank;
            tf.rank = rank;
        }
        if let Some(gamma) = kv.get("gamma")? {
            mf.loss = LossKind::Cauchy { gamma };
            tf.gamma = gamma;
        }
        if let Some(lambda) = kv.get("lambda")? {
            (mf.lambda_u, mf.lambda_s) = (lambda, lambda);
            (tf.lambda_u, tf.lambda_s, tf.lambda_t) = (lambda, lambda, lambda);
        }
        if let Some(v) = kv.get("lambda_u")? {
            mf.lambda_u = v;
            tf.lambda_u = v;
        }
        if let Some(v) = kv.get("lambda_s")? {
            mf.lambda_s = v;
            tf.lambda_s = v;
        }
        tf.lambda_t = kv.get_or("lambda_t", tf.lambda_t)?;
        if let Some(eta) = kv.get("eta")? {
            (mf.eta_u, mf.eta_s) = (eta, eta);
        }
        mf.eta_u = kv.get_or("eta_u", mf.eta_u)?;
        mf.eta_s = kv.get_or("eta_s", mf.eta_s)?;
        if let Some(v) = kv.get("max_iters")? {
            mf.max_iters = v;
            tf.max_iters = v;
        }
        if let Some(v) = kv.get("rel_tol")? {
            mf.rel_tol = v;
            tf.rel_tol = v;
        }
        if let Some(v) = kv.get("seed")? {
            mf.seed = v;
            tf.seed = v;
        }
        if let Some(v) = kv.get("init_scale")? {
            mf.init_scale = v;
            tf.init_scale = v;
        }
        tf.mu_floor = kv.get_or("mu_floor", tf.mu_floor)?;

        let methods = match (kv.get_list::<Method>("methods")?, kv.get_list::<Method>("method")?) {
            (Some(_), Some(_)) => return Err(Error::config("use either `method` or `methods`")),
            (Some(m), None) | (None, Some(m)) => m,
            (None, None) => vec![Method::Cmf],
        };

        let forest = ForestConfig {
            num_trees: kv.get_or("num_trees", 100)?,
            subsample_size: kv.get_or("subsample_size", 256)?,
            seed: 0,
        };

        let config = Self {
            source,
            metric: kv.get_or("metric", default_metric)?,
            methods,
            mf,
            tf,
            train_ratios: kv.get_list("train_ratios")?.unwrap_or_else(|| vec![0.7]),
            outlier_ratios: kv.get_list("outlier_ratios")?.unwrap_or_else(|| vec![0.1]),
            repeats: kv.get_or("repeats", 10)?,
            base_seed: kv.get_or("base_seed", 0)?,
            forest,
            timing: kv.get_or("timing", true)?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("no methods given"));
        }
        if self.train_ratios.is_empty() {
            return Err(Error::config("train_ratios is empty"));
        }
        if self.outlier_ratios.is_empty() {
            return Err(Error::config("outlier_ratios is empty"));
        }
        if let Some(r) = self.train_ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::config(format!("train ratio {r} outside (0, 1)")));
        }
        if let Some(r) = self.outlier_ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::config(format!("outlier ratio {r} outside [0, 1)")));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        if self.metric.contains([',', '\n', '"']) {
            return Err(Error::config("metric label may not contain commas, quotes or newlines"));
        }
        self.forest.validate()?;
        for m in &self.methods {
            if m.is_tensor() {
                self.solver_tf(*m).validate()?;
            } else {
                self.solver_mf(*m).validate()?;
            }
        }
        Ok(())
    }

    /// Matrix solver settings for a matrix method.
    pub fn solver_mf(&self, method: Method) -> MfConfig {
        let loss = match method {
            Method::Mf2 => LossKind::L2,
            Method::Mf1 => LossKind::L1,
            _ => match self.mf.loss {
                LossKind::Cauchy { gamma } => LossKind::Cauchy { gamma },
                _ => LossKind::Cauchy { gamma: 1.0 },
            },
        };
        self.mf.clone().with_loss(loss)
    }

    /// Tensor solver settings for a tensor method.
    pub fn solver_tf(&self, method: Method) -> TfConfig {
        match method {
            Method::TfL2Limit => self.tf.clone().l2_limit(),
            _ => self.tf.clone(),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match &self.source {
            DataSource::File {
                path,
                format,
                shape,
                missing_marker,
            } => {
                let metric = self.metric.parse().unwrap_or(Metric::ResponseTime);
                load_dataset(path, *format, *shape, *missing_marker, metric)
            }
            DataSource::Synthetic(spec) => Ok(match generate_synthetic(spec)?.observations {
                SyntheticObservations::Matrix(m) => Dataset::Matrix(m),
                SyntheticObservations::Tensor(t) => Dataset::Tensor(t),
            }),
        }
    }
}

/// One aggregated table cell. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: Method,
    pub metric: String,
    pub train_ratio: f64,
    pub outlier_ratio: f64,
    pub mean_mae: f64,
    pub std_mae: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub mean_fit_seconds: f64,
    /// Mean number of sweeps run per repeat.
    pub iterations: f64,
}

pub const CSV_HEADER: &str =
    "method,metric,train_ratio,outlier_ratio,mean_mae,std_mae,mean_rmse,std_rmse,mean_fit_seconds,iterations";

/// Uniform random partition of `0..n`: the first `round(ratio · n)` shuffled
/// positions train, the rest test. Both parts are returned sorted.
pub fn split(n: usize, train_ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::contract(format!("train ratio {train_ratio} outside (0, 1)")));
    }
    let n_train = (train_ratio * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::contract(format!(
            "train ratio {train_ratio} over {n} entries leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order.split_off(n_train);
    order.sort_unstable();
    test.sort_unstable();
    Ok((order, test))
}

pub fn split_observations<O: Observations>(obs: &O, train_ratio: f64, seed: u64) -> Result<(O, O)> {
    let (train, test) = split(obs.len(), train_ratio, seed)?;
    Ok((obs.subset(&train), obs.subset(&test)))
}

/// Outcome of one method on one repeat at one outlier ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatOutcome {
    pub report: EvalReport,
    pub fit_seconds: f64,
    pub iterations: usize,
}

struct Fitted {
    predictions: Vec<f64>,
    seconds: f64,
    iterations: usize,
}

fn fit_and_predict(
    config: &ExperimentConfig,
    method: Method,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<Fitted> {
    match (train, test) {
        (Dataset::Matrix(train), Dataset::Matrix(test)) if !method.is_tensor() => {
            let mut cfg = config.solver_mf(method);
            cfg.seed = mix_seed(cfg.seed, seed ^ SOLVER_SALT);
            let start = Instant::now();
            let model = mf::fit(train, &cfg)?;
            let seconds = start.elapsed().as_secs_f64();
            let pairs: Vec<_> = test.entries().iter().map(|e| (e.user, e.service)).collect();
            Ok(Fitted {
                predictions: mf::predict(&model, &pairs)?,
                seconds,
                iterations: model.iterations_run,
            })
        }
        (Dataset::Tensor(train), Dataset::Tensor(test)) if method.is_tensor() => {
            let mut cfg = config.solver_tf(method);
            cfg.seed = mix_seed(cfg.seed, seed ^ SOLVER_SALT);
            let start = Instant::now();
            let model = tf::fit(train, &cfg)?;
            let seconds = start.elapsed().as_secs_f64();
            let triples: Vec<_> = test
                .entries()
                .iter()
                .map(|e| (e.user, e.service, e.time))
                .collect();
            Ok(Fitted {
                predictions: tf::predict(&model, &triples)?,
                seconds,
                iterations: model.iterations_run,
            })
        }
        _ => Err(Error::config(format!(
            "method `{method}` does not apply to this dataset"
        ))),
    }
}

fn cell_label(method: Method, train_ratio: f64, repeat: usize) -> String {
    format!("cell method={method} train_ratio={train_ratio} repeat={repeat}")
}

/// A config bound to its loaded dataset.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        for m in &config.methods {
            let ok = matches!(
                (&dataset, m.is_tensor()),
                (Dataset::Matrix(_), false) | (Dataset::Tensor(_), true)
            );
            if !ok {
                return Err(Error::config(format!(
                    "method `{m}` does not apply to this dataset"
                )));
            }
        }
        if dataset.is_empty() {
            return Err(Error::contract("dataset has no observations"));
        }
        Ok(Self { config, dataset })
    }

    pub fn load(config: ExperimentConfig) -> Result<Self> {
        let dataset = config.load()?;
        Self::new(config, dataset)
    }

    fn split_dataset(&self, train_ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        Ok(match &self.dataset {
            Dataset::Matrix(m) => {
                let (a, b) = split_observations(m, train_ratio, seed)?;
                (Dataset::Matrix(a), Dataset::Matrix(b))
            }
            Dataset::Tensor(t) => {
                let (a, b) = split_observations(t, train_ratio, seed)?;
                (Dataset::Tensor(a), Dataset::Tensor(b))
            }
        })
    }

    /// Runs every repeat at one training ratio. Result is indexed
    /// `[method][outlier ratio][repeat]`.
    pub fn run_block(
        &self,
        methods: &[Method],
        train_ratio: f64,
        outlier_ratios: &[f64],
    ) -> Result<Vec<Vec<Vec<RepeatOutcome>>>> {
        let mut out = vec![vec![Vec::with_capacity(self.config.repeats); outlier_ratios.len()]; methods.len()];
        for repeat in 1..=self.config.repeats {
            let split_seed = self.config.base_seed.wrapping_add(repeat as u64);
            let (train, test) = self
                .split_dataset(train_ratio, split_seed)
                .map_err(|e| e.in_cell(format!("split train_ratio={train_ratio} repeat={repeat}")))?;
            let (observed, groups) = match &test {
                Dataset::Matrix(m) => (m.values(), m.service_labels()),
                Dataset::Tensor(t) => (t.values(), t.service_labels()),
            };
            let needs_scores = outlier_ratios
                .iter()
                .any(|&r| removal_count(r, observed.len()) > 0);
            let scored = if needs_scores {
                let forest = ForestConfig {
                    seed: mix_seed(split_seed, FOREST_SALT),
                    ..self.config.forest.clone()
                };
                Some(fit_score_grouped(&observed, &groups, &forest)?)
            } else {
                None
            };
            let masks = outlier_ratios
                .iter()
                .map(|&r| match &scored {
                    Some(s) if removal_count(r, observed.len()) > 0 => exclusion_mask(s, r),
                    _ => Ok((0..observed.len()).collect()),
                })
                .collect::<Result<Vec<_>>>()?;

            for (mi, &method) in methods.iter().enumerate() {
                let fitted = fit_and_predict(&self.config, method, &train, &test, split_seed)
                    .map_err(|e| e.in_cell(cell_label(method, train_ratio, repeat)))?;
                for (oi, (&ratio, mask)) in outlier_ratios.iter().zip(&masks).enumerate() {
                    let report = evaluate_retained(&observed, &fitted.predictions, mask, ratio)
                        .map_err(|e| e.in_cell(cell_label(method, train_ratio, repeat)))?
                        .with_tag(method.as_str());
                    out[mi][oi].push(RepeatOutcome {
                        report,
                        fit_seconds: fitted.seconds,
                        iterations: fitted.iterations,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Per-repeat outcomes of one method in one cell.
    pub fn cell_repeats(
        &self,
        method: Method,
        train_ratio: f64,
        outlier_ratio: f64,
    ) -> Result<Vec<RepeatOutcome>> {
        let mut block = self.run_block(&[method], train_ratio, &[outlier_ratio])?;
        Ok(block.remove(0).remove(0))
    }

    pub fn run_cell(&self, method: Method, train_ratio: f64, outlier_ratio: f64) -> Result<ResultRecord> {
        let repeats = self.cell_repeats(method, train_ratio, outlier_ratio)?;
        Ok(self.aggregate(method, train_ratio, outlier_ratio, &repeats))
    }

    fn aggregate(
        &self,
        method: Method,
        train_ratio: f64,
        outlier_ratio: f64,
        repeats: &[RepeatOutcome],
    ) -> ResultRecord {
        let maes: Vec<f64> = repeats.iter().map(|r| r.report.mae).collect();
        let rmses: Vec<f64> = repeats.iter().map(|r| r.report.rmse).collect();
        let secs: Vec<f64> = repeats.iter().map(|r| r.fit_seconds).collect();
        let iters: Vec<f64> = repeats.iter().map(|r| r.iterations as f64).collect();
        ResultRecord {
            method,
            metric: self.config.metric.clone(),
            train_ratio,
            outlier_ratio,
            mean_mae: mean(&maes),
            std_mae: std_dev(&maes),
            mean_rmse: mean(&rmses),
            std_rmse: std_dev(&rmses),
            mean_fit_seconds: if self.config.timing { mean(&secs) } else { 0.0 },
            iterations: mean(&iters),
        }
    }

    /// Every method × training ratio × outlier ratio, in that nesting order.
    pub fn run_grid(&self) -> Result<Vec<ResultRecord>> {
        let cfg = &self.config;
        let mut blocks = Vec::with_capacity(cfg.train_ratios.len());
        for &train_ratio in &cfg.train_ratios {
            blocks.push(self.run_block(&cfg.methods, train_ratio, &cfg.outlier_ratios)?);
        }
        let mut records = Vec::new();
        for (mi, &method) in cfg.methods.iter().enumerate() {
            for (ti, &train_ratio) in cfg.train_ratios.iter().enumerate() {
                for (oi, &outlier_ratio) in cfg.outlier_ratios.iter().enumerate() {
                    records.push(self.aggregate(method, train_ratio, outlier_ratio, &blocks[ti][mi][oi]));
                }
            }
        }
        Ok(records)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for a single repeat.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn write_results_csv(records: &[ResultRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::config(format!("CSV write failed: {e}")))?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .map_err(|e| Error::config(format!("CSV write failed: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_results_csv(input: impl std::io::Read) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(Error::parse(1, format!("unexpected header `{header}`")));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| Error::parse(i + 2, e.to_string())))
        .collect()
}

/// Human-readable report: one `key=value` line per record.
pub fn write_report(config: &ExperimentConfig, records: &[ResultRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "# repeats={} base_seed={} records={}", config.repeats, config.base_seed, records.len())?;
    for r in records {
        writeln!(
            out,
            "method={} metric={} train_ratio={} outlier_ratio={} mae={:.6} (sd {:.6}) rmse={:.6} (sd {:.6}) fit_seconds={:.4} iterations={}",
            r.method,
            r.metric,
            r.train_ratio,
            r.outlier_ratio,
            r.mean_mae,
            r.std_mae,
            r.mean_rmse,
            r.std_rmse,
            r.mean_fit_seconds,
            r.iterations
        )?;
    }
    Ok(())
}

/// Runs the grid and writes `results.csv` and `report.txt` into `out_dir`.
pub fn run_grid_to_dir(experiment: &Experiment, out_dir: &Path) -> Result<Vec<ResultRecord>> {
    let records = experiment.run_grid()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("results.csv");
    let mut buf = Vec::new();
    write_results_csv(&records, &mut buf)?;
    fs::write(&csv_path, buf).map_err(|e| Error::io(&csv_path, e))?;
    let report_path = out_dir.join("report.txt");
    let mut report = Vec::new();
    write_report(&experiment.config, &records, &mut report).map_err(|e| Error::io(&report_path, e))?;
    fs::write(&report_path, report).map_err(|e| Error::io(&report_path, e))?;
    Ok(records)
}

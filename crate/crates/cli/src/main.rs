use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use robustqos::data::{write_dynamic_quads, write_sparse_triples, Observations};
use robustqos::experiment::{run_grid_to_dir, split_observations, Dataset, Experiment, ExperimentConfig, Method};
use robustqos::kv::KeyValues;
use robustqos::metrics::evaluate_excluding_outliers_grouped;
use robustqos::mf::{self, MfModel};
use robustqos::outlier::ForestConfig;
use robustqos::synth::{generate_synthetic, SyntheticObservations, SyntheticSpec};
use robustqos::tf::{self, TfModel};

#[derive(Parser)]
#[command(name = "robustqos", version, about = "Outlier-resilient QoS prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one method and save the model as JSON.
    Fit {
        #[command(flatten)]
        settings: Settings,
        /// Where to write the model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Hold out part of the data: fit on this fraction only.
        #[arg(long)]
        train_ratio: Option<f64>,
        /// Where to write the held-out entries (requires --train-ratio).
        #[arg(long)]
        test_output: Option<PathBuf>,
    },
    /// Predict values for index pairs (or triples) read from a file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Lines of `user service [time]`; further columns are ignored.
        #[arg(long)]
        pairs: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a saved model on a dataset with outlier exclusion.
    Evaluate {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the method × training ratio × outlier ratio grid.
    Grid {
        #[command(flatten)]
        settings: Settings,
        /// Directory for results.csv and report.txt.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with planted outliers.
    Synth {
        #[command(flatten)]
        settings: Settings,
        /// Triples (or quads when times > 1) are written here.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Spec and planted indices; defaults to `<output>.manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Summarize a dataset or a saved model.
    Inspect {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

/// Flags shared by config-driven subcommands. Each maps to the config key of
/// the same name (dashes become underscores) and overrides the config file.
#[derive(Args, Default)]
struct Settings {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    data: Option<String>,
    /// dense, triples or quads.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    users: Option<String>,
    #[arg(long)]
    services: Option<String>,
    #[arg(long)]
    missing_marker: Option<String>,
    /// Use a generated dataset (see the `synth.*` keys).
    #[arg(long)]
    synthetic: bool,
    /// rt or tp parameter profile.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    /// Comma-separated list of cmf, mf2, mf1, ctf, tf-l2-limit.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    rel_tol: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    train_ratios: Option<String>,
    #[arg(long)]
    outlier_ratios: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    #[arg(long)]
    base_seed: Option<String>,
    /// `false` writes 0 for fit times so output is reproducible.
    #[arg(long)]
    timing: Option<String>,
}

impl Settings {
    fn key_values(&self) -> Result<KeyValues, Failure> {
        let mut kv = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
                KeyValues::parse(&text)
                    .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?
            }
            None => KeyValues::new(),
        };
        let flags = [
            ("data", &self.data),
            ("format", &self.format),
            ("users", &self.users),
            ("services", &self.services),
            ("missing_marker", &self.missing_marker),
            ("profile", &self.profile),
            ("metric", &self.metric),
            ("methods", &self.methods),
            ("rank", &self.rank),
            ("gamma", &self.gamma),
            ("lambda", &self.lambda),
            ("eta", &self.eta),
            ("max_iters", &self.max_iters),
            ("rel_tol", &self.rel_tol),
            ("seed", &self.seed),
            ("train_ratios", &self.train_ratios),
            ("outlier_ratios", &self.outlier_ratios),
            ("repeats", &self.repeats),
            ("base_seed", &self.base_seed),
            ("timing", &self.timing),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                if key == "methods" {
                    kv.remove("method");
                }
                kv.set(key, v);
            }
        }
        if self.synthetic {
            kv.set("synthetic", true);
            kv.remove("data");
        } else if self.data.is_some() {
            kv.remove("synthetic");
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum SavedModel {
    Matrix { method: Method, model: MfModel },
    Tensor { method: Method, model: TfModel },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(robustqos::Error),
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    fn exit_code(&self) -> u8 {
        use robustqos::Error as E;
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e.root() {
                E::Config(_) | E::Contract(_) => 2,
                E::Divergence { .. } => 4,
                _ => 3,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<robustqos::Error> for Failure {
    fn from(e: robustqos::Error) -> Self {
        Failure::Core(e)
    }
}

/// Takes a CLI-only path key out of the merged settings; a flag wins over the config file.
fn path_key(kv: &mut KeyValues, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
    let from_config = kv.remove(key).map(PathBuf::from);
    flag.or(from_config)
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Core(robustqos::Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn read_model(path: &Path) -> Result<SavedModel, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::Core(robustqos::Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })
    })
}

fn single_method(config: &ExperimentConfig) -> Result<Method, Failure> {
    match config.methods.as_slice() {
        [m] => Ok(*m),
        _ => Err(Failure::usage("fit takes exactly one method")),
    }
}

fn fit(settings: Settings, model: Option<PathBuf>, train_ratio: Option<f64>, test_output: Option<PathBuf>) -> Result<(), Failure> {
    let mut kv = settings.key_values()?;
    let model_path = path_key(&mut kv, "model", model).ok_or_else(|| Failure::usage("--model is required"))?;
    let test_path = path_key(&mut kv, "test_output", test_output);
    let train_ratio = match (train_ratio, kv.remove("train_ratio")) {
        (Some(r), _) => Some(r),
        (None, Some(raw)) => Some(raw.parse().map_err(|_| Failure::usage(format!("bad train_ratio `{raw}`")))?),
        (None, None) => None,
    };
    if test_path.is_some() && train_ratio.is_none() {
        return Err(Failure::usage("--test-output needs --train-ratio"));
    }
    let config = ExperimentConfig::from_kv(&kv)?;
    let method = single_method(&config)?;
    let experiment = Experiment::load(config)?;
    let config = &experiment.config;
    let split_seed = config.base_seed.wrapping_add(1);

    let saved = match &experiment.dataset {
        Dataset::Matrix(m) => {
            let (train, test) = match train_ratio {
                Some(r) => {
                    let (a, b) = split_observations(m, r, split_seed)?;
                    (a, Some(b))
                }
                None => (m.clone(), None),
            };
            if let (Some(path), Some(test)) = (&test_path, &test) {
                let mut buf = Vec::new();
                write_sparse_triples(test, &mut buf).map_err(|e| io_failure(path, e))?;
                write_file(path, &buf)?;
            }
            let model = mf::fit(&train, &config.solver_mf(method))?;
            println!(
                "method={method} entries={} iterations={} objective={}",
                train.len(),
                model.iterations_run,
                model.final_objective
            );
            SavedModel::Matrix { method, model }
        }
        Dataset::Tensor(t) => {
            let (train, test) = match train_ratio {
                Some(r) => {
                    let (a, b) = split_observations(t, r, split_seed)?;
                    (a, Some(b))
                }
                None => (t.clone(), None),
            };
            if let (Some(path), Some(test)) = (&test_path, &test) {
                let mut buf = Vec::new();
                write_dynamic_quads(test, &mut buf).map_err(|e| io_failure(path, e))?;
                write_file(path, &buf)?;
            }
            let model = tf::fit(&train, &config.solver_tf(method))?;
            println!(
                "method={method} entries={} iterations={} objective={}",
                train.len(),
                model.iterations_run,
                model.final_objective
            );
            SavedModel::Tensor { method, model }
        }
    };
    let json = serde_json::to_vec_pretty(&saved).expect("models serialize");
    write_file(&model_path, &json)
}

fn parse_indices(text: &str, arity: usize) -> Result<Vec<Vec<usize>>, Failure> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().take(arity).collect();
        if fields.len() < arity {
            return Err(robustqos::Error::Parse {
                line: n + 1,
                message: format!("expected {arity} indices, found `{line}`"),
            }
            .into());
        }
        let idx = fields
            .iter()
            .map(|f| f.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| robustqos::Error::Parse {
                line: n + 1,
                message: format!("bad index in `{line}`: {e}"),
            })?;
        out.push(idx);
    }
    Ok(out)
}

fn predict(model: PathBuf, pairs: PathBuf, output: Option<PathBuf>) -> Result<(), Failure> {
    let saved = read_model(&model)?;
    let text = fs::read_to_string(&pairs).map_err(|e| io_failure(&pairs, e))?;
    let (rows, values) = match &saved {
        SavedModel::Matrix { model, .. } => {
            let rows = parse_indices(&text, 2)?;
            let pairs: Vec<_> = rows.iter().map(|r| (r[0], r[1])).collect();
            let values = mf::predict(model, &pairs)?;
            (rows, values)
        }
        SavedModel::Tensor { model, .. } => {
            let rows = parse_indices(&text, 3)?;
            let triples: Vec<_> = rows.iter().map(|r| (r[0], r[1], r[2])).collect();
            let values = tf::predict(model, &triples)?;
            (rows, values)
        }
    };
    let mut buf = Vec::new();
    for (row, value) in rows.iter().zip(values) {
        let idx: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(buf, "{} {value}", idx.join(" ")).expect("write to memory");
    }
    match output {
        Some(path) => write_file(&path, &buf),
        None => io::stdout().write_all(&buf).map_err(|e| io_failure(Path::new("<stdout>"), e)),
    }
}

fn evaluate(settings: Settings, model: Option<PathBuf>) -> Result<(), Failure> {
    let mut kv = settings.key_values()?;
    let model_path = path_key(&mut kv, "model", model).ok_or_else(|| Failure::usage("--model is required"))?;
    let config = ExperimentConfig::from_kv(&kv)?;
    let saved = read_model(&model_path)?;
    let dataset = config.load()?;
    let (method, observed, predicted, groups) = match (&saved, &dataset) {
        (SavedModel::Matrix { method, model }, Dataset::Matrix(m)) => {
            let pairs: Vec<_> = m.entries().iter().map(|e| (e.user, e.service)).collect();
            (*method, m.values(), mf::predict(model, &pairs)?, m.service_labels())
        }
        (SavedModel::Tensor { method, model }, Dataset::Tensor(t)) => {
            let triples: Vec<_> = t.entries().iter().map(|e| (e.user, e.service, e.time)).collect();
            (*method, t.values(), tf::predict(model, &triples)?, t.service_labels())
        }
        _ => return Err(Failure::usage("model and dataset disagree on matrix versus tensor")),
    };
    if observed.is_empty() {
        return Err(Failure::Core(robustqos::Error::Contract("dataset has no observations".into())));
    }
    let forest = ForestConfig { seed: config.base_seed, ..config.forest.clone() };
    println!("method,outlier_ratio,mae,rmse,n_total,n_removed");
    for &ratio in &config.outlier_ratios {
        let r = evaluate_excluding_outliers_grouped(&observed, &predicted, &groups, ratio, &forest)?;
        println!("{method},{ratio},{},{},{},{}", r.mae, r.rmse, r.n_total, r.n_removed);
    }
    Ok(())
}

fn grid(settings: Settings, out_dir: Option<PathBuf>) -> Result<(), Failure> {
    let mut kv = settings.key_values()?;
    let out_dir = path_key(&mut kv, "out_dir", out_dir).unwrap_or_else(|| PathBuf::from("results"));
    let experiment = Experiment::load(ExperimentConfig::from_kv(&kv)?)?;
    let records = run_grid_to_dir(&experiment, &out_dir)?;
    println!("{} records written to {}", records.len(), out_dir.join("results.csv").display());
    Ok(())
}

fn synth(settings: Settings, output: Option<PathBuf>, manifest: Option<PathBuf>) -> Result<(), Failure> {
    let mut kv = settings.key_values()?;
    let output = path_key(&mut kv, "output", output).ok_or_else(|| Failure::usage("--output is required"))?;
    let manifest = path_key(&mut kv, "manifest", manifest).unwrap_or_else(|| {
        let mut name = output.clone().into_os_string();
        name.push(".manifest");
        PathBuf::from(name)
    });
    if let Some(bad) = kv.keys().find(|k| !k.starts_with("synth.") && *k != "synthetic") {
        return Err(Failure::usage(format!("synth only reads `synth.*` keys, got `{bad}`")));
    }
    let spec = SyntheticSpec::from_kv(&kv, "synth.")?;
    let data = generate_synthetic(&spec)?;
    let mut buf = Vec::new();
    match &data.observations {
        SyntheticObservations::Matrix(m) => write_sparse_triples(m, &mut buf),
        SyntheticObservations::Tensor(t) => write_dynamic_quads(t, &mut buf),
    }
    .map_err(|e| io_failure(&output, e))?;
    write_file(&output, &buf)?;
    let mut text = Vec::new();
    data.write_manifest(&spec, &mut text).map_err(|e| io_failure(&manifest, e))?;
    write_file(&manifest, &text)?;
    println!(
        "{} observations, {} planted outliers -> {}",
        data.values().len(),
        data.planted.len(),
        output.display()
    );
    Ok(())
}

fn describe_values(out: &mut impl Write, values: &[f64]) -> io::Result<()> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    writeln!(out, "min = {}", sorted[0])?;
    writeln!(out, "max = {}", sorted[n - 1])?;
    writeln!(out, "mean = {}", sorted.iter().sum::<f64>() / n as f64)?;
    writeln!(out, "median = {median}")
}

fn inspect(settings: Settings, model: Option<PathBuf>) -> Result<(), Failure> {
    let mut kv = settings.key_values()?;
    let model_path = path_key(&mut kv, "model", model);
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = (|| -> Result<(), Failure> {
        if let Some(path) = model_path {
            let (method, shapes, rank, iterations, objective) = match read_model(&path)? {
                SavedModel::Matrix { method, model } => (
                    method,
                    format!("{} x {}", model.user_factors.nrows(), model.service_factors.nrows()),
                    model.rank(),
                    model.iterations_run,
                    model.final_objective,
                ),
                SavedModel::Tensor { method, model } => (
                    method,
                    format!(
                        "{} x {} x {}",
                        model.user_factors.nrows(),
                        model.service_factors.nrows(),
                        model.time_factors.nrows()
                    ),
                    model.rank(),
                    model.iterations_run,
                    model.final_objective,
                ),
            };
            writeln!(out, "method = {method}\nshape = {shapes}\nrank = {rank}\niterations = {iterations}\nobjective = {objective}")
                .map_err(|e| io_failure(Path::new("<stdout>"), e))?;
            if !kv.contains("data") && !kv.contains("synthetic") {
                return Ok(());
            }
        }
        let config = ExperimentConfig::from_kv(&kv)?;
        let dataset = config.load()?;
        let (shape, cells, values) = match &dataset {
            Dataset::Matrix(m) => (
                format!("{} x {}", m.users(), m.services()),
                m.users() * m.services(),
                m.values(),
            ),
            Dataset::Tensor(t) => (
                format!("{} x {} x {}", t.users(), t.services(), t.times()),
                t.users() * t.services() * t.times(),
                t.values(),
            ),
        };
        let w = |e| io_failure(Path::new("<stdout>"), e);
        writeln!(out, "shape = {shape}").map_err(w)?;
        writeln!(out, "observed = {}", values.len()).map_err(w)?;
        writeln!(out, "density = {}", values.len() as f64 / cells as f64).map_err(w)?;
        if !values.is_empty() {
            describe_values(&mut out, &values).map_err(w)?;
        }
        Ok(())
    })();
    out.flush().map_err(|e| io_failure(Path::new("<stdout>"), e))?;
    result
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fit {
            settings,
            model,
            train_ratio,
            test_output,
        } => fit(settings, model, train_ratio, test_output),
        Command::Predict { model, pairs, output } => predict(model, pairs, output),
        Command::Evaluate { settings, model } => evaluate(settings, model),
        Command::Grid { settings, out_dir } => grid(settings, out_dir),
        Command::Synth {
            settings,
            output,
            manifest,
        } => synth(settings, output, manifest),
        Command::Inspect { settings, model } => inspect(settings, model),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

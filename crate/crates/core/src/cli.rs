//! Command-line harness: `run`, `partition` and `compare`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{self, BlobSpec, Dataset, Partition, PartitionMode, PartitionSpec};
use crate::error::{Error, Result};
use crate::fed::{self, AlgorithmConfig, Federation, RoundRecord, Variant};
use crate::metrics::{rounds_to_target, speedup, Curve};
use crate::nn::{Architecture, Network};
use crate::rng::derive_seed;

pub const ROUNDS_HEADER: &str = "round,algorithm,accuracy,mean_sup_loss,mean_con_loss,participants";
pub const LOG_ENV: &str = "MOONFL_LOG";

const DATA_STREAM: u64 = 11;
const PARTITION_STREAM: u64 = 12;
const SPLIT_STREAM: u64 = 13;

#[derive(Parser, Debug)]
#[command(
    name = "moonfl",
    version,
    about = "Federated learning simulator with model-contrastive local training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one algorithm and write rounds.csv, model.bin, state.bin and the resolved config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel party workers; 0 uses every core. Overrides `workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Partition the training data and write partition.json and class_counts.csv.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare rounds.csv files against a baseline algorithm.
    Compare {
        #[arg(long, default_value = "fedavg")]
        baseline: String,
        /// Also write the comparison as CSV to this path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Csv,
}

/// Flat experiment configuration. Every key has a default; unknown keys
/// are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub blob_classes: usize,
    pub blob_samples_per_class: usize,
    pub blob_dim: usize,
    pub blob_spread: f64,
    /// Seed for blob generation and the train/test split; derived from `seed` when absent.
    pub data_seed: Option<u64>,
    pub train_csv: Option<PathBuf>,
    /// When absent the test set is a stratified split of the training data.
    pub test_csv: Option<PathBuf>,
    pub test_fraction: f64,

    pub partition: PartitionMode,
    pub num_parties: usize,
    pub beta: f64,
    /// Derived from `seed` when absent.
    pub partition_seed: Option<u64>,

    pub encoder_widths: Vec<usize>,
    pub projection_dim: usize,

    pub algorithm: Variant,
    pub mu: f64,
    pub temperature: f64,
    pub local_epochs: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub sample_fraction: f64,
    pub server_momentum: f64,
    pub max_negative_pairs: usize,
    pub solo_epochs: usize,
    pub freeze_control_variates: bool,
    pub seed: u64,

    pub eval_every: usize,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let alg = AlgorithmConfig::default();
        Self {
            dataset: DatasetKind::Blobs,
            blob_classes: 3,
            blob_samples_per_class: 200,
            blob_dim: 8,
            blob_spread: 1.0,
            data_seed: None,
            train_csv: None,
            test_csv: None,
            test_fraction: 0.2,
            partition: PartitionMode::Dirichlet,
            num_parties: 10,
            beta: 0.5,
            partition_seed: None,
            encoder_widths: vec![32, 32],
            projection_dim: 16,
            algorithm: alg.variant,
            mu: alg.mu,
            temperature: alg.temperature,
            local_epochs: alg.local_epochs,
            rounds: alg.rounds,
            learning_rate: alg.learning_rate,
            momentum: alg.momentum,
            weight_decay: alg.weight_decay,
            batch_size: alg.batch_size,
            sample_fraction: alg.sample_fraction,
            server_momentum: alg.server_momentum,
            max_negative_pairs: alg.max_negative_pairs,
            solo_epochs: alg.solo_epochs,
            freeze_control_variates: alg.freeze_control_variates,
            seed: alg.master_seed,
            eval_every: 1,
            workers: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parse TOML text. Relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.train_csv, &mut cfg.test_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Fill derived seeds so the echoed config is self-contained.
    pub fn resolve(&mut self) {
        self.data_seed.get_or_insert(derive_seed(self.seed, &[DATA_STREAM]));
        self.partition_seed
            .get_or_insert(derive_seed(self.seed, &[PARTITION_STREAM]));
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.dataset == DatasetKind::Csv {
            let train = self
                .train_csv
                .as_ref()
                .ok_or_else(|| Error::Config("dataset = \"csv\" needs train_csv".into()))?;
            for p in std::iter::once(train).chain(&self.test_csv) {
                if !p.is_file() {
                    return Err(Error::Config(format!("{} does not exist", p.display())));
                }
            }
        }
        if self.test_csv.is_none() && !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        self.partition_spec().validate()?;
        self.algorithm_config().validate()
    }

    pub fn algorithm_config(&self) -> AlgorithmConfig {
        AlgorithmConfig {
            variant: self.algorithm,
            mu: self.mu,
            temperature: self.temperature,
            local_epochs: self.local_epochs,
            rounds: self.rounds,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            sample_fraction: self.sample_fraction,
            server_momentum: self.server_momentum,
            max_negative_pairs: self.max_negative_pairs,
            master_seed: self.seed,
            solo_epochs: self.solo_epochs,
            freeze_control_variates: self.freeze_control_variates,
        }
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            num_parties: self.num_parties,
            beta: self.beta,
            seed: self
                .partition_seed
                .unwrap_or_else(|| derive_seed(self.seed, &[PARTITION_STREAM])),
            mode: self.partition,
        }
    }

    /// Train and test sets.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let data_seed = self.data_seed.unwrap_or_else(|| derive_seed(self.seed, &[DATA_STREAM]));
        let full = match self.dataset {
            DatasetKind::Blobs => data::make_blobs(&BlobSpec {
                num_classes: self.blob_classes,
                samples_per_class: self.blob_samples_per_class,
                dim: self.blob_dim,
                spread: self.blob_spread,
                seed: data_seed,
            })
            .map_err(as_config)?,
            DatasetKind::Csv => data::load_csv(self.train_csv.as_deref().expect("validated"))?,
        };
        match &self.test_csv {
            Some(path) => {
                let test = data::load_csv(path)?;
                if test.dim() != full.dim() {
                    return Err(Error::Config(format!(
                        "test data has {} features, training data {}",
                        test.dim(),
                        full.dim()
                    )));
                }
                let classes = full.num_classes().max(test.num_classes());
                Ok((with_classes(full, classes)?, with_classes(test, classes)?))
            }
            None => full.stratified_split(self.test_fraction, derive_seed(data_seed, &[SPLIT_STREAM])),
        }
    }

    pub fn architecture(&self, train: &Dataset, test: &Dataset) -> Architecture {
        let classes = train.num_classes().max(test.num_classes());
        Architecture::new(train.dim(), self.encoder_widths.clone(), self.projection_dim, classes)
    }
}

fn with_classes(ds: Dataset, classes: usize) -> Result<Dataset> {
    if ds.num_classes() == classes {
        return Ok(ds);
    }
    Dataset::new(ds.features().clone(), ds.labels().to_vec(), classes)
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Map an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn format_record(label: &str, r: &RoundRecord) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let participants: Vec<String> = r.participants.iter().map(|p| p.to_string()).collect();
    format!(
        "{},{},{},{},{},{}",
        r.round,
        label,
        opt(r.accuracy),
        r.mean_sup_loss,
        opt(r.mean_con_loss),
        participants.join(";")
    )
}

fn load_run_config(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, workers: Option<usize>) -> Result<()> {
    let mut cfg = load_run_config(config, out, seed)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let (train, test) = cfg.load_data()?;
    let partition = data::partition(&train, &cfg.partition_spec())?;
    let arch = cfg.architecture(&train, &test);
    let alg = cfg.algorithm_config();

    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.resolved.toml"), cfg.to_toml()?)?;

    let mut fed = Federation::new(alg.clone(), arch.clone(), &train, &partition)?.with_workers(cfg.workers)?;
    let mut log = fs::File::create(cfg.out_dir.join("rounds.csv"))?;
    writeln!(log, "{ROUNDS_HEADER}")?;
    let label = alg.label();
    let output = fed::drive(&mut fed, &test, cfg.eval_every, |r| {
        writeln!(log, "{}", format_record(&label, r))?;
        log.flush()?;
        Ok(())
    })?;

    checkpoint::save_model(
        &cfg.out_dir.join("model.bin"),
        &Network::from_vector(&arch, output.final_model)?,
    )?;
    checkpoint::save_state(&cfg.out_dir.join("state.bin"), &fed)?;
    if let Some(solo) = &output.solo {
        let mut text = String::from("party,accuracy\n");
        for (i, a) in solo.per_party_accuracy.iter().enumerate() {
            writeln!(text, "{i},{a}").expect("string write");
        }
        fs::write(cfg.out_dir.join("party_accuracy.csv"), text)?;
        println!(
            "{label}: accuracy {:.4} ± {:.4} over {} parties",
            solo.mean,
            solo.std,
            solo.per_party_accuracy.len()
        );
    } else if let Some(acc) = output.records.last().and_then(|r| r.accuracy) {
        println!("{label}: final accuracy {acc:.4} after {} rounds", alg.rounds);
    }
    Ok(())
}

pub fn class_counts_csv(partition: &Partition, ds: &Dataset) -> String {
    let mut text = String::from("party");
    for c in 0..ds.num_classes() {
        write!(text, ",class_{c}").expect("string write");
    }
    text.push('\n');
    for (i, row) in partition.class_counts(ds).iter().enumerate() {
        write!(text, "{i}").expect("string write");
        for n in row {
            write!(text, ",{n}").expect("string write");
        }
        text.push('\n');
    }
    text
}

pub fn cmd_partition(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let cfg = load_run_config(config, out, seed)?;
    let (train, _) = cfg.load_data()?;
    let partition = data::partition(&train, &cfg.partition_spec())?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("partition.json"), partition.to_json())?;
    fs::write(
        cfg.out_dir.join("class_counts.csv"),
        class_counts_csv(&partition, &train),
    )?;
    println!("{} parties, sizes {:?}", partition.num_parties(), partition.sizes());
    Ok(())
}

/// Evaluated points per algorithm from rounds.csv text.
pub fn parse_rounds_csv(text: &str, origin: &Path) -> Result<BTreeMap<String, Vec<(usize, f64)>>> {
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == ROUNDS_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header `{ROUNDS_HEADER}`"))),
    }
    let mut out: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(i + 1, format!("expected 6 fields, found {}", fields.len())));
        }
        let round = fields[0]
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad round `{}`", fields[0])))?;
        if fields[2].is_empty() {
            continue;
        }
        let acc = fields[2]
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad accuracy `{}`", fields[2])))?;
        out.entry(fields[1].to_string()).or_default().push((round, acc));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub algorithm: String,
    pub final_accuracy: f64,
    pub rounds_to_target: Option<usize>,
    pub speedup: crate::metrics::Speedup,
}

pub fn compare_curves(curves: &BTreeMap<String, Curve>, baseline: &str) -> Result<Vec<ComparisonRow>> {
    let base = curves
        .get(baseline)
        .ok_or_else(|| Error::Input(format!("baseline `{baseline}` not found among inputs")))?;
    let (_, target) = base
        .last()
        .ok_or_else(|| Error::Input(format!("baseline `{baseline}` has no evaluated rounds")))?;
    let mut names: Vec<&String> = curves.keys().collect();
    names.sort_by_key(|n| (n.as_str() != baseline, n.as_str()));
    names
        .into_iter()
        .map(|name| {
            let curve = &curves[name];
            Ok(ComparisonRow {
                algorithm: name.clone(),
                final_accuracy: curve.last().map_or(0.0, |p| p.1),
                rounds_to_target: rounds_to_target(curve, target),
                speedup: speedup(base, curve)?,
            })
        })
        .collect()
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.algorithm.clone(),
                format!("{:.4}", r.final_accuracy),
                r.rounds_to_target.map_or("-".into(), |n| n.to_string()),
                r.speedup.to_string(),
            ]
        })
        .collect();
    let header = ["algorithm", "final_accuracy", "rounds_to_target", "speedup"];
    let mut widths = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |row: [&str; 4]| {
        let padded: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut text = line(header) + "\n";
    for row in &cells {
        text += &line([&row[0], &row[1], &row[2], &row[3]]);
        text.push('\n');
    }
    text
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut text = String::from("algorithm,final_accuracy,rounds_to_target,speedup\n");
    for r in rows {
        let speed = match r.speedup {
            crate::metrics::Speedup::Factor(x) => x.to_string(),
            crate::metrics::Speedup::Never => "<1×".into(),
        };
        let rounds = r.rounds_to_target.map(|n| n.to_string()).unwrap_or_default();
        writeln!(text, "{},{},{},{}", r.algorithm, r.final_accuracy, rounds, speed).expect("string write");
    }
    text
}

pub fn cmd_compare(inputs: &[PathBuf], baseline: &str, out: Option<&Path>) -> Result<()> {
    let mut points: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for path in inputs {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        for (name, pts) in parse_rounds_csv(&text, path)? {
            if points.insert(name.clone(), pts).is_some() {
                return Err(Error::Input(format!(
                    "algorithm `{name}` appears in more than one input"
                )));
            }
        }
    }
    let curves = points
        .into_iter()
        .map(|(k, v)| Ok((k, Curve::new(v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let rows = compare_curves(&curves, baseline)?;
    let csv = comparison_csv(&rows);
    print!("{}\n{}", comparison_table(&rows), csv);
    if let Some(path) = out {
        fs::write(path, csv)?;
    }
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parse `args`, dispatch, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            workers,
        } => cmd_run(&config, out, seed, workers),
        Command::Partition { config, out, seed } => cmd_partition(&config, out, seed),
        Command::Compare { baseline, out, inputs } => cmd_compare(&inputs, &baseline, out.as_deref()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

//! The `advrepair` command line. Every subcommand runs in-process by
//! default; with `--server` the batch commands are sent to a running
//! service instead and print the same reports.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use advrepair_client::{Client, ClientError};
use advrepair_core::api::{
    run_calibrate, run_calibrate_scored, run_detect, run_repair, run_simulate, BatchInput, CalibrateRequest,
    DetectRequest, ErrorKind, OpError, RepairAccuracy, RepairRequest, SimulateRequest,
};
use advrepair_core::batch::{parse_jsonl, to_jsonl};
use advrepair_core::classifier::{accuracy, train_builtin, BuiltinClassifier, TrainConfig};
use advrepair_core::config::{ConfigError, RunConfig};
use advrepair_core::detector::DetectionMetrics;
use advrepair_core::embedding::load_embeddings;
use advrepair_core::Method;
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Transport(_) => EXIT_TRANSPORT,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Transport(m) => write!(f, "transport error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<OpError> for CliError {
    fn from(e: OpError) -> Self {
        match e.kind {
            ErrorKind::Config => CliError::Config(e.message),
            ErrorKind::Io => CliError::Io(e.message),
            ErrorKind::Transport => CliError::Transport(e.message),
            ErrorKind::Internal => CliError::Transport(format!("service failure: {}", e.message)),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        let kind = e.kind();
        OpError {
            kind,
            message: e.to_string(),
        }
        .into()
    }
}

#[derive(Parser, Debug)]
#[command(name = "advrepair", version, about = "Detect and repair adversarial text inputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a built-in classifier on a JSONL dataset.
    Train(TrainArgs),
    /// Pick the detection threshold from a labelled dataset.
    Calibrate(DataArgs),
    /// Flag adversarial inputs.
    Detect(InputArgs),
    /// Flag and repair adversarial inputs.
    Repair(InputArgs),
    /// Monte-Carlo check of the sequential test's error rates.
    Simulate(SimulateArgs),
}

/// Flags shared by every subcommand. Each one overrides the same key of
/// the `--config` file.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat key = value file with defaults for any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model files, comma separated.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<PathBuf>>,
    /// Word vectors in `word v1 .. vD` text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Remote classifier endpoints, comma separated.
    #[arg(long, value_delimiter = ',')]
    classifier_url: Option<Vec<String>>,
    /// Label names of remote classifiers in column order.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    translator_url: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Calibration report to take epsilon from.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    method: Option<Method>,
    /// Maximum words replaced per candidate.
    #[arg(long = "g")]
    g: Option<usize>,
    /// Synonyms considered per word.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Target languages for back-translation, comma separated.
    #[arg(long, value_delimiter = ',')]
    languages: Option<Vec<String>>,
    #[arg(long)]
    source_language: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Zero timing columns so that reports replay byte for byte.
    #[arg(long)]
    reproducible: bool,
    /// Base URL of a running advrepair service.
    #[arg(long)]
    server: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    retries: Option<u32>,
}

impl Common {
    fn flags(&self) -> RunConfig {
        RunConfig {
            epsilon: self.epsilon,
            calibration: self.calibration.clone(),
            alpha: self.alpha,
            beta: self.beta,
            rho: self.rho,
            sigma: self.sigma,
            budget: self.budget,
            method: self.method,
            g: self.g,
            l: self.l,
            languages: self.languages.clone(),
            source_language: self.source_language.clone(),
            seed: self.seed,
            models: self.models.clone(),
            embeddings: self.embeddings.clone(),
            classifier_url: self.classifier_url.clone(),
            labels: self.labels.clone(),
            translator_url: self.translator_url.clone(),
            timeout_ms: self.timeout_ms,
            retries: self.retries,
            out: self.out.clone(),
            workers: self.workers,
            reproducible: self.reproducible.then_some(true),
            server: self.server.clone(),
        }
    }

    /// Config file layered under the flags, validated before any work.
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(p) => RunConfig::load_file(p)?,
            None => RunConfig::default(),
        };
        let cfg = file.merge(self.flags());
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSONL dataset of {"text", "label"} objects.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// JSONL dataset with "label" or "adversarial" fields.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// JSONL inputs, or `-` for standard input.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Probability that a sample supports the tested label.
    #[arg(long)]
    q: f64,
    #[arg(long, default_value_t = 5000)]
    trials: u64,
    /// Samples per stream before it counts as inconclusive.
    #[arg(long)]
    cap: Option<u64>,
    #[command(flatten)]
    common: Common,
}

/// Run the command line with `args` (including the program name) and
/// return the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, stdout),
        Command::Calibrate(a) => cmd_calibrate(a, stdout, stderr),
        Command::Detect(a) => cmd_detect(a, stdout, stderr),
        Command::Repair(a) => cmd_repair(a, stdout, stderr),
        Command::Simulate(a) => cmd_simulate(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(|e| io_err(path, e))?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Write to `--out` when given, otherwise to `stdout`.
fn emit(cfg: &RunConfig, stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => fs::write(path, text).map_err(|e| io_err(path, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn client(url: &str) -> Result<Client, CliError> {
    Ok(Client::new(url)?)
}

fn cmd_train(args: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("train needs --out for the model file".into()))?;
    let emb_path = cfg
        .embeddings
        .clone()
        .ok_or_else(|| CliError::Config("train needs --embeddings".into()))?;
    let seed = cfg.seed.unwrap_or(0);
    let mut train_cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        train_cfg.learning_rate = lr;
    }
    if let Some(s) = args.init_scale {
        train_cfg.init_scale = s;
    }

    let text = fs::read_to_string(&args.data).map_err(|e| io_err(&args.data, e))?;
    let lines = parse_jsonl(text.as_bytes()).map_err(|e| io_err(&args.data, e))?;
    let mut data = Vec::with_capacity(lines.len());
    for line in lines {
        let item = line.item.map_err(|e| io_err(&args.data, e))?;
        let label = item
            .label
            .ok_or_else(|| io_err(&args.data, format!("line {}: missing \"label\"", line.line)))?;
        data.push((item.text, label));
    }
    let mut labels: Vec<String> = Vec::new();
    for (_, l) in &data {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    if labels.len() < 2 {
        return Err(io_err(&args.data, "dataset needs at least two distinct labels"));
    }

    let file = fs::File::open(&emb_path).map_err(|e| io_err(&emb_path, e))?;
    let store = load_embeddings(BufReader::new(file), None).map_err(|e| io_err(&emb_path, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data.shuffle(&mut rng);
    let cut = (data.len() * 4).div_ceil(5);
    let (train, test) = data.split_at(cut);
    let embedding_ref = emb_path.display().to_string();
    let model = train_builtin(train, &labels, &store, &embedding_ref, &train_cfg)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let classifier = BuiltinClassifier::new("trained", model.clone(), std::sync::Arc::new(store))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let score = |set: &[(String, String)]| accuracy(&classifier, set).map_err(|e| CliError::Config(e.to_string()));
    let (train_acc, test_acc) = (score(train)?, score(test)?);

    let json = serde_json::to_string_pretty(&model).expect("models serialize") + "\n";
    fs::write(&out, json).map_err(|e| io_err(&out, e))?;
    writeln!(
        stdout,
        "train_accuracy={train_acc:.4} test_accuracy={test_acc:.4} train_size={} test_size={}",
        train.len(),
        test.len()
    )
    .map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_calibrate(args: &DataArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let req = CalibrateRequest {
        input: BatchInput::from_jsonl(read_input(&args.data)?),
        seed: Some(cfg.seed.unwrap_or(0)),
        params: None,
    };
    let report = match (&cfg.server, run_calibrate_scored(&req)) {
        (None, Some(scored)) => scored?,
        (Some(url), _) => client(url)?.calibrate(&req)?,
        (None, None) => {
            let backends = cfg.load_backends(0.0)?;
            run_calibrate(&req, &backends)?
        }
    };
    if report.low_confidence {
        let _ = writeln!(
            stderr,
            "warning: low confidence calibration from only {} samples",
            report.samples
        );
    }
    let json = serde_json::to_string_pretty(&report).expect("reports serialize") + "\n";
    emit(&cfg, stdout, &json)
}

fn summary_line(m: &DetectionMetrics) -> String {
    format!(
        "summary: detection_rate={:.4} false_positive_rate={:.4} tp={} fp={} tn={} fn={}",
        m.detection_rate, m.false_positive_rate, m.tp, m.fp, m.tn, m.fn_
    )
}

/// Epsilon for a local run, or the explicit override for a remote one.
fn epsilon_for(cfg: &RunConfig) -> Result<Option<f64>, CliError> {
    if cfg.server.is_some() && cfg.epsilon.is_none() && cfg.calibration.is_none() {
        return Ok(None);
    }
    Ok(Some(cfg.resolve_epsilon()?))
}

fn cmd_detect(args: &InputArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let epsilon = epsilon_for(&cfg)?;
    let req = DetectRequest {
        input: BatchInput::from_jsonl(read_input(&args.input)?),
        epsilon,
        workers: Some(cfg.workers()?),
    };
    let resp = match &cfg.server {
        Some(url) => client(url)?.detect(&req)?,
        None => {
            let backends = cfg.load_backends(epsilon.expect("local runs resolve epsilon"))?;
            run_detect(&req, &backends)?
        }
    };
    emit(&cfg, stdout, &to_jsonl(&resp.records))?;
    if let Some(m) = &resp.summary {
        let _ = writeln!(stderr, "{}", summary_line(m));
    }
    Ok(())
}

fn accuracy_line(a: &RepairAccuracy) -> String {
    format!("repair accuracy: {}/{} = {:.4}", a.correct, a.adversarial, a.accuracy)
}

/// Keys the service accepts per request.
fn tunables(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        epsilon: cfg.epsilon,
        alpha: cfg.alpha,
        beta: cfg.beta,
        rho: cfg.rho,
        sigma: cfg.sigma,
        budget: cfg.budget,
        method: cfg.method,
        g: cfg.g,
        l: cfg.l,
        languages: cfg.languages.clone(),
        source_language: cfg.source_language.clone(),
        seed: cfg.seed,
        workers: cfg.workers,
        reproducible: cfg.reproducible,
        ..Default::default()
    }
}

fn cmd_repair(args: &InputArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let epsilon = epsilon_for(&cfg)?;
    let input = BatchInput::from_jsonl(read_input(&args.input)?);
    let resp = match &cfg.server {
        Some(url) => {
            let mut config = tunables(&cfg);
            config.epsilon = epsilon;
            client(url)?.repair(&RepairRequest { input, config })?
        }
        None => {
            let epsilon = epsilon.expect("local runs resolve epsilon");
            if cfg.method == Some(Method::Parap) && cfg.translator_url.is_none() {
                return Err(CliError::Config("method parap needs --translator-url".into()));
            }
            let backends = cfg.load_backends(epsilon)?;
            let req = RepairRequest {
                input,
                config: RunConfig::default(),
            };
            run_repair(&req, &cfg, &backends)?
        }
    };
    emit(&cfg, stdout, &to_jsonl(&resp.records))?;
    if let Some(a) = &resp.accuracy {
        let _ = writeln!(stderr, "{}", accuracy_line(a));
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let req = SimulateRequest {
        config: tunables(&cfg),
        q: args.q,
        trials: args.trials,
        cap: args.cap,
    };
    let report = match &cfg.server {
        Some(url) => client(url)?.simulate(&req)?,
        None => run_simulate(&req)?,
    };
    let json = serde_json::to_string_pretty(&report).expect("reports serialize") + "\n";
    emit(&cfg, stdout, &json)
}

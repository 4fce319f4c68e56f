//! Request and response bodies of the HTTP service, and the operations
//! behind them. The command line calls the same operations directly when
//! no server is configured, so local and remote runs print the same
//! reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{
    calibrate_items, calibrate_scored, detect_records, detection_summary, parse_jsonl, parse_scored, CalibrateError,
    CalibrationReport, InputItem, ParsedLine, RepairBatch,
};
use crate::config::{Backends, ConfigError, RunConfig};
use crate::detector::{CalibrationParams, DetectionMetrics};
use crate::repair::{RepairConfig, Resources};
use crate::report::{repair_accuracy, ReportRecord};
use crate::services::Translator;
use crate::voting::{simulate, SimulationReport};

/// Inputs as raw JSONL text or as already parsed items; exactly one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jsonl: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<InputItem>>,
}

impl BatchInput {
    pub fn from_jsonl(text: impl Into<String>) -> Self {
        BatchInput {
            jsonl: Some(text.into()),
            items: None,
        }
    }

    pub fn lines(&self) -> Result<Vec<ParsedLine>, ConfigError> {
        match (&self.jsonl, &self.items) {
            (Some(text), None) => parse_jsonl(text.as_bytes()).map_err(|e| ConfigError::Invalid(e.to_string())),
            (None, Some(items)) => Ok(items
                .iter()
                .enumerate()
                .map(|(i, item)| ParsedLine {
                    line: i + 1,
                    item: Ok(item.clone()),
                })
                .collect()),
            _ => Err(ConfigError::Invalid("give exactly one of jsonl or items".into())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    #[serde(flatten)]
    pub input: BatchInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub records: Vec<ReportRecord>,
    /// Present when some input carried an `adversarial` ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<DetectionMetrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairRequest {
    #[serde(flatten)]
    pub input: BatchInput,
    /// Tunables for this run. Backend keys (models, urls, paths) are
    /// ignored by the service.
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairAccuracy {
    pub correct: usize,
    pub adversarial: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairResponse {
    pub records: Vec<ReportRecord>,
    /// Present when some detected adversarial carried a truth label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<RepairAccuracy>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrateRequest {
    #[serde(flatten)]
    pub input: BatchInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<CalibrationParams>,
}

/// Default cap on samples per simulated stream.
pub const SIMULATION_CAP: u64 = 100_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    /// SPRT tunables; other keys are ignored.
    #[serde(default)]
    pub config: RunConfig,
    pub q: f64,
    pub trials: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models: Vec<String>,
    pub labels: Vec<String>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Io,
    Transport,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: ErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpError {
    pub kind: ErrorKind,
    pub message: String,
}

impl std::fmt::Display for OpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for OpError {}

impl From<ConfigError> for OpError {
    fn from(e: ConfigError) -> Self {
        OpError {
            kind: if e.is_io() { ErrorKind::Io } else { ErrorKind::Config },
            message: e.to_string(),
        }
    }
}

impl From<CalibrateError> for OpError {
    fn from(e: CalibrateError) -> Self {
        let transport = match &e {
            CalibrateError::Detector(crate::detector::DetectorError::Classifier(c)) => c.is_transport(),
            CalibrateError::Item { transport, .. } => *transport,
            _ => false,
        };
        OpError {
            kind: if transport {
                ErrorKind::Transport
            } else {
                ErrorKind::Config
            },
            message: e.to_string(),
        }
    }
}

pub fn run_detect(req: &DetectRequest, backends: &Backends) -> Result<DetectResponse, OpError> {
    let lines = req.input.lines()?;
    let detector = match req.epsilon {
        Some(e) => backends
            .detector
            .with_epsilon(e)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        None => backends.detector.clone(),
    };
    let workers = req.workers.unwrap_or(1).max(1);
    let records = detect_records(&lines, &detector, workers);
    let summary = detection_summary(&lines, &records);
    Ok(DetectResponse { records, summary })
}

/// Repair every input. `base` supplies defaults that `req.config` overrides.
pub fn run_repair(req: &RepairRequest, base: &RunConfig, backends: &Backends) -> Result<RepairResponse, OpError> {
    let cfg = base.clone().merge(req.config.clone());
    cfg.validate()?;
    let lines = req.input.lines()?;
    let detector = match cfg.epsilon {
        Some(e) => backends
            .detector
            .with_epsilon(e)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        None => backends.detector.clone(),
    };
    let perturb = cfg.perturb()?;
    let translator: Option<&dyn Translator> = backends.translator.as_deref();
    if perturb.method == crate::perturb::Method::Parap && translator.is_none() {
        return Err(ConfigError::Invalid("method parap needs a translator url".into()).into());
    }
    let config = RepairConfig {
        detector,
        perturb,
        sprt: cfg.sprt()?,
    };
    let batch = RepairBatch {
        config: &config,
        resources: Resources {
            store: backends.require_store()?,
            translator,
        },
        workers: cfg.workers()?,
        reproducible: cfg.reproducible.unwrap_or(false),
    };
    let records = batch.run(&lines);
    let accuracy = repair_accuracy(&records).map(|(correct, adversarial, accuracy)| RepairAccuracy {
        correct,
        adversarial,
        accuracy,
    });
    Ok(RepairResponse { records, accuracy })
}

/// Calibrate from pre-scored records when the input has that shape.
/// Needs no models; `None` means the input holds text items.
pub fn run_calibrate_scored(req: &CalibrateRequest) -> Option<Result<CalibrationReport, OpError>> {
    let samples = match (&req.input.jsonl, &req.input.items) {
        (Some(text), None) => parse_scored(text)?,
        _ => return None,
    };
    let params = req.params.unwrap_or_default();
    Some(
        samples
            .map_err(|m| OpError::from(ConfigError::Invalid(m)))
            .and_then(|s| Ok(calibrate_scored(&s, &params, req.seed.unwrap_or(0))?)),
    )
}

pub fn run_calibrate(req: &CalibrateRequest, backends: &Backends) -> Result<CalibrationReport, OpError> {
    if let Some(scored) = run_calibrate_scored(req) {
        return scored;
    }
    let lines = req.input.lines()?;
    let items = lines
        .into_iter()
        .map(|l| l.item.map_err(ConfigError::Invalid))
        .collect::<Result<Vec<_>, _>>()?;
    let params = req.params.unwrap_or_default();
    Ok(calibrate_items(
        &items,
        &backends.detector,
        &params,
        req.seed.unwrap_or(0),
    )?)
}

pub fn run_simulate(req: &SimulateRequest) -> Result<SimulationReport, OpError> {
    let params = req.config.sprt()?;
    let invalid = |m: String| OpError::from(ConfigError::Invalid(m));
    if !(req.q > 0.0 && req.q <= 1.0) {
        return Err(invalid(format!("q must lie in (0, 1], got {}", req.q)));
    }
    if req.trials == 0 {
        return Err(invalid("trials must be at least 1".into()));
    }
    let cap = req.cap.unwrap_or(SIMULATION_CAP);
    if cap == 0 {
        return Err(invalid("cap must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(req.config.seed.unwrap_or(0));
    simulate(&params, req.q, req.trials, cap, &mut rng).map_err(|e| invalid(e.to_string()))
}

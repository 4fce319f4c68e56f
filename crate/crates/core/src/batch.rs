//! Batch processing shared by the command line and the service: JSONL
//! input parsing, an order-preserving worker pool and report assembly.

use std::io::BufRead;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::detector::{
    calibrate_epsilon, detection_metrics, CalibrationParams, DetectionMetrics, Detector, DetectorError, ScoredSample,
};
use crate::repair::{repair, RepairConfig, Resources};
use crate::report::ReportRecord;

/// One input line: `{"text": ..., "id"?: ..., "label"?: ..., "adversarial"?: ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputItem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub text: String,
    /// Ground-truth class name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Ground truth for detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<bool>,
}

impl InputItem {
    pub fn new(text: impl Into<String>) -> Self {
        InputItem {
            id: None,
            text: text.into(),
            label: None,
            adversarial: None,
        }
    }

    /// The `id` field rendered as a string, or the 1-based line number.
    pub fn id_or(&self, line: usize) -> String {
        match &self.id {
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => line.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLine {
    /// 1-based line number in the source.
    pub line: usize,
    pub item: Result<InputItem, String>,
}

impl ParsedLine {
    pub fn id(&self) -> String {
        match &self.item {
            Ok(item) => item.id_or(self.line),
            Err(_) => self.line.to_string(),
        }
    }
}

/// Parse JSONL, skipping blank lines. Malformed lines are kept as errors
/// so that callers can report them in place.
pub fn parse_jsonl<R: BufRead>(reader: R) -> std::io::Result<Vec<ParsedLine>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str::<InputItem>(&line).map_err(|e| format!("line {}: {e}", i + 1));
        out.push(ParsedLine { line: i + 1, item });
    }
    Ok(out)
}

/// Apply `f` to every item on up to `workers` threads; results come back
/// in input order.
pub fn run_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every item processed"))
        .collect()
}

pub fn detect_records(lines: &[ParsedLine], detector: &Detector, workers: usize) -> Vec<ReportRecord> {
    run_ordered(lines, workers, |_, line| {
        let id = line.id();
        let item = match &line.item {
            Ok(item) => item,
            Err(e) => return ReportRecord::error(&id, e.clone()),
        };
        let started = Instant::now();
        match detector.check(&item.text) {
            Ok(v) => ReportRecord::detection(&id, &v, started.elapsed()).with_truth(item.label.clone()),
            Err(e) => ReportRecord::error(&id, e.to_string()).with_truth(item.label.clone()),
        }
    })
}

/// Detection rate and false positive rate over lines that carry an
/// `adversarial` ground truth; `None` when no line does.
pub fn detection_summary(lines: &[ParsedLine], records: &[ReportRecord]) -> Option<DetectionMetrics> {
    use crate::report::Verdict;
    let pairs: Vec<(bool, bool)> = lines
        .iter()
        .zip(records)
        .filter_map(|(line, rec)| {
            let truth = line.item.as_ref().ok()?.adversarial?;
            match rec.verdict {
                Verdict::Error => None,
                v => Some((v == Verdict::Adversarial, truth)),
            }
        })
        .collect();
    (!pairs.is_empty()).then(|| detection_metrics(&pairs))
}

/// Seed used for the perturbation stream of input `index`.
pub fn item_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

pub struct RepairBatch<'a> {
    pub config: &'a RepairConfig,
    pub resources: Resources<'a>,
    pub workers: usize,
    /// Zero every timing column so that replays are byte-identical.
    pub reproducible: bool,
}

impl RepairBatch<'_> {
    pub fn run(&self, lines: &[ParsedLine]) -> Vec<ReportRecord> {
        run_ordered(lines, self.workers, |i, line| {
            let id = line.id();
            let item = match &line.item {
                Ok(item) => item,
                Err(e) => return ReportRecord::error(&id, e.clone()),
            };
            let mut config = self.config.clone();
            config.perturb.seed = item_seed(self.config.perturb.seed, i);
            let started = Instant::now();
            let record = match repair(&item.text, &config, &self.resources) {
                Ok(run) => ReportRecord::repair(&id, &run, started.elapsed()),
                Err(e) => {
                    let mut r = ReportRecord::error(&id, e.to_string());
                    r.candidates_generated = e.stats.candidates_generated;
                    r.candidates_filtered = e.stats.candidates_filtered;
                    r.labels_rejected = e.stats.labels_rejected;
                    r
                }
            }
            .with_truth(item.label.clone());
            if self.reproducible {
                record.without_timing()
            } else {
                record
            }
        })
    }
}

/// JSONL rendering of `records`, one object per line.
pub fn to_jsonl(records: &[ReportRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

/// Calibration sets smaller than this are flagged as low confidence.
pub const LOW_CONFIDENCE_SAMPLES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrateError {
    #[error("no misclassified samples available; use a larger labelled dataset or mark adversarial items explicitly")]
    NoMisclassified,
    #[error("calibration needs both adversarial and normal items")]
    OneSided,
    #[error("item {id}: {message}")]
    Item {
        id: String,
        message: String,
        transport: bool,
    },
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationSource {
    /// Items carried an explicit `adversarial` flag.
    AdversarialField,
    /// Misclassified items stand in for adversarial ones.
    Misclassified,
    /// Pre-computed `{"d_kl", "adversarial"}` records.
    Scored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub epsilon: f64,
    pub accuracy: f64,
    pub iterations: usize,
    pub samples: usize,
    pub positives: usize,
    pub negatives: usize,
    pub source: CalibrationSource,
    pub low_confidence: bool,
}

/// Build a balanced set of scored samples. With explicit `adversarial`
/// flags those are used; otherwise items the first model misclassifies
/// count as positives. The larger side is downsampled with `seed`.
pub fn calibration_samples(
    items: &[InputItem],
    detector: &Detector,
    seed: u64,
) -> Result<(Vec<ScoredSample>, CalibrationSource), CalibrateError> {
    let explicit = items.iter().any(|i| i.adversarial.is_some());
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (n, item) in items.iter().enumerate() {
        let fail = |message: String, transport: bool| CalibrateError::Item {
            id: item.id_or(n + 1),
            message,
            transport,
        };
        let positive = if explicit {
            match item.adversarial {
                Some(flag) => flag,
                None => continue,
            }
        } else {
            let Some(truth) = &item.label else {
                return Err(fail("missing \"label\"".into(), false));
            };
            if detector.labels().index_of(truth).is_none() {
                return Err(fail(format!("unknown label {truth:?}"), false));
            }
            let p = detector.models()[0]
                .classify(&item.text)
                .map_err(|e| fail(e.to_string(), e.is_transport()))?;
            p.label_name() != truth
        };
        let d_kl = detector
            .check(&item.text)
            .map_err(|e| {
                let transport = matches!(&e, DetectorError::Classifier(c) if c.is_transport());
                fail(e.to_string(), transport)
            })?
            .d_kl;
        let sample = ScoredSample {
            d_kl,
            adversarial: positive,
        };
        if positive {
            positives.push(sample);
        } else {
            negatives.push(sample);
        }
    }
    if positives.is_empty() && !explicit {
        return Err(CalibrateError::NoMisclassified);
    }
    let source = if explicit {
        CalibrationSource::AdversarialField
    } else {
        CalibrationSource::Misclassified
    };
    Ok((balance(positives, negatives, seed)?, source))
}

/// Downsample the larger side to the size of the smaller one.
fn balance(
    mut positives: Vec<ScoredSample>,
    mut negatives: Vec<ScoredSample>,
    seed: u64,
) -> Result<Vec<ScoredSample>, CalibrateError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(CalibrateError::OneSided);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = positives.len().min(negatives.len());
    for side in [&mut positives, &mut negatives] {
        if side.len() > keep {
            side.shuffle(&mut rng);
            side.truncate(keep);
        }
    }
    positives.extend(negatives);
    Ok(positives)
}

/// Parse pre-scored calibration records, one `{"d_kl": f, "adversarial": b}`
/// object per line. Returns `None` when the first non-blank line is not of
/// that shape, so callers can fall back to text items.
pub fn parse_scored(text: &str) -> Option<Result<Vec<ScoredSample>, String>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let (_, first) = lines.peek()?;
    let probe: Value = serde_json::from_str(first).ok()?;
    if probe.get("d_kl").is_none() || probe.get("text").is_some() {
        return None;
    }
    Some(
        lines
            .map(|(i, l)| {
                let s: ScoredSample = serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1))?;
                if s.d_kl.is_finite() && s.d_kl >= 0.0 {
                    Ok(s)
                } else {
                    Err(format!("line {}: d_kl must be finite and non-negative", i + 1))
                }
            })
            .collect(),
    )
}

/// Calibrate directly on scored samples, balanced with `seed`.
pub fn calibrate_scored(
    samples: &[ScoredSample],
    params: &CalibrationParams,
    seed: u64,
) -> Result<CalibrationReport, CalibrateError> {
    let (pos, neg) = samples.iter().partition(|s| s.adversarial);
    report(balance(pos, neg, seed)?, CalibrationSource::Scored, params)
}

fn report(
    samples: Vec<ScoredSample>,
    source: CalibrationSource,
    params: &CalibrationParams,
) -> Result<CalibrationReport, CalibrateError> {
    let c = calibrate_epsilon(&samples, params)?;
    let positives = samples.iter().filter(|s| s.adversarial).count();
    Ok(CalibrationReport {
        epsilon: c.epsilon,
        accuracy: c.accuracy,
        iterations: c.iterations,
        samples: samples.len(),
        positives,
        negatives: samples.len() - positives,
        source,
        low_confidence: samples.len() < LOW_CONFIDENCE_SAMPLES,
    })
}

pub fn calibrate_items(
    items: &[InputItem],
    detector: &Detector,
    params: &CalibrationParams,
    seed: u64,
) -> Result<CalibrationReport, CalibrateError> {
    let (samples, source) = calibration_samples(items, detector, seed)?;
    report(samples, source, params)
}

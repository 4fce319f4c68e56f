//! Differential testing with a KL-divergence gate, threshold calibration by
//! golden-section search, and detection metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, ClassifierHandle, LabelSet, ProbVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("probability vectors have different lengths ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("a detector needs at least two models, got {0}")]
    TooFewModels(usize),
    #[error("expected exactly {expected} models, got {found}")]
    ModelCount { expected: usize, found: usize },
    #[error("epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error("model {id} labels {found:?} differ from {expected:?}")]
    LabelMismatch {
        id: String,
        expected: LabelSet,
        found: LabelSet,
    },
    #[error("degenerate search range [{lo}, {hi}] (tol {tol})")]
    DegenerateRange { lo: f64, hi: f64, tol: f64 },
    #[error("calibration set is empty")]
    EmptyScores,
    #[error("calibration set needs both adversarial and normal samples")]
    SingleClass,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// `sum_i p_i ln(p_i / q_i)` with `0 ln(0/q) = 0`. The first argument is the
/// reference distribution.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, DetectorError> {
    if p.len() != q.len() {
        return Err(DetectorError::DimensionMismatch(p.len(), q.len()));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum())
}

pub fn kl(p: &ProbVector, q: &ProbVector) -> Result<f64, DetectorError> {
    kl_divergence(p.probs(), q.probs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionVerdict {
    pub adversarial: bool,
    /// Divergence between the first two models; the maximum over model
    /// pairs when there are more.
    pub d_kl: f64,
    pub labels: Vec<usize>,
    pub probs: Vec<ProbVector>,
}

impl DetectionVerdict {
    /// Build a verdict from per-model outputs. Pairs are taken in model
    /// order with the lower-indexed model as the reference distribution.
    pub fn from_probs(probs: Vec<ProbVector>, epsilon: f64) -> Result<Self, DetectorError> {
        let labels: Vec<usize> = probs.iter().map(ProbVector::label).collect();
        let mut d_kl: f64 = 0.0;
        for i in 0..probs.len() {
            for j in i + 1..probs.len() {
                d_kl = d_kl.max(kl(&probs[i], &probs[j])?);
            }
        }
        let agree = labels.windows(2).all(|w| w[0] == w[1]);
        Ok(DetectionVerdict {
            adversarial: !(agree && d_kl < epsilon),
            d_kl,
            labels,
            probs,
        })
    }

    /// The shared label when every model agrees.
    pub fn agreed_label(&self) -> Option<usize> {
        let first = *self.labels.first()?;
        self.labels.iter().all(|l| *l == first).then_some(first)
    }
}

#[derive(Clone)]
pub struct Detector {
    epsilon: f64,
    models: Vec<ClassifierHandle>,
}

impl std::fmt::Debug for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Detector")
            .field("epsilon", &self.epsilon)
            .field("models", &self.models.iter().map(|m| m.id()).collect::<Vec<_>>())
            .finish()
    }
}

impl Detector {
    pub fn new(epsilon: f64, models: Vec<ClassifierHandle>) -> Result<Self, DetectorError> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(DetectorError::InvalidEpsilon(epsilon));
        }
        if models.len() < 2 {
            return Err(DetectorError::TooFewModels(models.len()));
        }
        let expected = models[0].labels().clone();
        for m in &models[1..] {
            if *m.labels() != expected {
                return Err(DetectorError::LabelMismatch {
                    id: m.id().to_string(),
                    expected,
                    found: m.labels().clone(),
                });
            }
        }
        Ok(Detector { epsilon, models })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn models(&self) -> &[ClassifierHandle] {
        &self.models
    }

    pub fn labels(&self) -> &LabelSet {
        self.models[0].labels()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, DetectorError> {
        Detector::new(epsilon, self.models.clone())
    }

    /// Classify `text` with every model and apply the agreement + KL gate.
    pub fn check(&self, text: &str) -> Result<DetectionVerdict, DetectorError> {
        let probs = self
            .models
            .iter()
            .map(|m| m.classify(text))
            .collect::<Result<Vec<_>, _>>()?;
        DetectionVerdict::from_probs(probs, self.epsilon)
    }

    /// Batched variant of [`Detector::check`]; one request per model.
    pub fn check_batch(&self, texts: &[&str]) -> Result<Vec<DetectionVerdict>, DetectorError> {
        let mut per_model = Vec::with_capacity(self.models.len());
        for m in &self.models {
            per_model.push(m.classify_batch(texts)?);
        }
        (0..texts.len())
            .map(|i| {
                let probs = per_model.iter().map(|rows| rows[i].clone()).collect();
                DetectionVerdict::from_probs(probs, self.epsilon)
            })
            .collect()
    }

    /// The two-model check: normal only when both labels agree and the
    /// divergence is below epsilon.
    pub fn is_adversarial(&self, text: &str) -> Result<DetectionVerdict, DetectorError> {
        self.expect_models(2)?;
        self.check(text)
    }

    /// The three-model check: adversarial when any pair disagrees on the
    /// label or any pairwise divergence reaches epsilon.
    pub fn is_adversarial_multi(&self, text: &str) -> Result<DetectionVerdict, DetectorError> {
        self.expect_models(3)?;
        self.check(text)
    }

    fn expect_models(&self, expected: usize) -> Result<(), DetectorError> {
        if self.models.len() != expected {
            return Err(DetectorError::ModelCount {
                expected,
                found: self.models.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub d_kl: f64,
    pub adversarial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            lo: 0.0,
            hi: 10.0,
            tol: 1e-3,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub epsilon: f64,
    pub accuracy: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenSearch {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

/// 1/phi
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the maximum of `f` on `[lo, hi]`.
///
/// Two interior points `m1 < m2` split the interval in the golden ratio.
/// When `f(m1) >= f(m2)` the search keeps `[lo, m2]`, otherwise `[m1, hi]`,
/// so exact ties move toward the smaller argument. Stops once the interval
/// is narrower than `tol` or after `max_iter` iterations and returns the
/// midpoint of the final interval.
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GoldenSearch, DetectorError> {
    if !(lo.is_finite() && hi.is_finite() && tol > 0.0 && tol.is_finite()) || lo >= hi {
        return Err(DetectorError::DegenerateRange { lo, hi, tol });
    }
    let (mut a, mut b) = (lo, hi);
    let mut m1 = b - INV_PHI * (b - a);
    let mut m2 = a + INV_PHI * (b - a);
    let mut f1 = f(m1);
    let mut f2 = f(m2);
    let mut iterations = 0;
    while b - a >= tol && iterations < max_iter {
        if f1 >= f2 {
            b = m2;
            m2 = m1;
            f2 = f1;
            m1 = b - INV_PHI * (b - a);
            f1 = f(m1);
        } else {
            a = m1;
            m1 = m2;
            f1 = f2;
            m2 = a + INV_PHI * (b - a);
            f2 = f(m2);
        }
        iterations += 1;
    }
    let x = 0.5 * (a + b);
    Ok(GoldenSearch {
        x,
        value: f(x),
        iterations,
    })
}

/// Number of samples the rule `d_kl >= epsilon => adversarial` gets right.
pub fn threshold_correct(scored: &[ScoredSample], epsilon: f64) -> usize {
    scored.iter().filter(|s| (s.d_kl >= epsilon) == s.adversarial).count()
}

pub fn threshold_accuracy(scored: &[ScoredSample], epsilon: f64) -> f64 {
    if scored.is_empty() {
        return 0.0;
    }
    threshold_correct(scored, epsilon) as f64 / scored.len() as f64
}

/// Pick epsilon maximizing detection accuracy on `scored`.
///
/// Golden-section search runs first on the step-function accuracy. A sweep
/// over one representative threshold per constant-accuracy interval
/// (between consecutive distinct scores) then checks the result: when a
/// smaller-threshold interval is at least as accurate, its midpoint is
/// returned instead of the search's convergence point.
pub fn calibrate_epsilon(scored: &[ScoredSample], params: &CalibrationParams) -> Result<Calibration, DetectorError> {
    if scored.is_empty() {
        return Err(DetectorError::EmptyScores);
    }
    let adversarial = scored.iter().filter(|s| s.adversarial).count();
    if adversarial == 0 || adversarial == scored.len() {
        return Err(DetectorError::SingleClass);
    }
    let search = golden_section_max(
        |e| threshold_accuracy(scored, e),
        params.lo,
        params.hi,
        params.tol,
        params.max_iter,
    )?;

    let mut values: Vec<f64> = scored.iter().map(|s| s.d_kl).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let plateau_of = |e: f64| values.partition_point(|v| *v < e);

    let found_plateau = plateau_of(search.x);
    let found_correct = threshold_correct(scored, search.x);
    let mut best: Option<(usize, f64, usize)> = None;
    for eps in plateau_representatives(&values, params.lo, params.hi) {
        let correct = threshold_correct(scored, eps);
        if best.is_none_or(|(_, _, c)| correct > c) {
            best = Some((plateau_of(eps), eps, correct));
        }
    }
    let epsilon = match best {
        Some((plateau, eps, correct))
            if correct > found_correct || (correct == found_correct && plateau < found_plateau) =>
        {
            eps
        }
        _ => search.x,
    };
    Ok(Calibration {
        epsilon,
        accuracy: threshold_accuracy(scored, epsilon),
        iterations: search.iterations,
    })
}

/// One threshold inside each interval of constant accuracy that meets
/// `[lo, hi]`, in increasing order. Interval `p` is `(values[p-1], values[p]]`.
fn plateau_representatives(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() + 1);
    for p in 0..=values.len() {
        let right = if p == values.len() { hi } else { values[p].min(hi) };
        let (left, open) = if p == 0 || values[p - 1] < lo {
            (lo, false)
        } else {
            (values[p - 1], true)
        };
        let nonempty = if open { left < right } else { left <= right };
        if nonempty {
            out.push(0.5 * (left + right));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub detection_rate: f64,
    pub false_positive_rate: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// No true adversarials, so the detection rate is reported as 0.
    pub detection_rate_undefined: bool,
    /// Nothing flagged, so the false positive rate is reported as 0.
    pub false_positive_rate_undefined: bool,
}

/// `(flagged, truly_adversarial)` pairs to detection rate `tp / (tp + fn)`
/// and false positive rate `fp / (tp + fp)`.
pub fn detection_metrics(outcomes: &[(bool, bool)]) -> DetectionMetrics {
    let mut m = DetectionMetrics {
        detection_rate: 0.0,
        false_positive_rate: 0.0,
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
        detection_rate_undefined: false,
        false_positive_rate_undefined: false,
    };
    for &(flagged, truth) in outcomes {
        match (flagged, truth) {
            (true, true) => m.tp += 1,
            (false, false) => m.tn += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    if m.tp + m.fn_ == 0 {
        m.detection_rate_undefined = true;
    } else {
        m.detection_rate = m.tp as f64 / (m.tp + m.fn_) as f64;
    }
    if m.tp + m.fp == 0 {
        m.false_positive_rate_undefined = true;
    } else {
        m.false_positive_rate = m.fp as f64 / (m.tp + m.fp) as f64;
    }
    m
}

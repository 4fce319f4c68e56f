//! Repair orchestration: detect, stream filtered candidates, vote lazily
//! per witnessed label and return the earliest candidate carrying the
//! accepted label.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::detector::{DetectionVerdict, Detector, DetectorError};
use crate::embedding::EmbeddingStore;
use crate::perturb::{PerturbConfig, PerturbError, PerturbationStream, StreamDeps};
use crate::services::Translator;
use crate::text::split_sentences;
use crate::voting::{LabelVote, SprtParams, VoteStep};

#[derive(Debug, Clone)]
pub struct RepairConfig {
    pub detector: Detector,
    pub perturb: PerturbConfig,
    pub sprt: SprtParams,
}

impl RepairConfig {
    pub fn validate(&self) -> Result<(), PerturbError> {
        self.perturb.validate()
    }
}

/// Shared backends a repair run draws on besides the classifiers.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub store: &'a EmbeddingStore,
    pub translator: Option<&'a dyn Translator>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RepairStats {
    pub candidates_generated: usize,
    /// Candidates that passed the detector and joined the vote.
    pub candidates_filtered: usize,
    pub labels_rejected: usize,
    pub wall_time: Duration,
    pub detect_time: Duration,
    pub repair_time: Duration,
    pub translation_calls: u64,
    pub provider_latency: Duration,
}

/// A candidate that passed the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Accepted {
    pub text: String,
    pub label: usize,
    pub d_kl: f64,
}

/// Filtered candidates in generation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    pub accepted: Vec<Accepted>,
    pub rejected_as_adversarial: usize,
}

impl CandidateSet {
    pub fn first_with_label(&self, label: usize) -> Option<&Accepted> {
        self.accepted.iter().find(|c| c.label == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RepairOutcome {
    NotAdversarial {
        text: String,
    },
    Repaired {
        text: String,
        label: usize,
        stats: RepairStats,
    },
    Unrepaired {
        text: String,
        stats: RepairStats,
    },
}

impl RepairOutcome {
    pub fn stats(&self) -> Option<&RepairStats> {
        match self {
            RepairOutcome::NotAdversarial { .. } => None,
            RepairOutcome::Repaired { stats, .. } | RepairOutcome::Unrepaired { stats, .. } => Some(stats),
        }
    }
}

/// Outcome together with the detector's verdict on the original input.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairRun {
    pub input: DetectionVerdict,
    pub outcome: RepairOutcome,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepairFailure {
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("repair aborted after {} candidates: {failure}", stats.candidates_generated)]
pub struct RepairError {
    pub failure: RepairFailure,
    pub stats: RepairStats,
}

impl RepairError {
    pub fn is_transport(&self) -> bool {
        use crate::perturb::PerturbError as P;
        match &self.failure {
            RepairFailure::Detector(DetectorError::Classifier(c)) | RepairFailure::Perturb(P::Classifier(c)) => {
                c.is_transport()
            }
            RepairFailure::Perturb(P::Translate(t)) => t.is_transport(),
            _ => false,
        }
    }
}

/// Anything that yields candidate texts in order.
pub trait CandidateSource {
    fn next_candidate(&mut self) -> Result<Option<String>, PerturbError>;
}

impl CandidateSource for PerturbationStream<'_> {
    fn next_candidate(&mut self) -> Result<Option<String>, PerturbError> {
        PerturbationStream::next_candidate(self)
    }
}

impl<I: Iterator<Item = String>> CandidateSource for std::iter::Fuse<I> {
    fn next_candidate(&mut self) -> Result<Option<String>, PerturbError> {
        Ok(self.next())
    }
}

fn open_stream<'a>(
    x: &str,
    config: &'a RepairConfig,
    res: &Resources<'a>,
) -> Result<PerturbationStream<'a>, PerturbError> {
    let models = config.detector.models();
    PerturbationStream::open(
        split_sentences(x),
        config.perturb.clone(),
        StreamDeps {
            store: res.store,
            f1: models[0].as_ref(),
            f2: models[1].as_ref(),
            translator: res.translator,
        },
    )
}

/// Detect and, if flagged, repair `x`.
pub fn repair(x: &str, config: &RepairConfig, res: &Resources<'_>) -> Result<RepairRun, RepairError> {
    let started = Instant::now();
    let fail = |e: RepairFailure, stats: RepairStats| RepairError { failure: e, stats };
    let input = config
        .detector
        .check(x)
        .map_err(|e| fail(e.into(), RepairStats::default()))?;
    let detect_time = started.elapsed();
    if !input.adversarial {
        return Ok(RepairRun {
            input,
            outcome: RepairOutcome::NotAdversarial { text: x.to_string() },
        });
    }
    let mut stream = open_stream(x, config, res).map_err(|e| fail(e.into(), RepairStats::default()))?;
    let result = vote_over(x, &input, &mut stream, &config.detector, &config.sprt);
    let finish = |mut stats: RepairStats, stream: &PerturbationStream<'_>| {
        stats.detect_time = detect_time;
        stats.wall_time = started.elapsed();
        stats.repair_time = stats.wall_time.saturating_sub(detect_time);
        stats.translation_calls = stream.translation_calls();
        stats.provider_latency = stream.provider_latency();
        stats
    };
    let outcome = match result {
        Ok(mut outcome) => {
            if let RepairOutcome::Repaired { stats, .. } | RepairOutcome::Unrepaired { stats, .. } = &mut outcome {
                *stats = finish(std::mem::take(stats), &stream);
            }
            outcome
        }
        Err(mut e) => {
            e.stats = finish(e.stats, &stream);
            return Err(e);
        }
    };
    Ok(RepairRun { input, outcome })
}

/// The voting loop over an arbitrary candidate source, for an input the
/// detector already flagged with `input`.
pub fn vote_over(
    x: &str,
    input: &DetectionVerdict,
    source: &mut dyn CandidateSource,
    detector: &Detector,
    sprt: &SprtParams,
) -> Result<RepairOutcome, RepairError> {
    let num_labels = detector.labels().len();
    let mut vote = LabelVote::new(*sprt, num_labels);
    if let Some(label) = input.agreed_label() {
        vote.seed_rejected(label);
    }
    let mut set = CandidateSet::default();
    let mut stats = RepairStats::default();
    loop {
        // once every label is rejected no candidate can change the result
        if (0..num_labels).all(|l| vote.is_rejected(l)) {
            break;
        }
        let candidate = match source.next_candidate() {
            Ok(Some(c)) => c,
            Ok(None) => break,
            Err(e) => {
                stats.labels_rejected = vote.labels_rejected();
                return Err(RepairError {
                    failure: e.into(),
                    stats,
                });
            }
        };
        stats.candidates_generated += 1;
        let verdict = match detector.check(&candidate) {
            Ok(v) => v,
            Err(e) => {
                stats.labels_rejected = vote.labels_rejected();
                return Err(RepairError {
                    failure: e.into(),
                    stats,
                });
            }
        };
        if verdict.adversarial {
            set.rejected_as_adversarial += 1;
            continue;
        }
        let label = verdict
            .agreed_label()
            .expect("a non-adversarial verdict has agreeing labels");
        set.accepted.push(Accepted {
            text: candidate,
            label,
            d_kl: verdict.d_kl,
        });
        stats.candidates_filtered += 1;
        if let VoteStep::Accepted(winner) = vote.observe(label) {
            stats.labels_rejected = vote.labels_rejected();
            let chosen = set
                .first_with_label(winner)
                .expect("an accepted label has at least one witness");
            return Ok(RepairOutcome::Repaired {
                text: chosen.text.clone(),
                label: winner,
                stats,
            });
        }
    }
    stats.labels_rejected = vote.labels_rejected();
    Ok(RepairOutcome::Unrepaired {
        text: x.to_string(),
        stats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisRate {
    /// Fraction of filtered candidates labelled with the ground truth;
    /// `None` when no candidate passed the filter.
    pub rate: Option<f64>,
    pub filtered: usize,
    pub requested: usize,
    /// The stream ran dry before `requested` filtered candidates.
    pub exhausted: bool,
}

/// Draw up to `n` filtered candidates for `x_adv` and measure how many
/// carry the ground-truth label.
pub fn voting_hypothesis_rate(
    x_adv: &str,
    truth: usize,
    config: &RepairConfig,
    res: &Resources<'_>,
    n: usize,
) -> Result<HypothesisRate, RepairError> {
    let fail = |e: RepairFailure| RepairError {
        failure: e,
        stats: RepairStats::default(),
    };
    let mut stream = open_stream(x_adv, config, res).map_err(|e| fail(e.into()))?;
    hypothesis_rate_over(&mut stream, truth, &config.detector, n)
}

pub fn hypothesis_rate_over(
    source: &mut dyn CandidateSource,
    truth: usize,
    detector: &Detector,
    n: usize,
) -> Result<HypothesisRate, RepairError> {
    let fail = |e: RepairFailure| RepairError {
        failure: e,
        stats: RepairStats::default(),
    };
    let (mut filtered, mut correct) = (0usize, 0usize);
    while filtered < n {
        let Some(candidate) = source.next_candidate().map_err(|e| fail(e.into()))? else {
            break;
        };
        let verdict = detector.check(&candidate).map_err(|e| fail(e.into()))?;
        if verdict.adversarial {
            continue;
        }
        filtered += 1;
        if verdict.labels[0] == truth {
            correct += 1;
        }
    }
    Ok(HypothesisRate {
        rate: (filtered > 0).then(|| correct as f64 / filtered as f64),
        filtered,
        requested: n,
        exhausted: filtered < n,
    })
}

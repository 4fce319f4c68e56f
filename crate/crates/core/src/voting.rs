//! Sequential probability ratio testing of "label c is the true label".
//!
//! For a label `c` with `z` supporting votes out of `k` filtered candidates,
//! the null hypothesis `P(c) >= p0` is tested against `P(c) <= p1` with
//! `p0 = rho + sigma` and `p1 = rho - sigma`. All ratios are kept in log
//! space: the test accepts when the log likelihood ratio is at most
//! `ln(beta / (1 - alpha))` and rejects when it is at least
//! `ln((1 - beta) / alpha)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VotingError {
    #[error("alpha and beta must lie in (0, 0.5), got alpha={alpha}, beta={beta}")]
    ErrorBounds { alpha: f64, beta: f64 },
    #[error("rho must lie in (0.5, 1), got {0}")]
    Rho(f64),
    #[error("sigma must lie in (0, min(rho, 1 - rho)), got {sigma} for rho={rho}")]
    Sigma { rho: f64, sigma: f64 },
    #[error("no observations")]
    NoObservations,
    #[error("simulation probability must lie in [0, 1], got {0}")]
    Probability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SprtParams {
    alpha: f64,
    beta: f64,
    rho: f64,
    sigma: f64,
}

impl SprtParams {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_BETA: f64 = 0.1;
    pub const DEFAULT_RHO: f64 = 0.8;
    pub const DEFAULT_SIGMA: f64 = 0.16;

    pub fn new(alpha: f64, beta: f64, rho: f64, sigma: f64) -> Result<Self, VotingError> {
        let open = |x: f64, lo: f64, hi: f64| x > lo && x < hi;
        if !open(alpha, 0.0, 0.5) || !open(beta, 0.0, 0.5) {
            return Err(VotingError::ErrorBounds { alpha, beta });
        }
        if !open(rho, 0.5, 1.0) {
            return Err(VotingError::Rho(rho));
        }
        if !open(sigma, 0.0, rho.min(1.0 - rho)) {
            return Err(VotingError::Sigma { rho, sigma });
        }
        Ok(SprtParams {
            alpha,
            beta,
            rho,
            sigma,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn p0(&self) -> f64 {
        self.rho + self.sigma
    }

    pub fn p1(&self) -> f64 {
        self.rho - self.sigma
    }

    /// `(A, B)`: accept at or below `A`, reject at or above `B`.
    pub fn bounds(&self) -> (f64, f64) {
        decision_bounds(self)
    }
}

impl Default for SprtParams {
    fn default() -> Self {
        SprtParams::new(
            Self::DEFAULT_ALPHA,
            Self::DEFAULT_BETA,
            Self::DEFAULT_RHO,
            Self::DEFAULT_SIGMA,
        )
        .expect("default SPRT parameters are valid")
    }
}

impl<'de> Deserialize<'de> for SprtParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            alpha: f64,
            beta: f64,
            rho: f64,
            sigma: f64,
        }
        let raw = Raw::deserialize(d)?;
        SprtParams::new(raw.alpha, raw.beta, raw.rho, raw.sigma).map_err(serde::de::Error::custom)
    }
}

/// Log of `p1^z (1-p1)^(k-z) / (p0^z (1-p0)^(k-z))`.
pub fn sprt_log_ratio(z: u64, k: u64, params: &SprtParams) -> f64 {
    debug_assert!(z <= k);
    let (p0, p1) = (params.p0(), params.p1());
    z as f64 * (p1 / p0).ln() + (k - z) as f64 * ((1.0 - p1) / (1.0 - p0)).ln()
}

pub fn decision_bounds(params: &SprtParams) -> (f64, f64) {
    let (a, b) = (params.alpha, params.beta);
    ((b / (1.0 - a)).ln(), ((1.0 - b) / a).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SprtOutcome {
    AcceptH0,
    RejectH0,
    Inconclusive,
}

/// Vote counts over the filtered candidates seen so far.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SprtState {
    k: u64,
    z: Vec<u64>,
}

impl SprtState {
    pub fn new(num_labels: usize) -> Self {
        SprtState {
            k: 0,
            z: vec![0; num_labels],
        }
    }

    pub fn observe(&mut self, label: usize) {
        if label >= self.z.len() {
            self.z.resize(label + 1, 0);
        }
        self.z[label] += 1;
        self.k += 1;
    }

    pub fn total(&self) -> u64 {
        self.k
    }

    pub fn count(&self, label: usize) -> u64 {
        self.z.get(label).copied().unwrap_or(0)
    }
}

pub fn hyp_test(label: usize, state: &SprtState, params: &SprtParams) -> SprtOutcome {
    let ratio = sprt_log_ratio(state.count(label), state.total(), params);
    let (accept, reject) = decision_bounds(params);
    if ratio <= accept {
        SprtOutcome::AcceptH0
    } else if ratio >= reject {
        SprtOutcome::RejectH0
    } else {
        SprtOutcome::Inconclusive
    }
}

/// Fixed-size estimate of `P(label)`: the fraction of observations equal to it.
pub fn fsst_estimate(labels: &[usize], label: usize) -> Result<f64, VotingError> {
    if labels.is_empty() {
        return Err(VotingError::NoObservations);
    }
    Ok(labels.iter().filter(|l| **l == label).count() as f64 / labels.len() as f64)
}

/// Result of feeding one candidate label to a [`LabelVote`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoteStep {
    Accepted(usize),
    Continue,
}

/// Lazy multi-label SPRT: a label is only tested once it has been
/// witnessed, and a rejected label is never tested again.
#[derive(Debug, Clone)]
pub struct LabelVote {
    params: SprtParams,
    state: SprtState,
    witnessed: Vec<usize>,
    rejected: Vec<usize>,
    rejected_count: usize,
}

impl LabelVote {
    pub fn new(params: SprtParams, num_labels: usize) -> Self {
        LabelVote {
            params,
            state: SprtState::new(num_labels),
            witnessed: Vec::new(),
            rejected: Vec::new(),
            rejected_count: 0,
        }
    }

    /// Mark `label` as known-wrong before any voting happens.
    pub fn seed_rejected(&mut self, label: usize) {
        if !self.rejected.contains(&label) {
            self.rejected.push(label);
        }
    }

    pub fn observe(&mut self, label: usize) -> VoteStep {
        self.state.observe(label);
        if !self.witnessed.contains(&label) && !self.rejected.contains(&label) {
            self.witnessed.push(label);
        }
        let mut i = 0;
        while i < self.witnessed.len() {
            let c = self.witnessed[i];
            match hyp_test(c, &self.state, &self.params) {
                SprtOutcome::AcceptH0 => return VoteStep::Accepted(c),
                SprtOutcome::RejectH0 => {
                    self.witnessed.remove(i);
                    self.rejected.push(c);
                    self.rejected_count += 1;
                }
                SprtOutcome::Inconclusive => i += 1,
            }
        }
        VoteStep::Continue
    }

    pub fn state(&self) -> &SprtState {
        &self.state
    }

    pub fn is_rejected(&self, label: usize) -> bool {
        self.rejected.contains(&label)
    }

    /// Labels rejected by the test itself (not counting seeded ones).
    pub fn labels_rejected(&self) -> usize {
        self.rejected_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulatedRun {
    pub outcome: SprtOutcome,
    /// Samples consumed before the decision, or the cap when inconclusive.
    pub samples: u64,
}

/// Run [`hyp_test`] on an i.i.d. stream where each sample supports the
/// tested label with probability `q`, stopping at a decision or `cap`.
pub fn simulate_stream<R: Rng + ?Sized>(
    params: &SprtParams,
    q: f64,
    cap: u64,
    rng: &mut R,
) -> Result<SimulatedRun, VotingError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(VotingError::Probability(q));
    }
    let mut state = SprtState::new(2);
    for n in 1..=cap {
        state.observe(if rng.random_bool(q) { 0 } else { 1 });
        match hyp_test(0, &state, params) {
            SprtOutcome::Inconclusive => {}
            outcome => return Ok(SimulatedRun { outcome, samples: n }),
        }
    }
    Ok(SimulatedRun {
        outcome: SprtOutcome::Inconclusive,
        samples: cap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub trials: u64,
    pub q: f64,
    pub accept_rate: f64,
    pub reject_rate: f64,
    pub inconclusive_rate: f64,
    /// Mean samples to a decision over decided trials (0 if none decided).
    pub mean_samples: f64,
    pub cap: u64,
}

pub fn simulate<R: Rng + ?Sized>(
    params: &SprtParams,
    q: f64,
    trials: u64,
    cap: u64,
    rng: &mut R,
) -> Result<SimulationReport, VotingError> {
    let (mut accept, mut reject, mut open) = (0u64, 0u64, 0u64);
    let mut decided_samples = 0u64;
    for _ in 0..trials {
        let run = simulate_stream(params, q, cap, rng)?;
        match run.outcome {
            SprtOutcome::AcceptH0 => accept += 1,
            SprtOutcome::RejectH0 => reject += 1,
            SprtOutcome::Inconclusive => open += 1,
        }
        if run.outcome != SprtOutcome::Inconclusive {
            decided_samples += run.samples;
        }
    }
    let n = trials.max(1) as f64;
    let decided = accept + reject;
    Ok(SimulationReport {
        trials,
        q,
        accept_rate: accept as f64 / n,
        reject_rate: reject as f64 / n,
        inconclusive_rate: open as f64 / n,
        mean_samples: if decided == 0 {
            0.0
        } else {
            decided_samples as f64 / decided as f64
        },
        cap,
    })
}

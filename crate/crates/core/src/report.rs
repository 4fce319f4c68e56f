//! One JSONL record per processed input.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::detector::DetectionVerdict;
use crate::repair::{RepairOutcome, RepairRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Adversarial,
    Normal,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    NotAdversarial,
    Accepted,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub id: String,
    pub verdict: Verdict,
    pub d_kl: Option<f64>,
    pub label_before: Option<String>,
    pub label_after: Option<String>,
    pub repaired_text: Option<String>,
    pub candidates_generated: usize,
    pub candidates_filtered: usize,
    pub decision: Option<Decision>,
    pub wall_time_ms: f64,
    pub detect_time_ms: f64,
    pub repair_time_ms: f64,
    pub provider_latency_ms: f64,
    pub translation_calls: u64,
    pub labels_rejected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl ReportRecord {
    fn blank(id: &str) -> Self {
        ReportRecord {
            id: id.to_string(),
            verdict: Verdict::Error,
            d_kl: None,
            label_before: None,
            label_after: None,
            repaired_text: None,
            candidates_generated: 0,
            candidates_filtered: 0,
            decision: None,
            wall_time_ms: 0.0,
            detect_time_ms: 0.0,
            repair_time_ms: 0.0,
            provider_latency_ms: 0.0,
            translation_calls: 0,
            labels_rejected: 0,
            truth: None,
            error: None,
        }
    }

    pub fn error(id: &str, message: impl Into<String>) -> Self {
        ReportRecord {
            error: Some(message.into()),
            ..Self::blank(id)
        }
    }

    /// Record for a detection-only pass.
    pub fn detection(id: &str, verdict: &DetectionVerdict, elapsed: Duration) -> Self {
        let label = verdict.probs.first().map(|p| p.label_name().to_string());
        ReportRecord {
            verdict: if verdict.adversarial {
                Verdict::Adversarial
            } else {
                Verdict::Normal
            },
            d_kl: Some(verdict.d_kl),
            label_before: label.clone(),
            label_after: label,
            wall_time_ms: ms(elapsed),
            detect_time_ms: ms(elapsed),
            ..Self::blank(id)
        }
    }

    pub fn repair(id: &str, run: &RepairRun, elapsed: Duration) -> Self {
        let mut rec = Self::detection(id, &run.input, elapsed);
        let labels = run.input.probs[0].labels();
        match &run.outcome {
            RepairOutcome::NotAdversarial { .. } => rec.decision = Some(Decision::NotAdversarial),
            RepairOutcome::Repaired { text, label, stats } => {
                rec.decision = Some(Decision::Accepted);
                rec.repaired_text = Some(text.clone());
                rec.label_after = Some(labels.name(*label).to_string());
                rec.apply_stats(stats);
            }
            RepairOutcome::Unrepaired { stats, .. } => {
                rec.decision = Some(Decision::BudgetExhausted);
                rec.apply_stats(stats);
            }
        }
        rec
    }

    fn apply_stats(&mut self, stats: &crate::repair::RepairStats) {
        self.candidates_generated = stats.candidates_generated;
        self.candidates_filtered = stats.candidates_filtered;
        self.labels_rejected = stats.labels_rejected;
        self.wall_time_ms = ms(stats.wall_time);
        self.detect_time_ms = ms(stats.detect_time);
        self.repair_time_ms = ms(stats.repair_time);
        self.provider_latency_ms = ms(stats.provider_latency);
        self.translation_calls = stats.translation_calls;
    }

    pub fn with_truth(mut self, truth: Option<String>) -> Self {
        self.truth = truth;
        self
    }

    /// Zero every timing column so that replays compare byte for byte.
    pub fn without_timing(mut self) -> Self {
        self.wall_time_ms = 0.0;
        self.detect_time_ms = 0.0;
        self.repair_time_ms = 0.0;
        self.provider_latency_ms = 0.0;
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report records always serialize")
    }
}

/// Correctly repaired over detected adversarials that carry a truth label.
/// `None` when no such record exists.
pub fn repair_accuracy(records: &[ReportRecord]) -> Option<(usize, usize, f64)> {
    let scored: Vec<&ReportRecord> = records
        .iter()
        .filter(|r| r.verdict == Verdict::Adversarial && r.truth.is_some())
        .collect();
    if scored.is_empty() {
        return None;
    }
    let correct = scored.iter().filter(|r| r.label_after == r.truth).count();
    Some((correct, scored.len(), correct as f64 / scored.len() as f64))
}

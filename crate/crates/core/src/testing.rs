//! Deterministic in-process classifier doubles.

use std::collections::HashMap;

use crate::classifier::{Classifier, ClassifierError, LabelSet, ProbVector};

/// Returns the same distribution for every input.
pub struct FixedClassifier {
    id: String,
    labels: LabelSet,
    probs: Vec<f64>,
}

impl FixedClassifier {
    pub fn new(id: &str, labels: LabelSet, probs: &[f64]) -> Self {
        let probs = ProbVector::clamped(probs, labels.clone())
            .expect("fixed distribution must be valid")
            .probs()
            .to_vec();
        FixedClassifier {
            id: id.to_string(),
            labels,
            probs,
        }
    }
}

impl Classifier for FixedClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn classify_batch(&self, texts: &[&str]) -> Result<Vec<ProbVector>, ClassifierError> {
        texts
            .iter()
            .map(|_| ProbVector::new(self.probs.clone(), self.labels.clone()))
            .collect()
    }
}

/// Exact-text lookup table with a fallback distribution.
pub struct ScriptedClassifier {
    id: String,
    labels: LabelSet,
    default: Vec<f64>,
    table: HashMap<String, Vec<f64>>,
}

impl ScriptedClassifier {
    pub fn new(id: &str, labels: LabelSet, default: &[f64]) -> Self {
        ScriptedClassifier {
            id: id.to_string(),
            labels,
            default: default.to_vec(),
            table: HashMap::new(),
        }
    }

    pub fn with(mut self, text: &str, probs: &[f64]) -> Self {
        self.table.insert(text.to_string(), probs.to_vec());
        self
    }
}

impl Classifier for ScriptedClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn classify_batch(&self, texts: &[&str]) -> Result<Vec<ProbVector>, ClassifierError> {
        texts
            .iter()
            .map(|t| {
                let p = self.table.get(*t).unwrap_or(&self.default);
                ProbVector::clamped(p, self.labels.clone())
            })
            .collect()
    }
}

/// Distribution computed by a closure over the input text.
pub struct FnClassifier<F> {
    id: String,
    labels: LabelSet,
    f: F,
}

impl<F> FnClassifier<F>
where
    F: Fn(&str) -> Vec<f64> + Send + Sync,
{
    pub fn new(id: &str, labels: LabelSet, f: F) -> Self {
        FnClassifier {
            id: id.to_string(),
            labels,
            f,
        }
    }
}

impl<F> Classifier for FnClassifier<F>
where
    F: Fn(&str) -> Vec<f64> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn classify_batch(&self, texts: &[&str]) -> Result<Vec<ProbVector>, ClassifierError> {
        texts
            .iter()
            .map(|t| ProbVector::clamped(&(self.f)(t), self.labels.clone()))
            .collect()
    }
}

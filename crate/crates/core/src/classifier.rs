//! Probability-vector classifiers.
//!
//! Every algorithm in this crate only looks at a classifier through
//! [`Classifier`]: text in, [`ProbVector`] out. The built-in backend is a
//! multinomial logistic regression over the mean token embedding; remote
//! backends live in [`crate::services`].

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingStore;
use crate::text::tokenize;

/// Floor applied to every probability before it leaves a classifier.
pub const PROB_FLOOR: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("classifier {id}: input has no tokens")]
    EmptyInput { id: String },
    #[error("classifier {id}: {message}")]
    Transport {
        id: String,
        message: String,
        retriable: bool,
    },
    #[error("classifier {id}: protocol error: {message}")]
    Protocol { id: String, message: String },
    #[error("invalid probability vector: {0}")]
    InvalidProbs(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("label {0:?} is not in the declared label set")]
    UnknownLabel(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set needs at least two distinct labels")]
    SingleLabel,
}

impl ClassifierError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            ClassifierError::Transport { .. } | ClassifierError::Protocol { .. }
        )
    }
}

/// Ordered class names shared by every classifier trained for one task.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Arc<[String]>);

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        LabelSet(names.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.0[index]
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// A distribution over the classes of a [`LabelSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
    labels: LabelSet,
}

impl ProbVector {
    /// Validate an already-normalized vector.
    pub fn new(probs: Vec<f64>, labels: LabelSet) -> Result<Self, ClassifierError> {
        if probs.len() < 2 {
            return Err(ClassifierError::InvalidProbs(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if probs.len() != labels.len() {
            return Err(ClassifierError::InvalidProbs(format!(
                "{} probabilities for {} labels",
                probs.len(),
                labels.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ClassifierError::InvalidProbs(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ClassifierError::InvalidProbs(format!("entries sum to {sum}")));
        }
        Ok(ProbVector { probs, labels })
    }

    /// Clamp every entry to `[PROB_FLOOR, 1]` and renormalize.
    pub fn clamped(raw: &[f64], labels: LabelSet) -> Result<Self, ClassifierError> {
        if raw.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ClassifierError::InvalidProbs(format!(
                "non-finite or negative entry in {raw:?}"
            )));
        }
        let clamped: Vec<f64> = raw.iter().map(|p| p.clamp(PROB_FLOOR, 1.0)).collect();
        let sum: f64 = clamped.iter().sum();
        Self::new(clamped.into_iter().map(|p| p / sum).collect(), labels)
    }

    /// Softmax of `logits`, clamped and renormalized.
    pub fn from_logits(logits: &[f64], labels: LabelSet) -> Result<Self, ClassifierError> {
        Self::clamped(&softmax(logits), labels)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the most probable class, lowest index on ties.
    pub fn label(&self) -> usize {
        label_of(&self.probs)
    }

    pub fn label_name(&self) -> &str {
        self.labels.name(self.label())
    }
}

/// Argmax with ties going to the lowest index.
pub fn label_of(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub trait Classifier: Send + Sync {
    fn id(&self) -> &str;

    fn labels(&self) -> &LabelSet;

    /// One vector per input text, in input order.
    fn classify_batch(&self, texts: &[&str]) -> Result<Vec<ProbVector>, ClassifierError>;

    fn classify(&self, text: &str) -> Result<ProbVector, ClassifierError> {
        let mut out = self.classify_batch(&[text])?;
        out.pop().ok_or_else(|| ClassifierError::Protocol {
            id: self.id().to_string(),
            message: "empty response".into(),
        })
    }
}

pub type ClassifierHandle = Arc<dyn Classifier>;

/// Parameters of the built-in mean-embedding logistic regression. This is
/// also the on-disk model file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinModel {
    pub dim: usize,
    pub label_names: Vec<String>,
    /// Row-major `K x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub embedding_ref: String,
}

impl BuiltinModel {
    pub fn zeros(dim: usize, label_names: Vec<String>, embedding_ref: &str) -> Self {
        let k = label_names.len();
        BuiltinModel {
            dim,
            label_names,
            weights: vec![0.0; k * dim],
            bias: vec![0.0; k],
            embedding_ref: embedding_ref.to_string(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let k = self.num_classes();
        if k < 2 {
            return Err(ClassifierError::InvalidModel(format!(
                "need at least 2 labels, got {k}"
            )));
        }
        if self.dim == 0 {
            return Err(ClassifierError::InvalidModel("dim must be positive".into()));
        }
        if self.weights.len() != k * self.dim || self.bias.len() != k {
            return Err(ClassifierError::InvalidModel(format!(
                "expected {}x{} weights and {} biases, found {} and {}",
                k,
                self.dim,
                k,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|w| !w.is_finite()) {
            return Err(ClassifierError::InvalidModel("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

/// Mean embedding of the in-vocabulary tokens of `text`; the zero vector
/// when none are known.
pub fn mean_embedding(store: &EmbeddingStore, text: &str) -> Vec<f64> {
    let mut sum = vec![0.0; store.dim()];
    let mut count = 0usize;
    for token in tokenize(text) {
        if let Some(v) = store.vector(&token.normalized) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += *x as f64;
            }
            count += 1;
        }
    }
    if count > 0 {
        sum.iter_mut().for_each(|s| *s /= count as f64);
    }
    sum
}

/// A [`BuiltinModel`] bound to the embedding store it was trained against.
#[derive(Debug, Clone)]
pub struct BuiltinClassifier {
    id: String,
    model: BuiltinModel,
    labels: LabelSet,
    store: Arc<EmbeddingStore>,
}

impl BuiltinClassifier {
    pub fn new(
        id: impl Into<String>,
        model: BuiltinModel,
        store: Arc<EmbeddingStore>,
    ) -> Result<Self, ClassifierError> {
        model.validate()?;
        if model.dim != store.dim() {
            return Err(ClassifierError::InvalidModel(format!(
                "model dim {} does not match embedding dim {}",
                model.dim,
                store.dim()
            )));
        }
        let labels = LabelSet::new(model.label_names.iter().cloned());
        Ok(BuiltinClassifier {
            id: id.into(),
            model,
            labels,
            store,
        })
    }

    pub fn model(&self) -> &BuiltinModel {
        &self.model
    }

    pub fn classify_one(&self, text: &str) -> Result<ProbVector, ClassifierError> {
        if tokenize(text).is_empty() {
            return Err(ClassifierError::EmptyInput { id: self.id.clone() });
        }
        let features = mean_embedding(&self.store, text);
        ProbVector::from_logits(&self.model.logits(&features), self.labels.clone())
    }
}

impl Classifier for BuiltinClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn classify_batch(&self, texts: &[&str]) -> Result<Vec<ProbVector>, ClassifierError> {
        texts.iter().map(|t| self.classify_one(t)).collect()
    }

    fn classify(&self, text: &str) -> Result<ProbVector, ClassifierError> {
        self.classify_one(text)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_scale: f64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 0.5,
            seed: 0,
            batch_size: 16,
            init_scale: 0.1,
            l2: 0.0,
        }
    }
}

/// Mean cross-entropy of `model` over `(features, target)` pairs and its
/// gradient with respect to the weights and biases.
pub fn cross_entropy_gradient(
    model: &BuiltinModel,
    features: &[Vec<f64>],
    targets: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let dim = model.dim;
    let mut grad_w = vec![0.0; model.weights.len()];
    let mut grad_b = vec![0.0; model.bias.len()];
    let mut loss = 0.0;
    let n = features.len().max(1) as f64;
    for (x, &y) in features.iter().zip(targets) {
        let probs = softmax(&model.logits(x));
        loss -= probs[y].max(f64::MIN_POSITIVE).ln();
        for (k, p) in probs.iter().enumerate() {
            let delta = (p - if k == y { 1.0 } else { 0.0 }) / n;
            grad_b[k] += delta;
            for (g, xi) in grad_w[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                *g += delta * xi;
            }
        }
    }
    (loss / n, grad_w, grad_b)
}

/// Fit a [`BuiltinModel`] by mini-batch gradient descent. Bit-identical for
/// identical inputs and seed.
pub fn train_builtin<T: AsRef<str>, L: AsRef<str>>(
    dataset: &[(T, L)],
    label_names: &[String],
    store: &EmbeddingStore,
    embedding_ref: &str,
    config: &TrainConfig,
) -> Result<BuiltinModel, ClassifierError> {
    if dataset.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let labels = LabelSet::new(label_names.iter().cloned());
    let targets = dataset
        .iter()
        .map(|(_, l)| {
            labels
                .index_of(l.as_ref())
                .ok_or_else(|| ClassifierError::UnknownLabel(l.as_ref().to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = targets.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(ClassifierError::SingleLabel);
    }
    let features: Vec<Vec<f64>> = dataset.iter().map(|(t, _)| mean_embedding(store, t.as_ref())).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = BuiltinModel::zeros(store.dim(), label_names.to_vec(), embedding_ref);
    model.validate()?;
    if config.init_scale > 0.0 {
        let init = Normal::new(0.0, config.init_scale).map_err(|e| ClassifierError::InvalidModel(e.to_string()))?;
        for w in model.weights.iter_mut() {
            *w = init.sample(&mut rng);
        }
    }

    let batch_size = config.batch_size.max(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut batch_x: Vec<Vec<f64>> = Vec::with_capacity(batch_size);
    let mut batch_y: Vec<usize> = Vec::with_capacity(batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(features[i].clone());
                batch_y.push(targets[i]);
            }
            let (_, grad_w, grad_b) = cross_entropy_gradient(&model, &batch_x, &batch_y);
            for (w, g) in model.weights.iter_mut().zip(&grad_w) {
                *w -= config.learning_rate * (g + config.l2 * *w);
            }
            for (b, g) in model.bias.iter_mut().zip(&grad_b) {
                *b -= config.learning_rate * g;
            }
        }
    }
    model.validate()?;
    Ok(model)
}

/// Fraction of `dataset` whose predicted label name matches.
pub fn accuracy<T: AsRef<str>, L: AsRef<str>>(
    classifier: &dyn Classifier,
    dataset: &[(T, L)],
) -> Result<f64, ClassifierError> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (text, label) in dataset {
        if classifier.classify(text.as_ref())?.label_name() == label.as_ref() {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::load_embeddings;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_labels() -> Vec<String> {
        vec!["neg".into(), "pos".into()]
    }

    fn store_2d() -> Arc<EmbeddingStore> {
        Arc::new(load_embeddings("hot 2 0\ncold 0 2\n".as_bytes(), None).unwrap())
    }

    fn approx(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = BuiltinModel::zeros(2, two_labels(), "fixture");
        let c = BuiltinClassifier::new("f", model, store_2d()).unwrap();
        assert!(approx(c.classify("hot and cold").unwrap().probs(), &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn identity_weights_single_token() {
        let mut model = BuiltinModel::zeros(2, two_labels(), "fixture");
        model.weights = vec![1.0, 0.0, 0.0, 1.0];
        let c = BuiltinClassifier::new("f", model, store_2d()).unwrap();
        let p = c.classify("hot").unwrap();
        assert!(approx(p.probs(), &[0.8808, 0.1192], 1e-4));
    }

    #[test]
    fn all_oov_uses_bias_only() {
        let mut model = BuiltinModel::zeros(2, two_labels(), "fixture");
        model.weights = vec![5.0, -1.0, 3.0, 2.0];
        model.bias = vec![0.3, -0.1];
        let c = BuiltinClassifier::new("f", model, store_2d()).unwrap();
        let p = c.classify("unknown words only").unwrap();
        assert!(approx(p.probs(), &[0.5987, 0.4013], 1e-4));
    }

    #[test]
    fn empty_text_is_rejected() {
        let model = BuiltinModel::zeros(2, two_labels(), "fixture");
        let c = BuiltinClassifier::new("f", model, store_2d()).unwrap();
        assert!(matches!(c.classify("   "), Err(ClassifierError::EmptyInput { .. })));
    }

    #[test]
    fn extreme_logits_are_clamped() {
        let p = ProbVector::from_logits(&[1000.0, -1000.0], LabelSet::new(["a", "b"])).unwrap();
        assert!(p.probs()[1] >= PROB_FLOOR * 0.999);
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_of_ties_go_low() {
        assert_eq!(label_of(&[0.9, 0.1]), 0);
        assert_eq!(label_of(&[0.5, 0.5]), 0);
        assert_eq!(label_of(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn prob_vector_validation() {
        let labels = LabelSet::new(["a", "b"]);
        assert!(ProbVector::new(vec![0.6, 0.5], labels.clone()).is_err());
        assert!(ProbVector::new(vec![1.0], LabelSet::new(["a"])).is_err());
        assert!(ProbVector::new(vec![1.2, -0.2], labels.clone()).is_err());
        assert!(ProbVector::new(vec![0.25, 0.75], labels).is_ok());
    }

    #[test]
    fn model_dimension_must_match_store() {
        let model = BuiltinModel::zeros(3, two_labels(), "fixture");
        assert!(BuiltinClassifier::new("f", model, store_2d()).is_err());
    }

    #[test]
    fn training_rejects_bad_datasets() {
        let store = store_2d();
        let cfg = TrainConfig::default();
        let empty: Vec<(String, String)> = vec![];
        assert_eq!(
            train_builtin(&empty, &two_labels(), &store, "x", &cfg),
            Err(ClassifierError::EmptyDataset)
        );
        let one = vec![("hot", "pos"), ("cold", "pos")];
        assert_eq!(
            train_builtin(&one, &two_labels(), &store, "x", &cfg),
            Err(ClassifierError::SingleLabel)
        );
        let bad = vec![("hot", "pos"), ("cold", "meh")];
        assert_eq!(
            train_builtin(&bad, &two_labels(), &store, "x", &cfg),
            Err(ClassifierError::UnknownLabel("meh".into()))
        );
    }

    /// Two disjoint vocabularies: positive words live near (+1, *), negative
    /// words near (-1, *), so mean embeddings of single-polarity texts are
    /// separable by the first coordinate.
    fn separable_corpus() -> (EmbeddingStore, Vec<(String, String)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut entries = Vec::new();
        for i in 0..10 {
            entries.push((
                format!("p{i}"),
                vec![1.0 + rng.random::<f32>(), rng.random::<f32>() * 2.0 - 1.0],
            ));
            entries.push((
                format!("n{i}"),
                vec![-1.0 - rng.random::<f32>(), rng.random::<f32>() * 2.0 - 1.0],
            ));
        }
        let store = EmbeddingStore::from_entries(2, entries).unwrap();
        let mut data = Vec::new();
        for i in 0..200 {
            let (prefix, label) = if i % 2 == 0 { ("p", "pos") } else { ("n", "neg") };
            let len = rng.random_range(3..8);
            let text: Vec<String> = (0..len)
                .map(|_| format!("{prefix}{}", rng.random_range(0..10)))
                .collect();
            data.push((text.join(" "), label.to_string()));
        }
        (store, data)
    }

    /// Classic perceptron on homogeneous coordinates; converges (zero
    /// mistakes in a full pass) iff the set is linearly separable.
    fn perceptron_separates(points: &[(Vec<f64>, bool)]) -> bool {
        let dim = points[0].0.len();
        let mut w = vec![0.0; dim + 1];
        for _ in 0..10_000 {
            let mut mistakes = 0;
            for (x, y) in points {
                let s: f64 = w[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[dim];
                let target = if *y { 1.0 } else { -1.0 };
                if s * target <= 0.0 {
                    mistakes += 1;
                    for (wi, xi) in w[..dim].iter_mut().zip(x) {
                        *wi += target * xi;
                    }
                    w[dim] += target;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn separable_corpus_trains_to_high_accuracy() {
        let (store, data) = separable_corpus();
        let points: Vec<(Vec<f64>, bool)> = data
            .iter()
            .map(|(t, l)| (mean_embedding(&store, t), l == "pos"))
            .collect();
        assert!(perceptron_separates(&points));

        let store = Arc::new(store);
        let model = train_builtin(&data, &two_labels(), &store, "fixture", &TrainConfig::default()).unwrap();
        let c = BuiltinClassifier::new("f", model, store).unwrap();
        assert!(accuracy(&c, &data).unwrap() >= 0.95);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (store, data) = separable_corpus();
        let cfg = TrainConfig {
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_builtin(&data, &two_labels(), &store, "e", &cfg).unwrap();
        let b = train_builtin(&data, &two_labels(), &store, "e", &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = train_builtin(&data, &two_labels(), &store, "e", &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gradient_matches_finite_differences(
            seed in any::<u64>(),
            k in 2usize..4,
            dim in 1usize..4,
            n in 1usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = BuiltinModel::zeros(dim, (0..k).map(|i| i.to_string()).collect(), "x");
            for w in model.weights.iter_mut().chain(model.bias.iter_mut()) {
                *w = rng.random_range(-1.0..1.0);
            }
            let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let (_, gw, gb) = cross_entropy_gradient(&model, &xs, &ys);
            let h = 1e-5;
            let analytic: Vec<f64> = gw.iter().chain(&gb).copied().collect();
            for (i, a) in analytic.iter().enumerate() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let nw = model.weights.len();
                if i < nw { plus.weights[i] += h; minus.weights[i] -= h; }
                else { plus.bias[i - nw] += h; minus.bias[i - nw] -= h; }
                let numeric = (cross_entropy_gradient(&plus, &xs, &ys).0
                    - cross_entropy_gradient(&minus, &xs, &ys).0) / (2.0 * h);
                let scale = a.abs().max(numeric.abs()).max(1e-3);
                prop_assert!((a - numeric).abs() / scale < 1e-4, "param {}: {} vs {}", i, a, numeric);
            }
        }

        #[test]
        fn outputs_are_valid_distributions(
            words in prop::collection::vec(prop_oneof![Just("hot"), Just("cold"), Just("zzz"), Just("!")], 1..10),
            w in prop::collection::vec(-50.0f64..50.0, 4),
            b in prop::collection::vec(-50.0f64..50.0, 2),
        ) {
            let mut model = BuiltinModel::zeros(2, two_labels(), "x");
            model.weights = w;
            model.bias = b;
            let c = BuiltinClassifier::new("f", model, store_2d()).unwrap();
            let p = c.classify(&words.join(" ")).unwrap();
            prop_assert!(p.probs().iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn argmax_survives_monotone_transforms(
            logits in prop::collection::vec(-20.0f64..20.0, 2..6),
            scale in 0.1f64..5.0,
            shift in -10.0f64..10.0,
        ) {
            let direct = label_of(&softmax(&logits));
            let moved: Vec<f64> = logits.iter().map(|z| scale * z + shift).collect();
            prop_assert_eq!(direct, label_of(&softmax(&moved)));
            let cubed: Vec<f64> = logits.iter().map(|z| z * z * z).collect();
            prop_assert_eq!(direct, label_of(&softmax(&cubed)));
        }
    }
}

//! A small synthetic sentiment world for end-to-end runs: a 50-word
//! embedding, a separable two-class corpus and a greedy synonym
//! substitution attacker.
//!
//! Every cluster holds four ordinary words and one "trap" word. A trap
//! shares its cluster's sentiment and topic coordinates but also carries a
//! large component along a dimension of its own that no ordinary word
//! uses. Models trained on ordinary text never receive gradient along
//! those dimensions, so their weights there stay at the seed-dependent
//! initial values, and two models trained with different seeds react to a
//! trap in unrelated ways.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::sync::Arc;

use crate::classifier::{
    train_builtin, BuiltinClassifier, BuiltinModel, Classifier, ClassifierError, ClassifierHandle, TrainConfig,
};
use crate::detector::{Detector, DetectorError};
use crate::embedding::{EmbeddingError, EmbeddingStore};
use crate::text::split_sentences;

pub const LABELS: [&str; 2] = ["pos", "neg"];

/// Five clusters per class; the last word of each cluster is its trap.
pub const CLUSTERS: [(&str, [&str; 5]); 10] = [
    ("pos", ["good", "fine", "nice", "decent", "solid"]),
    ("pos", ["great", "superb", "excellent", "terrific", "grand"]),
    ("pos", ["funny", "witty", "amusing", "hilarious", "droll"]),
    ("pos", ["moving", "touching", "poignant", "tender", "stirring"]),
    ("pos", ["smart", "clever", "sharp", "bright", "astute"]),
    ("neg", ["bad", "poor", "weak", "lousy", "shoddy"]),
    ("neg", ["awful", "terrible", "horrible", "dreadful", "dire"]),
    ("neg", ["boring", "dull", "tedious", "bland", "flat"]),
    ("neg", ["silly", "stupid", "dumb", "inane", "vapid"]),
    ("neg", ["messy", "sloppy", "clumsy", "awkward", "muddled"]),
];

/// Magnitude of a trap word along its private dimension.
pub const TRAP_WEIGHT: f32 = 10.0;

const TOPIC_WEIGHT: f32 = 2.0;

pub fn is_trap(word: &str) -> bool {
    CLUSTERS.iter().any(|(_, words)| words[4] == word)
}

/// Dimensions: sentiment, one per cluster, one per trap.
pub fn embedding_dim() -> usize {
    1 + 2 * CLUSTERS.len()
}

pub fn fixture_embedding() -> Result<EmbeddingStore, EmbeddingError> {
    let dim = embedding_dim();
    let mut entries = Vec::with_capacity(CLUSTERS.len() * 5);
    for (c, (label, words)) in CLUSTERS.iter().enumerate() {
        let sign = if *label == "pos" { 1.0 } else { -1.0 };
        for (j, word) in words.iter().enumerate() {
            let mut v = vec![0.0f32; dim];
            v[0] = sign;
            v[1 + c] = TOPIC_WEIGHT + 0.05 * j as f32;
            if j == 4 {
                v[1 + CLUSTERS.len() + c] = TRAP_WEIGHT;
            }
            entries.push((word.to_string(), v));
        }
    }
    EmbeddingStore::from_entries(dim, entries)
}

/// Standard deviation of the initial weights for fixture models. Large
/// enough that the untrained trap dimensions differ visibly between seeds.
pub const INIT_SCALE: f64 = 2.0;

pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        init_scale: INIT_SCALE,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

fn ordinary_words(label: &str) -> Vec<&'static str> {
    CLUSTERS
        .iter()
        .filter(|(l, _)| *l == label)
        .flat_map(|(_, words)| words[..4].iter().copied())
        .collect()
}

/// `n` texts alternating between the two classes, each two short
/// sentences of ordinary words from its class.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<LabeledText> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = [ordinary_words("pos"), ordinary_words("neg")];
    (0..n)
        .map(|i| {
            let class = i % 2;
            let sentence = |rng: &mut ChaCha8Rng, len: usize| {
                let words: Vec<&str> = (0..len)
                    .map(|_| *vocab[class].choose(rng).expect("non-empty vocabulary"))
                    .collect();
                let mut s = words.join(" ");
                if let Some(first) = s.get_mut(0..1) {
                    first.make_ascii_uppercase();
                }
                s + "."
            };
            let a = rng.random_range(2..=4);
            let b = rng.random_range(2..=4);
            let first = sentence(&mut rng, a);
            let text = format!("{first} {}", sentence(&mut rng, b));
            LabeledText {
                text,
                label: LABELS[class].to_string(),
            }
        })
        .collect()
}

/// Greedy black-box word substitution against one target model: at each
/// step try every synonym at every untouched position and keep the swap
/// that lowers the true-class probability most, until the target's label
/// flips or `max_swaps` swaps were made.
#[derive(Debug, Clone, Copy)]
pub struct GreedyAttack {
    pub max_swaps: usize,
    pub synonyms: usize,
}

impl Default for GreedyAttack {
    fn default() -> Self {
        GreedyAttack {
            max_swaps: 4,
            synonyms: 5,
        }
    }
}

impl GreedyAttack {
    /// The adversarial text, or `None` if the target was not fooled.
    pub fn attack(
        &self,
        text: &str,
        truth: usize,
        target: &dyn Classifier,
        store: &EmbeddingStore,
    ) -> Result<Option<String>, ClassifierError> {
        let doc = split_sentences(text);
        let words: Vec<(usize, Vec<String>)> = doc
            .tokens()
            .enumerate()
            .filter(|(_, t)| t.is_word)
            .map(|(i, t)| {
                let syn = store.nearest_synonyms(&t.normalized, self.synonyms);
                (i, syn.words().map(str::to_string).collect())
            })
            .collect();
        let mut swaps: Vec<(usize, String)> = Vec::new();
        let mut current = target.classify(text)?;
        if current.label() != truth {
            return Ok(None);
        }
        for _ in 0..self.max_swaps {
            let mut trials: Vec<(Vec<(usize, String)>, String)> = Vec::new();
            for (pos, syns) in &words {
                if swaps.iter().any(|(p, _)| p == pos) {
                    continue;
                }
                for s in syns {
                    let mut next = swaps.clone();
                    next.push((*pos, s.clone()));
                    let candidate = doc.substitute(&next).expect("token count is preserved");
                    trials.push((next, candidate));
                }
            }
            if trials.is_empty() {
                break;
            }
            let texts: Vec<&str> = trials.iter().map(|(_, t)| t.as_str()).collect();
            let probs = target.classify_batch(&texts)?;
            let best = probs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.probs()[truth].total_cmp(&b.1.probs()[truth]))
                .map(|(i, _)| i)
                .expect("at least one trial");
            if probs[best].probs()[truth] >= current.probs()[truth] {
                break;
            }
            swaps = trials[best].0.clone();
            current = probs[best].clone();
            if current.label() != truth {
                return Ok(Some(trials.swap_remove(best).1));
            }
        }
        Ok(None)
    }
}

/// Two models trained with different seeds on an 80/20 split of the
/// synthetic corpus.
pub struct FixtureWorld {
    pub store: Arc<EmbeddingStore>,
    pub models: [BuiltinModel; 2],
    pub train: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
}

impl FixtureWorld {
    pub fn build(corpus_size: usize, corpus_seed: u64, model_seeds: [u64; 2]) -> Result<Self, ClassifierError> {
        let store = Arc::new(fixture_embedding().map_err(|e| ClassifierError::InvalidModel(e.to_string()))?);
        let corpus = synthetic_corpus(corpus_size, corpus_seed);
        let cut = corpus_size * 4 / 5;
        let (train, test) = (corpus[..cut].to_vec(), corpus[cut..].to_vec());
        let pairs: Vec<(&str, &str)> = train.iter().map(|x| (x.text.as_str(), x.label.as_str())).collect();
        let labels: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();
        let train_one = |seed| train_builtin(&pairs, &labels, &store, "fixture", &train_config(seed));
        let models = [train_one(model_seeds[0])?, train_one(model_seeds[1])?];
        Ok(FixtureWorld {
            store,
            models,
            train,
            test,
        })
    }

    pub fn classifiers(&self) -> Result<Vec<ClassifierHandle>, ClassifierError> {
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let c = BuiltinClassifier::new(format!("f{}", i + 1), m.clone(), self.store.clone())?;
                Ok(Arc::new(c) as ClassifierHandle)
            })
            .collect()
    }

    pub fn detector(&self, epsilon: f64) -> Result<Detector, DetectorError> {
        Detector::new(epsilon, self.classifiers()?)
    }

    /// Greedy attacks on the first model over every item of `texts`;
    /// items the attack cannot flip are dropped.
    pub fn adversarials(
        &self,
        texts: &[LabeledText],
        attack: GreedyAttack,
    ) -> Result<Vec<LabeledText>, ClassifierError> {
        let target = &self.classifiers()?[0];
        let mut out = Vec::new();
        for item in texts {
            let truth = LABELS.iter().position(|l| *l == item.label).expect("fixture label");
            if let Some(adv) = attack.attack(&item.text, truth, target.as_ref(), &self.store)? {
                out.push(LabeledText {
                    text: adv,
                    label: item.label.clone(),
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    #[test]
    fn embedding_has_fifty_words() {
        let store = fixture_embedding().unwrap();
        assert_eq!(store.len(), 50);
        assert_eq!(store.dim(), 21);
    }

    #[test]
    fn trap_neighbours_share_its_class() {
        let store = fixture_embedding().unwrap();
        for (label, words) in CLUSTERS {
            let trap_syn = store.nearest_synonyms(words[4], 5);
            for w in trap_syn.words() {
                let class = CLUSTERS.iter().find(|(_, ws)| ws.contains(&w)).unwrap().0;
                assert_eq!(class, label, "{} -> {w}", words[4]);
                assert!(!is_trap(w));
            }
            // every ordinary word sees its trap among its five neighbours
            for w in &words[..4] {
                assert!(store.nearest_synonyms(w, 5).words().any(|s| s == words[4]));
            }
        }
    }

    #[test]
    fn corpus_is_balanced_and_trap_free() {
        let corpus = synthetic_corpus(400, 1);
        assert_eq!(corpus.len(), 400);
        assert_eq!(corpus.iter().filter(|x| x.label == "pos").count(), 200);
        for item in &corpus {
            assert!(tokenize(&item.text)
                .iter()
                .all(|t| !t.is_word || !is_trap(&t.normalized)));
            assert_eq!(split_sentences(&item.text).sentences.len(), 2);
        }
        assert_eq!(synthetic_corpus(10, 5), synthetic_corpus(10, 5));
    }

    #[test]
    fn world_models_learn_and_attacks_transfer_poorly() {
        let world = FixtureWorld::build(200, 1, [1, 2]).unwrap();
        let models = world.classifiers().unwrap();
        for m in &models {
            let pairs: Vec<(&str, &str)> = world.test.iter().map(|x| (x.text.as_str(), x.label.as_str())).collect();
            assert!(crate::classifier::accuracy(m.as_ref(), &pairs).unwrap() >= 0.95);
        }
        let adv = world.adversarials(&world.test[..20], GreedyAttack::default()).unwrap();
        assert!(!adv.is_empty());
        for x in &adv {
            assert_ne!(models[0].classify(&x.text).unwrap().label_name(), x.label);
        }
    }
}

//! Semantic-preserving perturbation: random synonym substitution (RP),
//! KL-guided importance substitution (SubW) and round-trip translation
//! (ParaPer), all behind a deduplicating, budgeted candidate stream.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{Classifier, ClassifierError};
use crate::detector::{kl, DetectorError};
use crate::embedding::EmbeddingStore;
use crate::services::{MemoTranslator, TranslateError, Translator};
use crate::text::{tokenize, Document, TextError};

/// Consecutive duplicate draws after which a substitution stream gives up.
const MAX_STALE_DRAWS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbError {
    #[error("invalid perturbation config: {0}")]
    InvalidConfig(String),
    #[error("unperturbable input: no word has a synonym")]
    Unperturbable,
    #[error("translation chain must have 1 or 2 languages, got {0}")]
    ChainLength(usize),
    #[error("no translator configured")]
    NoTranslator,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Text(#[from] TextError),
}

impl From<DetectorError> for PerturbError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::Classifier(c) => PerturbError::Classifier(c),
            other => PerturbError::Classifier(ClassifierError::InvalidProbs(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rp,
    Subw,
    Parap,
}

impl FromStr for Method {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rp" => Ok(Method::Rp),
            "subw" => Ok(Method::Subw),
            "parap" | "paraper" => Ok(Method::Parap),
            other => Err(PerturbError::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Rp => "rp",
            Method::Subw => "subw",
            Method::Parap => "parap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub method: Method,
    /// Maximum number of words replaced per candidate (g).
    pub max_words: usize,
    /// Synonyms considered per word (L).
    pub synonyms: usize,
    /// Maximum number of candidates delivered.
    pub budget: usize,
    /// Target languages for round-trip translation, in preference order.
    pub languages: Vec<String>,
    pub source_language: String,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            method: Method::Subw,
            max_words: 4,
            synonyms: 5,
            budget: 650,
            languages: Vec::new(),
            source_language: "en".into(),
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<(), PerturbError> {
        let bad = |m: &str| Err(PerturbError::InvalidConfig(m.to_string()));
        if self.max_words == 0 {
            return bad("g (max words) must be at least 1");
        }
        if self.synonyms == 0 {
            return bad("L (synonyms per word) must be at least 1");
        }
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if self.method == Method::Parap {
            if self.languages.is_empty() {
                return bad("method parap needs at least one target language");
            }
            let mut seen = HashSet::new();
            for l in &self.languages {
                if l == &self.source_language {
                    return bad("target languages must differ from the source language");
                }
                if !seen.insert(l) {
                    return bad("target languages must be distinct");
                }
            }
        }
        Ok(())
    }
}

/// Synonyms that are themselves single word tokens, so a substitution
/// never changes the token count.
fn usable_synonyms(store: &EmbeddingStore, word: &str, limit: usize) -> Vec<String> {
    store
        .nearest_synonyms(word, limit)
        .entries
        .into_iter()
        .map(|(w, _)| w)
        .filter(|w| {
            let t = tokenize(w);
            t.len() == 1 && t[0].is_word
        })
        .collect()
}

#[derive(Debug, Default)]
struct SynonymCache {
    lists: HashMap<String, Vec<String>>,
}

impl SynonymCache {
    fn get(&mut self, store: &EmbeddingStore, word: &str, limit: usize) -> &[String] {
        self.lists
            .entry(word.to_string())
            .or_insert_with(|| usable_synonyms(store, word, limit))
    }
}

/// Global token index paired with the synonyms available for that token.
type Slots = Vec<(usize, Vec<String>)>;

fn substitutable(doc: &Document, store: &EmbeddingStore, limit: usize, cache: &mut SynonymCache) -> Slots {
    doc.tokens()
        .enumerate()
        .filter(|(_, t)| t.is_word)
        .filter_map(|(i, t)| {
            let list = cache.get(store, &t.normalized, limit);
            (!list.is_empty()).then(|| (i, list.to_vec()))
        })
        .collect()
}

fn assign<R: Rng + ?Sized>(
    doc: &Document,
    slots: &[(usize, Vec<String>)],
    rng: &mut R,
) -> Result<String, PerturbError> {
    let replacements: Vec<(usize, String)> = slots
        .iter()
        .map(|(i, list)| (*i, list[rng.random_range(0..list.len())].clone()))
        .collect();
    Ok(doc.substitute(&replacements)?)
}

fn random_draw<R: Rng + ?Sized>(
    doc: &Document,
    slots: &[(usize, Vec<String>)],
    g: usize,
    rng: &mut R,
) -> Result<String, PerturbError> {
    if slots.is_empty() {
        return Err(PerturbError::Unperturbable);
    }
    let k = g.min(slots.len());
    let mut picked: Vec<usize> = sample(rng, slots.len(), k).into_vec();
    picked.sort_unstable();
    let chosen: Slots = picked.into_iter().map(|i| slots[i].clone()).collect();
    assign(doc, &chosen, rng)
}

/// Replace `min(g, #substitutable words)` uniformly chosen words with a
/// synonym drawn uniformly from each word's top-L list.
pub fn random_perturb<R: Rng + ?Sized>(
    doc: &Document,
    config: &PerturbConfig,
    store: &EmbeddingStore,
    rng: &mut R,
) -> Result<String, PerturbError> {
    let slots = substitutable(doc, store, config.synonyms, &mut SynonymCache::default());
    random_draw(doc, &slots, config.max_words, rng)
}

fn pair_divergence(f1: &dyn Classifier, f2: &dyn Classifier, texts: &[&str]) -> Result<Vec<f64>, PerturbError> {
    // empty fragments have divergence 0 by convention and are not sent
    let live: Vec<&str> = texts.iter().copied().filter(|t| !t.trim().is_empty()).collect();
    let p = f1.classify_batch(&live)?;
    let q = f2.classify_batch(&live)?;
    let mut scores = p.iter().zip(&q).map(|(a, b)| kl(a, b));
    texts
        .iter()
        .map(|t| {
            if t.trim().is_empty() {
                Ok(0.0)
            } else {
                Ok(scores.next().expect("one score per live text")?)
            }
        })
        .collect()
}

/// Divergence between the two models on one sentence.
pub fn sentence_importance(sentence: &str, f1: &dyn Classifier, f2: &dyn Classifier) -> Result<f64, PerturbError> {
    Ok(pair_divergence(f1, f2, &[sentence])?[0])
}

/// Drop in divergence when token `local` of sentence `sentence` is removed.
pub fn word_importance(
    doc: &Document,
    sentence: usize,
    local: usize,
    f1: &dyn Classifier,
    f2: &dyn Classifier,
) -> Result<f64, PerturbError> {
    let whole = doc.sentence_text(sentence).to_string();
    let without = doc.sentence_without(sentence, local);
    let d = pair_divergence(f1, f2, &[&whole, &without])?;
    Ok(d[0] - d[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRanking {
    pub sentence_scores: Vec<f64>,
    /// Per sentence: `(local token index, score)` for word tokens only.
    pub word_scores: Vec<Vec<(usize, f64)>>,
}

impl ImportanceRanking {
    pub fn compute(doc: &Document, f1: &dyn Classifier, f2: &dyn Classifier) -> Result<Self, PerturbError> {
        let mut sentence_scores = Vec::with_capacity(doc.sentences.len());
        let mut word_scores = Vec::with_capacity(doc.sentences.len());
        for (si, s) in doc.sentences.iter().enumerate() {
            let positions: Vec<usize> = s.word_positions().collect();
            let mut texts = vec![doc.sentence_text(si).to_string()];
            texts.extend(positions.iter().map(|&j| doc.sentence_without(si, j)));
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let d = pair_divergence(f1, f2, &refs)?;
            sentence_scores.push(d[0]);
            word_scores.push(positions.iter().zip(&d[1..]).map(|(&j, dj)| (j, d[0] - dj)).collect());
        }
        Ok(ImportanceRanking {
            sentence_scores,
            word_scores,
        })
    }

    /// Sentence indices by descending score, earlier sentence first on ties.
    pub fn sentence_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.sentence_scores.len()).collect();
        order.sort_by(|a, b| self.sentence_scores[*b].total_cmp(&self.sentence_scores[*a]));
        order
    }

    /// Word tokens of `sentence` by descending score, earlier position first on ties.
    pub fn word_order(&self, sentence: usize) -> Vec<usize> {
        let mut words = self.word_scores[sentence].clone();
        words.sort_by(|a, b| b.1.total_cmp(&a.1));
        words.into_iter().map(|(j, _)| j).collect()
    }

    /// Global token indices of the first `g` words accepted by `usable`,
    /// walking sentences in importance order and words within each.
    pub fn select(&self, doc: &Document, g: usize, mut usable: impl FnMut(usize) -> bool) -> Vec<usize> {
        let mut picked = Vec::with_capacity(g);
        for si in self.sentence_order() {
            let offset = doc.sentence_offset(si);
            for j in self.word_order(si) {
                if picked.len() == g {
                    return picked;
                }
                if usable(offset + j) {
                    picked.push(offset + j);
                }
            }
        }
        picked
    }
}

fn subw_slots(
    doc: &Document,
    ranking: &ImportanceRanking,
    g: usize,
    store: &EmbeddingStore,
    limit: usize,
    cache: &mut SynonymCache,
) -> Slots {
    let available: HashMap<usize, Vec<String>> = substitutable(doc, store, limit, cache).into_iter().collect();
    ranking
        .select(doc, g, |i| available.contains_key(&i))
        .into_iter()
        .map(|i| (i, available[&i].clone()))
        .collect()
}

/// Importance-guided substitution: rank sentences and words by their
/// effect on the divergence between `f1` and `f2`, take the top `g`
/// substitutable words and replace each with a uniformly drawn synonym.
pub fn tb_perturb<R: Rng + ?Sized>(
    doc: &Document,
    config: &PerturbConfig,
    f1: &dyn Classifier,
    f2: &dyn Classifier,
    store: &EmbeddingStore,
    rng: &mut R,
) -> Result<String, PerturbError> {
    let ranking = ImportanceRanking::compute(doc, f1, f2)?;
    let slots = subw_slots(
        doc,
        &ranking,
        config.max_words,
        store,
        config.synonyms,
        &mut SynonymCache::default(),
    );
    if slots.is_empty() {
        return Err(PerturbError::Unperturbable);
    }
    assign(doc, &slots, rng)
}

/// Translate `text` from `source` through one or two languages and back.
pub fn para_perturb(
    text: &str,
    chain: &[String],
    source: &str,
    translator: &dyn Translator,
) -> Result<String, PerturbError> {
    if chain.is_empty() || chain.len() > 2 {
        return Err(PerturbError::ChainLength(chain.len()));
    }
    let mut current = text.to_string();
    let mut from = source;
    for lang in chain {
        current = translator.translate(&current, from, lang)?;
        from = lang;
    }
    Ok(translator.translate(&current, from, source)?)
}

/// Single-language chains in configured order, then ordered pairs of
/// distinct languages by (first index, second index).
pub fn translation_chains(languages: &[String]) -> Vec<Vec<String>> {
    let mut chains: Vec<Vec<String>> = languages.iter().map(|l| vec![l.clone()]).collect();
    for a in languages {
        for b in languages {
            if a != b {
                chains.push(vec![a.clone(), b.clone()]);
            }
        }
    }
    chains
}

/// `e_k(sizes)`: number of ways to choose `k` slots and one option in each.
fn assignment_count(sizes: &[usize], k: usize) -> f64 {
    let mut e = vec![0.0f64; k + 1];
    e[0] = 1.0;
    for &s in sizes {
        for j in (1..=k).rev() {
            e[j] += e[j - 1] * s as f64;
        }
    }
    e[k]
}

pub struct StreamDeps<'a> {
    pub store: &'a EmbeddingStore,
    pub f1: &'a dyn Classifier,
    pub f2: &'a dyn Classifier,
    pub translator: Option<&'a dyn Translator>,
}

enum Engine<'a> {
    Substitution {
        slots: Option<Slots>,
        /// Number of distinct texts the engine can produce.
        space: f64,
        stale: usize,
    },
    Paraphrase {
        chains: Vec<Vec<String>>,
        next: usize,
        memo: MemoTranslator<'a>,
    },
}

/// Lazily generated candidates for one source text. Never yields the
/// source itself or a duplicate; stops after `budget` candidates or when
/// the engine runs out.
pub struct PerturbationStream<'a> {
    doc: Document,
    config: PerturbConfig,
    deps: StreamDeps<'a>,
    rng: ChaCha8Rng,
    seen: HashSet<String>,
    emitted: usize,
    cache: SynonymCache,
    engine: Engine<'a>,
    done: bool,
}

impl<'a> PerturbationStream<'a> {
    pub fn open(doc: Document, config: PerturbConfig, deps: StreamDeps<'a>) -> Result<Self, PerturbError> {
        config.validate()?;
        let engine = match config.method {
            Method::Rp | Method::Subw => Engine::Substitution {
                slots: None,
                space: 0.0,
                stale: 0,
            },
            Method::Parap => Engine::Paraphrase {
                chains: translation_chains(&config.languages),
                next: 0,
                memo: MemoTranslator::new(deps.translator.ok_or(PerturbError::NoTranslator)?),
            },
        };
        let mut seen = HashSet::new();
        seen.insert(doc.raw.clone());
        Ok(PerturbationStream {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            doc,
            config,
            deps,
            seen,
            emitted: 0,
            cache: SynonymCache::default(),
            engine,
            done: false,
        })
    }

    pub fn source(&self) -> &str {
        &self.doc.raw
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    pub fn translation_calls(&self) -> u64 {
        match &self.engine {
            Engine::Paraphrase { memo, .. } => memo.calls,
            Engine::Substitution { .. } => 0,
        }
    }

    pub fn provider_latency(&self) -> Duration {
        match &self.engine {
            Engine::Paraphrase { memo, .. } => memo.latency,
            Engine::Substitution { .. } => Duration::ZERO,
        }
    }

    /// Next candidate, or `None` once the budget is spent or the candidate
    /// space is exhausted.
    pub fn next_candidate(&mut self) -> Result<Option<String>, PerturbError> {
        if self.done || self.emitted >= self.config.budget {
            self.done = true;
            return Ok(None);
        }
        let next = match self.engine {
            Engine::Substitution { .. } => self.next_substitution()?,
            Engine::Paraphrase { .. } => self.next_paraphrase()?,
        };
        match next {
            Some(text) => {
                self.emitted += 1;
                Ok(Some(text))
            }
            None => {
                self.done = true;
                Ok(None)
            }
        }
    }

    fn init_slots(&mut self) -> Result<(Slots, f64), PerturbError> {
        let g = self.config.max_words;
        let limit = self.config.synonyms;
        Ok(match self.config.method {
            Method::Subw => {
                let ranking = ImportanceRanking::compute(&self.doc, self.deps.f1, self.deps.f2)?;
                let slots = subw_slots(&self.doc, &ranking, g, self.deps.store, limit, &mut self.cache);
                let space = slots.iter().map(|(_, l)| l.len() as f64).product();
                (slots, space)
            }
            _ => {
                let slots = substitutable(&self.doc, self.deps.store, limit, &mut self.cache);
                let sizes: Vec<usize> = slots.iter().map(|(_, l)| l.len()).collect();
                let space = assignment_count(&sizes, g.min(slots.len()));
                (slots, space)
            }
        })
    }

    fn next_substitution(&mut self) -> Result<Option<String>, PerturbError> {
        if matches!(self.engine, Engine::Substitution { slots: None, .. }) {
            let (s, n) = self.init_slots()?;
            if let Engine::Substitution { slots, space, .. } = &mut self.engine {
                *slots = Some(s);
                *space = n;
            }
        }
        let Engine::Substitution {
            slots: Some(slots),
            space,
            stale,
        } = &mut self.engine
        else {
            unreachable!("substitution engine initialized above");
        };
        if slots.is_empty() {
            // unperturbable input ends the stream
            return Ok(None);
        }
        loop {
            // the source is in `seen`, so every other distinct text counts
            if (self.seen.len() - 1) as f64 >= *space || *stale >= MAX_STALE_DRAWS {
                return Ok(None);
            }
            let text = match self.config.method {
                Method::Subw => assign(&self.doc, slots, &mut self.rng)?,
                _ => random_draw(&self.doc, slots, self.config.max_words, &mut self.rng)?,
            };
            if self.seen.insert(text.clone()) {
                *stale = 0;
                return Ok(Some(text));
            }
            *stale += 1;
        }
    }

    fn next_paraphrase(&mut self) -> Result<Option<String>, PerturbError> {
        let Engine::Paraphrase { chains, next, memo } = &mut self.engine else {
            unreachable!();
        };
        let source = self.config.source_language.as_str();
        while *next < chains.len() {
            let chain = &chains[*next];
            *next += 1;
            let mut current = self.doc.raw.clone();
            let mut from = source;
            let mut failed = false;
            for lang in chain.iter().map(String::as_str).chain(std::iter::once(source)) {
                match memo.translate(&current, from, lang) {
                    Ok(t) => current = t,
                    // a chain that yields nothing is skipped
                    Err(TranslateError::EmptyResult { .. }) => {
                        failed = true;
                        break;
                    }
                    Err(e) => return Err(e.into()),
                }
                from = lang;
            }
            if !failed && self.seen.insert(current.clone()) {
                return Ok(Some(current));
            }
        }
        Ok(None)
    }
}

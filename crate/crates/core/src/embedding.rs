//! Word vectors in the GloVe text format and cosine nearest-neighbour
//! synonym lookup.

use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("I/O error reading embeddings: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected {expected} components, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("line {line}: cannot parse {value:?} as a float")]
    Parse { line: usize, value: String },
    #[error("line {line}: non-finite component")]
    NonFinite { line: usize },
    #[error("line {line}: missing vector components")]
    MissingVector { line: usize },
    #[error("embedding file contains no vectors")]
    Empty,
    #[error("every vector in the embedding file is zero")]
    AllZero,
}

/// Immutable token -> vector table. Tokens are keyed by their lowercase form.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    words: Vec<String>,
    data: Vec<f32>,
    norms: Vec<f64>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynonymList {
    pub entries: Vec<(String, f64)>,
}

impl SynonymList {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(w, _)| w.as_str())
    }
}

/// Read `token v1 .. vD` lines. The dimension comes from `expected_dim` or,
/// when absent, from the first line. The first occurrence of a token wins.
pub fn load_embeddings<R: BufRead>(source: R, expected_dim: Option<usize>) -> Result<EmbeddingStore, EmbeddingError> {
    let mut dim = expected_dim;
    let mut entries: Vec<(String, Vec<f32>)> = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        let mut vector = Vec::with_capacity(dim.unwrap_or(0));
        for field in fields {
            let v: f32 = field.parse().map_err(|_| EmbeddingError::Parse {
                line: line_no,
                value: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(EmbeddingError::NonFinite { line: line_no });
            }
            vector.push(v);
        }
        if vector.is_empty() {
            return Err(EmbeddingError::MissingVector { line: line_no });
        }
        match dim {
            Some(d) if d != vector.len() => {
                return Err(EmbeddingError::Dimension {
                    line: line_no,
                    expected: d,
                    found: vector.len(),
                })
            }
            None => dim = Some(vector.len()),
            _ => {}
        }
        entries.push((token.to_lowercase(), vector));
    }
    let dim = match dim {
        Some(d) if !entries.is_empty() => d,
        _ => return Err(EmbeddingError::Empty),
    };
    EmbeddingStore::from_entries(dim, entries)
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine(u: &[f32], v: &[f32]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum()
}

fn norm(u: &[f32]) -> f64 {
    dot(u, u).sqrt()
}

impl EmbeddingStore {
    pub fn from_entries(
        dim: usize,
        entries: impl IntoIterator<Item = (String, Vec<f32>)>,
    ) -> Result<Self, EmbeddingError> {
        let mut store = EmbeddingStore {
            dim,
            words: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
            index: HashMap::new(),
        };
        for (line, (word, vector)) in entries.into_iter().enumerate() {
            if vector.len() != dim {
                return Err(EmbeddingError::Dimension {
                    line: line + 1,
                    expected: dim,
                    found: vector.len(),
                });
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { line: line + 1 });
            }
            let word = word.to_lowercase();
            if store.index.contains_key(&word) {
                continue;
            }
            store.index.insert(word.clone(), store.words.len());
            store.norms.push(norm(&vector));
            store.words.push(word);
            store.data.extend_from_slice(&vector);
        }
        if store.words.is_empty() || dim == 0 {
            return Err(EmbeddingError::Empty);
        }
        if store.norms.iter().all(|n| *n == 0.0) {
            return Err(EmbeddingError::AllZero);
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&word.to_lowercase())
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        let key = word.to_lowercase();
        self.index.get(&key).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Top-`limit` vocabulary entries by cosine similarity to `word`,
    /// excluding `word` itself; equal scores are ordered by token. An
    /// out-of-vocabulary query yields an empty list.
    pub fn nearest_synonyms(&self, word: &str, limit: usize) -> SynonymList {
        let key = word.to_lowercase();
        let Some(&query) = self.index.get(&key) else {
            return SynonymList { entries: vec![] };
        };
        let q = self.row(query);
        let qn = self.norms[query];
        let mut scored: Vec<(usize, f64)> = (0..self.words.len())
            .filter(|&i| i != query)
            .map(|i| {
                let n = self.norms[i];
                let score = if qn == 0.0 || n == 0.0 {
                    0.0
                } else {
                    (dot(q, self.row(i)) / (qn * n)).clamp(-1.0, 1.0)
                };
                (i, score)
            })
            .collect();
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.total_cmp(&a.1).then_with(|| self.words[a.0].cmp(&self.words[b.0]))
        };
        if limit < scored.len() {
            scored.select_nth_unstable_by(limit, by_rank);
            scored.truncate(limit);
        }
        scored.sort_by(by_rank);
        SynonymList {
            entries: scored.into_iter().map(|(i, s)| (self.words[i].clone(), s)).collect(),
        }
    }

    /// Serialize in the same whitespace-separated text format `load_embeddings` reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, word) in self.words.iter().enumerate() {
            out.push_str(word);
            for v in self.row(i) {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

//! Wire clients for the translation service and remote classifiers, and a
//! dictionary-based translator double.
//!
//! Translation: `POST {endpoint}/v1/translate` with
//! `{"q": text, "from": lang, "to": lang}`, answered by `{"text": translated}`.
//!
//! Remote classification: `POST {endpoint}/v1/classify` with
//! `{"texts": [..]}`, answered by `{"probs": [[p_0, .., p_K-1], ..]}`.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{Classifier, ClassifierError, LabelSet, ProbVector};
use crate::text::{detokenize, split_sentences, Token};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranslateError {
    #[error("translation {from}->{to}: source and target language are the same")]
    SameLanguage { from: String, to: String },
    #[error("translation input is empty")]
    EmptyInput,
    #[error("translator {endpoint} failed after {attempts} attempts: {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("translator {endpoint}: protocol error: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("translation {from}->{to} returned an empty text")]
    EmptyResult { from: String, to: String },
}

impl TranslateError {
    pub fn is_transport(&self) -> bool {
        matches!(self, TranslateError::Transport { .. } | TranslateError::Protocol { .. })
    }
}

pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, from: &str, to: &str) -> Result<String, TranslateError>;
}

/// Retry schedule shared by the HTTP clients: `retries` extra attempts after
/// the first, waiting `base * 2^attempt` scaled by a jitter factor in
/// `[0.5, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 2,
            base: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base.saturating_mul(1u32 << attempt.min(16));
        exp.mul_f64(rand::rng().random_range(0.5..1.0))
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            timeout: Duration::from_secs(10),
            retry: RetryPolicy::default(),
            max_in_flight: 8,
        }
    }
}

enum Failure {
    Transient(String),
    Fatal(String),
}

#[derive(Debug)]
struct JsonEndpoint {
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    limiter: Limiter,
}

impl JsonEndpoint {
    fn new(base: &str, path: &str, config: &HttpConfig) -> Self {
        let base = base.trim_end_matches('/');
        let url = if base.ends_with(path) {
            base.to_string()
        } else {
            format!("{base}{path}")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonEndpoint {
            url,
            agent,
            retry: config.retry,
            limiter: Limiter::new(config.max_in_flight),
        }
    }

    /// POST `body`, retrying transport failures and 5xx/429 answers.
    /// Returns the parsed body or `(attempts, message, transient)`.
    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, body: &B) -> Result<R, (u32, String, bool)> {
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            match self.post_once(body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(msg)) => return Err((attempt + 1, msg, false)),
                Err(Failure::Transient(msg)) => {
                    if attempt >= self.retry.retries {
                        return Err((attempt + 1, msg, true));
                    }
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn post_once<B: Serialize, R: for<'de> Deserialize<'de>>(&self, body: &B) -> Result<R, Failure> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(format!("HTTP {status}")));
        }
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| Failure::Fatal(format!("malformed response body: {e}")))
    }
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    q: &'a str,
    from: &'a str,
    to: &'a str,
}

#[derive(Deserialize)]
struct TranslateResponse {
    text: String,
}

/// Client for the translation protocol.
#[derive(Debug)]
pub struct TranslationClient {
    endpoint: JsonEndpoint,
}

impl TranslationClient {
    pub fn new(endpoint: &str, config: &HttpConfig) -> Self {
        TranslationClient {
            endpoint: JsonEndpoint::new(endpoint, "/v1/translate", config),
        }
    }

    pub fn url(&self) -> &str {
        &self.endpoint.url
    }
}

impl Translator for TranslationClient {
    fn translate(&self, text: &str, from: &str, to: &str) -> Result<String, TranslateError> {
        check_request(text, from, to)?;
        let resp: TranslateResponse =
            self.endpoint
                .post(&TranslateRequest { q: text, from, to })
                .map_err(|(attempts, message, transient)| {
                    if transient {
                        TranslateError::Transport {
                            endpoint: self.endpoint.url.clone(),
                            attempts,
                            message,
                        }
                    } else {
                        TranslateError::Protocol {
                            endpoint: self.endpoint.url.clone(),
                            message,
                        }
                    }
                })?;
        if resp.text.trim().is_empty() {
            return Err(TranslateError::EmptyResult {
                from: from.into(),
                to: to.into(),
            });
        }
        Ok(resp.text)
    }
}

fn check_request(text: &str, from: &str, to: &str) -> Result<(), TranslateError> {
    if from == to {
        return Err(TranslateError::SameLanguage {
            from: from.into(),
            to: to.into(),
        });
    }
    if text.trim().is_empty() {
        return Err(TranslateError::EmptyInput);
    }
    Ok(())
}

/// Word-by-word dictionary translator. Words without an entry pass through
/// unchanged; translation between two foreign languages pivots through the
/// source language.
#[derive(Debug, Clone, Default)]
pub struct MockTranslator {
    source: String,
    forward: HashMap<(String, String), String>,
    backward: HashMap<(String, String), String>,
}

impl MockTranslator {
    /// A translator with empty tables, i.e. the identity on every text.
    pub fn identity(source: &str) -> Self {
        MockTranslator {
            source: source.to_string(),
            ..Default::default()
        }
    }

    /// `source_word` translates to `foreign` in `lang`.
    pub fn forward(mut self, lang: &str, source_word: &str, foreign: &str) -> Self {
        self.forward
            .insert((lang.into(), source_word.to_lowercase()), foreign.to_lowercase());
        self
    }

    /// `foreign` in `lang` translates back to `source_word`.
    pub fn backward(mut self, lang: &str, foreign: &str, source_word: &str) -> Self {
        self.backward
            .insert((lang.into(), foreign.to_lowercase()), source_word.to_lowercase());
        self
    }

    pub fn pair(self, lang: &str, source_word: &str, foreign: &str) -> Self {
        self.forward(lang, source_word, foreign)
            .backward(lang, foreign, source_word)
    }

    fn word(&self, word: &str, from: &str, to: &str) -> Option<String> {
        let lookup = |table: &HashMap<(String, String), String>, lang: &str, w: &str| {
            table.get(&(lang.to_string(), w.to_string())).cloned()
        };
        if from == self.source {
            lookup(&self.forward, to, word)
        } else if to == self.source {
            lookup(&self.backward, from, word)
        } else {
            let pivot = lookup(&self.backward, from, word)?;
            lookup(&self.forward, to, &pivot)
        }
    }
}

impl Translator for MockTranslator {
    fn translate(&self, text: &str, from: &str, to: &str) -> Result<String, TranslateError> {
        check_request(text, from, to)?;
        let doc = split_sentences(text);
        let tokens: Vec<Token> = doc
            .tokens()
            .map(
                |t| match t.is_word.then(|| self.word(&t.normalized, from, to)).flatten() {
                    Some(w) => t.with_surface(&w),
                    None => t.clone(),
                },
            )
            .collect();
        let out = detokenize(&tokens, &doc).expect("token count preserved");
        if out.trim().is_empty() {
            return Err(TranslateError::EmptyResult {
                from: from.into(),
                to: to.into(),
            });
        }
        Ok(out)
    }
}

/// Per-run memo table in front of a translator, counting provider calls
/// and the time spent in them.
pub struct MemoTranslator<'a> {
    inner: &'a dyn Translator,
    memo: HashMap<(String, String, String), String>,
    pub calls: u64,
    pub latency: Duration,
}

impl<'a> MemoTranslator<'a> {
    pub fn new(inner: &'a dyn Translator) -> Self {
        MemoTranslator {
            inner,
            memo: HashMap::new(),
            calls: 0,
            latency: Duration::ZERO,
        }
    }

    pub fn translate(&mut self, text: &str, from: &str, to: &str) -> Result<String, TranslateError> {
        let key = (text.to_string(), from.to_string(), to.to_string());
        if let Some(hit) = self.memo.get(&key) {
            return Ok(hit.clone());
        }
        let started = Instant::now();
        let result = self.inner.translate(text, from, to);
        self.latency += started.elapsed();
        self.calls += 1;
        let out = result?;
        self.memo.insert(key, out.clone());
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub probs: Vec<Vec<f64>>,
}

/// Row sums further than this from 1 are rejected rather than renormalized.
pub const REMOTE_SUM_TOLERANCE: f64 = 1e-3;

/// Classifier served over the remote classification protocol.
#[derive(Debug)]
pub struct RemoteClassifier {
    id: String,
    labels: LabelSet,
    endpoint: JsonEndpoint,
}

impl RemoteClassifier {
    pub fn new(id: impl Into<String>, endpoint: &str, labels: LabelSet, config: &HttpConfig) -> Self {
        RemoteClassifier {
            id: id.into(),
            labels,
            endpoint: JsonEndpoint::new(endpoint, "/v1/classify", config),
        }
    }

    pub fn url(&self) -> &str {
        &self.endpoint.url
    }

    fn protocol(&self, message: String) -> ClassifierError {
        ClassifierError::Protocol {
            id: self.id.clone(),
            message,
        }
    }

    /// Check one response row and renormalize it.
    fn row(&self, row: &[f64]) -> Result<ProbVector, ClassifierError> {
        if row.len() != self.labels.len() {
            return Err(self.protocol(format!("row has {} entries, expected {}", row.len(), self.labels.len())));
        }
        if row
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0 + REMOTE_SUM_TOLERANCE)
        {
            return Err(self.protocol(format!("entry outside [0, 1] in {row:?}")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > REMOTE_SUM_TOLERANCE {
            return Err(self.protocol(format!("row sums to {sum}")));
        }
        ProbVector::clamped(row, self.labels.clone()).map_err(|e| self.protocol(e.to_string()))
    }
}

impl Classifier for RemoteClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn classify_batch(&self, texts: &[&str]) -> Result<Vec<ProbVector>, ClassifierError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let request = ClassifyRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
        };
        let resp: ClassifyResponse = self.endpoint.post(&request).map_err(|(attempts, message, transient)| {
            if transient {
                ClassifierError::Transport {
                    id: self.id.clone(),
                    message: format!("{} after {attempts} attempts: {message}", self.endpoint.url),
                    retriable: true,
                }
            } else {
                self.protocol(message)
            }
        })?;
        if resp.probs.len() != texts.len() {
            return Err(self.protocol(format!("{} rows for a batch of {}", resp.probs.len(), texts.len())));
        }
        resp.probs.iter().map(|r| self.row(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_mock() {
        let t = MockTranslator::identity("en");
        assert_eq!(
            t.translate("A delightful film.", "en", "xx").unwrap(),
            "A delightful film."
        );
        assert!(matches!(
            t.translate("x", "en", "en"),
            Err(TranslateError::SameLanguage { .. })
        ));
        assert!(matches!(t.translate("  ", "en", "de"), Err(TranslateError::EmptyInput)));
    }

    #[test]
    fn dictionary_round_trip_drifts() {
        let t = MockTranslator::identity("en")
            .forward("xx", "delightful", "w417")
            .backward("xx", "w417", "charming");
        let there = t.translate("delightful film", "en", "xx").unwrap();
        assert_eq!(there, "w417 film");
        assert_eq!(t.translate(&there, "xx", "en").unwrap(), "charming film");
        // sentence-initial capitalization follows the replaced word
        let there = t.translate("Delightful film", "en", "xx").unwrap();
        assert_eq!(t.translate(&there, "xx", "en").unwrap(), "Charming film");
    }

    #[test]
    fn foreign_to_foreign_pivots() {
        let t = MockTranslator::identity("en")
            .pair("de", "good", "gut")
            .pair("fr", "good", "bon");
        assert_eq!(t.translate("gut", "de", "fr").unwrap(), "bon");
    }

    #[test]
    fn mock_is_pure() {
        let t = MockTranslator::identity("en").pair("de", "film", "streifen");
        let first = t.translate("the film, the film!", "en", "de").unwrap();
        for _ in 0..10_000 {
            assert_eq!(t.translate("the film, the film!", "en", "de").unwrap(), first);
        }
    }

    #[test]
    fn memo_counts_provider_calls() {
        let t = MockTranslator::identity("en");
        let mut memo = MemoTranslator::new(&t);
        memo.translate("a", "en", "de").unwrap();
        memo.translate("a", "en", "de").unwrap();
        memo.translate("a", "en", "fr").unwrap();
        assert_eq!(memo.calls, 2);
    }

    #[test]
    fn endpoint_paths() {
        let c = HttpConfig::default();
        assert_eq!(
            TranslationClient::new("http://h:1/", &c).url(),
            "http://h:1/v1/translate"
        );
        let r = RemoteClassifier::new("r", "http://h:1/v1/classify", LabelSet::new(["a", "b"]), &c);
        assert_eq!(r.url(), "http://h:1/v1/classify");
    }
}

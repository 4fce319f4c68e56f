//! Run configuration shared by the command line and the service: a flat
//! `key = value` document whose keys mirror the command-line flags, plus
//! loading of the model, embedding and translation backends it names.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{BuiltinClassifier, BuiltinModel, ClassifierHandle, LabelSet};
use crate::detector::Detector;
use crate::embedding::{load_embeddings, EmbeddingStore};
use crate::perturb::{Method, PerturbConfig};
use crate::services::{HttpConfig, RemoteClassifier, RetryPolicy, TranslationClient, Translator};
use crate::voting::SprtParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Syntax {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    pub fn is_io(&self) -> bool {
        matches!(self, ConfigError::Io { .. })
    }
}

fn invalid(message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(message.into())
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Every tunable, all optional so that layers can be merged. Unset values
/// fall back to the defaults of the component configs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Calibration report whose `epsilon` is used when none is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<usize>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub languages: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_language: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_url: Option<Vec<String>>,
    /// Label names of remote classifiers, in column order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub translator_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reproducible: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub server: Option<String>,
}

fn csv(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value {value:?} for {key}: {e}"))
}

impl RunConfig {
    /// Parse `key = value` lines. Blank lines and lines starting with `#`
    /// are skipped; `-` and `_` are interchangeable in keys.
    pub fn parse_kv(text: &str, source_name: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected key = value".into()))?;
            cfg.set(key.trim(), value.trim()).map_err(syntax)?;
        }
        Ok(cfg)
    }

    pub fn load_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        RunConfig::parse_kv(&text, &path.display().to_string())
    }

    /// Assign one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.replace('-', "_");
        match key.as_str() {
            "epsilon" => self.epsilon = Some(parse_value(&key, value)?),
            "calibration" => self.calibration = Some(value.into()),
            "alpha" => self.alpha = Some(parse_value(&key, value)?),
            "beta" => self.beta = Some(parse_value(&key, value)?),
            "rho" => self.rho = Some(parse_value(&key, value)?),
            "sigma" => self.sigma = Some(parse_value(&key, value)?),
            "budget" => self.budget = Some(parse_value(&key, value)?),
            "method" => self.method = Some(parse_value(&key, value)?),
            "g" => self.g = Some(parse_value(&key, value)?),
            "L" | "l" => self.l = Some(parse_value(&key, value)?),
            "languages" => self.languages = Some(csv(value)),
            "source_language" => self.source_language = Some(value.to_string()),
            "seed" => self.seed = Some(parse_value(&key, value)?),
            "models" => self.models = Some(csv(value).into_iter().map(PathBuf::from).collect()),
            "embeddings" => self.embeddings = Some(value.into()),
            "classifier_url" => self.classifier_url = Some(csv(value)),
            "labels" => self.labels = Some(csv(value)),
            "translator_url" => self.translator_url = Some(value.to_string()),
            "timeout_ms" => self.timeout_ms = Some(parse_value(&key, value)?),
            "retries" => self.retries = Some(parse_value(&key, value)?),
            "out" => self.out = Some(value.into()),
            "workers" => self.workers = Some(parse_value(&key, value)?),
            "reproducible" => self.reproducible = Some(parse_value(&key, value)?),
            "server" => self.server = Some(value.to_string()),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Layer `over` on top of `self`; every value set in `over` wins.
    pub fn merge(self, over: RunConfig) -> RunConfig {
        RunConfig {
            epsilon: over.epsilon.or(self.epsilon),
            calibration: over.calibration.or(self.calibration),
            alpha: over.alpha.or(self.alpha),
            beta: over.beta.or(self.beta),
            rho: over.rho.or(self.rho),
            sigma: over.sigma.or(self.sigma),
            budget: over.budget.or(self.budget),
            method: over.method.or(self.method),
            g: over.g.or(self.g),
            l: over.l.or(self.l),
            languages: over.languages.or(self.languages),
            source_language: over.source_language.or(self.source_language),
            seed: over.seed.or(self.seed),
            models: over.models.or(self.models),
            embeddings: over.embeddings.or(self.embeddings),
            classifier_url: over.classifier_url.or(self.classifier_url),
            labels: over.labels.or(self.labels),
            translator_url: over.translator_url.or(self.translator_url),
            timeout_ms: over.timeout_ms.or(self.timeout_ms),
            retries: over.retries.or(self.retries),
            out: over.out.or(self.out),
            workers: over.workers.or(self.workers),
            reproducible: over.reproducible.or(self.reproducible),
            server: over.server.or(self.server),
        }
    }

    pub fn sprt(&self) -> Result<SprtParams, ConfigError> {
        let d = SprtParams::default();
        SprtParams::new(
            self.alpha.unwrap_or(d.alpha()),
            self.beta.unwrap_or(d.beta()),
            self.rho.unwrap_or(d.rho()),
            self.sigma.unwrap_or(d.sigma()),
        )
        .map_err(|e| invalid(e.to_string()))
    }

    pub fn perturb(&self) -> Result<PerturbConfig, ConfigError> {
        let d = PerturbConfig::default();
        let cfg = PerturbConfig {
            method: self.method.unwrap_or(d.method),
            max_words: self.g.unwrap_or(d.max_words),
            synonyms: self.l.unwrap_or(d.synonyms),
            budget: self.budget.unwrap_or(d.budget),
            languages: self.languages.clone().unwrap_or(d.languages),
            source_language: self.source_language.clone().unwrap_or(d.source_language),
            seed: self.seed.unwrap_or(d.seed),
        };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn http(&self) -> Result<HttpConfig, ConfigError> {
        let d = HttpConfig::default();
        if self.timeout_ms == Some(0) {
            return Err(invalid("timeout_ms must be positive"));
        }
        Ok(HttpConfig {
            timeout: self.timeout_ms.map(Duration::from_millis).unwrap_or(d.timeout),
            retry: RetryPolicy {
                retries: self.retries.unwrap_or(d.retry.retries),
                ..d.retry
            },
            ..d
        })
    }

    pub fn workers(&self) -> Result<usize, ConfigError> {
        match self.workers {
            Some(0) => Err(invalid("workers must be at least 1")),
            Some(n) => Ok(n),
            None => Ok(1),
        }
    }

    /// Check every tunable without touching files or the network.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(e) = self.epsilon {
            if !e.is_finite() || e < 0.0 {
                return Err(invalid(format!("epsilon must be finite and non-negative, got {e}")));
            }
        }
        self.sprt()?;
        self.perturb()?;
        self.http()?;
        self.workers()?;
        if self.classifier_url.is_some() && self.labels.is_none() {
            return Err(invalid("remote classifiers need labels"));
        }
        Ok(())
    }

    /// The explicit epsilon, else the one stored in the calibration report.
    pub fn resolve_epsilon(&self) -> Result<f64, ConfigError> {
        if let Some(e) = self.epsilon {
            return Ok(e);
        }
        let Some(path) = &self.calibration else {
            return Err(invalid("no epsilon: pass epsilon or a calibration report"));
        };
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| io_error(path, e))?;
        value["epsilon"]
            .as_f64()
            .filter(|e| e.is_finite() && *e >= 0.0)
            .ok_or_else(|| io_error(path, "calibration report has no valid epsilon"))
    }

    /// Load classifiers, embeddings and the translator. Model files come
    /// first, then remote classifiers, in the order given.
    pub fn load_backends(&self, epsilon: f64) -> Result<Backends, ConfigError> {
        self.validate()?;
        let models = self.models.clone().unwrap_or_default();
        let parsed: Vec<(PathBuf, BuiltinModel)> = models
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
                let model: BuiltinModel = serde_json::from_str(&text).map_err(|e| io_error(p, e))?;
                Ok((p.clone(), model))
            })
            .collect::<Result<_, ConfigError>>()?;

        let embedding_path = self.embeddings.clone().or_else(|| {
            parsed.first().map(|(p, m)| {
                let r = PathBuf::from(&m.embedding_ref);
                match p.parent() {
                    Some(dir) if r.is_relative() && !r.exists() => dir.join(r),
                    _ => r,
                }
            })
        });
        let store = match embedding_path {
            Some(path) => {
                let file = fs::File::open(&path).map_err(|e| io_error(&path, e))?;
                let store = load_embeddings(BufReader::new(file), None).map_err(|e| io_error(&path, e))?;
                Some(Arc::new(store))
            }
            None => None,
        };

        let mut handles: Vec<ClassifierHandle> = Vec::new();
        for (path, model) in parsed {
            let store = store.clone().expect("a model file implies an embedding path");
            let id = path.display().to_string();
            let c = BuiltinClassifier::new(id, model, store).map_err(|e| io_error(&path, e))?;
            handles.push(Arc::new(c));
        }
        let http = self.http()?;
        if let Some(urls) = &self.classifier_url {
            let labels = LabelSet::new(self.labels.clone().unwrap_or_default());
            for url in urls {
                handles.push(Arc::new(RemoteClassifier::new(url.clone(), url, labels.clone(), &http)));
            }
        }
        let detector = Detector::new(epsilon, handles).map_err(|e| invalid(e.to_string()))?;
        let translator = self
            .translator_url
            .as_ref()
            .map(|url| Arc::new(TranslationClient::new(url, &http)) as Arc<dyn Translator>);
        Ok(Backends {
            detector,
            store,
            translator,
        })
    }
}

/// Everything a detection or repair run needs besides its inputs.
#[derive(Clone)]
pub struct Backends {
    pub detector: Detector,
    pub store: Option<Arc<EmbeddingStore>>,
    pub translator: Option<Arc<dyn Translator>>,
}

impl Backends {
    /// Embeddings are needed to draw synonyms even when every classifier
    /// is remote.
    pub fn require_store(&self) -> Result<&EmbeddingStore, ConfigError> {
        self.store
            .as_deref()
            .ok_or_else(|| invalid("repair needs an embedding file (embeddings)"))
    }
}

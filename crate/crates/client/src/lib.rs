//! Blocking client for the advrepair service.
//!
//! ```no_run
//! use advrepair_client::Client;
//! use advrepair_core::api::{BatchInput, DetectRequest};
//!
//! let client = Client::new("http://127.0.0.1:8080").unwrap();
//! let req = DetectRequest {
//!     input: BatchInput::from_jsonl("{\"text\": \"a fine film.\"}\n"),
//!     ..Default::default()
//! };
//! for record in client.detect(&req).unwrap().records {
//!     println!("{} {:?}", record.id, record.verdict);
//! }
//! ```

use std::time::Duration;

use advrepair_core::api::{
    CalibrateRequest, DetectRequest, DetectResponse, ErrorBody, ErrorKind, Health, RepairRequest, RepairResponse,
    SimulateRequest,
};
use advrepair_core::batch::CalibrationReport;
use advrepair_core::services::{ClassifyRequest, ClassifyResponse};
use advrepair_core::voting::SimulationReport;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{kind:?} error from service: {message}")]
    Service {
        kind: ErrorKind,
        status: u16,
        message: String,
    },
    /// The service could not be reached or answered with garbage.
    #[error("transport error talking to {url}: {message}")]
    Transport { url: String, message: String },
}

impl ClientError {
    /// The error category, with unreachable services counted as transport.
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Service { kind, .. } => *kind,
            ClientError::Transport { .. } => ErrorKind::Transport,
        }
    }
}

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

/// Repair runs can take minutes on large batches.
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        Client::with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport {
                url: base_url.to_string(),
                message: e.to_string(),
            })?;
        Ok(Client {
            base: base_url.trim_end_matches('/').to_string(),
            http,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn decode<T: DeserializeOwned>(&self, url: &str, resp: reqwest::blocking::Response) -> Result<T, ClientError> {
        let transport = |message: String| ClientError::Transport {
            url: url.to_string(),
            message,
        };
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| transport(format!("bad response body: {e}")));
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(ClientError::Service {
                kind: body.kind,
                status: status.as_u16(),
                message: body.error,
            }),
            // axum's own extractor rejections are plain text
            Err(_) if status.is_client_error() => Err(ClientError::Service {
                kind: ErrorKind::Config,
                status: status.as_u16(),
                message: String::from_utf8_lossy(&bytes).into_owned(),
            }),
            Err(_) => Err(transport(format!("HTTP {status}"))),
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| ClientError::Transport {
                url: url.clone(),
                message: e.to_string(),
            })?;
        self.decode(&url, resp)
    }

    pub fn health(&self) -> Result<Health, ClientError> {
        let url = format!("{}/health", self.base);
        let resp = self.http.get(&url).send().map_err(|e| ClientError::Transport {
            url: url.clone(),
            message: e.to_string(),
        })?;
        self.decode(&url, resp)
    }

    /// Classify with the model at `index`.
    pub fn classify(&self, index: usize, texts: &[String]) -> Result<ClassifyResponse, ClientError> {
        let body = ClassifyRequest { texts: texts.to_vec() };
        self.post(&format!("/models/{index}/v1/classify"), &body)
    }

    pub fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, ClientError> {
        self.post("/v1/detect", req)
    }

    pub fn repair(&self, req: &RepairRequest) -> Result<RepairResponse, ClientError> {
        self.post("/v1/repair", req)
    }

    pub fn calibrate(&self, req: &CalibrateRequest) -> Result<CalibrationReport, ClientError> {
        self.post("/v1/calibrate", req)
    }

    pub fn simulate(&self, req: &SimulateRequest) -> Result<SimulationReport, ClientError> {
        self.post("/v1/simulate", req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_service_is_transport() {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let client = Client::with_timeout(&format!("http://127.0.0.1:{port}/"), Duration::from_secs(2)).unwrap();
        assert_eq!(client.base_url(), format!("http://127.0.0.1:{port}"));
        assert_eq!(client.health().unwrap_err().kind(), ErrorKind::Transport);
    }
}

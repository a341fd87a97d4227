//! HTTP client for an external encoder service.
//!
//! Protocol: `POST {base}/encode` with `{"texts": [...], "mode": "query"|"passage"}`
//! answered by `{"vectors": [[...], ...], "dimension": d}` in request order, and
//! `GET {base}/health` answered by `{"status": "ok", "dimension": d, "model": ...}`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{DenseVector, EncodeMode, Encoder, EncoderError, DEFAULT_MAX_QUERY_CHARS};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncodeRequest {
    pub texts: Vec<String>,
    pub mode: EncodeMode,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncodeResponse {
    pub vectors: Vec<Vec<f32>>,
    pub dimension: usize,
}

#[derive(Debug, Deserialize)]
struct HealthResponse {
    dimension: usize,
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    pub max_in_flight: usize,
    /// Texts per request; larger inputs are split into several requests.
    pub max_batch: usize,
    pub max_query_chars: usize,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions {
            timeout: Duration::from_secs(30),
            max_in_flight: 8,
            max_batch: 64,
            max_query_chars: DEFAULT_MAX_QUERY_CHARS,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    active: Mutex<usize>,
    released: Condvar,
    max: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.released.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.released.notify_one();
    }
}

#[derive(Debug)]
pub struct RemoteEncoder {
    base_url: String,
    dimension: usize,
    agent: ureq::Agent,
    in_flight: InFlight,
    options: RemoteOptions,
}

fn make_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

impl RemoteEncoder {
    pub fn new(base_url: &str, dimension: usize, options: RemoteOptions) -> Result<Self, EncoderError> {
        if dimension == 0 {
            return Err(EncoderError::InvalidDimension(dimension));
        }
        Ok(RemoteEncoder {
            base_url: base_url.trim_end_matches('/').to_string(),
            dimension,
            agent: make_agent(options.timeout),
            in_flight: InFlight {
                active: Mutex::new(0),
                released: Condvar::new(),
                max: options.max_in_flight.max(1),
            },
            options,
        })
    }

    /// Connects using the dimension advertised by `GET /health`.
    pub fn discover(base_url: &str, options: RemoteOptions) -> Result<Self, EncoderError> {
        let base = base_url.trim_end_matches('/');
        let url = format!("{base}/health");
        let agent = make_agent(options.timeout);
        let mut resp = agent.get(&url).call().map_err(|e| EncoderError::Unreachable {
            url: url.clone(),
            message: e.to_string(),
        })?;
        if resp.status().as_u16() != 200 {
            return Err(EncoderError::Protocol(format!(
                "health check returned HTTP {}",
                resp.status().as_u16()
            )));
        }
        let health: HealthResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EncoderError::Protocol(e.to_string()))?;
        Self::new(base, health.dimension, options)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post_batch(&self, texts: &[String], mode: EncodeMode) -> Result<Vec<DenseVector>, EncoderError> {
        let url = format!("{}/encode", self.base_url);
        let body = EncodeRequest {
            texts: texts.to_vec(),
            mode,
        };
        let _permit = self.in_flight.acquire();
        let mut resp = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| EncoderError::Unreachable {
                url: url.clone(),
                message: e.to_string(),
            })?;
        let status = resp.status().as_u16();
        if status != 200 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(EncoderError::Protocol(format!("HTTP {status}: {detail}")));
        }
        let parsed: EncodeResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EncoderError::Protocol(e.to_string()))?;
        if parsed.dimension != self.dimension {
            return Err(EncoderError::DimensionMismatch {
                expected: self.dimension,
                got: parsed.dimension,
            });
        }
        if parsed.vectors.len() != texts.len() {
            return Err(EncoderError::Protocol(format!(
                "{} vectors for {} texts",
                parsed.vectors.len(),
                texts.len()
            )));
        }
        parsed
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(EncoderError::DimensionMismatch {
                        expected: self.dimension,
                        got: v.len(),
                    });
                }
                DenseVector::new(v)
            })
            .collect()
    }
}

impl Encoder for RemoteEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn max_query_chars(&self) -> usize {
        self.options.max_query_chars
    }

    fn encode_texts(
        &self,
        texts: &[String],
        mode: EncodeMode,
    ) -> Result<Vec<DenseVector>, EncoderError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.options.max_batch.max(1)) {
            out.extend(self.post_batch(chunk, mode)?);
        }
        Ok(out)
    }
}

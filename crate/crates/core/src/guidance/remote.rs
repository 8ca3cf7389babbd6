use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use ureq::Agent;

use super::wire::{self, SdsRequestBody, HEALTH_PATH, SDS_PATH};
use super::{GuidanceGradient, GuidanceProvider, GuidanceRequest, NoiseSchedule};
use crate::error::{invalid, Error, Result};

/// Environment variable that overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "SDFILL_GUIDANCE_URL";

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
    pub max_pixels: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(60),
            retries: 3,
            initial_backoff: Duration::from_millis(250),
            max_in_flight: 4,
            max_pixels: 512 * 512,
        }
    }

    /// Replaces the endpoint with `$SDFILL_GUIDANCE_URL` when it is set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            if !url.trim().is_empty() {
                self.endpoint = url.trim().to_string();
            }
        }
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.trim_end_matches('/'), path)
    }
}

/// Client for an HTTP guidance service.
pub struct RemoteGuidance {
    cfg: RemoteConfig,
    agent: Agent,
    in_flight: Mutex<usize>,
    slot_free: Condvar,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl RemoteGuidance {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if !(cfg.endpoint.starts_with("http://") || cfg.endpoint.starts_with("https://")) {
            return Err(invalid(format!("guidance endpoint must be an http(s) URL, got {:?}", cfg.endpoint)));
        }
        if cfg.max_in_flight == 0 {
            return Err(invalid("max_in_flight must be positive"));
        }
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteGuidance { cfg, agent, in_flight: Mutex::new(0), slot_free: Condvar::new() })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// Queries `GET /v1/health`, without retries.
    pub fn health(&self) -> Result<wire::HealthBody> {
        let mut resp = self
            .agent
            .get(self.cfg.url(HEALTH_PATH))
            .call()
            .map_err(|e| Error::GuidanceUnavailable(format!("health check failed: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::GuidanceUnavailable(format!("reading health response: {e}")))?;
        if status != 200 {
            return Err(Error::GuidanceUnavailable(format!("health endpoint returned {status}: {body}")));
        }
        wire::parse_health(&body)
    }

    fn acquire(&self) {
        let mut n = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.cfg.max_in_flight {
            n = self.slot_free.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
    }

    fn release(&self) {
        let mut n = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.slot_free.notify_one();
    }

    fn attempt(&self, body: &str, response_limit: u64) -> std::result::Result<String, Attempt> {
        let mut resp = match self
            .agent
            .post(self.cfg.url(SDS_PATH))
            .header("Content-Type", "application/json")
            .send(body)
        {
            Ok(r) => r,
            Err(ureq::Error::BadUri(u)) => return Err(Attempt::Fatal(invalid(format!("bad guidance URL {u}")))),
            Err(e) => return Err(Attempt::Retry(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(response_limit)
            .read_to_string()
            .map_err(|e| Attempt::Retry(format!("reading response: {e}")))?;
        match status {
            200 => Ok(text),
            429 | 500..=599 => Err(Attempt::Retry(format!("service returned {status}: {}", snippet(&text)))),
            _ => Err(Attempt::Fatal(Error::Protocol(format!("service rejected request with {status}: {}", snippet(&text))))),
        }
    }
}

fn snippet(s: &str) -> &str {
    let end = s.char_indices().nth(200).map_or(s.len(), |(i, _)| i);
    &s[..end]
}

impl GuidanceProvider for RemoteGuidance {
    fn sds_grad(&self, request: &GuidanceRequest, _schedule: &NoiseSchedule) -> Result<GuidanceGradient> {
        if request.pixel_count() > self.cfg.max_pixels {
            return Err(invalid(format!(
                "{}x{} image exceeds the configured limit of {} pixels",
                request.width, request.height, self.cfg.max_pixels
            )));
        }
        let n = request.width * request.height * 3;
        let body = serde_json::to_string(&SdsRequestBody {
            image_b64: wire::encode_f32(&request.image),
            height: request.height,
            width: request.width,
            prompt: request.prompt.clone(),
            view_suffix: request.view_suffix.clone(),
            t: request.t,
            epsilon_b64: wire::encode_f32(&request.epsilon),
            guidance_scale: request.guidance_scale,
        })
        .map_err(|e| Error::Protocol(e.to_string()))?;
        let limit = (n as u64 * 8).max(1 << 16) + 4096;

        self.acquire();
        let mut backoff = self.cfg.initial_backoff;
        let mut result = Err(Error::GuidanceUnavailable("no attempt made".into()));
        for attempt in 0..=self.cfg.retries {
            match self.attempt(&body, limit) {
                Ok(text) => {
                    result = Ok(text);
                    break;
                }
                Err(Attempt::Fatal(e)) => {
                    result = Err(e);
                    break;
                }
                Err(Attempt::Retry(msg)) => {
                    if attempt == self.cfg.retries {
                        result = Err(Error::GuidanceUnavailable(format!(
                            "{} after {} attempts: {msg}",
                            self.cfg.endpoint,
                            attempt + 1
                        )));
                    } else {
                        warn!("guidance request failed ({msg}); retrying in {backoff:?}");
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        self.release();

        let parsed = wire::parse_response(&result?)?;
        let grad = wire::decode_f32(&parsed.grad_b64, n, "grad_b64")?;
        debug!("guidance gradient from {}", parsed.model_id);
        Ok(GuidanceGradient { width: request.width, height: request.height, grad, model_id: parsed.model_id })
    }

    fn model_id(&self) -> String {
        format!("remote:{}", self.cfg.endpoint)
    }
}

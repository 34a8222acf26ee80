//! Remote energy backend speaking JSON over HTTP to a model server.

pub mod protocol;
pub mod stub;

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyBackend, Logits, NoiseSchedule};
use crate::error::{BackendError, Error, Result};
use crate::image::{resize_bilinear, Image};
use protocol::*;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteBackendConfig {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retries: u32,
    /// `(height, width)` images are resized to before upload.
    pub request_image_size: (usize, usize),
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl RemoteBackendConfig {
    pub fn new(base_url: impl Into<String>, request_image_size: (usize, usize)) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            retries: 0,
            request_image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::Argument("timeout_ms must be positive".into()));
        }
        if self.request_image_size.0 == 0 || self.request_image_size.1 == 0 {
            return Err(Error::Argument("request_image_size must be positive".into()));
        }
        url_prefix(&self.base_url)?;
        Ok(())
    }
}

fn url_prefix(base: &str) -> Result<String> {
    let trimmed = base.trim_end_matches('/');
    if !(trimmed.starts_with("http://") || trimmed.starts_with("https://")) {
        return Err(Error::Argument(format!("base_url must be an http(s) URL, got {base:?}")));
    }
    Ok(trimmed.to_string())
}

/// Blocking HTTP client for the model-server protocol.
pub struct RemoteClient {
    cfg: RemoteBackendConfig,
    prefix: String,
    agent: ureq::Agent,
}

enum Attempt<T> {
    Done(Result<T, BackendError>),
    Retry(BackendError),
}

impl RemoteClient {
    pub fn new(cfg: RemoteBackendConfig) -> Result<Self> {
        cfg.validate()?;
        let timeout = Duration::from_millis(cfg.timeout_ms);
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(timeout)
            .timeout_read(timeout)
            .timeout_write(timeout)
            .build();
        Ok(Self {
            prefix: url_prefix(&cfg.base_url)?,
            cfg,
            agent,
        })
    }

    pub fn config(&self) -> &RemoteBackendConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.prefix, path)
    }

    fn once<T: DeserializeOwned>(&self, url: &str, body: Option<&serde_json::Value>) -> Attempt<T> {
        let response = match body {
            Some(b) => self.agent.post(url).send_json(b),
            None => self.agent.get(url).call(),
        };
        match response {
            Ok(resp) => {
                let text = match resp.into_string() {
                    Ok(t) => t,
                    Err(e) => return Attempt::Retry(transport_error(url, &e)),
                };
                Attempt::Done(serde_json::from_str(&text).map_err(|e| BackendError::Protocol {
                    url: url.to_string(),
                    detail: e.to_string(),
                }))
            }
            Err(ureq::Error::Status(status, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let (error, detail) = match serde_json::from_str::<ErrorBody>(&text) {
                    Ok(b) => (b.error, b.detail),
                    Err(_) => (String::new(), text),
                };
                if error == RANGE_ERROR {
                    return Attempt::Done(Err(BackendError::Protocol {
                        url: url.to_string(),
                        detail: format!("{RANGE_ERROR}: {detail}"),
                    }));
                }
                let err = BackendError::Server {
                    url: url.to_string(),
                    status,
                    detail: if error.is_empty() { detail } else { format!("{error}: {detail}") },
                };
                if status >= 500 {
                    Attempt::Retry(err)
                } else {
                    Attempt::Done(Err(err))
                }
            }
            Err(ureq::Error::Transport(t)) => Attempt::Retry(transport_error(url, &t)),
        }
    }

    /// Issue a request with up to `retries` additional attempts on
    /// transport failures and 5xx replies. All endpoints are idempotent.
    fn request<T: DeserializeOwned>(&self, path: &str, body: Option<serde_json::Value>) -> Result<T, BackendError> {
        let url = self.url(path);
        let started = Instant::now();
        let attempts = self.cfg.retries + 1;
        let mut last = None;
        for _ in 0..attempts {
            match self.once(&url, body.as_ref()) {
                Attempt::Done(r) => return r,
                Attempt::Retry(e) => last = Some(e),
            }
        }
        Err(match last.expect("at least one attempt") {
            BackendError::Timeout { url, .. } => BackendError::Timeout {
                url,
                elapsed_ms: started.elapsed().as_millis() as u64,
                attempts,
            },
            other => other,
        })
    }

    pub fn health(&self) -> Result<HealthResponse, BackendError> {
        let h: HealthResponse = self.request(HEALTH_PATH, None)?;
        if h.models.is_empty() {
            return Err(BackendError::Protocol {
                url: self.url(HEALTH_PATH),
                detail: "health response lists no models".into(),
            });
        }
        Ok(h)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, BackendError> {
        let s: ScheduleResponse = self.request(SCHEDULE_PATH, None)?;
        if s.betas.len() != s.num_timesteps {
            return Err(BackendError::Protocol {
                url: self.url(SCHEDULE_PATH),
                detail: format!("num_timesteps {} but {} betas", s.num_timesteps, s.betas.len()),
            });
        }
        NoiseSchedule::new(s.betas).map_err(|e| BackendError::Protocol {
            url: self.url(SCHEDULE_PATH),
            detail: e.to_string(),
        })
    }

    fn wire_image(&self, image: &Image) -> Result<String, BackendError> {
        let (h, w) = self.cfg.request_image_size;
        let resized = resize_bilinear(image, h, w).map_err(|e| BackendError::Other(e.to_string()))?;
        Ok(encode_image(&resized))
    }

    pub fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        let body = serde_json::to_value(LogitsRequest {
            image_png_b64: self.wire_image(image)?,
            prompts: prompts.to_vec(),
        })
        .expect("request serializes");
        let resp: LogitsResponse = self.request(LOGITS_PATH, Some(body))?;
        if resp.logits.len() != prompts.len() {
            return Err(BackendError::Protocol {
                url: self.url(LOGITS_PATH),
                detail: format!("expected {} logits, got {}", prompts.len(), resp.logits.len()),
            });
        }
        Logits::new(resp.logits).map_err(|e| BackendError::Protocol {
            url: self.url(LOGITS_PATH),
            detail: e.to_string(),
        })
    }

    pub fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        let body = serde_json::to_value(DenoiseRequest {
            image_png_b64: self.wire_image(image)?,
            timestep,
            seed,
        })
        .expect("request serializes");
        let resp: DenoiseResponse = self.request(DENOISE_PATH, Some(body))?;
        if !resp.mse.is_finite() {
            return Err(BackendError::Protocol {
                url: self.url(DENOISE_PATH),
                detail: format!("non-finite mse {}", resp.mse),
            });
        }
        Ok(resp.mse)
    }
}

fn transport_error(url: &str, err: &dyn std::fmt::Display) -> BackendError {
    let text = err.to_string();
    let lower = text.to_lowercase();
    if lower.contains("timed out") || lower.contains("timeout") || lower.contains("would block") {
        BackendError::Timeout {
            url: url.to_string(),
            elapsed_ms: 0,
            attempts: 1,
        }
    } else {
        BackendError::Unreachable {
            url: url.to_string(),
            detail: text,
        }
    }
}

/// Model descriptors and noise schedule reported by the server.
pub fn health_and_schedule(cfg: &RemoteBackendConfig) -> Result<(Vec<String>, NoiseSchedule), BackendError> {
    let client = RemoteClient::new(cfg.clone()).map_err(|e| BackendError::Other(e.to_string()))?;
    Ok((client.health()?.models, client.schedule()?))
}

pub fn remote_logits(image: &Image, prompts: &[String], cfg: &RemoteBackendConfig) -> Result<Logits, BackendError> {
    RemoteClient::new(cfg.clone())
        .map_err(|e| BackendError::Other(e.to_string()))?
        .logits(image, prompts)
}

pub fn remote_denoise_error(image: &Image, timestep: usize, seed: u64, cfg: &RemoteBackendConfig) -> Result<f64, BackendError> {
    let client = RemoteClient::new(cfg.clone()).map_err(|e| BackendError::Other(e.to_string()))?;
    let schedule = client.schedule()?;
    check_timestep(timestep, schedule.len())?;
    client.denoise_error(image, timestep, seed)
}

fn check_timestep(timestep: usize, max: usize) -> Result<(), BackendError> {
    if timestep == 0 || timestep > max {
        Err(BackendError::Range { timestep, max })
    } else {
        Ok(())
    }
}

/// [`EnergyBackend`] backed by a model server. Connecting fetches the
/// server's models and schedule once; timesteps are range-checked locally
/// against that schedule.
pub struct RemoteBackend {
    client: RemoteClient,
    models: Vec<String>,
    schedule: NoiseSchedule,
}

impl RemoteBackend {
    pub fn connect(cfg: RemoteBackendConfig) -> Result<Self> {
        let client = RemoteClient::new(cfg)?;
        let models = client.health()?.models;
        let schedule = client.schedule()?;
        Ok(Self {
            client,
            models,
            schedule,
        })
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    /// The schedule served by the model, for client-side computations.
    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

impl EnergyBackend for RemoteBackend {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        self.client.logits(image, prompts)
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        check_timestep(timestep, self.schedule.len())?;
        self.client.denoise_error(image, timestep, seed).map_err(|e| match e {
            BackendError::Protocol { ref detail, .. } if detail.starts_with(RANGE_ERROR) => BackendError::Range {
                timestep,
                max: self.schedule.len(),
            },
            other => other,
        })
    }

    fn descriptor(&self) -> String {
        format!("remote:{} [{}]", self.client.cfg.base_url, self.models.join(", "))
    }
}

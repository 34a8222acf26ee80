//! In-process HTTP server implementing the model-server protocol over any
//! [`EnergyBackend`], or over an arbitrary request handler for fault
//! injection. Binds to an ephemeral localhost port and shuts down on drop.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;

use super::protocol::*;
use crate::energy::{EnergyBackend, NoiseSchedule};
use crate::error::{BackendError, Error, Result};

#[derive(Clone, Debug)]
pub struct StubRequest {
    pub method: String,
    pub path: String,
    pub body: String,
}

#[derive(Clone, Debug)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
}

impl StubResponse {
    pub fn json(status: u16, value: &impl Serialize) -> Self {
        Self {
            status,
            body: serde_json::to_string(value).expect("response serializes"),
        }
    }

    pub fn error(status: u16, error: &str, detail: impl Into<String>) -> Self {
        Self::json(
            status,
            &ErrorBody {
                error: error.to_string(),
                detail: detail.into(),
            },
        )
    }
}

type Handler = dyn Fn(&StubRequest) -> StubResponse + Send + Sync;

pub struct StubServer {
    url: String,
    server: Arc<tiny_http::Server>,
    requests: Arc<AtomicU64>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&StubRequest) -> StubResponse + Send + Sync + 'static) -> Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| Error::Argument(format!("cannot bind stub server: {e}")))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Argument("stub server has no IP address".into()))?;
        let server = Arc::new(server);
        let requests = Arc::new(AtomicU64::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || {
                while let Ok(mut rq) = server.recv() {
                    requests.fetch_add(1, Ordering::Relaxed);
                    let mut body = String::new();
                    let _ = rq.as_reader().read_to_string(&mut body);
                    let req = StubRequest {
                        method: rq.method().as_str().to_uppercase(),
                        path: rq.url().to_string(),
                        body,
                    };
                    let resp = handler(&req);
                    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                        .expect("static header is valid");
                    let reply = tiny_http::Response::from_string(resp.body)
                        .with_status_code(resp.status)
                        .with_header(header);
                    let _ = rq.respond(reply);
                }
            })
        };
        Ok(Self {
            url: format!("http://127.0.0.1:{port}"),
            server,
            requests,
            thread: Some(thread),
        })
    }

    /// Serve the protocol on top of `backend`, reporting `schedule` and `models`.
    pub fn serve_backend(
        backend: Arc<dyn EnergyBackend>,
        schedule: NoiseSchedule,
        models: Vec<String>,
    ) -> Result<Self> {
        Self::start(move |req| route(req, backend.as_ref(), &schedule, &models))
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Number of HTTP requests received so far.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn backend_failure(e: BackendError) -> StubResponse {
    StubResponse::error(500, "backend_error", e.to_string())
}

fn route(req: &StubRequest, backend: &dyn EnergyBackend, schedule: &NoiseSchedule, models: &[String]) -> StubResponse {
    match (req.method.as_str(), req.path.as_str()) {
        ("GET", HEALTH_PATH) => StubResponse::json(
            200,
            &HealthResponse {
                status: "ok".into(),
                models: models.to_vec(),
                preprocessing: None,
            },
        ),
        ("GET", SCHEDULE_PATH) => StubResponse::json(
            200,
            &ScheduleResponse {
                num_timesteps: schedule.len(),
                betas: schedule.betas().to_vec(),
            },
        ),
        ("POST", LOGITS_PATH) => {
            let parsed: LogitsRequest = match serde_json::from_str(&req.body) {
                Ok(p) => p,
                Err(e) => return StubResponse::error(400, "bad_request", e.to_string()),
            };
            let image = match decode_image(&parsed.image_png_b64) {
                Ok(i) => i,
                Err(e) => return StubResponse::error(400, "bad_image", e.to_string()),
            };
            match backend.logits(&image, &parsed.prompts) {
                Ok(l) => StubResponse::json(
                    200,
                    &LogitsResponse {
                        logits: l.values().to_vec(),
                    },
                ),
                Err(e) => backend_failure(e),
            }
        }
        ("POST", DENOISE_PATH) => {
            let parsed: DenoiseRequest = match serde_json::from_str(&req.body) {
                Ok(p) => p,
                Err(e) => return StubResponse::error(400, "bad_request", e.to_string()),
            };
            if parsed.timestep == 0 || parsed.timestep > schedule.len() {
                return StubResponse::error(
                    422,
                    RANGE_ERROR,
                    format!("timestep {} outside 1..={}", parsed.timestep, schedule.len()),
                );
            }
            let image = match decode_image(&parsed.image_png_b64) {
                Ok(i) => i,
                Err(e) => return StubResponse::error(400, "bad_image", e.to_string()),
            };
            match backend.denoise_error(&image, parsed.timestep, parsed.seed) {
                Ok(mse) => StubResponse::json(200, &DenoiseResponse { mse }),
                Err(e) => backend_failure(e),
            }
        }
        _ => StubResponse::error(404, "not_found", format!("{} {}", req.method, req.path)),
    }
}

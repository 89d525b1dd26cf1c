//! Job submission API.
//!
//! | method | path                               | result                         |
//! |--------|------------------------------------|--------------------------------|
//! | POST   | `/v1/edits`                        | 202 `{"id": ...}`              |
//! | GET    | `/v1/edits/{id}`                   | 200 [`JobState`]               |
//! | GET    | `/v1/edits/{id}/artifacts/{name}`  | 200 file bytes                 |
//! | DELETE | `/v1/edits/{id}`                   | 204, or 409 unless still queued |
//!
//! Submissions are multipart forms with fields `image` (PNG/JPEG file),
//! `instruction` (text) and optionally `override` (JSON plan fields), `mask`
//! (mask PNG) and `seed` (integer).

use std::collections::BTreeSet;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::pipeline::write_atomic;
use super::{EditOptions, ErrorCode, JobState, Phase, Pipeline, PlanOverride, PlanOverrideFields, Registry};
use crate::codec;
use crate::model::validate_instruction;
use crate::server::{serve, ServeError, ServingHandle};

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;
const REQUEST_DIR: &str = "request";

/// What a submission leaves on disk so the job can be re-run after a restart.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredRequest {
    instruction: String,
    #[serde(rename = "override")]
    plan_override: Option<PlanOverrideFields>,
    seed: Option<u64>,
    has_mask: bool,
}

struct Jobs {
    registry: Registry,
    /// Jobs that left the queue; they can no longer be cancelled.
    started: BTreeSet<String>,
}

pub struct ApiState {
    pipeline: Pipeline,
    jobs: Mutex<Jobs>,
    permits: Arc<Semaphore>,
}

impl ApiState {
    /// Opens the registry under the pipeline's output directory and
    /// re-queues jobs that were still running when it was last written.
    pub fn open(pipeline: Pipeline, parallelism: usize) -> io::Result<Arc<Self>> {
        let registry = Registry::open(&pipeline.out_dir)?;
        let unfinished = registry.unfinished();
        let state = Arc::new(Self {
            pipeline,
            jobs: Mutex::new(Jobs {
                registry,
                started: BTreeSet::new(),
            }),
            permits: Arc::new(Semaphore::new(parallelism.max(1))),
        });
        for id in unfinished {
            tracing::info!(%id, "re-queueing unfinished job");
            state.record(&JobState::new(&id));
            spawn_job(state.clone(), id);
        }
        Ok(state)
    }

    pub fn job(&self, id: &str) -> Option<JobState> {
        self.jobs.lock().expect("registry lock").registry.get(id).cloned()
    }

    fn record(&self, state: &JobState) {
        let mut jobs = self.jobs.lock().expect("registry lock");
        let mut state = state.clone();
        if let Some(queued) = jobs.registry.get(&state.id).and_then(|s| s.timestamps.get(&Phase::Queued)) {
            state.timestamps.insert(Phase::Queued, *queued);
        }
        if let Err(e) = jobs.registry.put(state) {
            tracing::error!(error = %e, "cannot append to job registry");
        }
    }

    /// Moves a queued job to started; false if it was cancelled meanwhile.
    fn claim(&self, id: &str) -> bool {
        let mut jobs = self.jobs.lock().expect("registry lock");
        if jobs.registry.get(id).is_some_and(|s| s.phase == Phase::Queued) {
            jobs.started.insert(id.to_string())
        } else {
            false
        }
    }

    fn request_dir(&self, id: &str) -> PathBuf {
        self.pipeline.job_dir(id).join(REQUEST_DIR)
    }
}

fn spawn_job(state: Arc<ApiState>, id: String) {
    tokio::spawn(async move {
        let _permit = state.permits.clone().acquire_owned().await.expect("semaphore never closes");
        if !state.claim(&id) {
            return;
        }
        let outcome = run_stored(&state, &id).await;
        if let Err(e) = outcome {
            tracing::error!(%id, error = %e, "job aborted by a storage failure");
            let mut failed = state.job(&id).unwrap_or_else(|| JobState::new(&id));
            if !failed.phase.is_terminal() {
                failed.fail(ErrorCode::BackendContractViolation, format!("artifact storage failed: {e}"));
                state.record(&failed);
            }
        }
    });
}

async fn run_stored(state: &Arc<ApiState>, id: &str) -> io::Result<JobState> {
    let dir = state.request_dir(id);
    let stored: StoredRequest = serde_json::from_slice(&tokio::fs::read(dir.join("request.json")).await?)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let image = tokio::fs::read(dir.join("image")).await?;
    let mask = if stored.has_mask {
        let bytes = tokio::fs::read(dir.join("mask.png")).await?;
        Some(codec::decode_mask(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?)
    } else {
        None
    };
    let options = EditOptions {
        plan_override: (stored.plan_override.is_some() || mask.is_some())
            .then(|| PlanOverride::from_fields(stored.plan_override.clone().unwrap_or_default(), mask)),
        seed: stored.seed,
    };
    let sink = |s: &JobState| state.record(s);
    state
        .pipeline
        .execute_encoded(id, &image, &stored.instruction, &options, &sink)
        .await
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn bad_request(message: impl Into<String>) -> Response {
    error(StatusCode::BAD_REQUEST, message)
}

#[derive(Default)]
struct Submission {
    image: Option<Vec<u8>>,
    instruction: Option<String>,
    plan_override: Option<PlanOverrideFields>,
    mask: Option<Vec<u8>>,
    seed: Option<u64>,
}

#[allow(clippy::result_large_err)] // the rejection is the response
async fn read_submission(mut form: Multipart) -> Result<Submission, Response> {
    let mut sub = Submission::default();
    while let Some(field) = form.next_field().await.map_err(|e| bad_request(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| bad_request(e.body_text()))?.to_vec();
        let text = || String::from_utf8(bytes.clone()).map_err(|_| bad_request(format!("field {name} must be UTF-8")));
        match name.as_str() {
            "image" => sub.image = Some(bytes.clone()),
            "instruction" => sub.instruction = Some(text()?),
            "override" => {
                let fields = serde_json::from_slice(&bytes).map_err(|e| bad_request(format!("override: {e}")))?;
                sub.plan_override = Some(fields);
            }
            "mask" => sub.mask = Some(bytes.clone()),
            "seed" => {
                let seed = text()?.trim().parse().map_err(|_| bad_request("seed must be a non-negative integer"))?;
                sub.seed = Some(seed);
            }
            other => return Err(bad_request(format!("unknown field {other:?}"))),
        }
    }
    Ok(sub)
}

async fn submit(State(state): State<Arc<ApiState>>, form: Multipart) -> Response {
    let sub = match read_submission(form).await {
        Ok(s) => s,
        Err(r) => return r,
    };
    let Some(image) = sub.image else {
        return bad_request("missing field image");
    };
    let instruction = match validate_instruction(sub.instruction.as_deref().unwrap_or_default()) {
        Ok(i) => i,
        Err(e) => return bad_request(e.to_string()),
    };
    if let Some(m) = &sub.mask {
        if let Err(e) = codec::decode_mask(m) {
            return bad_request(format!("mask: {e}"));
        }
    }
    let id = uuid::Uuid::new_v4().to_string();
    let dir = state.request_dir(&id);
    let stored = StoredRequest {
        instruction,
        plan_override: sub.plan_override,
        seed: sub.seed,
        has_mask: sub.mask.is_some(),
    };
    let persisted = (|| -> io::Result<()> {
        write_atomic(&dir.join("image"), &image)?;
        if let Some(m) = &sub.mask {
            write_atomic(&dir.join("mask.png"), m)?;
        }
        write_atomic(&dir.join("request.json"), &serde_json::to_vec(&stored).expect("serializes"))
    })();
    if let Err(e) = persisted {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("cannot store submission: {e}"));
    }
    state.record(&JobState::new(&id));
    spawn_job(state.clone(), id.clone());
    (StatusCode::ACCEPTED, Json(serde_json::json!({ "id": id }))).into_response()
}

async fn poll(State(state): State<Arc<ApiState>>, Path(id): Path<String>) -> Response {
    match state.job(&id) {
        Some(job) => Json(job).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown job {id}")),
    }
}

async fn artifact(State(state): State<Arc<ApiState>>, Path((id, name)): Path<(String, String)>) -> Response {
    let Some(job) = state.job(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown job {id}"));
    };
    let Some(path) = job.artifacts.get(&name) else {
        return error(StatusCode::NOT_FOUND, format!("job {id} has no artifact {name}"));
    };
    let content_type = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    match tokio::fs::read(path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type)], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("cannot read artifact: {e}")),
    }
}

async fn cancel(State(state): State<Arc<ApiState>>, Path(id): Path<String>) -> Response {
    let mut jobs = state.jobs.lock().expect("registry lock");
    let Some(job) = jobs.registry.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown job {id}"));
    };
    if job.phase != Phase::Queued || jobs.started.contains(&id) {
        let phase = job.phase;
        return error(StatusCode::CONFLICT, format!("job {id} is {phase:?}; only queued jobs can be cancelled"));
    }
    match jobs.registry.remove(&id) {
        Ok(_) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn api_router(state: Arc<ApiState>) -> Router {
    Router::new()
        .route("/v1/edits", axum::routing::post(submit))
        .route("/v1/edits/{id}", get(poll).delete(cancel))
        .route("/v1/edits/{id}/artifacts/{*name}", get(artifact))
        .route("/healthz", get(|| async { "ok" }))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ApiStartError {
    #[error("cannot open job registry: {0}")]
    Registry(#[from] io::Error),
    #[error(transparent)]
    Serve(#[from] ServeError),
}

/// Opens the registry and serves the API on `addr`.
pub async fn serve_api(
    pipeline: Pipeline,
    parallelism: usize,
    addr: SocketAddr,
) -> Result<(ServingHandle, Arc<ApiState>), ApiStartError> {
    let state = ApiState::open(pipeline, parallelism)?;
    let handle = serve(api_router(state.clone()), addr).await?;
    Ok((handle, state))
}

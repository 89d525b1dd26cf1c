//! Deterministic in-process stand-ins for the four model backends.
//!
//! Each mock is a pure function of its request and configuration, served
//! over the same HTTP routes a real adapter exposes. [`Fault`] injects the
//! failure modes the orchestrator has to survive.

mod chat;
mod ground;
mod imaging;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::de::DeserializeOwned;

pub use chat::{user_text_fields, ChatRule, MockChat, RuleError, RuleTable};
pub use ground::{
    centered_quarter_box, fixture_phrase_key, FixtureDetection, GroundFixtures, MockGround,
    FIXTURE_CONFIDENCE, UNKNOWN_CONFIDENCE,
};
pub use imaging::{channel_permutation, fill_color, global_transform, MockGlobal, MockInpaint, GLOBAL_SHIFT};

use super::{ChatRequest, Endpoints, GlobalEditRequest, GroundRequest, InpaintRequest};
use super::{CHAT_PATH, GLOBAL_EDIT_PATH, GROUND_PATH, INPAINT_PATH};
use crate::server::{serve, ServeError, ServingHandle};

/// Injected misbehavior for a mock backend.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Every request gets 503.
    Unavailable,
    /// The first N requests get 503.
    FlakyUnavailable(usize),
    /// Every request gets this status code.
    Reject(u16),
    /// Image responses come back at the wrong size.
    WrongDimensions,
    /// Inpaint output inverts every unmasked pixel.
    CorruptUnmasked,
    /// Chat replies carry this text verbatim.
    MalformedText(String),
    /// The first N chat replies are not JSON.
    MalformedFirst(usize),
}

impl Fault {
    fn preflight(&self, n: usize) -> Option<Response> {
        match self {
            Fault::Unavailable => Some(StatusCode::SERVICE_UNAVAILABLE.into_response()),
            Fault::FlakyUnavailable(k) if n < *k => {
                Some(StatusCode::SERVICE_UNAVAILABLE.into_response())
            }
            Fault::Reject(code) => Some(
                StatusCode::from_u16(*code)
                    .unwrap_or(StatusCode::BAD_REQUEST)
                    .into_response(),
            ),
            _ => None,
        }
    }
}

/// Per-route request counters, including rejected requests.
#[derive(Debug, Default)]
pub struct MockStats {
    pub chat: AtomicUsize,
    pub ground: AtomicUsize,
    pub inpaint: AtomicUsize,
    pub global: AtomicUsize,
}

impl MockStats {
    pub fn chat_requests(&self) -> usize {
        self.chat.load(Ordering::SeqCst)
    }

    pub fn ground_requests(&self) -> usize {
        self.ground.load(Ordering::SeqCst)
    }

    pub fn inpaint_requests(&self) -> usize {
        self.inpaint.load(Ordering::SeqCst)
    }

    pub fn global_requests(&self) -> usize {
        self.global.load(Ordering::SeqCst)
    }
}

/// Configuration for all four mocks.
#[derive(Debug, Clone, Default)]
pub struct MockSet {
    pub chat: MockChat,
    pub ground: MockGround,
    pub inpaint: MockInpaint,
    pub global: MockGlobal,
}

struct Served<M> {
    mock: M,
    stats: Arc<MockStats>,
}

fn unprocessable(detail: impl std::fmt::Display) -> Response {
    (StatusCode::UNPROCESSABLE_ENTITY, detail.to_string()).into_response()
}

#[allow(clippy::result_large_err)] // axum handlers return the rejection as-is
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| unprocessable(format!("bad envelope: {e}")))
}

async fn chat_route(State(s): State<Arc<Served<MockChat>>>, body: Bytes) -> Response {
    let n = s.stats.chat.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = s.mock.fault.preflight(n) {
        return r;
    }
    let req: ChatRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let mut resp = s.mock.respond(&req);
    match &s.mock.fault {
        Fault::MalformedText(text) => resp.raw_text = text.clone(),
        Fault::MalformedFirst(k) if n < *k => resp.raw_text = "I think it is probably a local edit?".into(),
        _ => {}
    }
    Json(resp).into_response()
}

async fn ground_route(State(s): State<Arc<Served<MockGround>>>, body: Bytes) -> Response {
    let n = s.stats.ground.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = s.mock.fault.preflight(n) {
        return r;
    }
    let req: GroundRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    match s.mock.respond(&req) {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => unprocessable(e),
    }
}

async fn inpaint_route(State(s): State<Arc<Served<MockInpaint>>>, body: Bytes) -> Response {
    let n = s.stats.inpaint.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = s.mock.fault.preflight(n) {
        return r;
    }
    let req: InpaintRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    match s.mock.respond(&req) {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => unprocessable(e),
    }
}

async fn global_route(State(s): State<Arc<Served<MockGlobal>>>, body: Bytes) -> Response {
    let n = s.stats.global.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = s.mock.fault.preflight(n) {
        return r;
    }
    let req: GlobalEditRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    match s.mock.respond(&req) {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => unprocessable(e),
    }
}

pub fn chat_router(mock: MockChat, stats: Arc<MockStats>) -> Router {
    Router::new()
        .route(CHAT_PATH, post(chat_route))
        .with_state(Arc::new(Served { mock, stats }))
}

pub fn ground_router(mock: MockGround, stats: Arc<MockStats>) -> Router {
    Router::new()
        .route(GROUND_PATH, post(ground_route))
        .with_state(Arc::new(Served { mock, stats }))
}

pub fn inpaint_router(mock: MockInpaint, stats: Arc<MockStats>) -> Router {
    Router::new()
        .route(INPAINT_PATH, post(inpaint_route))
        .with_state(Arc::new(Served { mock, stats }))
}

pub fn global_router(mock: MockGlobal, stats: Arc<MockStats>) -> Router {
    Router::new()
        .route(GLOBAL_EDIT_PATH, post(global_route))
        .with_state(Arc::new(Served { mock, stats }))
}

/// The four mocks, each on its own port.
#[derive(Debug)]
pub struct MockBackends {
    pub chat: ServingHandle,
    pub ground: ServingHandle,
    pub inpaint: ServingHandle,
    pub global: ServingHandle,
    pub stats: Arc<MockStats>,
}

impl MockBackends {
    /// Binds chat, ground, inpaint and global edit to `port_base`,
    /// `port_base+1`, `+2`, `+3` on `host`. Port base 0 picks ephemeral ports.
    pub async fn spawn_on(set: MockSet, host: IpAddr, port_base: u16) -> Result<Self, ServeError> {
        let stats = Arc::new(MockStats::default());
        let addr = |offset: u16| {
            let port = if port_base == 0 { 0 } else { port_base + offset };
            SocketAddr::new(host, port)
        };
        Ok(Self {
            chat: serve(chat_router(set.chat, stats.clone()), addr(0)).await?,
            ground: serve(ground_router(set.ground, stats.clone()), addr(1)).await?,
            inpaint: serve(inpaint_router(set.inpaint, stats.clone()), addr(2)).await?,
            global: serve(global_router(set.global, stats.clone()), addr(3)).await?,
            stats,
        })
    }

    /// Ephemeral loopback ports.
    pub async fn spawn(set: MockSet) -> Result<Self, ServeError> {
        Self::spawn_on(set, IpAddr::V4(Ipv4Addr::LOCALHOST), 0).await
    }

    pub fn endpoints(&self) -> Endpoints {
        Endpoints {
            chat: self.chat.url(),
            ground: self.ground.url(),
            inpaint: self.inpaint.url(),
            global_edit: self.global.url(),
        }
    }

    pub async fn shutdown(self) {
        self.chat.shutdown().await;
        self.ground.shutdown().await;
        self.inpaint.shutdown().await;
        self.global.shutdown().await;
    }
}

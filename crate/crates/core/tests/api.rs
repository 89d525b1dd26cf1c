mod common;

use std::net::{Ipv4Addr, SocketAddr};
use std::time::Duration;

use iiie_core::codec;
use iiie_core::orchestrator::{serve_api, JobState, Phase, Pipeline, Registry};
use iiie_core::protocol::mock::{Fault, MockSet};
use iiie_core::protocol::{Backends, RetryPolicy};
use iiie_core::server::ServingHandle;
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;

use common::{pipeline, scene, spawn_mocks};

fn loopback() -> SocketAddr {
    SocketAddr::from((Ipv4Addr::LOCALHOST, 0))
}

fn form(image: Vec<u8>, instruction: &str) -> Form {
    Form::new()
        .part("image", Part::bytes(image).file_name("in.png").mime_str("image/png").unwrap())
        .text("instruction", instruction.to_string())
}

async fn submit(http: &reqwest::Client, api: &ServingHandle, form: Form) -> reqwest::Response {
    http.post(format!("{}/v1/edits", api.url())).multipart(form).send().await.unwrap()
}

async fn submit_ok(http: &reqwest::Client, api: &ServingHandle, form: Form) -> String {
    let resp = submit(http, api, form).await;
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    let v: serde_json::Value = resp.json().await.unwrap();
    v["id"].as_str().unwrap().to_string()
}

/// Polls until the job is terminal, returning every distinct phase seen.
async fn poll_until_terminal(http: &reqwest::Client, api: &ServingHandle, id: &str) -> (JobState, Vec<Phase>) {
    let mut seen = Vec::new();
    for _ in 0..1000 {
        let resp = http.get(format!("{}/v1/edits/{id}", api.url())).send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        let state: JobState = resp.json().await.unwrap();
        if seen.last() != Some(&state.phase) {
            seen.push(state.phase);
        }
        if state.phase.is_terminal() {
            return (state, seen);
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("job {id} never finished");
}

#[tokio::test]
async fn submit_poll_fetch_lifecycle() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let out = tempfile::tempdir().unwrap();
    let (api, _) = serve_api(pipeline(mocks.endpoints(), out.path()), 2, loopback()).await.unwrap();
    let http = reqwest::Client::new();
    let png = codec::encode_image(&scene(32, 24, 3));

    let a = submit_ok(&http, &api, form(png.clone(), "let's see it in winter")).await;
    let b = submit_ok(&http, &api, form(png.clone(), "let's see it in winter")).await;
    assert_ne!(a, b);

    let (state_a, phases) = poll_until_terminal(&http, &api, &a).await;
    assert_eq!(state_a.phase, Phase::Done, "{:?}", state_a.error);
    assert!(phases.windows(2).all(|w| w[0] < w[1]), "phases regressed: {phases:?}");
    for name in ["plan.json", "mask.png", "result.png"] {
        assert!(state_a.artifacts.contains_key(name), "{name}");
    }
    let (state_b, _) = poll_until_terminal(&http, &api, &b).await;
    assert_eq!(state_b.phase, Phase::Done);

    let fetch = |id: String| {
        let http = http.clone();
        let url = format!("{}/v1/edits/{id}/artifacts/result.png", api.url());
        async move {
            let resp = http.get(url).send().await.unwrap();
            assert_eq!(resp.status(), StatusCode::OK);
            assert_eq!(resp.headers()["content-type"], "image/png");
            resp.bytes().await.unwrap()
        }
    };
    let (ra, rb) = (fetch(a.clone()).await, fetch(b.clone()).await);
    assert_eq!(ra, rb, "identical submissions give identical results");
    assert!(codec::decode_image(&ra).is_ok());

    let plan = http
        .get(format!("{}/v1/edits/{a}/artifacts/transcripts/exchanges.json", api.url()))
        .send()
        .await
        .unwrap();
    assert_eq!(plan.status(), StatusCode::OK);

    let missing = http.get(format!("{}/v1/edits/{a}/artifacts/request.json", api.url())).send().await.unwrap();
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
    let unknown = http.get(format!("{}/v1/edits/no-such-job", api.url())).send().await.unwrap();
    assert_eq!(unknown.status(), StatusCode::NOT_FOUND);
    let unknown = http.delete(format!("{}/v1/edits/no-such-job", api.url())).send().await.unwrap();
    assert_eq!(unknown.status(), StatusCode::NOT_FOUND);
    let done = http.delete(format!("{}/v1/edits/{a}", api.url())).send().await.unwrap();
    assert_eq!(done.status(), StatusCode::CONFLICT);

    let health = http.get(format!("{}/healthz", api.url())).send().await.unwrap();
    assert_eq!(health.status(), StatusCode::OK);
    api.shutdown().await;
    mocks.shutdown().await;
}

#[tokio::test]
async fn malformed_submissions_are_400() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let out = tempfile::tempdir().unwrap();
    let (api, _) = serve_api(pipeline(mocks.endpoints(), out.path()), 1, loopback()).await.unwrap();
    let http = reqwest::Client::new();
    let png = codec::encode_image(&scene(8, 8, 0));

    let cases = [
        Form::new().text("instruction", "remove the lamp"),
        form(png.clone(), "   "),
        form(png.clone(), "remove the lamp").text("override", "{not json"),
        form(png.clone(), "remove the lamp").text("override", r#"{"category":"Inpaint"}"#),
        form(png.clone(), "remove the lamp").text("seed", "-3"),
        form(png.clone(), "remove the lamp").part("mask", Part::bytes(b"nope".to_vec())),
        form(png.clone(), "remove the lamp").text("colour", "blue"),
    ];
    for (i, f) in cases.into_iter().enumerate() {
        assert_eq!(submit(&http, &api, f).await.status(), StatusCode::BAD_REQUEST, "case {i}");
    }
    api.shutdown().await;
    mocks.shutdown().await;
}

#[tokio::test]
async fn undecodable_image_fails_the_job() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let out = tempfile::tempdir().unwrap();
    let (api, _) = serve_api(pipeline(mocks.endpoints(), out.path()), 1, loopback()).await.unwrap();
    let http = reqwest::Client::new();
    let id = submit_ok(&http, &api, form(b"not an image".to_vec(), "remove the lamp")).await;
    let (state, _) = poll_until_terminal(&http, &api, &id).await;
    assert_eq!(state.error_code(), Some(iiie_core::orchestrator::ErrorCode::MalformedImage));
    api.shutdown().await;
    mocks.shutdown().await;
}

#[tokio::test]
async fn override_and_mask_travel_with_the_submission() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let out = tempfile::tempdir().unwrap();
    let (api, _) = serve_api(pipeline(mocks.endpoints(), out.path()), 1, loopback()).await.unwrap();
    let http = reqwest::Client::new();
    let user = iiie_core::Mask::from_fn(16, 16, |x, _| x < 5).unwrap();
    let f = form(codec::encode_image(&scene(16, 16, 1)), "remove the lamp")
        .text("override", r#"{"category":"Remove","main_object":"lamp"}"#)
        .part("mask", Part::bytes(codec::encode_mask(&user)).file_name("mask.png"))
        .text("seed", "5");
    let id = submit_ok(&http, &api, f).await;
    let (state, _) = poll_until_terminal(&http, &api, &id).await;
    assert_eq!(state.phase, Phase::Done, "{:?}", state.error);
    assert_eq!(mocks.stats.ground_requests(), 0);
    let mask = http
        .get(format!("{}/v1/edits/{id}/artifacts/mask.png", api.url()))
        .send()
        .await
        .unwrap()
        .bytes()
        .await
        .unwrap();
    assert_eq!(codec::decode_mask(&mask).unwrap(), user);
    api.shutdown().await;
    mocks.shutdown().await;
}

#[tokio::test]
async fn only_queued_jobs_can_be_cancelled() {
    let mut set = MockSet::default();
    set.chat.fault = Fault::FlakyUnavailable(1);
    let mocks = spawn_mocks(set).await;
    let out = tempfile::tempdir().unwrap();
    let mut p: Pipeline = pipeline(mocks.endpoints(), out.path());
    // the first job sleeps through one backoff, holding the only slot
    p.backends = Backends::new(
        mocks.endpoints(),
        RetryPolicy {
            backoff: vec![Duration::from_millis(600); 3],
        },
    );
    let (api, _) = serve_api(p, 1, loopback()).await.unwrap();
    let http = reqwest::Client::new();
    let png = codec::encode_image(&scene(8, 8, 0));

    let first = submit_ok(&http, &api, form(png.clone(), "let's see it in winter")).await;
    let second = submit_ok(&http, &api, form(png.clone(), "let's see it in winter")).await;
    tokio::time::sleep(Duration::from_millis(100)).await;

    let running = http.delete(format!("{}/v1/edits/{first}", api.url())).send().await.unwrap();
    assert_eq!(running.status(), StatusCode::CONFLICT);
    let queued = http.delete(format!("{}/v1/edits/{second}", api.url())).send().await.unwrap();
    assert_eq!(queued.status(), StatusCode::NO_CONTENT);
    let gone = http.get(format!("{}/v1/edits/{second}", api.url())).send().await.unwrap();
    assert_eq!(gone.status(), StatusCode::NOT_FOUND);

    let (state, _) = poll_until_terminal(&http, &api, &first).await;
    assert_eq!(state.phase, Phase::Done);
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert_eq!(mocks.stats.global_requests(), 1, "the cancelled job never ran");
    api.shutdown().await;
    mocks.shutdown().await;
}

#[tokio::test]
async fn restart_requeues_unfinished_jobs() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let out = tempfile::tempdir().unwrap();
    let http = reqwest::Client::new();
    let png = codec::encode_image(&scene(12, 12, 2));

    let (api, _) = serve_api(pipeline(mocks.endpoints(), out.path()), 1, loopback()).await.unwrap();
    let id = submit_ok(&http, &api, form(png, "let's see it in winter")).await;
    let (first, _) = poll_until_terminal(&http, &api, &id).await;
    assert_eq!(first.phase, Phase::Done);
    api.shutdown().await;

    // simulate a crash mid-job: the last registry record says Masking
    let mut registry = Registry::open(out.path()).unwrap();
    let mut interrupted = JobState::new(&id);
    interrupted.advance(Phase::Analyzing).unwrap();
    interrupted.advance(Phase::Masking).unwrap();
    registry.put(interrupted).unwrap();
    drop(registry);
    std::fs::remove_file(out.path().join(&id).join("result.png")).unwrap();

    let (api, state) = serve_api(pipeline(mocks.endpoints(), out.path()), 1, loopback()).await.unwrap();
    let (again, _) = poll_until_terminal(&http, &api, &id).await;
    assert_eq!(again.phase, Phase::Done);
    assert!(out.path().join(&id).join("result.png").is_file());
    assert_eq!(state.job(&id).unwrap().phase, Phase::Done);
    api.shutdown().await;

    let reopened = Registry::open(out.path()).unwrap();
    assert_eq!(reopened.get(&id).unwrap().phase, Phase::Done);
    assert!(reopened.unfinished().is_empty());
    mocks.shutdown().await;
}

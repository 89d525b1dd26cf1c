mod common;

use std::sync::Mutex;

use iiie_core::codec;
use iiie_core::orchestrator::{
    run_batch, BatchError, EditOptions, ErrorCode, JobState, Phase, PlanOverride,
};
use iiie_core::protocol::mock::{Fault, GroundFixtures, MockSet};
use iiie_core::{EditCategory, EditRequest, Mask};

use common::{exemplar_fixtures, object_mask, pipeline, scene, spawn_mocks, EXEMPLARS};

const ARTIFACTS: [&str; 4] = ["plan.json", "mask.png", "result.png", "transcripts/exchanges.json"];

fn horse_set() -> (iiie_core::ImageBuffer, MockSet) {
    let img = scene(64, 48, 1);
    let mut f = GroundFixtures::new();
    f.insert(&img, "horse", object_mask(64, 48, 1), 0.9);
    (img, common::mock_set_with(f))
}

/// Records every phase and checks write ordering on disk at each update.
struct Observer {
    dir: std::path::PathBuf,
    phases: Mutex<Vec<Phase>>,
}

impl Observer {
    fn new(dir: std::path::PathBuf) -> Self {
        Self {
            dir,
            phases: Mutex::new(Vec::new()),
        }
    }

    fn check(&self, s: &JobState) {
        let mut phases = self.phases.lock().unwrap();
        if phases.last() != Some(&s.phase) {
            phases.push(s.phase);
        }
        if self.dir.join("result.png").exists() {
            assert!(self.dir.join("plan.json").exists() && self.dir.join("mask.png").exists());
        }
        if self.dir.join("mask.png").exists() {
            assert!(self.dir.join("plan.json").exists());
        }
    }
}

#[tokio::test]
async fn horse_becomes_unicorn_with_all_artifacts() {
    let (img, set) = horse_set();
    let mocks = spawn_mocks(set).await;
    let out = tempfile::tempdir().unwrap();
    let p = pipeline(mocks.endpoints(), out.path());
    let obs = Observer::new(p.job_dir("horse"));
    let req = EditRequest::new("horse", img.clone(), "Make the horse into a unicorn").unwrap();
    let sink = |s: &JobState| obs.check(s);
    let state = p.execute_edit(&req, &EditOptions::default(), &sink).await.unwrap();

    assert_eq!(state.phase, Phase::Done, "{:?}", state.error);
    assert_eq!(
        *obs.phases.lock().unwrap(),
        [Phase::Queued, Phase::Analyzing, Phase::Masking, Phase::Generating, Phase::Done]
    );
    for name in ARTIFACTS {
        assert!(state.artifacts.contains_key(name), "{name}");
        assert!(p.job_dir("horse").join(name).is_file(), "{name}");
    }
    let plan: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p.job_dir("horse").join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["schema_version"], 1);
    assert_eq!(plan["category"], "LocalEdit");
    assert_eq!(plan["main_object"], "horse");
    assert_eq!(plan["mask_source"]["kind"], "GroundedObject");
    assert!(plan["target_prompt"].as_str().unwrap().contains("unicorn"));

    let result = codec::decode_image(&std::fs::read(p.job_dir("horse").join("result.png")).unwrap()).unwrap();
    assert_eq!(result.dims(), img.dims());
    let leftovers: Vec<_> = walk(&p.job_dir("horse")).into_iter().filter(|n| n.ends_with(".partial")).collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
    mocks.shutdown().await;
}

fn walk(dir: &std::path::Path) -> Vec<String> {
    common::tree_digest(dir, &[]).into_keys().collect()
}

#[tokio::test]
async fn global_edit_still_emits_a_full_mask() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let out = tempfile::tempdir().unwrap();
    let p = pipeline(mocks.endpoints(), out.path());
    let req = EditRequest::new("winter", scene(30, 20, 0), "let's see it in winter").unwrap();
    let state = p.execute_edit(&req, &EditOptions::default(), &()).await.unwrap();
    assert_eq!(state.phase, Phase::Done);
    let mask = codec::decode_mask(&std::fs::read(p.job_dir("winter").join("mask.png")).unwrap()).unwrap();
    assert!(mask.is_full() && mask.dims() == (30, 20));
    assert_eq!(mocks.stats.ground_requests(), 0);
    mocks.shutdown().await;
}

#[tokio::test]
async fn empty_grounding_fails_after_persisting_the_plan() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let out = tempfile::tempdir().unwrap();
    let p = pipeline(mocks.endpoints(), out.path());
    let req = EditRequest::new("lamp", scene(40, 40, 2), "remove the lamp").unwrap();
    let state = p.execute_edit(&req, &EditOptions::default(), &()).await.unwrap();
    assert_eq!(state.phase, Phase::Failed);
    assert_eq!(state.error_code(), Some(ErrorCode::GroundingEmpty));
    let dir = p.job_dir("lamp");
    assert!(dir.join("plan.json").is_file());
    assert!(!dir.join("mask.png").exists() && !dir.join("result.png").exists());
    assert!(dir.join("transcripts/exchanges.json").is_file());
    mocks.shutdown().await;
}

#[tokio::test]
async fn user_mask_skips_grounding() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let out = tempfile::tempdir().unwrap();
    let p = pipeline(mocks.endpoints(), out.path());
    let img = scene(40, 30, 0);
    let user = Mask::from_fn(40, 30, |x, y| x > 20 && y > 10).unwrap();
    let options = EditOptions {
        plan_override: Some(PlanOverride {
            category: Some(EditCategory::Remove),
            main_object: Some("lamp".into()),
            mask: Some(user.clone()),
            ..Default::default()
        }),
        seed: Some(11),
    };
    let req = EditRequest::new("painted", img, "remove the lamp").unwrap();
    let state = p.execute_edit(&req, &options, &()).await.unwrap();
    assert_eq!(state.phase, Phase::Done, "{:?}", state.error);
    assert_eq!(mocks.stats.ground_requests(), 0);
    let written = codec::decode_mask(&std::fs::read(p.job_dir("painted").join("mask.png")).unwrap()).unwrap();
    assert_eq!(written, user);
    let transcript: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p.job_dir("painted").join("transcripts/exchanges.json")).unwrap())
            .unwrap();
    let inpaint = transcript
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["route"] == "/inpaint")
        .unwrap();
    assert_eq!(inpaint["request"]["seed"], 11);
    mocks.shutdown().await;
}

#[tokio::test]
async fn inconsistent_override_is_rejected() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let out = tempfile::tempdir().unwrap();
    let p = pipeline(mocks.endpoints(), out.path());
    let options = EditOptions {
        plan_override: Some(PlanOverride {
            category: Some(EditCategory::GlobalEdit),
            main_object: Some("lamp".into()),
            ..Default::default()
        }),
        seed: None,
    };
    let req = EditRequest::new("bad", scene(8, 8, 0), "remove the lamp").unwrap();
    let state = p.execute_edit(&req, &options, &()).await.unwrap();
    assert_eq!(state.error_code(), Some(ErrorCode::AnalysisUnparseable));
    mocks.shutdown().await;
}

#[tokio::test]
async fn each_failure_maps_to_one_code() {
    let out = tempfile::tempdir().unwrap();

    let mocks = spawn_mocks(MockSet::default()).await;
    let p = pipeline(mocks.endpoints(), out.path());
    let s = p
        .execute_encoded("garbage", b"\x89PNG not really", "remove the lamp", &EditOptions::default(), &())
        .await
        .unwrap();
    assert_eq!((s.phase, s.error_code()), (Phase::Failed, Some(ErrorCode::MalformedImage)));
    mocks.shutdown().await;

    let p = pipeline(common::dead_endpoints(), out.path());
    let req = EditRequest::new("offline", scene(8, 8, 0), "remove the lamp").unwrap();
    let s = p.execute_edit(&req, &EditOptions::default(), &()).await.unwrap();
    assert_eq!(s.error_code(), Some(ErrorCode::BackendUnreachable));

    let mut set = MockSet::default();
    set.chat.fault = Fault::MalformedText("no idea".into());
    let mocks = spawn_mocks(set).await;
    let p = pipeline(mocks.endpoints(), out.path());
    let req = EditRequest::new("confused", scene(8, 8, 0), "remove the lamp").unwrap();
    let s = p.execute_edit(&req, &EditOptions::default(), &()).await.unwrap();
    assert_eq!(s.error_code(), Some(ErrorCode::AnalysisUnparseable));
    mocks.shutdown().await;

    let mut set = MockSet::default();
    set.global.fault = Fault::WrongDimensions;
    let mocks = spawn_mocks(set).await;
    let p = pipeline(mocks.endpoints(), out.path());
    let req = EditRequest::new("squashed", scene(8, 8, 0), "let's see it in winter").unwrap();
    let s = p.execute_edit(&req, &EditOptions::default(), &()).await.unwrap();
    assert_eq!(s.error_code(), Some(ErrorCode::BackendContractViolation));
    assert!(p.job_dir("squashed").join("mask.png").exists());
    assert!(!p.job_dir("squashed").join("result.png").exists());
    mocks.shutdown().await;
}

#[tokio::test]
async fn exemplar_batch_is_all_done() {
    let mocks = spawn_mocks(common::mock_set_with(exemplar_fixtures())).await;
    let data = tempfile::tempdir().unwrap();
    let manifest = common::write_exemplar_manifest(data.path());
    let out = tempfile::tempdir().unwrap();
    let p = pipeline(mocks.endpoints(), out.path());
    let summary = run_batch(&p, &manifest, 3).await.unwrap();
    assert_eq!(summary.records.len(), 6);
    for (r, (id, ..)) in summary.records.iter().zip(EXEMPLARS) {
        assert_eq!(r.id, id);
        assert_eq!(r.phase, Phase::Done, "{id}: {:?}", r.error_code);
    }
    assert_eq!(summary.success_rate(), 1.0);
    for (id, _, category, _) in EXEMPLARS {
        let plan: serde_json::Value =
            serde_json::from_slice(&std::fs::read(p.job_dir(id).join("plan.json")).unwrap()).unwrap();
        assert_eq!(plan["category"], category.as_str(), "{id}");
    }
    let lines = std::fs::read_to_string(out.path().join("summary.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 6);
    mocks.shutdown().await;
}

#[tokio::test]
async fn batch_output_is_independent_of_parallelism() {
    let mocks = spawn_mocks(common::mock_set_with(exemplar_fixtures())).await;
    let data = tempfile::tempdir().unwrap();
    let manifest = common::write_exemplar_manifest(data.path());
    let mut trees = Vec::new();
    for parallelism in [1, 8] {
        let out = tempfile::tempdir().unwrap();
        run_batch(&pipeline(mocks.endpoints(), out.path()), &manifest, parallelism).await.unwrap();
        trees.push(common::tree_digest(out.path(), &["summary.jsonl"]));
    }
    assert_eq!(trees[0], trees[1]);
    assert_eq!(trees[0].len(), 6 * ARTIFACTS.len());
    mocks.shutdown().await;
}

#[tokio::test]
async fn unreadable_images_fail_only_their_record() {
    let mocks = spawn_mocks(MockSet::default()).await;
    let data = tempfile::tempdir().unwrap();
    common::write_png(&data.path().join("ok.png"), &scene(16, 16, 0));
    std::fs::write(data.path().join("junk.png"), b"junk").unwrap();
    std::fs::write(
        data.path().join("m.jsonl"),
        concat!(
            r#"{"id":"ok","image_path":"ok.png","instruction":"let's see it in winter"}"#,
            "\n",
            r#"{"id":"junk","image_path":"junk.png","instruction":"let's see it in winter"}"#,
            "\n",
            r#"{"id":"missing","image_path":"nope.png","instruction":"let's see it in winter"}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let summary = run_batch(&pipeline(mocks.endpoints(), out.path()), &data.path().join("m.jsonl"), 2)
        .await
        .unwrap();
    let codes: Vec<_> = summary.records.iter().map(|r| r.error_code).collect();
    assert_eq!(codes, [None, Some(ErrorCode::MalformedImage), Some(ErrorCode::MalformedImage)]);
    mocks.shutdown().await;
}

#[tokio::test]
async fn duplicate_manifest_ids_are_rejected() {
    let data = tempfile::tempdir().unwrap();
    let manifest = data.path().join("dup.jsonl");
    std::fs::write(
        &manifest,
        concat!(
            r#"{"id":"a","image_path":"a.png","instruction":"remove the lamp"}"#,
            "\n",
            r#"{"id":"a","image_path":"b.png","instruction":"add a cat"}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = run_batch(&pipeline(common::dead_endpoints(), out.path()), &manifest, 1)
        .await
        .unwrap_err();
    assert!(matches!(err, BatchError::ManifestMalformed { line: 2, .. }), "{err}");
}

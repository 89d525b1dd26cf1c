use std::path::Path;
use std::process::{Command, Output};

use iiie_core::codec;
use iiie_core::ImageBuffer;

fn iiie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iiie")).args(args).output().expect("spawn iiie")
}

fn iiie_eval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iiie-eval")).args(args).output().expect("spawn iiie-eval")
}

fn write_image(path: &Path, w: u32, h: u32) {
    let img = ImageBuffer::from_fn(w, h, |x, y| [(x * 7) as u8, (y * 11) as u8, 90]).unwrap();
    std::fs::write(path, codec::encode_image(&img)).unwrap();
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn mock_edit_writes_the_artifact_tree() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("street.png");
    write_image(&image, 32, 24);
    let out_dir = dir.path().join("out");
    let out = iiie(&["edit", "--mock", "--image", p(&image), "--instruction", "let's see it in winter", "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let state = stdout_json(&out);
    assert_eq!(state["id"], "street");
    assert_eq!(state["phase"], "Done");
    for name in ["plan.json", "mask.png", "result.png", "transcripts/exchanges.json"] {
        assert!(out_dir.join("street").join(name).is_file(), "{name}");
    }
    let plan: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("street/plan.json")).unwrap()).unwrap();
    assert_eq!(plan["category"], "GlobalEdit");
    assert_eq!(plan["schema_version"], 1);
}

#[test]
fn failed_edit_exits_non_zero_with_its_code() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("room.png");
    write_image(&image, 16, 16);
    let out_dir = dir.path().join("out");
    let out = iiie(&["edit", "--mock", "--image", p(&image), "--instruction", "remove the lamp", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let state = stdout_json(&out);
    assert_eq!(state["phase"], "Failed");
    assert_eq!(state["error"]["code"], "GroundingEmpty");
}

#[test]
fn user_mask_and_override_skip_grounding() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("room.png");
    write_image(&image, 16, 16);
    let mask = iiie_core::Mask::from_fn(16, 16, |x, y| x < 4 && y < 4).unwrap();
    let mask_path = dir.path().join("mask.png");
    std::fs::write(&mask_path, codec::encode_mask(&mask)).unwrap();
    let override_path = dir.path().join("plan.json");
    std::fs::write(&override_path, r#"{"category": "Remove", "main_object": "lamp"}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = iiie(&[
        "edit", "--mock", "--image", p(&image), "--instruction", "remove the lamp",
        "--mask", p(&mask_path), "--override-plan", p(&override_path), "--seed", "3", "--out", p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let written = codec::decode_mask(&std::fs::read(out_dir.join("room/mask.png")).unwrap()).unwrap();
    assert_eq!(written, mask);
}

#[test]
fn mock_batch_runs_every_record() {
    let dir = tempfile::tempdir().unwrap();
    write_image(&dir.path().join("a.png"), 20, 20);
    write_image(&dir.path().join("b.png"), 20, 20);
    let manifest = dir.path().join("m.jsonl");
    std::fs::write(
        &manifest,
        concat!(
            r#"{"id": "a", "image_path": "a.png", "instruction": "let's see it in winter"}"#, "\n",
            r#"{"id": "b", "image_path": "b.png", "instruction": "Make the whole image look like a watercolor painting"}"#, "\n",
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = iiie(&["batch", "--mock", "--manifest", p(&manifest), "--out", p(&out_dir), "--parallelism", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("2/2 done"), "{text}");
    assert_eq!(std::fs::read_to_string(out_dir.join("summary.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn bundled_config_loads() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/iiie.toml");
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("x.png");
    write_image(&image, 8, 8);
    let out_dir = dir.path().join("out");
    let out = iiie(&[
        "edit", "--config", p(&config), "--mock", "--image", p(&image), "--instruction", "let's see it in winter",
        "--out", p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_mock_flag_is_a_usage_error() {
    let out = iiie(&["edit", "--image", "x.png", "--instruction", "y", "--fixtures", "dir"]);
    assert_eq!(out.status.code(), Some(2));
}

fn write_ratings(path: &Path, rows: &[(&str, &str, &str, &str, u8)]) {
    let mut body = String::from("method,image_id,metric,rater_id,score\n");
    for (m, i, metric, r, s) in rows {
        body.push_str(&format!("{m},{i},{metric},{r},{s}\n"));
    }
    std::fs::write(path, body).unwrap();
}

fn full_panels(method: &'static str, image: &'static str, ones: [usize; 3]) -> Vec<(&'static str, &'static str, &'static str, &'static str, u8)> {
    let metrics = ["edit_faithfulness", "content_preservation", "overall_instruction_following"];
    let raters = ["r0", "r1", "r2"];
    let mut out = Vec::new();
    for (metric, n) in metrics.into_iter().zip(ones) {
        for (k, r) in raters.into_iter().enumerate() {
            out.push((method, image, metric, r, u8::from(k < n)));
        }
    }
    out
}

#[test]
fn eval_aggregates_and_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = dir.path().join("ratings.csv");
    let mut rows = full_panels("alpha", "i1", [3, 2, 1]);
    rows.extend(full_panels("alpha", "i2", [2, 2, 2]));
    rows.extend(full_panels("beta", "i1", [0, 3, 3]));
    rows.extend(full_panels("beta", "i2", [1, 1, 2]));
    write_ratings(&ratings, &rows);

    let out = iiie_eval(&["aggregate", "--in", p(&ratings)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let body: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(body, [["beta", "1", "0.00", "0.50", "1.00"], ["alpha", "2", "1.00", "1.00", "0.50"]]);

    let scores_path = dir.path().join("scores.json");
    let out = iiie_eval(&["aggregate", "--in", p(&ratings), "--out", p(&scores_path)]);
    assert!(out.status.success());
    let out = iiie_eval(&["rank", "--in", p(&scores_path), "--csv"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().nth(1), Some("beta,1,0.00,0.50,1.00,2"));
}

#[test]
fn eval_rejects_wrong_panels() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = dir.path().join("ratings.csv");
    let mut rows = full_panels("alpha", "i1", [3, 2, 1]);
    rows.retain(|r| r.3 != "r2");
    write_ratings(&ratings, &rows);
    let out = iiie_eval(&["aggregate", "--in", p(&ratings)]);
    assert_eq!(out.status.code(), Some(2));
    let out = iiie_eval(&["aggregate", "--in", p(&ratings), "--panel", "0"]);
    assert_eq!(out.status.code(), Some(2), "even panels never have a majority");
}

//! Shared fixtures and reference oracles for the integration tests.
//!
//! Oracles here are written per-bit / per-cell on purpose and must not call
//! into the library code they check.
#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;
use std::path::Path;

use iiie_core::codec;
use iiie_core::orchestrator::Pipeline;
use iiie_core::protocol::mock::{GroundFixtures, MockBackends, MockSet, FIXTURE_CONFIDENCE};
use iiie_core::protocol::{Backends, Endpoints, RetryPolicy};
use iiie_core::{EditCategory, ImageBuffer, Mask};
use sha2::{Digest, Sha256};

/// Gradient background with a filled disk standing in for the main object.
pub fn scene(width: u32, height: u32, variant: u8) -> ImageBuffer {
    let disk = object_mask(width, height, variant);
    ImageBuffer::from_fn(width, height, |x, y| {
        if disk.get(x, y) {
            [200, 60u8.wrapping_add(variant.wrapping_mul(37)), 40]
        } else {
            [
                (x * 255 / width.max(1)) as u8,
                (y * 255 / height.max(1)) as u8,
                variant.wrapping_mul(53),
            ]
        }
    })
    .expect("valid scene dimensions")
}

/// The disk drawn by [`scene`]; its position depends on `variant`.
pub fn object_mask(width: u32, height: u32, variant: u8) -> Mask {
    let cx = f64::from(width) * (0.3 + 0.1 * f64::from(variant % 4));
    let cy = f64::from(height) * 0.5;
    let r = f64::from(width.min(height)) * 0.2;
    Mask::from_fn(width, height, |x, y| {
        let dx = f64::from(x) + 0.5 - cx;
        let dy = f64::from(y) + 0.5 - cy;
        dx * dx + dy * dy <= r * r
    })
    .expect("valid mask dimensions")
}

/// The six guideline exemplars: (job id, instruction, expected category,
/// phrase the mock analysis grounds).
pub const EXEMPLARS: [(&str, &str, EditCategory, Option<&str>); 6] = [
    ("addition", "Adding new objects within the images", EditCategory::Addition, None),
    ("remove", "Removing objects", EditCategory::Remove, Some("objects")),
    ("smile", "make it smile", EditCategory::LocalEdit, Some("face")),
    ("winter", "let's see it in winter", EditCategory::GlobalEdit, None),
    (
        "inpaint",
        "Alter an object's visual appearance without affecting its structure",
        EditCategory::LocalEdit,
        Some("object"),
    ),
    ("background", "Change the scene's background", EditCategory::BackgroundEdit, Some("main subject")),
];

pub const EXEMPLAR_SIZE: (u32, u32) = (96, 64);

pub fn exemplar_image(index: usize) -> ImageBuffer {
    scene(EXEMPLAR_SIZE.0, EXEMPLAR_SIZE.1, index as u8)
}

/// Grounding fixtures covering every exemplar phrase on its image.
pub fn exemplar_fixtures() -> GroundFixtures {
    let mut fixtures = GroundFixtures::new();
    for (i, (_, _, _, phrase)) in EXEMPLARS.iter().enumerate() {
        if let Some(p) = phrase {
            let (w, h) = EXEMPLAR_SIZE;
            fixtures.insert(&exemplar_image(i), p, object_mask(w, h, i as u8), FIXTURE_CONFIDENCE);
        }
    }
    fixtures
}

pub async fn spawn_mocks(set: MockSet) -> MockBackends {
    MockBackends::spawn(set).await.expect("mock backends bind")
}

pub fn mock_set_with(fixtures: GroundFixtures) -> MockSet {
    let mut set = MockSet::default();
    set.ground.fixtures = fixtures;
    set
}

/// Three immediate retries so failure paths stay fast.
pub fn fast_backends(endpoints: Endpoints) -> Backends {
    Backends::new(endpoints, RetryPolicy::immediate(3))
}

pub fn pipeline(endpoints: Endpoints, out_dir: &Path) -> Pipeline {
    let cfg = iiie_core::config::Config {
        backends: endpoints,
        retry: RetryPolicy::immediate(3),
        service: iiie_core::config::ServiceConfig {
            out_dir: out_dir.to_path_buf(),
            ..Default::default()
        },
        ..Default::default()
    };
    Pipeline::from_config(&cfg).expect("test config is valid")
}

/// An endpoint set where nothing listens.
pub fn dead_endpoints() -> Endpoints {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").expect("bind probe port");
        l.local_addr().expect("local addr").port()
    };
    let url = format!("http://127.0.0.1:{port}");
    Endpoints {
        chat: url.clone(),
        ground: url.clone(),
        inpaint: url.clone(),
        global_edit: url,
    }
}

pub fn write_png(path: &Path, image: &ImageBuffer) {
    std::fs::create_dir_all(path.parent().expect("has parent")).expect("mkdir");
    std::fs::write(path, codec::encode_image(image)).expect("write png");
}

/// Writes the exemplar images plus a JSON Lines manifest into `dir`.
pub fn write_exemplar_manifest(dir: &Path) -> std::path::PathBuf {
    let mut lines = String::new();
    for (i, (id, instruction, _, _)) in EXEMPLARS.iter().enumerate() {
        write_png(&dir.join(format!("images/{id}.png")), &exemplar_image(i));
        lines.push_str(
            &serde_json::json!({ "id": id, "image_path": format!("images/{id}.png"), "instruction": instruction })
                .to_string(),
        );
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(&manifest, lines).expect("write manifest");
    manifest
}

/// Relative path → SHA-256 of every file under `root`, skipping names in `skip`.
pub fn tree_digest(root: &Path, skip: &[&str]) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, skip: &[&str], out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).expect("read dir").map(|e| e.expect("entry").path()).collect();
        entries.sort();
        for path in entries {
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if skip.contains(&rel.as_str()) {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, skip, out);
            } else {
                let bytes = std::fs::read(&path).expect("read file");
                out.insert(rel, hex::encode(Sha256::digest(&bytes)));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, skip, &mut out);
    out
}

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use super::Fault;
use crate::codec;
use crate::model::{BoundingBox, ImageBuffer, Mask};
use crate::protocol::{Detection, GroundRequest, GroundResponse};

/// Confidence reported for fixture masks without an explicit `__c<NN>` suffix.
pub const FIXTURE_CONFIDENCE: f64 = 0.90;
/// Confidence of the centered guess returned for unknown (image, phrase) pairs.
pub const UNKNOWN_CONFIDENCE: f64 = 0.30;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureDetection {
    pub mask: Mask,
    pub confidence: f64,
}

/// Grounding fixtures keyed by (image digest, normalized phrase).
///
/// On disk each detection is one PNG named `<digest>__<phrase>.png`, or
/// `<digest>__<phrase>__c<NN>.png` for an explicit confidence of NN percent.
/// Phrase whitespace is written as `_`.
#[derive(Debug, Clone, Default)]
pub struct GroundFixtures {
    entries: BTreeMap<(String, String), Vec<FixtureDetection>>,
}

pub fn fixture_phrase_key(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

impl GroundFixtures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: &ImageBuffer, phrase: &str, mask: Mask, confidence: f64) {
        self.insert_digest(codec::image_digest(image), phrase, mask, confidence);
    }

    pub fn insert_digest(&mut self, digest: String, phrase: &str, mask: Mask, confidence: f64) {
        self.entries
            .entry((digest, fixture_phrase_key(phrase)))
            .or_default()
            .push(FixtureDetection { mask, confidence });
    }

    pub fn get(&self, digest: &str, phrase: &str) -> Option<&[FixtureDetection]> {
        self.entries
            .get(&(digest.to_string(), fixture_phrase_key(phrase)))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut out = Self::new();
        let mut names: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        names.sort();
        for path in names {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let Some((digest, rest)) = stem.split_once("__") else {
                continue;
            };
            let (phrase, confidence) = match rest.rsplit_once("__c") {
                Some((phrase, pct)) if pct.chars().all(|c| c.is_ascii_digit()) && !pct.is_empty() => {
                    (phrase, pct.parse::<f64>().unwrap_or(90.0) / 100.0)
                }
                _ => (rest, FIXTURE_CONFIDENCE),
            };
            let mask = codec::decode_mask(&fs::read(&path)?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
            out.insert_digest(digest.to_string(), &phrase.replace('_', " "), mask, confidence);
        }
        Ok(out)
    }

    pub fn save_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for ((digest, phrase), detections) in &self.entries {
            for d in detections {
                let name = if (d.confidence - FIXTURE_CONFIDENCE).abs() < 1e-9 {
                    format!("{digest}__{phrase}.png")
                } else {
                    format!("{digest}__{phrase}__c{}.png", (d.confidence * 100.0).round() as u32)
                };
                fs::write(dir.join(name), codec::encode_mask(&d.mask))?;
            }
        }
        Ok(())
    }
}

/// Box covering the centered half of each axis (25% of the area).
pub fn centered_quarter_box(width: u32, height: u32) -> BoundingBox {
    let (w, h) = (f64::from(width), f64::from(height));
    let b = BoundingBox::new(
        (w * 0.25).round() as i64,
        (h * 0.25).round() as i64,
        (w * 0.75).round() as i64,
        (h * 0.75).round() as i64,
    );
    // degenerate for 1-pixel axes; fall back to the whole axis
    BoundingBox {
        x1: b.x1.max(b.x0 + 1).min(i64::from(width)),
        y1: b.y1.max(b.y0 + 1).min(i64::from(height)),
        x0: b.x0.min(i64::from(width) - 1),
        y0: b.y0.min(i64::from(height) - 1),
    }
}

fn box_mask(b: &BoundingBox, width: u32, height: u32) -> Mask {
    Mask::from_fn(width, height, |x, y| {
        let (x, y) = (i64::from(x), i64::from(y));
        x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1
    })
    .expect("dims come from a valid image")
}

fn bounds_of(mask: &Mask) -> BoundingBox {
    let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, 0i64, 0i64);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                x0 = x0.min(i64::from(x));
                y0 = y0.min(i64::from(y));
                x1 = x1.max(i64::from(x) + 1);
                y1 = y1.max(i64::from(y) + 1);
            }
        }
    }
    if x0 == i64::MAX {
        BoundingBox::new(0, 0, 0, 0)
    } else {
        BoundingBox::new(x0, y0, x1, y1)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockGround {
    pub fixtures: GroundFixtures,
    pub fault: Fault,
}

impl MockGround {
    pub fn new(fixtures: GroundFixtures) -> Self {
        Self {
            fixtures,
            fault: Fault::None,
        }
    }

    pub fn respond(&self, req: &GroundRequest) -> Result<GroundResponse, String> {
        let image = codec::image_from_base64(&req.image).map_err(|e| e.to_string())?;
        let digest = codec::image_digest(&image);
        let mut detections: Vec<(Mask, f64)> = match self.fixtures.get(&digest, &req.phrase) {
            Some(found) => found.iter().map(|d| (d.mask.clone(), d.confidence)).collect(),
            None => {
                let b = centered_quarter_box(image.width(), image.height());
                vec![(box_mask(&b, image.width(), image.height()), UNKNOWN_CONFIDENCE)]
            }
        };
        // stable: equal confidences keep fixture order
        detections.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(GroundResponse {
            detections: detections
                .into_iter()
                .map(|(mask, confidence)| Detection {
                    bbox: bounds_of(&mask),
                    mask: codec::mask_to_base64(&mask),
                    confidence,
                })
                .collect(),
        })
    }
}

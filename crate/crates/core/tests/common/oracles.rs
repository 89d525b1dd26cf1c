//! Naive reference implementations. Quadratic where that keeps them obvious.

use std::collections::HashMap;

use iiie_core::eval::{Metric, RatingRecord};
use iiie_core::{BoundingBox, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn complement(m: &Mask) -> Mask {
    Mask::from_fn(m.width(), m.height(), |x, y| !m.get(x, y)).unwrap()
}

pub fn union(masks: &[Mask]) -> Mask {
    let (w, h) = masks[0].dims();
    Mask::from_fn(w, h, |x, y| masks.iter().any(|m| m.get(x, y))).unwrap()
}

pub fn intersect(a: &Mask, b: &Mask) -> Mask {
    Mask::from_fn(a.width(), a.height(), |x, y| a.get(x, y) && b.get(x, y)).unwrap()
}

/// Pixel is set when some set pixel lies within Euclidean distance `r`.
pub fn dilate(m: &Mask, r: u32) -> Mask {
    let r = i64::from(r);
    let (w, h) = (i64::from(m.width()), i64::from(m.height()));
    Mask::from_fn(m.width(), m.height(), |x, y| {
        let (x, y) = (i64::from(x), i64::from(y));
        for dy in -r..=r {
            for dx in -r..=r {
                let (sx, sy) = (x + dx, y + dy);
                if dx * dx + dy * dy <= r * r && (0..w).contains(&sx) && (0..h).contains(&sy) && m.get(sx as u32, sy as u32)
                {
                    return true;
                }
            }
        }
        false
    })
    .unwrap()
}

/// Half-open box, clipped to the raster.
pub fn rasterize(b: BoundingBox, w: u32, h: u32) -> Mask {
    Mask::from_fn(w, h, |x, y| {
        let (x, y) = (i64::from(x), i64::from(y));
        b.x0 <= x && x < b.x1 && b.y0 <= y && y < b.y1
    })
    .unwrap()
}

/// Squared distance from each pixel to the nearest set pixel, by exhaustive search.
pub fn squared_distance(m: &Mask) -> Vec<Option<u64>> {
    let set: Vec<(i64, i64)> = (0..m.height())
        .flat_map(|y| (0..m.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| m.get(x, y))
        .map(|(x, y)| (i64::from(x), i64::from(y)))
        .collect();
    (0..m.height())
        .flat_map(|y| (0..m.width()).map(move |x| (i64::from(x), i64::from(y))))
        .map(|(x, y)| set.iter().map(|&(sx, sy)| ((sx - x).pow(2) + (sy - y).pow(2)) as u64).min())
        .collect()
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Mask {
    let density: f64 = rng.gen_range(0.0..0.5);
    Mask::from_fn(w, h, |_, _| rng.gen_bool(density)).unwrap()
}

/// Per-method vote counts, computed by listing every cell's ballots and
/// counting ones against zeros.
pub fn brute_force_votes(records: &[RatingRecord]) -> HashMap<String, ([u64; 3], u64)> {
    let mut ballots: HashMap<(String, String, usize), Vec<u8>> = HashMap::new();
    for r in records {
        let m = Metric::ALL.iter().position(|x| *x == r.metric).unwrap();
        ballots.entry((r.method.clone(), r.image_id.clone(), m)).or_default().push(r.score);
    }
    let mut images: HashMap<String, Vec<String>> = HashMap::new();
    for (method, image, _) in ballots.keys() {
        let list = images.entry(method.clone()).or_default();
        if !list.contains(image) {
            list.push(image.clone());
        }
    }
    let mut out = HashMap::new();
    for (method, imgs) in images {
        let mut votes = [0u64; 3];
        for image in &imgs {
            for (m, slot) in votes.iter_mut().enumerate() {
                let b = &ballots[&(method.clone(), image.clone(), m)];
                let ones = b.iter().filter(|&&s| s == 1).count();
                let zeros = b.len() - ones;
                if ones > zeros {
                    *slot += 1;
                }
            }
        }
        out.insert(method, (votes, imgs.len() as u64));
    }
    out
}

/// The eight 3-rater ballots with a given majority, in a fixed order.
const MAJORITY_ONE: [[u8; 3]; 4] = [[1, 1, 1], [1, 1, 0], [1, 0, 1], [0, 1, 1]];
const MAJORITY_ZERO: [[u8; 3]; 4] = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]];

/// Three raters per cell over `images` images; exactly `targets[m]` images
/// win metric `m`. Ballot patterns and winning images are drawn from `seed`.
pub fn fixture_records(method: &str, images: usize, targets: [usize; 3], seed: u64) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(images * 9);
    let mut winners: Vec<Vec<bool>> = Vec::new();
    for &t in &targets {
        let mut v: Vec<bool> = (0..images).map(|i| i < t).collect();
        for i in (1..v.len()).rev() {
            let j = rng.gen_range(0..=i);
            v.swap(i, j);
        }
        winners.push(v);
    }
    for i in 0..images {
        for (metric, won) in Metric::ALL.iter().zip(&winners) {
            let pool = if won[i] { &MAJORITY_ONE } else { &MAJORITY_ZERO };
            let ballot = pool[rng.gen_range(0..4)];
            for (r, score) in ballot.iter().enumerate() {
                out.push(RatingRecord {
                    method: method.to_string(),
                    image_id: format!("img-{i:04}"),
                    metric: *metric,
                    rater_id: format!("rater-{r}"),
                    score: *score,
                });
            }
        }
    }
    out
}

pub const TABLE_IMAGES: usize = 1200;

/// Majority-one counts per method chosen so the means round to the
/// reference comparison: 612/1200 = 0.51, 936/1200 = 0.78, 960/1200 = 0.80.
pub const TABLE_ROWS: [(&str, [usize; 3]); 3] = [
    ("IIIE", [612, 936, 960]),
    ("LEdits++", [552, 768, 888]),
    ("Tasvir", [480, 588, 744]),
];

pub fn table_fixture() -> Vec<RatingRecord> {
    TABLE_ROWS
        .iter()
        .enumerate()
        .flat_map(|(i, (method, targets))| fixture_records(method, TABLE_IMAGES, *targets, 17 + i as u64))
        .collect()
}

/// A random corpus with odd panels of 1, 3 or 5 raters per method.
pub fn random_corpus(seed: u64, methods: usize, images: usize) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for m in 0..methods {
        let panel = [1usize, 3, 5][rng.gen_range(0..3)];
        let bias: f64 = rng.gen_range(0.2..0.8);
        for i in 0..images {
            for metric in Metric::ALL {
                for r in 0..panel {
                    out.push(RatingRecord {
                        method: format!("method-{m}"),
                        image_id: format!("img-{i}"),
                        metric,
                        rater_id: format!("r{r}"),
                        score: u8::from(rng.gen_bool(bias)),
                    });
                }
            }
        }
    }
    out
}

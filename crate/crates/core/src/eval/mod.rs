//! Human-rating aggregation: majority vote per cell, exact per-metric means,
//! method ranking.
//!
//! A cell is one (method, image, metric) triple rated 0/1 by an odd panel.
//! Means are kept as integer vote counts over the image count and only
//! rounded (half-up, two decimals) for display.

mod report;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{read_records, read_records_csv, read_records_jsonl, render_csv, render_text, write_records_csv};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("panel of {0} ratings has no majority; panels must have odd size")]
    EvenPanel(usize),
    #[error("incomplete panel for {method}/{image_id}: {detail}")]
    IncompletePanel {
        method: String,
        image_id: String,
        detail: String,
    },
    #[error("rater {rater_id} scored {method}/{image_id}/{metric} more than once")]
    DuplicateRating {
        method: String,
        image_id: String,
        metric: Metric,
        rater_id: String,
    },
    #[error("score {score} for {method}/{image_id}/{metric} is not 0 or 1")]
    InvalidScore {
        method: String,
        image_id: String,
        metric: Metric,
        score: u8,
    },
    #[error("record {record}: {detail}")]
    Parse { record: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(alias = "edit_faithfulness")]
    EditFaithfulness,
    #[serde(alias = "content_preservation")]
    ContentPreservation,
    #[serde(alias = "overall_instruction_following")]
    OverallInstructionFollowing,
}

impl Metric {
    pub const ALL: [Metric; 3] = [
        Metric::EditFaithfulness,
        Metric::ContentPreservation,
        Metric::OverallInstructionFollowing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::EditFaithfulness => "EditFaithfulness",
            Metric::ContentPreservation => "ContentPreservation",
            Metric::OverallInstructionFollowing => "OverallInstructionFollowing",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::EditFaithfulness => "Edit Faithfulness",
            Metric::ContentPreservation => "Content Preservation",
            Metric::OverallInstructionFollowing => "Overall Instruction Following",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    /// Accepts the variant name, snake_case, spaced title case or the initials.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "editfaithfulness" | "ef" => Ok(Metric::EditFaithfulness),
            "contentpreservation" | "cp" => Ok(Metric::ContentPreservation),
            "overallinstructionfollowing" | "oif" => Ok(Metric::OverallInstructionFollowing),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub method: String,
    pub image_id: String,
    pub metric: Metric,
    pub rater_id: String,
    pub score: u8,
}

/// 1 iff more than half of an odd panel voted 1.
pub fn majority_vote(scores: &[u8]) -> Result<u8, EvalError> {
    if scores.len().is_multiple_of(2) {
        return Err(EvalError::EvenPanel(scores.len()));
    }
    let ones = scores.iter().filter(|&&s| s != 0).count();
    Ok(u8::from(2 * ones > scores.len()))
}

/// Per-method majority-vote totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub images: u64,
    /// Images whose majority vote was 1, per metric.
    pub votes: BTreeMap<Metric, u64>,
}

impl MethodScore {
    pub fn votes(&self, metric: Metric) -> u64 {
        self.votes.get(&metric).copied().unwrap_or(0)
    }

    pub fn mean(&self, metric: Metric) -> f64 {
        if self.images == 0 {
            return 0.0;
        }
        self.votes(metric) as f64 / self.images as f64
    }

    /// Mean in hundredths, rounded half-up: floor((200v + n) / 2n).
    pub fn mean_hundredths(&self, metric: Metric) -> u64 {
        if self.images == 0 {
            return 0;
        }
        (200 * self.votes(metric) + self.images) / (2 * self.images)
    }

    pub fn display_mean(&self, metric: Metric) -> String {
        let h = self.mean_hundredths(metric);
        format!("{}.{:02}", h / 100, h % 100)
    }

    /// Exact comparison of the two means as fractions.
    fn cmp_mean(&self, other: &MethodScore, metric: Metric) -> Ordering {
        let lhs = u128::from(self.votes(metric)) * u128::from(other.images);
        let rhs = u128::from(other.votes(metric)) * u128::from(self.images);
        lhs.cmp(&rhs)
    }
}

/// Aggregation settings; `panel_size` pins the exact rater count per cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PanelRule {
    pub panel_size: Option<usize>,
}

type Cell = (String, String, Metric);

/// Majority-votes every cell and averages over images, per method and metric.
///
/// Every image rated for a method must carry all three metrics, each with an
/// odd panel (of exactly `panel_size` if set). Methods come back sorted by name.
pub fn aggregate<I>(records: I, rule: PanelRule) -> Result<Vec<MethodScore>, EvalError>
where
    I: IntoIterator<Item = RatingRecord>,
{
    let mut cells: BTreeMap<Cell, BTreeMap<String, u8>> = BTreeMap::new();
    for r in records {
        if r.score > 1 {
            return Err(EvalError::InvalidScore {
                method: r.method,
                image_id: r.image_id,
                metric: r.metric,
                score: r.score,
            });
        }
        let panel = cells.entry((r.method.clone(), r.image_id.clone(), r.metric)).or_default();
        if panel.insert(r.rater_id.clone(), r.score).is_some() {
            return Err(EvalError::DuplicateRating {
                method: r.method,
                image_id: r.image_id,
                metric: r.metric,
                rater_id: r.rater_id,
            });
        }
    }
    let mut images: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (method, image, _) in cells.keys() {
        images.entry(method).or_default().insert(image);
    }
    let mut out = Vec::with_capacity(images.len());
    for (method, ids) in &images {
        let mut score = MethodScore {
            method: method.to_string(),
            images: ids.len() as u64,
            votes: Metric::ALL.iter().map(|m| (*m, 0)).collect(),
        };
        for image in ids {
            for metric in Metric::ALL {
                let incomplete = |detail: String| EvalError::IncompletePanel {
                    method: method.to_string(),
                    image_id: image.to_string(),
                    detail,
                };
                let key = (method.to_string(), image.to_string(), metric);
                let panel = cells.get(&key).ok_or_else(|| incomplete(format!("no ratings for {metric}")))?;
                if let Some(n) = rule.panel_size {
                    if panel.len() != n {
                        return Err(incomplete(format!("{metric} has {} ratings, expected {n}", panel.len())));
                    }
                }
                let scores: Vec<u8> = panel.values().copied().collect();
                let vote = majority_vote(&scores)
                    .map_err(|_| incomplete(format!("{metric} has an even panel of {}", scores.len())))?;
                *score.votes.get_mut(&metric).expect("all metrics present") += u64::from(vote);
            }
        }
        out.push(score);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedMethod {
    pub rank: usize,
    pub score: MethodScore,
}

/// Orders by Overall Instruction Following, then Edit Faithfulness (both
/// descending, compared exactly), then method name ascending. Ranks are 1-based
/// positions in that order.
pub fn rank_methods(scores: &[MethodScore]) -> Vec<RankedMethod> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| {
        b.cmp_mean(a, Metric::OverallInstructionFollowing)
            .then_with(|| b.cmp_mean(a, Metric::EditFaithfulness))
            .then_with(|| a.method.cmp(&b.method))
    });
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, score)| RankedMethod { rank: i + 1, score })
        .collect()
}

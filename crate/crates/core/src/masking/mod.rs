//! Edit-mask acquisition: grounding, box proposal and raster mask algebra.

pub mod algebra;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use algebra::{complement, dilate, intersect, rasterize_box, resample_nearest, squared_distance_to_set, union};

use crate::analyzer::{self, AnalysisError, PromptTemplateSet};
use crate::codec;
use crate::model::{BoundingBox, EditCategory, EditPlan, ImageBuffer, Mask};
use crate::protocol::{BackendError, Backends, GroundedDetection, SchemaId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask is {found:?}, expected {expected:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("union of zero masks")]
    EmptyUnion,
    #[error("box {0:?} is empty after clamping to the image")]
    EmptyBoxAfterClamp(BoundingBox),
    #[error("no detection for {phrase:?} reached the confidence threshold")]
    GroundingEmpty { phrase: String },
    #[error("{0} plan has no phrase to ground")]
    MissingPhrase(EditCategory),
    #[error("invalid mask config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub confidence_threshold: f64,
    /// `None` derives the radius from the image size.
    pub dilation_radius: Option<u32>,
    pub addition_box_fraction: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.35,
            dilation_radius: None,
            addition_box_fraction: 0.25,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.confidence_threshold) {
            return Err(MaskError::InvalidConfig("confidence_threshold must be in (0,1)".into()));
        }
        if !open_unit(self.addition_box_fraction) {
            return Err(MaskError::InvalidConfig("addition_box_fraction must be in (0,1)".into()));
        }
        Ok(())
    }

    /// max(8, round(0.03 * min(w, h))) unless configured.
    pub fn radius_for(&self, width: u32, height: u32) -> u32 {
        self.dilation_radius
            .unwrap_or_else(|| 8.max((0.03 * f64::from(width.min(height))).round() as u32))
    }
}

/// Union of the detections at or above the threshold, resampled to the image size.
pub fn select_detections(
    detections: &[GroundedDetection],
    image: &ImageBuffer,
    phrase: &str,
    cfg: &MaskConfig,
) -> Result<Mask, MaskError> {
    let (w, h) = image.dims();
    let kept: Vec<Mask> = detections
        .iter()
        .filter(|d| d.confidence >= cfg.confidence_threshold)
        .map(|d| resample_nearest(&d.mask, w, h))
        .collect();
    if kept.is_empty() {
        return Err(MaskError::GroundingEmpty {
            phrase: phrase.to_string(),
        });
    }
    union(&kept)
}

pub async fn ground_object(
    image: &ImageBuffer,
    phrase: &str,
    backends: &Backends,
    cfg: &MaskConfig,
) -> Result<Mask, MaskError> {
    if phrase.trim().is_empty() {
        return Err(MaskError::GroundingEmpty {
            phrase: phrase.to_string(),
        });
    }
    let detections = backends.ground(image, phrase).await?;
    select_detections(&detections, image, phrase, cfg)
}

/// Grounds `phrase`, retrying once with a chat-suggested synonym.
pub async fn ground_with_retry(
    image: &ImageBuffer,
    phrase: &str,
    instruction: &str,
    category: EditCategory,
    backends: &Backends,
    templates: &PromptTemplateSet,
    cfg: &MaskConfig,
) -> Result<Mask, MaskError> {
    let first = ground_object(image, phrase, backends, cfg).await;
    let Err(MaskError::GroundingEmpty { .. }) = first else {
        return first;
    };
    let synonym = match analyzer::suggest_synonym(instruction, category, phrase, backends, templates).await {
        Ok(s) if s != phrase => s,
        Ok(_) => return first,
        Err(AnalysisError::Backend(e @ BackendError::Unreachable { .. })) => return Err(e.into()),
        Err(e) => {
            tracing::debug!(error = %e, "no usable synonym");
            return first;
        }
    };
    tracing::debug!(phrase, %synonym, "retrying grounding with synonym");
    match ground_object(image, &synonym, backends, cfg).await {
        Err(MaskError::GroundingEmpty { .. }) => first,
        other => other,
    }
}

/// Square of `fraction` of the image area, centered horizontally with its
/// center at 62% of the height, shifted to lie inside the image.
pub fn heuristic_addition_box(width: u32, height: u32, fraction: f64) -> BoundingBox {
    let (w, h) = (i64::from(width), i64::from(height));
    let side = ((fraction * (w * h) as f64).sqrt().round() as i64).clamp(1, w.min(h));
    let start = |center: f64, extent: i64| -> i64 {
        ((center - side as f64 / 2.0).round() as i64).clamp(0, extent - side)
    };
    let x0 = start(w as f64 / 2.0, w);
    let y0 = start(0.62 * h as f64, h);
    BoundingBox::new(x0, y0, x0 + side, y0 + side)
}

fn parse_box(v: &serde_json::Value, width: u32, height: u32) -> Result<BoundingBox, String> {
    let coord = |k: &str| -> Result<i64, String> {
        v.get(k)
            .and_then(|c| c.as_i64().or_else(|| c.as_f64().map(|f| f.round() as i64)))
            .ok_or_else(|| format!("{k} must be an integer"))
    };
    let b = BoundingBox::new(coord("x0")?, coord("y0")?, coord("x1")?, coord("y1")?);
    b.clamped(width, height)
        .ok_or_else(|| format!("box {b:?} lies outside the {width}x{height} image"))
}

/// Placement box for an added object; never fails.
pub async fn propose_addition_box(
    image: &ImageBuffer,
    instruction: &str,
    subject: &str,
    backends: &Backends,
    templates: &PromptTemplateSet,
    cfg: &MaskConfig,
) -> BoundingBox {
    let (w, h) = image.dims();
    let mut values = BTreeMap::new();
    values.insert("instruction", instruction.split_whitespace().collect::<Vec<_>>().join(" "));
    values.insert("subject", subject.to_string());
    values.insert("width", w.to_string());
    values.insert("height", h.to_string());
    let proposed = analyzer::ask_structured(
        backends,
        templates,
        &templates.box_proposal,
        &values,
        SchemaId::BoxProposal,
        Some(codec::image_to_base64(image)),
        |v| parse_box(v, w, h),
    )
    .await;
    match proposed {
        Ok(b) => b,
        Err(e) => {
            tracing::debug!(error = %e, "box proposal failed, using heuristic placement");
            heuristic_addition_box(w, h, cfg.addition_box_fraction)
        }
    }
}

/// The editable region for `plan` on `image`.
pub async fn acquire_mask(
    plan: &EditPlan,
    instruction: &str,
    image: &ImageBuffer,
    backends: &Backends,
    templates: &PromptTemplateSet,
    cfg: &MaskConfig,
) -> Result<Mask, MaskError> {
    let (w, h) = image.dims();
    let grounded = || async {
        let phrase = plan.main_object.as_deref().ok_or(MaskError::MissingPhrase(plan.category))?;
        let m = ground_with_retry(image, phrase, instruction, plan.category, backends, templates, cfg).await?;
        Ok::<_, MaskError>(dilate(&m, cfg.radius_for(w, h)))
    };
    match plan.category {
        EditCategory::GlobalEdit => Ok(Mask::filled(w, h, true).expect("image dimensions are valid")),
        EditCategory::LocalEdit | EditCategory::Remove => grounded().await,
        EditCategory::BackgroundEdit => Ok(complement(&grounded().await?)),
        EditCategory::Addition => {
            let subject = plan
                .addition_subject
                .as_deref()
                .ok_or(MaskError::MissingPhrase(plan.category))?;
            let b = propose_addition_box(image, instruction, subject, backends, templates, cfg).await;
            rasterize_box(b, w, h)
        }
    }
}

//! Backend routing and paste-back compositing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masking::squared_distance_to_set;
use crate::model::{EditCategory, EditPlan, ImageBuffer, Mask};
use crate::protocol::{BackendError, Backends};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("dimension mismatch: source {source_dims:?}, {what} {found:?}")]
    DimensionMismatch {
        source_dims: (u32, u32),
        what: &'static str,
        found: (u32, u32),
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Inpaint,
    GlobalStyle,
}

pub fn select_backend(category: EditCategory) -> BackendKind {
    match category {
        EditCategory::GlobalEdit => BackendKind::GlobalStyle,
        EditCategory::LocalEdit | EditCategory::BackgroundEdit | EditCategory::Addition | EditCategory::Remove => {
            BackendKind::Inpaint
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub seed: u64,
    pub paste_back: bool,
    pub feather_radius: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paste_back: true,
            feather_radius: 4,
        }
    }
}

/// Generated pixels inside the mask, source pixels farther than `feather`
/// from it, and a linear blend by distance in between.
pub fn paste_back(
    source: &ImageBuffer,
    generated: &ImageBuffer,
    mask: &Mask,
    feather: u32,
) -> Result<ImageBuffer, GenerationError> {
    let mismatch = |what, found| GenerationError::DimensionMismatch {
        source_dims: source.dims(),
        what,
        found,
    };
    if generated.dims() != source.dims() {
        return Err(mismatch("generated", generated.dims()));
    }
    if mask.dims() != source.dims() {
        return Err(mismatch("mask", mask.dims()));
    }
    let mut out = source.clone();
    let feather2 = u64::from(feather) * u64::from(feather);
    let distances = if feather > 0 { squared_distance_to_set(mask) } else { Vec::new() };
    for i in 0..source.pixel_count() {
        if mask.bits()[i] {
            out.set_pixel_at(i, generated.pixel_at(i));
            continue;
        }
        let Some(d2) = distances.get(i).copied().flatten() else {
            continue;
        };
        if d2 >= feather2 {
            continue;
        }
        let t = (d2 as f64).sqrt() / f64::from(feather);
        let (s, g) = (source.pixel_at(i), generated.pixel_at(i));
        let blend = |c: usize| (f64::from(s[c]) * t + f64::from(g[c]) * (1.0 - t)).round() as u8;
        out.set_pixel_at(i, [blend(0), blend(1), blend(2)]);
    }
    Ok(out)
}

/// Calls the backend chosen by the plan's category and composites the result.
pub async fn run_generation(
    plan: &EditPlan,
    instruction: &str,
    image: &ImageBuffer,
    mask: &Mask,
    backends: &Backends,
    cfg: &GenerationConfig,
) -> Result<ImageBuffer, GenerationError> {
    if mask.dims() != image.dims() {
        return Err(GenerationError::DimensionMismatch {
            source_dims: image.dims(),
            what: "mask",
            found: mask.dims(),
        });
    }
    match select_backend(plan.category) {
        BackendKind::GlobalStyle => Ok(backends
            .global_edit(image, instruction, &plan.target_prompt, cfg.seed)
            .await?),
        BackendKind::Inpaint => {
            let generated = backends.inpaint(image, mask, &plan.target_prompt, cfg.seed).await?;
            if cfg.paste_back {
                paste_back(image, &generated, mask, cfg.feather_radius)
            } else {
                Ok(generated)
            }
        }
    }
}

//! Instruction-guided image editing through intermediary guidance.
//!
//! An instruction is turned into an explicit [`model::EditPlan`] (edit
//! category, edited object, target prompt), the plan selects a mask rule,
//! and the mask plus prompt drive an inpainting or global-edit backend:
//!
//! ```text
//! instruction ──► analyzer ──► EditPlan ──► masking ──► Mask ──► generation ──► result
//!                   │                          │                     │
//!                 chat                     ground/chat        inpaint/global
//! ```
//!
//! All model backends sit behind the narrow HTTP protocol in [`protocol`];
//! [`protocol::mock`] provides deterministic stand-ins so the whole pipeline
//! runs offline. [`eval`] aggregates human 0/1 ratings into method scores.

pub mod analyzer;
pub mod codec;
pub mod config;
pub mod eval;
pub mod generation;
pub mod masking;
pub mod model;
pub mod orchestrator;
pub mod protocol;
pub mod server;
pub mod text;

pub use model::{BoundingBox, EditCategory, EditPlan, EditRequest, ImageBuffer, Mask, MaskSource};

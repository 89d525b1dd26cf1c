//! Wire protocol to the four model backends.
//!
//! Every backend is a single `POST` route taking and returning a JSON
//! envelope. Images and masks travel as base64 PNG. See `docs/protocol.md`
//! for the normative field reference.

mod client;
pub mod mock;
mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BoundingBox;

pub use client::{BackendClient, Backends, Endpoints, GroundedDetection, RetryPolicy};
pub use transcript::{Exchange, Transcript};

pub const CHAT_PATH: &str = "/chat";
pub const GROUND_PATH: &str = "/ground";
pub const INPAINT_PATH: &str = "/inpaint";
pub const GLOBAL_EDIT_PATH: &str = "/global-edit";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend {url} unreachable after {attempts} attempts: {last_error}")]
    Unreachable {
        url: String,
        attempts: usize,
        last_error: String,
    },
    #[error("backend {url} rejected the request with status {status}: {body}")]
    Rejected {
        url: String,
        status: u16,
        body: String,
    },
    #[error("backend {url} broke the protocol contract: {detail}")]
    ContractViolation { url: String, detail: String },
}

/// Structured-output schemas a chat request may ask for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Classification,
    ObjectExtraction,
    PromptBuild,
    BoxProposal,
}

impl SchemaId {
    pub const ALL: [SchemaId; 4] = [
        SchemaId::Classification,
        SchemaId::ObjectExtraction,
        SchemaId::PromptBuild,
        SchemaId::BoxProposal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::Classification => "classification",
            SchemaId::ObjectExtraction => "object_extraction",
            SchemaId::PromptBuild => "prompt_build",
            SchemaId::BoxProposal => "box_proposal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    /// Base64 PNG, attached only for box proposals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub response_schema_id: SchemaId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishStatus {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub raw_text: String,
    pub finish: FinishStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRequest {
    pub image: String,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Base64 single-channel PNG.
    pub mask: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundResponse {
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalEditRequest {
    pub image: String,
    pub instruction: String,
    pub target_prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalEditResponse {
    pub image: String,
}

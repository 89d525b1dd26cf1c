//! Job execution, artifact persistence, batch runs and the HTTP API.

pub mod api;
pub mod batch;
mod pipeline;
mod registry;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use api::{api_router, serve_api, ApiState};
pub use batch::{parse_manifest, run_batch, BatchError, BatchRecord, BatchSummary, ManifestRecord};
pub use pipeline::{EditOptions, Pipeline, PLAN_SCHEMA_VERSION};
pub use registry::{Registry, RegistryEvent};

use crate::analyzer::AnalysisError;
use crate::generation::GenerationError;
use crate::masking::MaskError;
use crate::model::{EditCategory, EditPlan, Mask};
use crate::protocol::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Queued,
    Analyzing,
    Masking,
    Generating,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }

    /// Queued→Analyzing→Masking→Generating→Done, and any non-terminal phase to Failed.
    pub fn can_advance_to(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (Queued, Analyzing) | (Analyzing, Masking) | (Masking, Generating) | (Generating, Done)
        ) || (next == Failed && !self.is_terminal())
    }
}

/// The closed set of failure codes a job can end with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    AnalysisUnparseable,
    GroundingEmpty,
    BackendUnreachable,
    BackendContractViolation,
    MalformedImage,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 5] = [
        ErrorCode::AnalysisUnparseable,
        ErrorCode::GroundingEmpty,
        ErrorCode::BackendUnreachable,
        ErrorCode::BackendContractViolation,
        ErrorCode::MalformedImage,
    ];
}

impl From<&BackendError> for ErrorCode {
    fn from(e: &BackendError) -> Self {
        match e {
            BackendError::Unreachable { .. } => ErrorCode::BackendUnreachable,
            // a non-retryable status means the backend refused our envelope
            BackendError::Rejected { .. } | BackendError::ContractViolation { .. } => {
                ErrorCode::BackendContractViolation
            }
        }
    }
}

impl From<&AnalysisError> for ErrorCode {
    fn from(e: &AnalysisError) -> Self {
        match e {
            AnalysisError::Backend(b) => b.into(),
            AnalysisError::Unparseable { .. } | AnalysisError::EmptyInstruction | AnalysisError::Template(_) => {
                ErrorCode::AnalysisUnparseable
            }
        }
    }
}

impl From<&MaskError> for ErrorCode {
    fn from(e: &MaskError) -> Self {
        match e {
            MaskError::GroundingEmpty { .. } => ErrorCode::GroundingEmpty,
            MaskError::Backend(b) => b.into(),
            MaskError::MissingPhrase(_) => ErrorCode::AnalysisUnparseable,
            MaskError::DimensionMismatch { .. }
            | MaskError::EmptyUnion
            | MaskError::EmptyBoxAfterClamp(_)
            | MaskError::InvalidConfig(_) => ErrorCode::BackendContractViolation,
        }
    }
}

impl From<&GenerationError> for ErrorCode {
    fn from(e: &GenerationError) -> Self {
        match e {
            GenerationError::Backend(b) => b.into(),
            GenerationError::DimensionMismatch { .. } => ErrorCode::BackendContractViolation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobError {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("illegal phase transition {from:?} -> {to:?}")]
pub struct InvalidTransition {
    pub from: Phase,
    pub to: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobState {
    pub id: String,
    pub phase: Phase,
    pub plan: Option<EditPlan>,
    /// Artifact name (relative to the job directory) to file path.
    pub artifacts: BTreeMap<String, PathBuf>,
    pub error: Option<JobError>,
    /// Milliseconds since the Unix epoch at which each phase was entered.
    pub timestamps: BTreeMap<Phase, u64>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl JobState {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            phase: Phase::Queued,
            plan: None,
            artifacts: BTreeMap::new(),
            error: None,
            timestamps: BTreeMap::from([(Phase::Queued, now_ms())]),
        }
    }

    pub fn advance(&mut self, to: Phase) -> Result<(), InvalidTransition> {
        if !self.phase.can_advance_to(to) {
            return Err(InvalidTransition { from: self.phase, to });
        }
        self.phase = to;
        self.timestamps.insert(to, now_ms());
        Ok(())
    }

    pub fn fail(&mut self, code: ErrorCode, message: impl Into<String>) {
        self.advance(Phase::Failed).expect("only live jobs fail");
        self.error = Some(JobError {
            code,
            message: message.into(),
        });
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        self.error.as_ref().map(|e| e.code)
    }
}

/// Caller corrections applied on top of the analysis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanOverride {
    pub category: Option<EditCategory>,
    pub main_object: Option<String>,
    pub addition_subject: Option<String>,
    pub target_prompt: Option<String>,
    /// Replaces grounding and box proposal when present.
    pub mask: Option<Mask>,
}

/// The JSON shape of a [`PlanOverride`] without the mask.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOverrideFields {
    pub category: Option<EditCategory>,
    pub main_object: Option<String>,
    pub addition_subject: Option<String>,
    pub target_prompt: Option<String>,
}

impl PlanOverride {
    pub fn from_fields(fields: PlanOverrideFields, mask: Option<Mask>) -> Self {
        Self {
            category: fields.category,
            main_object: fields.main_object,
            addition_subject: fields.addition_subject,
            target_prompt: fields.target_prompt,
            mask,
        }
    }

    pub fn fields(&self) -> PlanOverrideFields {
        PlanOverrideFields {
            category: self.category,
            main_object: self.main_object.clone(),
            addition_subject: self.addition_subject.clone(),
            target_prompt: self.target_prompt.clone(),
        }
    }
}

/// Observer of phase changes, called synchronously from the job's task.
pub trait PhaseSink: Send + Sync {
    fn update(&self, state: &JobState);
}

impl PhaseSink for () {
    fn update(&self, _: &JobState) {}
}

impl<F: Fn(&JobState) + Send + Sync> PhaseSink for F {
    fn update(&self, state: &JobState) {
        self(state)
    }
}

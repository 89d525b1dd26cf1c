use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use super::{ErrorCode, JobState, Phase, PhaseSink, PlanOverride};
use crate::analyzer::{self, AnalysisHints, FallbackMode, PromptTemplateSet};
use crate::codec;
use crate::config::{Config, ConfigError};
use crate::generation::{self, GenerationConfig};
use crate::masking::{self, MaskConfig};
use crate::model::{validate_plan, EditCategory, EditPlan, EditRequest, ImageBuffer, Mask};
use crate::protocol::Backends;

pub const PLAN_SCHEMA_VERSION: u32 = 1;

pub const PLAN_FILE: &str = "plan.json";
pub const MASK_FILE: &str = "mask.png";
pub const RESULT_FILE: &str = "result.png";
pub const TRANSCRIPT_FILE: &str = "transcripts/exchanges.json";

#[derive(Serialize)]
struct PlanFile<'a> {
    schema_version: u32,
    #[serde(flatten)]
    plan: &'a EditPlan,
}

#[derive(Debug, Clone, Default)]
pub struct EditOptions {
    pub plan_override: Option<PlanOverride>,
    /// Replaces the configured generation seed.
    pub seed: Option<u64>,
}

/// Everything a job needs besides its request. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub backends: Backends,
    pub templates: Arc<PromptTemplateSet>,
    pub mask: MaskConfig,
    pub generation: GenerationConfig,
    pub fallback: FallbackMode,
    pub out_dir: PathBuf,
}

impl Pipeline {
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self {
            backends: cfg.backends(),
            templates: Arc::new(cfg.templates()?),
            mask: cfg.mask,
            generation: cfg.generation,
            fallback: cfg.analysis.fallback,
            out_dir: cfg.service.out_dir.clone(),
        })
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.out_dir.join(id)
    }

    /// Runs a job from encoded image bytes; undecodable bytes fail the job
    /// with `MalformedImage`. `Err` only for local I/O failures.
    pub async fn execute_encoded(
        &self,
        id: &str,
        image_bytes: &[u8],
        instruction: &str,
        options: &EditOptions,
        sink: &dyn PhaseSink,
    ) -> io::Result<JobState> {
        match codec::decode_image(image_bytes) {
            Ok(image) => match EditRequest::new(id, image, instruction) {
                Ok(request) => self.execute_edit(&request, options, sink).await,
                Err(e) => Err(io::Error::new(io::ErrorKind::InvalidInput, e.to_string())),
            },
            Err(e) => {
                let mut state = JobState::new(id);
                std::fs::create_dir_all(self.job_dir(id))?;
                state.fail(ErrorCode::MalformedImage, e.to_string());
                sink.update(&state);
                Ok(state)
            }
        }
    }

    /// Runs analysis, masking and generation, persisting each artifact as
    /// soon as it exists. Pipeline failures end in a `Failed` state.
    pub async fn execute_edit(
        &self,
        request: &EditRequest,
        options: &EditOptions,
        sink: &dyn PhaseSink,
    ) -> io::Result<JobState> {
        let dir = self.job_dir(&request.id);
        std::fs::create_dir_all(&dir)?;
        let (backends, transcript) = self.backends.recording();
        let mut state = JobState::new(&request.id);
        sink.update(&state);
        let outcome = self.run_steps(request, options, &backends, &dir, &mut state, sink).await;
        write_atomic(&dir.join(TRANSCRIPT_FILE), &pretty_json(&transcript.exchanges()))?;
        state
            .artifacts
            .insert(TRANSCRIPT_FILE.into(), dir.join(TRANSCRIPT_FILE));
        match outcome? {
            Ok(()) => state.advance(Phase::Done).expect("Generating precedes Done"),
            Err((code, message)) => {
                tracing::info!(id = %request.id, ?code, %message, "job failed");
                state.fail(code, message);
            }
        }
        sink.update(&state);
        Ok(state)
    }

    async fn run_steps(
        &self,
        request: &EditRequest,
        options: &EditOptions,
        backends: &Backends,
        dir: &Path,
        state: &mut JobState,
        sink: &dyn PhaseSink,
    ) -> io::Result<Result<(), (ErrorCode, String)>> {
        let ov = options.plan_override.clone().unwrap_or_default();
        let image = &request.image;

        state.advance(Phase::Analyzing).expect("new jobs are queued");
        sink.update(state);
        let hints = AnalysisHints {
            category: ov.category,
            main_object: ov.main_object.clone(),
            addition_subject: ov.addition_subject.clone(),
            target_prompt: ov.target_prompt.clone(),
        };
        let record = match analyzer::analyze(&request.instruction, &hints, backends, &self.templates, self.fallback).await {
            Ok(r) => r,
            Err(e) => return Ok(Err(((&e).into(), e.to_string()))),
        };
        let plan = apply_override(record.to_plan(), &ov);
        let violations = validate_plan(&plan);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Ok(Err((ErrorCode::AnalysisUnparseable, format!("inconsistent plan: {}", list.join("; ")))));
        }
        write_atomic(&dir.join(PLAN_FILE), &pretty_json(&PlanFile {
            schema_version: PLAN_SCHEMA_VERSION,
            plan: &plan,
        }))?;
        state.artifacts.insert(PLAN_FILE.into(), dir.join(PLAN_FILE));
        state.plan = Some(plan.clone());

        state.advance(Phase::Masking).expect("analysis precedes masking");
        sink.update(state);
        let (w, h) = image.dims();
        let mask = match (&ov.mask, plan.category) {
            (_, EditCategory::GlobalEdit) => Mask::filled(w, h, true).expect("image dimensions are valid"),
            (Some(user), _) => masking::resample_nearest(user, w, h),
            (None, _) => {
                match masking::acquire_mask(&plan, &request.instruction, image, backends, &self.templates, &self.mask).await {
                    Ok(m) => m,
                    Err(e) => return Ok(Err(((&e).into(), e.to_string()))),
                }
            }
        };
        write_atomic(&dir.join(MASK_FILE), &codec::encode_mask(&mask))?;
        state.artifacts.insert(MASK_FILE.into(), dir.join(MASK_FILE));

        state.advance(Phase::Generating).expect("masking precedes generation");
        sink.update(state);
        let cfg = GenerationConfig {
            seed: options.seed.unwrap_or(self.generation.seed),
            ..self.generation
        };
        let result: ImageBuffer =
            match generation::run_generation(&plan, &request.instruction, image, &mask, backends, &cfg).await {
                Ok(r) => r,
                Err(e) => return Ok(Err(((&e).into(), e.to_string()))),
            };
        write_atomic(&dir.join(RESULT_FILE), &codec::encode_image(&result))?;
        state.artifacts.insert(RESULT_FILE.into(), dir.join(RESULT_FILE));
        Ok(Ok(()))
    }
}

/// Override fields win; the mask source follows the final category.
fn apply_override(mut plan: EditPlan, ov: &PlanOverride) -> EditPlan {
    if let Some(c) = ov.category {
        plan.category = c;
    }
    if ov.main_object.is_some() {
        plan.main_object = ov.main_object.clone();
    }
    if ov.addition_subject.is_some() {
        plan.addition_subject = ov.addition_subject.clone();
    }
    if let Some(p) = &ov.target_prompt {
        plan.target_prompt = p.clone();
    }
    plan.mask_source = plan.category.mask_source();
    plan
}

fn pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact values serialize");
    out.push(b'\n');
    out
}

/// Write-then-rename so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let parent = path.parent().expect("artifact paths have a parent");
    std::fs::create_dir_all(parent)?;
    let name = path.file_name().expect("artifact paths name a file").to_string_lossy();
    let tmp = parent.join(format!(".{name}.partial"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

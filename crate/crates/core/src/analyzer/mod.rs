//! Instruction analysis: edit category, edited object and target prompt.
//!
//! Each step is its own chat turn with a small structured reply. A reply
//! that fails validation gets exactly one corrective re-ask; a second bad
//! reply is [`AnalysisError::Unparseable`]. [`fallback_classify`] gives a
//! keyword-based answer without any backend.

mod fallback;
mod templates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fallback::{fallback_analyze, fallback_classify, heuristic_category, heuristic_objects, heuristic_prompt};
pub use templates::{PromptPair, PromptTemplateSet, Template, TemplateError};

use crate::model::{validate_instruction, EditCategory, EditPlan};
use crate::protocol::{BackendError, Backends, ChatRequest, FinishStatus, SchemaId};
use crate::text;

pub const MAX_OBJECT_WORDS: usize = 6;
pub const MAX_PROMPT_WORDS: usize = 75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("{schema} reply unusable after one correction: {detail}")]
    Unparseable { schema: &'static str, detail: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Llm,
    Fallback,
}

/// When the keyword fallback replaces the chat backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackMode {
    /// Chat failures fail the analysis.
    #[default]
    Off,
    /// Use the fallback only when the chat backend is unreachable.
    OnUnreachable,
    /// Never call the chat backend for analysis.
    Always,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub category: EditCategory,
    pub main_object: Option<String>,
    pub addition_subject: Option<String>,
    pub target_prompt: String,
    pub confidence: Confidence,
    pub provenance: Provenance,
}

impl AnalysisRecord {
    pub fn to_plan(&self) -> EditPlan {
        EditPlan {
            category: self.category,
            main_object: self.main_object.clone(),
            addition_subject: self.addition_subject.clone(),
            target_prompt: self.target_prompt.clone(),
            mask_source: self.category.mask_source(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPhrases {
    pub main_object: Option<String>,
    pub addition_subject: Option<String>,
}

impl ObjectPhrases {
    pub fn main(object: impl Into<String>) -> Self {
        Self {
            main_object: Some(object.into()),
            addition_subject: None,
        }
    }
}

/// Caller-fixed analysis outputs; the matching chat turn is skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisHints {
    pub category: Option<EditCategory>,
    pub main_object: Option<String>,
    pub addition_subject: Option<String>,
    pub target_prompt: Option<String>,
}

impl AnalysisHints {
    /// Object phrases for `category` when the hints fully determine them.
    pub fn objects_for(&self, category: EditCategory) -> Option<ObjectPhrases> {
        match category {
            EditCategory::GlobalEdit => Some(ObjectPhrases::default()),
            EditCategory::Addition => self.addition_subject.clone().map(|s| ObjectPhrases {
                main_object: None,
                addition_subject: Some(s),
            }),
            _ => self.main_object.clone().map(ObjectPhrases::main),
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Extracts the JSON object from a reply that may wrap it in prose or code fences.
fn json_object(raw: &str) -> Result<serde_json::Value, String> {
    let start = raw.find('{').ok_or("reply contains no JSON object")?;
    let end = raw.rfind('}').ok_or("reply contains no JSON object")?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    let value: serde_json::Value =
        serde_json::from_str(&raw[start..=end]).map_err(|e| format!("invalid JSON: {e}"))?;
    if value.is_object() {
        Ok(value)
    } else {
        Err("reply is not a JSON object".into())
    }
}

/// One structured chat turn with a single corrective re-ask.
pub(crate) async fn ask_structured<T>(
    backends: &Backends,
    templates: &PromptTemplateSet,
    pair: &PromptPair,
    values: &BTreeMap<&str, String>,
    schema: SchemaId,
    image: Option<String>,
    validate: impl Fn(&serde_json::Value) -> Result<T, String>,
) -> Result<T, AnalysisError> {
    let system_text = pair.system.render(values)?;
    let user_text = pair.user.render(values)?;
    let mut request = ChatRequest {
        system_text,
        user_text: user_text.clone(),
        image,
        response_schema_id: schema,
    };
    let check = |raw: &str, finish: FinishStatus| -> Result<T, String> {
        if finish != FinishStatus::Stop {
            return Err(format!("reply finished with status {finish:?}"));
        }
        validate(&json_object(raw)?)
    };
    let first = backends.chat(&request).await?;
    let problem = match check(&first.raw_text, first.finish) {
        Ok(v) => return Ok(v),
        Err(p) => p,
    };
    tracing::debug!(schema = schema.as_str(), %problem, "re-asking after invalid reply");
    let mut correction_values = BTreeMap::new();
    correction_values.insert("original", user_text);
    correction_values.insert("problem", problem);
    request.user_text = templates.correction.render(&correction_values)?;
    let second = backends.chat(&request).await?;
    check(&second.raw_text, second.finish).map_err(|detail| AnalysisError::Unparseable {
        schema: schema.as_str(),
        detail,
    })
}

fn instruction_values(instruction: &str) -> BTreeMap<&'static str, String> {
    let mut v = BTreeMap::new();
    v.insert("instruction", one_line(instruction));
    v
}

fn checked_instruction(instruction: &str) -> Result<String, AnalysisError> {
    validate_instruction(instruction).map_err(|_| AnalysisError::EmptyInstruction)
}

/// Step 1: one of the five categories, schema-validated.
pub async fn classify_instruction(
    instruction: &str,
    backends: &Backends,
    templates: &PromptTemplateSet,
) -> Result<(EditCategory, Confidence), AnalysisError> {
    let instruction = checked_instruction(instruction)?;
    ask_structured(
        backends,
        templates,
        &templates.classification,
        &instruction_values(&instruction),
        SchemaId::Classification,
        None,
        |v| {
            let category: EditCategory = serde_json::from_value(v["category"].clone())
                .map_err(|_| format!("category must be one of {:?}", EditCategory::ALL.map(EditCategory::as_str)))?;
            let confidence = match v.get("confidence").and_then(|c| c.as_str()) {
                Some("high") => Confidence::High,
                _ => Confidence::Low,
            };
            Ok((category, confidence))
        },
    )
    .await
}

fn clean_phrase(value: &serde_json::Value, field: &str) -> Result<Option<String>, String> {
    match value.get(field) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::String(s)) => {
            let p = text::normalize_phrase(s);
            if p.is_empty() {
                Ok(None)
            } else if text::word_count(&p) > MAX_OBJECT_WORDS {
                Err(format!("{field} must be at most {MAX_OBJECT_WORDS} words"))
            } else {
                Ok(Some(p))
            }
        }
        Some(_) => Err(format!("{field} must be a string or null")),
    }
}

/// Step 2: the edited object (or, for Addition, the object to add).
pub async fn extract_main_object(
    instruction: &str,
    category: EditCategory,
    backends: &Backends,
    templates: &PromptTemplateSet,
) -> Result<ObjectPhrases, AnalysisError> {
    let instruction = checked_instruction(instruction)?;
    if category == EditCategory::GlobalEdit {
        return Ok(ObjectPhrases::default());
    }
    let mut values = instruction_values(&instruction);
    values.insert("category", category.to_string());
    ask_structured(
        backends,
        templates,
        &templates.object_extraction,
        &values,
        SchemaId::ObjectExtraction,
        None,
        |v| {
            let main = clean_phrase(v, "main_object")?;
            let subject = clean_phrase(v, "addition_subject")?;
            match category {
                EditCategory::Addition => {
                    // some models put the added object in main_object
                    let subject = subject.or(main).ok_or("addition_subject is required for Addition")?;
                    Ok(ObjectPhrases {
                        main_object: None,
                        addition_subject: Some(subject),
                    })
                }
                _ => main
                    .map(ObjectPhrases::main)
                    .ok_or_else(|| format!("main_object is required for {category}")),
            }
        },
    )
    .await
}

/// Asks for an alternative phrase for an object grounding could not find.
pub async fn suggest_synonym(
    instruction: &str,
    category: EditCategory,
    phrase: &str,
    backends: &Backends,
    templates: &PromptTemplateSet,
) -> Result<String, AnalysisError> {
    let mut values = instruction_values(instruction);
    values.insert("category", category.to_string());
    values.insert("phrase", one_line(phrase));
    ask_structured(
        backends,
        templates,
        &templates.synonym,
        &values,
        SchemaId::ObjectExtraction,
        None,
        |v| clean_phrase(v, "main_object")?.ok_or_else(|| "main_object is required".to_string()),
    )
    .await
}

/// Target prompt for the regenerated region.
pub async fn build_target_prompt(
    instruction: &str,
    category: EditCategory,
    objects: &ObjectPhrases,
    backends: &Backends,
    templates: &PromptTemplateSet,
) -> Result<String, AnalysisError> {
    let instruction = checked_instruction(instruction)?;
    let mut values = instruction_values(&instruction);
    values.insert("category", category.to_string());
    values.insert("object", objects.main_object.clone().unwrap_or_default());
    values.insert("subject", objects.addition_subject.clone().unwrap_or_default());
    let removed = (category == EditCategory::Remove)
        .then(|| objects.main_object.clone())
        .flatten();
    ask_structured(
        backends,
        templates,
        &templates.prompt_build,
        &values,
        SchemaId::PromptBuild,
        None,
        |v| {
            let prompt = v
                .get("target_prompt")
                .and_then(|p| p.as_str())
                .map(one_line)
                .filter(|p| !p.is_empty())
                .ok_or("target_prompt must be a non-empty string")?;
            if text::word_count(&prompt) > MAX_PROMPT_WORDS {
                return Err(format!("target_prompt must be at most {MAX_PROMPT_WORDS} words"));
            }
            if let Some(object) = &removed {
                let head = object.split_whitespace().last().unwrap_or(object);
                if text::contains_word(&prompt, object) || text::contains_word(&prompt, head) {
                    return Err(format!(
                        "a removal prompt must describe the scene without mentioning {object:?}"
                    ));
                }
            }
            Ok(prompt)
        },
    )
    .await
}

/// Runs every analysis step not fixed by `hints`, honoring the fallback mode.
pub async fn analyze(
    instruction: &str,
    hints: &AnalysisHints,
    backends: &Backends,
    templates: &PromptTemplateSet,
    mode: FallbackMode,
) -> Result<AnalysisRecord, AnalysisError> {
    let instruction = checked_instruction(instruction)?;
    if mode == FallbackMode::Always {
        return Ok(fallback_analyze(&instruction, hints));
    }
    match analyze_with_chat(&instruction, hints, backends, templates).await {
        Err(AnalysisError::Backend(BackendError::Unreachable { .. })) if mode == FallbackMode::OnUnreachable => {
            tracing::warn!("chat backend unreachable, using keyword fallback");
            Ok(fallback_analyze(&instruction, hints))
        }
        other => other,
    }
}

async fn analyze_with_chat(
    instruction: &str,
    hints: &AnalysisHints,
    backends: &Backends,
    templates: &PromptTemplateSet,
) -> Result<AnalysisRecord, AnalysisError> {
    let (category, confidence) = match hints.category {
        Some(c) => (c, Confidence::High),
        None => classify_instruction(instruction, backends, templates).await?,
    };
    let objects = match hints.objects_for(category) {
        Some(o) => o,
        None => extract_main_object(instruction, category, backends, templates).await?,
    };
    let target_prompt = match &hints.target_prompt {
        Some(p) => p.clone(),
        None => build_target_prompt(instruction, category, &objects, backends, templates).await?,
    };
    Ok(AnalysisRecord {
        category,
        main_object: objects.main_object,
        addition_subject: objects.addition_subject,
        target_prompt,
        confidence,
        provenance: Provenance::Llm,
    })
}

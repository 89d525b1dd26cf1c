use std::collections::BTreeMap;

use regex::Regex;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::Fault;
use crate::codec;
use crate::model::EditCategory;
use crate::protocol::{ChatRequest, ChatResponse, FinishStatus, SchemaId};
use crate::text;

const BUILTIN_RULES: &str = include_str!("../../../config/mock_chat_rules.toml");

const PLACEHOLDERS: &[&str] = &["instruction", "object", "subject", "phrase"];

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule table is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("rule {index}: bad pattern: {source}")]
    Pattern {
        index: usize,
        #[source]
        source: regex::Error,
    },
    #[error("rule {index}: unknown placeholder {{{{{name}}}}}")]
    Placeholder { index: usize, name: String },
    #[error("rule {index}: template does not render to JSON: {detail}")]
    Template { index: usize, detail: String },
    #[error("rule {index}: unknown category {category:?}")]
    Category { index: usize, category: String },
    #[error("unsupported rule table version {0}")]
    Version(u32),
}

#[derive(Debug, Deserialize)]
struct RuleFile {
    version: u32,
    #[serde(default, rename = "rule")]
    rules: Vec<RawRule>,
}

#[derive(Debug, Deserialize)]
struct RawRule {
    schema: SchemaId,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    field: Option<String>,
    pattern: String,
    template: String,
}

#[derive(Debug, Clone)]
pub struct ChatRule {
    pub schema: SchemaId,
    pub category: Option<EditCategory>,
    pub field: String,
    pub pattern: Regex,
    pub template: String,
}

/// Ordered keyword rules; the first match answers the request.
#[derive(Debug, Clone)]
pub struct RuleTable {
    rules: Vec<ChatRule>,
}

impl RuleTable {
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_RULES).expect("bundled rule table is valid")
    }

    pub fn empty() -> Self {
        Self { rules: Vec::new() }
    }

    pub fn from_toml(source: &str) -> Result<Self, RuleError> {
        let file: RuleFile = toml::from_str(source)?;
        if file.version != 1 {
            return Err(RuleError::Version(file.version));
        }
        let mut rules = Vec::with_capacity(file.rules.len());
        for (index, raw) in file.rules.into_iter().enumerate() {
            let pattern =
                Regex::new(&raw.pattern).map_err(|source| RuleError::Pattern { index, source })?;
            let category = raw
                .category
                .map(|c| {
                    c.parse::<EditCategory>()
                        .map_err(|_| RuleError::Category { index, category: c })
                })
                .transpose()?;
            let rule = ChatRule {
                schema: raw.schema,
                category,
                field: raw.field.unwrap_or_else(|| "instruction".into()),
                pattern,
                template: raw.template,
            };
            validate_template(index, &rule)?;
            rules.push(rule);
        }
        Ok(Self { rules })
    }

    /// Rules from `other` are tried before this table's own rules.
    pub fn with_overrides(mut self, other: RuleTable) -> Self {
        let mut rules = other.rules;
        rules.append(&mut self.rules);
        self.rules = rules;
        self
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[ChatRule] {
        &self.rules
    }
}

fn placeholder_regex() -> Regex {
    Regex::new(r"\{\{\s*([A-Za-z0-9_]+)\s*\}\}").expect("static regex")
}

fn validate_template(index: usize, rule: &ChatRule) -> Result<(), RuleError> {
    let re = placeholder_regex();
    for cap in re.captures_iter(&rule.template) {
        let name = &cap[1];
        let is_group = name.len() == 1 && name.as_bytes()[0].is_ascii_digit() && name != "0";
        if !is_group && !PLACEHOLDERS.contains(&name) {
            return Err(RuleError::Placeholder {
                index,
                name: name.to_string(),
            });
        }
    }
    let rendered = re.replace_all(&rule.template, "x");
    serde_json::from_str::<serde_json::Value>(&rendered).map_err(|e| RuleError::Template {
        index,
        detail: e.to_string(),
    })?;
    Ok(())
}

/// Parses `Key: value` lines into a lowercase snake_case key map.
pub fn user_text_fields(user_text: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for line in user_text.lines() {
        if let Some((key, value)) = line.split_once(':') {
            let key = key.trim();
            if key.is_empty() || key.len() > 32 || !key.chars().all(|c| c.is_alphanumeric() || c == ' ' || c == '_') {
                continue;
            }
            let key = key.to_lowercase().replace(' ', "_");
            out.entry(key).or_insert_with(|| value.trim().to_string());
        }
    }
    out
}

fn json_escape(s: &str) -> String {
    let quoted = serde_json::to_string(s).expect("strings serialize");
    quoted[1..quoted.len() - 1].to_string()
}

/// Stand-in for a chat model: pure function of the request and rule table.
#[derive(Debug, Clone)]
pub struct MockChat {
    pub rules: RuleTable,
    pub fault: Fault,
}

impl Default for MockChat {
    fn default() -> Self {
        Self::new(RuleTable::builtin())
    }
}

impl MockChat {
    pub fn new(rules: RuleTable) -> Self {
        Self {
            rules,
            fault: Fault::None,
        }
    }

    pub fn respond(&self, req: &ChatRequest) -> ChatResponse {
        let fields = user_text_fields(&req.user_text);
        let instruction = fields
            .get("instruction")
            .cloned()
            .unwrap_or_else(|| req.user_text.trim().to_string());
        let category = fields
            .get("category")
            .and_then(|c| c.parse::<EditCategory>().ok());

        for rule in self.rules.rules.iter().filter(|r| r.schema == req.response_schema_id) {
            if rule.category.is_some() && rule.category != category {
                continue;
            }
            let subject = if rule.field == "instruction" {
                Some(&instruction)
            } else {
                fields.get(&rule.field)
            };
            let Some(subject) = subject else {
                continue;
            };
            if let Some(caps) = rule.pattern.captures(subject) {
                let raw_text = placeholder_regex()
                    .replace_all(&rule.template, |c: &regex::Captures<'_>| {
                        let name = &c[1];
                        let value = match name {
                            "instruction" => instruction.clone(),
                            "object" | "subject" | "phrase" => {
                                fields.get(name).cloned().unwrap_or_default()
                            }
                            digit => {
                                let idx: usize = digit.parse().unwrap_or(0);
                                caps.get(idx)
                                    .map(|m| text::normalize_phrase(m.as_str()))
                                    .unwrap_or_default()
                            }
                        };
                        json_escape(&value)
                    })
                    .into_owned();
                return ChatResponse {
                    raw_text,
                    finish: FinishStatus::Stop,
                };
            }
        }
        ChatResponse {
            raw_text: default_reply(req, &instruction, category),
            finish: FinishStatus::Stop,
        }
    }
}

fn default_reply(req: &ChatRequest, instruction: &str, category: Option<EditCategory>) -> String {
    match req.response_schema_id {
        SchemaId::Classification => json!({"category": "LocalEdit", "confidence": "low"}),
        SchemaId::ObjectExtraction => {
            let noun = text::last_noun_like_token(instruction).unwrap_or_else(|| "object".into());
            match category {
                Some(EditCategory::GlobalEdit) => {
                    json!({"main_object": null, "addition_subject": null})
                }
                Some(EditCategory::Addition) => {
                    json!({"main_object": null, "addition_subject": noun})
                }
                _ => json!({"main_object": noun, "addition_subject": null}),
            }
        }
        SchemaId::PromptBuild => json!({"target_prompt": instruction}),
        SchemaId::BoxProposal => {
            let dims = req
                .image
                .as_deref()
                .and_then(|b64| codec::image_from_base64(b64).ok())
                .map(|img| img.dims());
            match dims {
                Some((w, h)) => {
                    let b = super::centered_quarter_box(w, h);
                    json!({"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1})
                }
                None => json!({"error": "no image attached"}),
            }
        }
    }
    .to_string()
}

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::Regex;
use thiserror::Error;

const BUILTIN: &str = include_str!("../../config/templates.txt");
const HEADER: &str = "iiie-templates v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template file must start with {HEADER:?}")]
    BadHeader,
    #[error("line {line}: malformed section header {text:?}")]
    BadSection { line: usize, text: String },
    #[error("duplicate section {0}")]
    Duplicate(String),
    #[error("missing section {0}")]
    MissingSection(String),
    #[error("template {template} needs placeholder {{{{{name}}}}} but no value was given")]
    MissingPlaceholder { template: String, name: String },
    #[error("cannot read template file: {0}")]
    Io(String),
}

/// Text with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
    placeholders: BTreeSet<String>,
}

fn placeholder_regex() -> Regex {
    Regex::new(r"\{\{\s*([A-Za-z0-9_]+)\s*\}\}").expect("static regex")
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let placeholders = placeholder_regex()
            .captures_iter(&text)
            .map(|c| c[1].to_string())
            .collect();
        Self {
            name: name.into(),
            text,
            placeholders,
        }
    }

    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        if let Some(missing) = self.placeholders.iter().find(|p| !values.contains_key(p.as_str())) {
            return Err(TemplateError::MissingPlaceholder {
                template: self.name.clone(),
                name: missing.clone(),
            });
        }
        Ok(placeholder_regex()
            .replace_all(&self.text, |c: &regex::Captures<'_>| values[&c[1]].clone())
            .into_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub system: Template,
    pub user: Template,
}

/// System and user templates for every chat turn the analyzer makes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    pub classification: PromptPair,
    pub object_extraction: PromptPair,
    pub prompt_build: PromptPair,
    pub box_proposal: PromptPair,
    pub synonym: PromptPair,
    pub correction: Template,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        Self::parse(BUILTIN).expect("bundled templates parse")
    }
}

impl PromptTemplateSet {
    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let mut lines = source.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim() == HEADER => {}
            _ => return Err(TemplateError::BadHeader),
        }
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, line) in lines {
            if let Some(rest) = line.strip_prefix("@@") {
                let name = rest.trim();
                let valid = name.split_once('.').is_some_and(|(a, b)| {
                    !a.is_empty() && matches!(b, "system" | "user")
                });
                if !valid {
                    return Err(TemplateError::BadSection {
                        line: idx + 1,
                        text: line.to_string(),
                    });
                }
                if sections.contains_key(name) {
                    return Err(TemplateError::Duplicate(name.to_string()));
                }
                sections.insert(name.to_string(), Vec::new());
                current = Some(name.to_string());
            } else if let Some(name) = &current {
                sections.get_mut(name).expect("section exists").push(line);
            }
            // lines before the first section are comments
        }
        let mut take = |name: &str| -> Result<Template, TemplateError> {
            let body = sections
                .remove(name)
                .ok_or_else(|| TemplateError::MissingSection(name.to_string()))?;
            Ok(Template::new(name, body.join("\n").trim().to_string()))
        };
        let mut pair = |schema: &str| -> Result<PromptPair, TemplateError> {
            Ok(PromptPair {
                system: take(&format!("{schema}.system"))?,
                user: take(&format!("{schema}.user"))?,
            })
        };
        let classification = pair("classification")?;
        let object_extraction = pair("object_extraction")?;
        let prompt_build = pair("prompt_build")?;
        let box_proposal = pair("box_proposal")?;
        let synonym = pair("synonym")?;
        let correction = take("correction.user")?;
        Ok(Self {
            classification,
            object_extraction,
            prompt_build,
            box_proposal,
            synonym,
            correction,
        })
    }
}

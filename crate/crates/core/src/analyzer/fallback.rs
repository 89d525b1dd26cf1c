//! Keyword heuristics that stand in for the chat backend when it is
//! unavailable or disabled. Pure and deterministic.

use super::{AnalysisHints, AnalysisRecord, Confidence, ObjectPhrases, Provenance};
use super::{MAX_OBJECT_WORDS, MAX_PROMPT_WORDS};
use crate::model::EditCategory;
use crate::text::{self, contains_word, tokens};

const REMOVE_VERBS: &[&str] = &[
    "remove", "removing", "removes", "erase", "erasing", "delete", "deleting", "eliminate",
    "eliminating",
];
const REMOVE_PHRASES: &[&[&str]] = &[&["get", "rid", "of"], &["take", "out"], &["take", "away"]];
const BACKGROUND_WORDS: &[&str] = &["background", "backgrounds", "backdrop", "scenery"];
const ADD_VERBS: &[&str] = &["add", "adding", "adds", "insert", "inserting", "put", "place"];
const GLOBAL_WORDS: &[&str] = &[
    "winter", "summer", "autumn", "season", "seasons", "snowy", "night", "nighttime", "sunset",
    "sunrise", "style", "painting", "sketch", "cartoon", "anime", "watercolor", "watercolour",
    "sepia", "vintage", "monochrome", "impressionist", "cyberpunk",
];
const GLOBAL_PHRASES: &[&[&str]] = &[
    &["van", "gogh"],
    &["black", "and", "white"],
    &["whole", "image"],
    &["entire", "image"],
    &["whole", "picture"],
];
const LOCAL_VERBS: &[&str] = &[
    "make", "turn", "change", "replace", "transform", "convert", "alter", "recolor", "recolour",
    "paint", "color", "colour", "swap",
];
const EXPRESSIONS: &[&str] = &["smile", "smiling", "laugh", "laughing", "frown", "cry", "wink"];
const PRONOUNS: &[&str] = &["it", "them", "him", "her", "this", "that", "they"];

const REMOVE_CUT: &[&str] = &["from", "in", "on", "off", "at", "near", "behind"];
const PLACE_CUT: &[&str] = &[
    "to", "on", "onto", "in", "into", "within", "at", "near", "next", "beside", "behind", "under",
    "above", "over", "inside", "outside",
];
const LOCAL_CONNECTORS: &[&str] = &["into", "to", "with", "like", "as"];

const REMOVAL_PROMPTS: &[&str] = &[
    "empty background, natural continuation of the surrounding scene",
    "clean empty surface matching its surroundings",
    "seamless continuation of nearby textures",
];

fn find_word(toks: &[String], words: &[&str]) -> Option<usize> {
    toks.iter().position(|t| words.contains(&t.as_str()))
}

/// Index just past the first occurrence of any multi-word phrase.
fn find_phrase(toks: &[String], phrases: &[&[&str]]) -> Option<(usize, usize)> {
    for (i, _) in toks.iter().enumerate() {
        for p in phrases {
            if toks.len() >= i + p.len() && toks[i..i + p.len()].iter().zip(p.iter()).all(|(a, b)| a == b) {
                return Some((i, i + p.len()));
            }
        }
    }
    None
}

fn cut_at(toks: &[String], stops: &[&str]) -> Vec<String> {
    let end = toks.iter().position(|t| stops.contains(&t.as_str())).unwrap_or(toks.len());
    toks[..end].to_vec()
}

fn phrase_of(toks: &[String]) -> Option<String> {
    let p = text::normalize_phrase(&toks.join(" "));
    let p = text::truncate_words(&p, MAX_OBJECT_WORDS);
    (!p.is_empty() && !PRONOUNS.contains(&p.as_str())).then_some(p)
}

fn noun_or(instruction: &str, default: &str) -> String {
    text::last_noun_like_token(instruction).unwrap_or_else(|| default.to_string())
}

/// Category guess plus whether a strong keyword decided it.
pub fn heuristic_category(instruction: &str) -> (EditCategory, bool) {
    let toks = tokens(instruction);
    if find_word(&toks, REMOVE_VERBS).is_some() || find_phrase(&toks, REMOVE_PHRASES).is_some() {
        (EditCategory::Remove, true)
    } else if find_word(&toks, BACKGROUND_WORDS).is_some() {
        (EditCategory::BackgroundEdit, true)
    } else if find_word(&toks, ADD_VERBS).is_some() {
        (EditCategory::Addition, true)
    } else if find_word(&toks, GLOBAL_WORDS).is_some() || find_phrase(&toks, GLOBAL_PHRASES).is_some() {
        (EditCategory::GlobalEdit, true)
    } else if find_word(&toks, LOCAL_VERBS).is_some() || find_word(&toks, EXPRESSIONS).is_some() {
        (EditCategory::LocalEdit, true)
    } else {
        (EditCategory::LocalEdit, false)
    }
}

pub fn heuristic_objects(instruction: &str, category: EditCategory) -> ObjectPhrases {
    let toks = tokens(instruction);
    match category {
        EditCategory::GlobalEdit => ObjectPhrases::default(),
        EditCategory::Addition => {
            let after = find_word(&toks, ADD_VERBS).map(|i| &toks[i + 1..]).unwrap_or(&[]);
            let subject = phrase_of(&cut_at(after, PLACE_CUT)).unwrap_or_else(|| noun_or(instruction, "object"));
            ObjectPhrases {
                main_object: None,
                addition_subject: Some(subject),
            }
        }
        EditCategory::Remove => {
            let start = find_phrase(&toks, REMOVE_PHRASES)
                .map(|(_, end)| end)
                .or_else(|| find_word(&toks, REMOVE_VERBS).map(|i| i + 1))
                .unwrap_or(toks.len());
            let object = phrase_of(&cut_at(&toks[start..], REMOVE_CUT)).unwrap_or_else(|| noun_or(instruction, "object"));
            ObjectPhrases::main(object)
        }
        EditCategory::BackgroundEdit => {
            let anchor = toks
                .windows(2)
                .position(|w| w[0] == "of" && w[1] == "the")
                .map(|i| i + 2)
                .or_else(|| find_word(&toks, &["behind"]).map(|i| i + 1));
            let object = anchor
                .and_then(|i| phrase_of(&cut_at(&toks[i..], &["to", "with", "into", "in"])))
                .filter(|p| !BACKGROUND_WORDS.iter().any(|w| contains_word(p, w)))
                .unwrap_or_else(|| "main subject".to_string());
            ObjectPhrases::main(object)
        }
        EditCategory::LocalEdit => ObjectPhrases::main(local_object(instruction).0),
    }
}

/// Object phrase and the tokens describing the change for a local edit.
fn local_object(instruction: &str) -> (String, Vec<String>) {
    let marked = text::tokens_marked(instruction);
    let toks: Vec<String> = marked.iter().map(|(t, _)| t.clone()).collect();
    let toks = toks.as_slice();
    let start = find_word(toks, LOCAL_VERBS).map(|i| i + 1).unwrap_or(0);
    let after = &toks[start..];
    if let Some(p) = marked[start..].iter().position(|(_, possessive)| *possessive) {
        // "alter an object's appearance": the possessor is the object
        if let Some(object) = phrase_of(&after[..=p]) {
            return (object, after[p + 1..].to_vec());
        }
    }
    let expression = || {
        if find_word(toks, EXPRESSIONS).is_some() {
            "face".to_string()
        } else {
            "main subject".to_string()
        }
    };
    if let Some(c) = after.iter().position(|t| LOCAL_CONNECTORS.contains(&t.as_str())) {
        let object = phrase_of(&after[..c]).unwrap_or_else(expression);
        return (object, after[c + 1..].to_vec());
    }
    if after.len() > 1 {
        let (head, rest) = after.split_at(after.len() - 1);
        // "make the car red": trailing attribute word
        let object = phrase_of(head).unwrap_or_else(expression);
        return (object, rest.to_vec());
    }
    let object = phrase_of(after).unwrap_or_else(expression);
    (object, Vec::new())
}

pub fn heuristic_prompt(instruction: &str, category: EditCategory, objects: &ObjectPhrases) -> String {
    let toks = tokens(instruction);
    let tail_after = |words: &[&str]| -> Option<String> {
        let i = toks.iter().rposition(|t| words.contains(&t.as_str()))?;
        let tail = text::normalize_phrase(&toks[i + 1..].join(" "));
        (!tail.is_empty()).then_some(tail)
    };
    let prompt = match category {
        EditCategory::Remove => {
            let object = objects.main_object.clone().unwrap_or_default();
            let head = object.split_whitespace().last().unwrap_or("").to_string();
            REMOVAL_PROMPTS
                .iter()
                .find(|p| object.is_empty() || (!contains_word(p, &object) && !contains_word(p, &head)))
                .copied()
                .unwrap_or("empty area")
                .to_string()
        }
        EditCategory::Addition => objects
            .addition_subject
            .clone()
            .unwrap_or_else(|| instruction.to_string()),
        EditCategory::GlobalEdit => tail_after(&["in", "into", "as", "like"])
            .map(|t| format!("the same scene rendered in {t}"))
            .unwrap_or_else(|| instruction.to_string()),
        EditCategory::BackgroundEdit => {
            tail_after(&["to", "into", "with"]).unwrap_or_else(|| "a new scenic background".to_string())
        }
        EditCategory::LocalEdit => {
            let (object, change) = local_object(instruction);
            let change = text::normalize_phrase(&change.join(" "));
            let object = objects.main_object.clone().unwrap_or(object);
            if change.is_empty() {
                instruction.to_string()
            } else if toks.iter().any(|t| LOCAL_CONNECTORS.contains(&t.as_str())) {
                change
            } else {
                format!("{object}, {change}")
            }
        }
    };
    let prompt = text::truncate_words(&prompt, MAX_PROMPT_WORDS);
    if prompt.trim().is_empty() {
        text::truncate_words(instruction, MAX_PROMPT_WORDS)
    } else {
        prompt
    }
}

/// Full offline analysis. Hints replace the corresponding heuristic output.
pub fn fallback_analyze(instruction: &str, hints: &AnalysisHints) -> AnalysisRecord {
    let (guessed, strong) = heuristic_category(instruction);
    let category = hints.category.unwrap_or(guessed);
    let objects = hints.objects_for(category).unwrap_or_else(|| heuristic_objects(instruction, category));
    let target_prompt = hints
        .target_prompt
        .clone()
        .unwrap_or_else(|| heuristic_prompt(instruction, category, &objects));
    AnalysisRecord {
        category,
        main_object: objects.main_object,
        addition_subject: objects.addition_subject,
        target_prompt,
        confidence: if strong || hints.category.is_some() {
            Confidence::High
        } else {
            Confidence::Low
        },
        provenance: Provenance::Fallback,
    }
}

/// Offline classification of an instruction into a complete analysis record.
pub fn fallback_classify(instruction: &str) -> AnalysisRecord {
    fallback_analyze(instruction, &AnalysisHints::default())
}

//! Small phrase utilities shared by the fallback analyzer and the mock chat backend.

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "some", "any", "all", "this", "that", "these", "those", "my", "his", "her",
    "its", "their", "our", "your", "new",
];

const DETERMINERS_STRICT: &[&str] = &[
    "a", "an", "the", "some", "any", "all", "this", "that", "these", "those", "my", "his", "her",
    "its", "their", "our", "your",
];

const NON_NOUNS: &[&str] = &[
    // pronouns
    "it", "them", "me", "him", "her", "us", "they", "you", "i", "we", "he", "she", "one",
    // prepositions and conjunctions
    "in", "into", "on", "onto", "to", "of", "from", "with", "within", "without", "at", "by",
    "for", "as", "like", "near", "next", "beside", "behind", "under", "above", "over", "and",
    "or", "but", "so", "then", "than", "up", "down", "out", "off", "away",
    // verbs that open instructions
    "make", "turn", "change", "let", "lets", "let's", "see", "be", "is", "are", "was", "look",
    "looks", "add", "adding", "remove", "removing", "erase", "delete", "replace", "put", "place",
    "insert", "alter", "transform", "convert", "please", "show", "get", "rid", "take", "keep",
    "affecting", "smile",
    // adverbs / fillers
    "very", "more", "less", "too", "also", "just", "now", "there", "here", "instead",
];

/// Lowercases, trims punctuation, collapses whitespace and strips leading
/// determiners (keeps "new" since "new objects" is a legitimate subject).
pub fn normalize_phrase(raw: &str) -> String {
    strip_leading(raw, DETERMINERS_STRICT)
}

/// Like [`normalize_phrase`] but also drops leading "new".
pub fn normalize_object(raw: &str) -> String {
    strip_leading(raw, DETERMINERS)
}

fn strip_leading(raw: &str, dets: &[&str]) -> String {
    let lowered = raw.to_lowercase();
    let mut words: Vec<&str> = lowered
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-'))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .collect();
    while words.len() > 1 && dets.contains(&words[0]) {
        words.remove(0);
    }
    if let Some(last) = words.last_mut() {
        if let Some(stem) = last.strip_suffix("'s") {
            *last = stem;
        }
    }
    words.join(" ")
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

pub fn truncate_words(s: &str, max: usize) -> String {
    s.split_whitespace().take(max).collect::<Vec<_>>().join(" ")
}

/// Lowercase alphabetic tokens with surrounding punctuation and possessives removed.
pub fn tokens(s: &str) -> Vec<String> {
    tokens_marked(s).into_iter().map(|(t, _)| t).collect()
}

/// Like [`tokens`], flagging tokens that carried a possessive `'s`.
pub fn tokens_marked(s: &str) -> Vec<(String, bool)> {
    s.split_whitespace()
        .map(|w| {
            let w = w
                .trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                .trim_matches('\'')
                .to_lowercase();
            match w.strip_suffix("'s") {
                Some(stem) => (stem.to_string(), true),
                None => (w, false),
            }
        })
        .filter(|(w, _)| !w.is_empty())
        .collect()
}

/// The last token that is not a determiner, pronoun, preposition or
/// instruction verb. A crude stand-in for noun detection.
pub fn last_noun_like_token(s: &str) -> Option<String> {
    tokens(s)
        .into_iter()
        .rev()
        .find(|t| {
            t.len() >= 2
                && t.chars().all(|c| c.is_alphabetic() || c == '-')
                && !NON_NOUNS.contains(&t.as_str())
                && !DETERMINERS.contains(&t.as_str())
        })
}

/// True when `haystack` contains `needle` as a whole word (case-insensitive).
pub fn contains_word(haystack: &str, needle: &str) -> bool {
    let needle = tokens(needle);
    if needle.is_empty() {
        return false;
    }
    let hay = tokens(haystack);
    hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

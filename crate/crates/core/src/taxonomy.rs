//! Directive style, placeholder type, constraint type and JSON output pattern.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DirectiveStyle {
    Instruction,
    Question,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlaceholderType {
    UserQuestion,
    ContextualInformation,
    KnowledgeInput,
    MetadataShortPhrase,
    Other,
}

impl PlaceholderType {
    pub const ALL: [PlaceholderType; 5] =
        [Self::UserQuestion, Self::ContextualInformation, Self::KnowledgeInput, Self::MetadataShortPhrase, Self::Other];

    pub fn name(self) -> &'static str {
        match self {
            Self::UserQuestion => "User Question",
            Self::ContextualInformation => "Contextual Information",
            Self::KnowledgeInput => "Knowledge Input",
            Self::MetadataShortPhrase => "Metadata/Short Phrase",
            Self::Other => "Other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintType {
    Exclusion,
    Inclusion,
    WordCount,
    Other,
}

impl ConstraintType {
    pub const ALL: [ConstraintType; 4] = [Self::Exclusion, Self::Inclusion, Self::WordCount, Self::Other];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExclusionSubcategory {
    OutputControl,
    RedundancyContextAdherence,
    AccuracyRelevance,
    ClarityAboutUnknowns,
    TechnicalRestriction,
}

impl ExclusionSubcategory {
    pub const ALL: [ExclusionSubcategory; 5] = [
        Self::OutputControl,
        Self::RedundancyContextAdherence,
        Self::AccuracyRelevance,
        Self::ClarityAboutUnknowns,
        Self::TechnicalRestriction,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JsonFormatPattern {
    NotJson,
    /// JSON output declared, no attribute names.
    #[serde(rename = "P1")]
    JsonOutput,
    /// Quoted attribute names listed.
    #[serde(rename = "P2")]
    AttributeNames,
    /// Attribute names with per-attribute descriptions.
    #[serde(rename = "P3")]
    AttributeDescriptions,
}

impl JsonFormatPattern {
    pub const JSON: [JsonFormatPattern; 3] = [Self::JsonOutput, Self::AttributeNames, Self::AttributeDescriptions];

    pub fn is_json(self) -> bool {
        self != Self::NotJson
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::NotJson => "NotJson",
            Self::JsonOutput => "P1",
            Self::AttributeNames => "P2",
            Self::AttributeDescriptions => "P3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaxonomyConfig {
    pub question_words: Vec<String>,
    pub user_question_names: Vec<String>,
    pub contextual_names: Vec<String>,
    pub knowledge_names: Vec<String>,
    pub metadata_names: Vec<String>,
    /// Fraction of detected keys that must carry a description for P3.
    pub description_threshold: f64,
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for TaxonomyConfig {
    fn default() -> Self {
        Self {
            question_words: strs(&[
                "how", "what", "why", "when", "where", "which", "who", "can", "could", "would", "should", "do", "does",
                "is", "are",
            ]),
            user_question_names: strs(&["question", "query", "ask", "prompt_question"]),
            contextual_names: strs(&["history", "background", "context", "memory", "conversation", "chat"]),
            knowledge_names: strs(&[
                "document",
                "text",
                "code",
                "report",
                "content",
                "input",
                "article",
                "doc",
                "passage",
                "transcript",
                "data",
                "email",
                "essay",
                "paragraph",
                "snippet",
                "diff",
                "source",
                "page",
                "tweet",
                "review",
                "abstract",
                "paper",
            ]),
            metadata_names: strs(&[
                "language", "username", "format", "name", "date", "style", "topic", "count", "lang", "user", "tone",
                "number", "title", "role", "time", "length", "subject", "audience", "area",
            ]),
            description_threshold: 0.5,
        }
    }
}

fn default_config() -> &'static TaxonomyConfig {
    static CFG: OnceLock<TaxonomyConfig> = OnceLock::new();
    CFG.get_or_init(TaxonomyConfig::default)
}

pub fn classify_directive_style(directive_text: &str) -> DirectiveStyle {
    classify_directive_style_with(directive_text, default_config())
}

pub fn classify_directive_style_with(directive_text: &str, cfg: &TaxonomyConfig) -> DirectiveStyle {
    if directive_text.trim_end().ends_with('?') {
        return DirectiveStyle::Question;
    }
    match directive_text.unicode_words().next() {
        Some(first) if cfg.question_words.iter().any(|w| w.eq_ignore_ascii_case(first)) => DirectiveStyle::Question,
        _ => DirectiveStyle::Instruction,
    }
}

/// Split an identifier into lowercase words: `chatHistory2` -> `chat`, `history`.
fn name_tokens(name: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for c in name.chars() {
        if !c.is_alphabetic() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        prev_lower = c.is_lowercase();
        cur.extend(c.to_lowercase());
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

fn singular(word: &str) -> &str {
    if word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") {
        &word[..word.len() - 1]
    } else {
        word
    }
}

pub fn classify_placeholder(name: &str, context_window: &str) -> PlaceholderType {
    classify_placeholder_with(name, context_window, default_config())
}

/// Name keywords first (question > context > knowledge > metadata), then the cue phrase
/// nearest before the placeholder in `context_window`.
pub fn classify_placeholder_with(name: &str, context_window: &str, cfg: &TaxonomyConfig) -> PlaceholderType {
    let tokens = name_tokens(name);
    let full = tokens.join("_");
    let hit = |list: &[String]| list.iter().any(|k| *k == full || tokens.iter().any(|t| singular(t) == k || t == k));
    let ordered = [
        (&cfg.user_question_names, PlaceholderType::UserQuestion),
        (&cfg.contextual_names, PlaceholderType::ContextualInformation),
        (&cfg.knowledge_names, PlaceholderType::KnowledgeInput),
        (&cfg.metadata_names, PlaceholderType::MetadataShortPhrase),
    ];
    for (list, ty) in ordered {
        if hit(list) {
            return ty;
        }
    }

    let lower = context_window.to_lowercase();
    let before = lower.find(&format!("{{{}}}", name.to_lowercase())).map_or(lower.as_str(), |i| &lower[..i]);
    const CUES: &[(&str, PlaceholderType)] = &[
        ("answer the", PlaceholderType::UserQuestion),
        ("question:", PlaceholderType::UserQuestion),
        ("based on the following", PlaceholderType::KnowledgeInput),
        ("the following text", PlaceholderType::KnowledgeInput),
        ("context:", PlaceholderType::ContextualInformation),
    ];
    CUES.iter()
        .filter_map(|(cue, ty)| before.rfind(cue).map(|pos| (pos, *ty)))
        .max_by_key(|(pos, _)| *pos)
        .map_or(PlaceholderType::Other, |(_, ty)| ty)
}

struct ConstraintCues {
    word_count: Regex,
    exclusion: Regex,
    inclusion: Regex,
}

fn constraint_cues() -> &'static ConstraintCues {
    static CUES: OnceLock<ConstraintCues> = OnceLock::new();
    CUES.get_or_init(|| ConstraintCues {
        word_count: Regex::new(
            r"(?x)
            \b(?:at\ most|at\ least|under|within|no\ more\ than|not\ exceed|exceed|maximum\ of|max|up\ to
               |less\ than|fewer\ than|exactly|limit(?:ed)?\ to)\ \d+
            | \b\d+\s*(?:-\s*)?(?:words?|sentences?|tokens?|characters?|paragraphs?|lines?|bullet\ points?|items?)\b",
        )
        .unwrap(),
        exclusion: Regex::new(
            r"\b(?:do not|don't|don’t|avoid|never|no other|exclude|excluding|must not|should not|shouldn't|cannot|can't|refrain|without)\b",
        )
        .unwrap(),
        inclusion: Regex::new(
            r"\b(?:includ(?:e|es|ed|ing)|must contain|should contain|focus on|ensure|make sure|always|mention)\b",
        )
        .unwrap(),
    })
}

/// Word-count cues are checked first, then negation, then inclusion.
pub fn classify_constraint(sentence: &str) -> ConstraintType {
    let lower = sentence.to_lowercase();
    let cues = constraint_cues();
    if cues.word_count.is_match(&lower) {
        ConstraintType::WordCount
    } else if cues.exclusion.is_match(&lower) {
        ConstraintType::Exclusion
    } else if cues.inclusion.is_match(&lower) {
        ConstraintType::Inclusion
    } else {
        ConstraintType::Other
    }
}

/// One attribute name found in an output-format specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonAttribute {
    pub name: String,
    pub description: Option<String>,
}

struct JsonCues {
    declared: Regex,
    colon_key: Regex,
    quoted_name: Regex,
    list_intro: Regex,
    bullet_key: Regex,
}

fn json_cues() -> &'static JsonCues {
    static CUES: OnceLock<JsonCues> = OnceLock::new();
    CUES.get_or_init(|| JsonCues {
        declared: Regex::new(r"(?i)\bjson\b|```json").unwrap(),
        colon_key: Regex::new(r#"["'“`]([A-Za-z_][A-Za-z0-9_ \-]{0,40})["'”`]\s*:"#).unwrap(),
        quoted_name: Regex::new(r#"["“`]([A-Za-z_][A-Za-z0-9_]{0,40})["”`]"#).unwrap(),
        list_intro: Regex::new(r"(?i)\b(?:keys?|fields?|attributes?|properties|named|following)\b").unwrap(),
        bullet_key: Regex::new(r"(?m)^[ \t]*(?:[-*•]|\d+[.)])[ \t]*([a-z_][a-z0-9_]*)[ \t]*(?::|-|–)[ \t]*(.+)$")
            .unwrap(),
    })
}

const TYPE_WORDS: &[&str] = &[
    "string", "str", "int", "integer", "number", "float", "double", "bool", "boolean", "true", "false", "null", "none",
    "array", "list", "object", "dict", "value", "text", "type", "optional",
];

/// Prose in a value slot: at least two words that are not bare type names.
fn descriptive(value: &str) -> Option<String> {
    let cleaned =
        value.trim().trim_end_matches([',', '}', ']']).trim().trim_matches(['"', '\'', '“', '”', '<', '>']).trim();
    let words = cleaned.unicode_words().filter(|w| !TYPE_WORDS.contains(&w.to_lowercase().as_str())).count();
    (words >= 2).then(|| cleaned.to_string())
}

/// Collect attribute names from quoted `"key": value` pairs, quoted name lists
/// introduced by words like "keys"/"fields", and `- key: explanation` bullet lists.
pub fn extract_json_attributes(text: &str) -> Vec<JsonAttribute> {
    let cues = json_cues();
    let mut attrs: Vec<JsonAttribute> = Vec::new();
    let push = |name: &str, description: Option<String>, attrs: &mut Vec<JsonAttribute>| {
        let name = name.trim().to_string();
        match attrs.iter_mut().find(|a| a.name == name) {
            Some(a) => {
                if a.description.is_none() {
                    a.description = description;
                }
            }
            None => attrs.push(JsonAttribute { name, description }),
        }
    };

    let keys: Vec<_> = cues.colon_key.captures_iter(text).collect();
    for (i, cap) in keys.iter().enumerate() {
        let whole = cap.get(0).unwrap();
        let next = keys.get(i + 1).map_or(text.len(), |c| c.get(0).unwrap().start());
        let slot = &text[whole.end()..next];
        let slot = slot.split('\n').next().unwrap_or("");
        let desc = if slot.trim_start().starts_with(['{', '[']) { None } else { descriptive(slot) };
        push(&cap[1], desc, &mut attrs);
    }

    for line in text.lines() {
        if !cues.list_intro.is_match(line) {
            continue;
        }
        let names: Vec<_> = cues.quoted_name.captures_iter(line).collect();
        for (i, cap) in names.iter().enumerate() {
            let m = cap.get(0).unwrap();
            if line[m.end()..].trim_start().starts_with(':') {
                continue;
            }
            let next = names.get(i + 1).map_or(line.len(), |c| c.get(0).unwrap().start());
            let after = line[m.end()..next].trim_start();
            let desc = if let Some(inner) = after.strip_prefix('(') {
                descriptive(inner.split(')').next().unwrap_or(""))
            } else if let Some(rest) = after.strip_prefix("- ").or_else(|| after.strip_prefix("– ")) {
                descriptive(rest)
            } else {
                None
            };
            push(&cap[1], desc, &mut attrs);
        }
    }

    for cap in cues.bullet_key.captures_iter(text) {
        push(&cap[1], descriptive(&cap[2]), &mut attrs);
    }
    attrs
}

pub fn json_declared(text: &str) -> bool {
    json_cues().declared.is_match(text)
}

pub fn detect_json_pattern(text: &str) -> JsonFormatPattern {
    detect_json_pattern_with(text, default_config().description_threshold)
}

pub fn detect_json_pattern_with(text: &str, description_threshold: f64) -> JsonFormatPattern {
    if !json_declared(text) {
        return JsonFormatPattern::NotJson;
    }
    let attrs = extract_json_attributes(text);
    if attrs.is_empty() {
        return JsonFormatPattern::JsonOutput;
    }
    let described = attrs.iter().filter(|a| a.description.is_some()).count();
    if described as f64 >= description_threshold * attrs.len() as f64 {
        JsonFormatPattern::AttributeDescriptions
    } else {
        JsonFormatPattern::AttributeNames
    }
}

//! Sentence splitting, rule-based component labelling and gold scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::similarity;
use crate::taxonomy::{classify_placeholder, PlaceholderType};
use crate::template::{scan_placeholders, ByteSpan, PromptTemplate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("template ids differ between predictions and gold labels: {0}")]
    IdMismatch(String),
    #[error("no components identified in any template; precision is undefined")]
    NoIdentified,
    #[error("invalid cue pattern `{pattern}`: {message}")]
    BadPattern { pattern: String, message: String },
    #[error("label text for `{0}` not found in template")]
    LabelTextNotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComponentKind {
    ProfileRole,
    Directive,
    Workflow,
    Context,
    Examples,
    OutputFormatStyle,
    Constraints,
    Others,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 8] = [
        Self::ProfileRole,
        Self::Directive,
        Self::Workflow,
        Self::Context,
        Self::Examples,
        Self::OutputFormatStyle,
        Self::Constraints,
        Self::Others,
    ];

    /// The seven functional kinds, `Others` excluded.
    pub const CORE: [ComponentKind; 7] = [
        Self::ProfileRole,
        Self::Directive,
        Self::Workflow,
        Self::Context,
        Self::Examples,
        Self::OutputFormatStyle,
        Self::Constraints,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ProfileRole => "Profile/Role",
            Self::Directive => "Directive",
            Self::Workflow => "Workflow",
            Self::Context => "Context",
            Self::Examples => "Examples",
            Self::OutputFormatStyle => "Output Format/Style",
            Self::Constraints => "Constraints",
            Self::Others => "Others",
        }
    }

    /// Names merged into each kind from common prompt-writing frameworks.
    pub fn aliases(self) -> &'static [&'static str] {
        match self {
            Self::ProfileRole => &["profile", "role", "persona", "capacity and role", "capacity"],
            Self::Directive => {
                &["goal", "instruction", "instructions", "statement", "objective", "system instructions", "task"]
            }
            Self::Workflow => &["workflows", "reasoning steps", "steps"],
            Self::Context => &["background", "initialization", "insights"],
            Self::Examples => &["example", "few-shot examples", "input data"],
            Self::OutputFormatStyle => &[
                "output-format",
                "output format",
                "style",
                "output indicator",
                "personality",
                "response format",
                "tone",
            ],
            Self::Constraints => &["constraint", "safeguards"],
            Self::Others => &["skill", "suggestion", "experiment", "recap"],
        }
    }

    pub fn from_name(name: &str) -> Option<ComponentKind> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name.trim()))
    }

    /// Conflict priority, higher wins.
    fn priority(self) -> u8 {
        match self {
            Self::Constraints => 7,
            Self::OutputFormatStyle => 6,
            Self::Workflow => 5,
            Self::Examples => 4,
            Self::ProfileRole => 3,
            Self::Context => 2,
            Self::Directive => 1,
            Self::Others => 0,
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ComponentKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ComponentKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(ComponentKind::from_name(&raw).unwrap_or_else(|| canonicalize_label(&raw)))
    }
}

/// Map a free-form label onto a kind by best similarity ratio over names and aliases.
pub fn canonicalize_label(raw: &str) -> ComponentKind {
    canonicalize_label_with(raw, SegmenterConfig::DEFAULT_SIMILARITY_THRESHOLD)
}

pub fn canonicalize_label_with(raw: &str, threshold: f64) -> ComponentKind {
    let needle = raw.trim().to_lowercase();
    let mut best = (0.0, ComponentKind::Others);
    for kind in ComponentKind::ALL {
        let canonical = kind.name().to_lowercase();
        for cand in std::iter::once(canonical.as_str()).chain(kind.aliases().iter().copied()) {
            let r = similarity::ratio(&needle, cand);
            if r > best.0 {
                best = (r, kind);
            }
        }
    }
    if best.0 < threshold {
        ComponentKind::Others
    } else {
        best.1
    }
}

/// One sentence of a template: lines are hard boundaries, and lines are split
/// further on terminal punctuation followed by a space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Sentence {
    pub index: usize,
    pub span: ByteSpan,
    pub line: usize,
    pub paragraph: usize,
    pub line_start: bool,
}

const ABBREVIATIONS: &[&str] = &["e.g", "i.e", "etc", "vs", "mr", "mrs", "ms", "dr", "cf"];

fn ends_with_abbreviation(before: &str) -> bool {
    let word = before.rsplit(|c: char| c.is_whitespace() || c == '(').next().unwrap_or("").to_lowercase();
    if word.is_empty() {
        return false;
    }
    ABBREVIATIONS.contains(&word.as_str())
        || word.chars().all(|c| c.is_ascii_digit())
        || (word.chars().count() == 1 && word.chars().all(char::is_alphabetic))
}

pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut paragraph = 0;
    let mut pending_break = false;
    let mut offset = 0;
    for (line_no, raw_line) in text.split('\n').enumerate() {
        let line_start_offset = offset;
        offset += raw_line.len() + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            pending_break = true;
            continue;
        }
        if pending_break && !out.is_empty() {
            paragraph += 1;
        }
        pending_break = false;

        let mut pieces = Vec::new();
        let mut piece_start = 0;
        let mut in_quote = false;
        let mut depth: i32 = 0;
        let bytes = line.as_bytes();
        for (i, c) in line.char_indices() {
            match c {
                '"' => in_quote = !in_quote,
                '{' | '[' | '(' if !in_quote => depth += 1,
                '}' | ']' | ')' if !in_quote => depth = (depth - 1).max(0),
                '.' | '!' | '?' if !in_quote && depth == 0 => {
                    let next = bytes.get(i + 1).copied();
                    if next == Some(b' ') || next == Some(b'\t') {
                        if c == '.' && ends_with_abbreviation(&line[piece_start..i]) {
                            continue;
                        }
                        pieces.push(piece_start..i + 1);
                        piece_start = i + 1;
                    }
                }
                _ => {}
            }
        }
        pieces.push(piece_start..line.len());

        let mut first = true;
        for piece in pieces {
            let s = &line[piece.clone()];
            let lead = s.len() - s.trim_start().len();
            let trimmed = s.trim();
            if trimmed.is_empty() {
                continue;
            }
            let start = line_start_offset + piece.start + lead;
            out.push(Sentence {
                index: out.len(),
                span: ByteSpan::new(start, start + trimmed.len()),
                line: line_no,
                paragraph,
                line_start: first,
            });
            first = false;
        }
    }
    out
}

/// Regex cue lists for one kind. `leading` patterns are anchored at the start of the
/// sentence (after any bullet or enumerator), `anywhere` patterns match inside it, and
/// `headers` are section titles such as `Context:` or `## Examples`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CueLexicon {
    pub leading: Vec<String>,
    pub anywhere: Vec<String>,
    pub headers: Vec<String>,
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub similarity_threshold: f64,
    pub profile_role: CueLexicon,
    pub directive: CueLexicon,
    pub workflow: CueLexicon,
    pub context: CueLexicon,
    pub examples: CueLexicon,
    pub output_format_style: CueLexicon,
    pub constraints: CueLexicon,
    pub imperative_verbs: Vec<String>,
    /// Cue-less sentences take the kind of the preceding sentence in the same paragraph.
    pub inherit_in_paragraph: bool,
}

impl SegmenterConfig {
    pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.6;

    fn lexicon(&self, kind: ComponentKind) -> Option<&CueLexicon> {
        Some(match kind {
            ComponentKind::ProfileRole => &self.profile_role,
            ComponentKind::Directive => &self.directive,
            ComponentKind::Workflow => &self.workflow,
            ComponentKind::Context => &self.context,
            ComponentKind::Examples => &self.examples,
            ComponentKind::OutputFormatStyle => &self.output_format_style,
            ComponentKind::Constraints => &self.constraints,
            ComponentKind::Others => return None,
        })
    }
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: Self::DEFAULT_SIMILARITY_THRESHOLD,
            profile_role: CueLexicon {
                leading: strs(&[
                    r"you are (?:a|an|the)\b",
                    r"you're (?:a|an|the)\b",
                    r"act as\b",
                    r"acting as\b",
                    r"i want you to act\b",
                    r"your (?:task|job|role|goal) is\b",
                    r"as an? (?:ai|expert|experienced|professional|helpful|senior)\b",
                    r"you will (?:act|play|serve) as\b",
                    r"pretend (?:to be|you are)\b",
                    r"never forget you are\b",
                ]),
                anywhere: vec![],
                headers: strs(&["role", "persona", "profile", "system role"]),
            },
            directive: CueLexicon {
                leading: vec![],
                anywhere: vec![],
                headers: strs(&["task", "instructions?", "goal", "objective", "question", "query", "request"]),
            },
            workflow: CueLexicon {
                leading: strs(&[
                    r"step \d+\b",
                    r"first,",
                    r"then,",
                    r"next,",
                    r"finally,",
                    r"after that\b",
                    r"(?:start|begin) (?:with|by)\b",
                ]),
                anywhere: strs(&[
                    r"follow(?:ing)? these steps",
                    r"the following steps",
                    r"step[- ]by[- ]step",
                    r", then\b",
                    r"\bat a time\b",
                ]),
                headers: strs(&["steps", "workflow", "process", "procedure"]),
            },
            context: CueLexicon {
                leading: strs(&[
                    r"you are given\b",
                    r"you will be given\b",
                    r"you have access to\b",
                    r"here is (?:the|some)\b",
                    r"here are (?:the|some)\b",
                    r"below is\b",
                    r"below are\b",
                    r"given the following\b",
                ]),
                anywhere: strs(&[r"the following information", r"the following context"]),
                headers: strs(&[
                    "context",
                    "background",
                    "document",
                    "documents",
                    "text",
                    "article",
                    "information",
                    "knowledge",
                    "chat history",
                    "history",
                    "conversation",
                    "code",
                ]),
            },
            examples: CueLexicon {
                leading: vec![],
                anywhere: strs(&[r"\bfor example\b", r"\bexamples?\b", r"\be\.g\.", r"\bfor instance\b"]),
                headers: strs(&["examples?", "sample", "few-shot examples"]),
            },
            output_format_style: CueLexicon {
                leading: strs(&[r"respond with\b", r"answer in\b", r"your (?:response|answer|output) should\b"]),
                anywhere: strs(&[
                    r"in the following format",
                    r"\brespond in\b",
                    r"\boutput json\b",
                    r"\bjson\b",
                    r"\byaml\b",
                    r"\bmarkdown\b",
                    r"\bcsv\b",
                    r"\bbullet points?\b",
                    r"\bformat(?:ted)?\b",
                    r"\btone\b",
                    r"^```",
                ]),
                headers: strs(&["output", "output format", "response format", "format", "style", "tone"]),
            },
            constraints: CueLexicon {
                leading: strs(&[
                    r"do not\b",
                    r"don't\b",
                    r"don’t\b",
                    r"avoid\b",
                    r"never\b",
                    r"only\b",
                    r"at (?:most|least) \d+",
                    r"no more than\b",
                    r"(?:you )?(?:must|should) not\b",
                    r"(?:please )?(?:do not|don't)\b",
                    r"make sure (?:not|that you do not|you do not)\b",
                    r"refrain\b",
                    r"under no circumstances\b",
                    r"if you (?:don't|do not) know\b",
                    r"keep (?:it|your|the) (?:answer|response|output|summary)\b",
                ]),
                anywhere: strs(&[
                    r"\b(?:must|should) (?:not|never)\b",
                    r"\b(?:mustn't|shouldn't)\b",
                    r"\bsay (?:that )?you (?:don't|do not) know\b",
                ]),
                headers: strs(&["constraints?", "rules", "restrictions", "guidelines", "requirements", "notes?"]),
            },
            imperative_verbs: strs(&[
                "analyze",
                "analyse",
                "answer",
                "ask",
                "assess",
                "break",
                "build",
                "calculate",
                "categorize",
                "check",
                "choose",
                "classify",
                "compare",
                "compose",
                "convert",
                "correct",
                "count",
                "create",
                "decide",
                "define",
                "describe",
                "design",
                "detect",
                "determine",
                "develop",
                "draft",
                "edit",
                "estimate",
                "evaluate",
                "explain",
                "extract",
                "fill",
                "find",
                "fix",
                "generate",
                "give",
                "help",
                "identify",
                "improve",
                "include",
                "infer",
                "keep",
                "label",
                "list",
                "make",
                "map",
                "name",
                "organise",
                "organize",
                "outline",
                "paraphrase",
                "parse",
                "plan",
                "predict",
                "prepare",
                "produce",
                "propose",
                "provide",
                "rank",
                "rate",
                "read",
                "recommend",
                "refactor",
                "rephrase",
                "reply",
                "respond",
                "return",
                "review",
                "rewrite",
                "score",
                "select",
                "shorten",
                "simplify",
                "solve",
                "sort",
                "state",
                "suggest",
                "summarise",
                "summarize",
                "tag",
                "tell",
                "transform",
                "translate",
                "use",
                "verify",
                "write",
            ]),
            inherit_in_paragraph: true,
        }
    }
}

struct CompiledLexicon {
    kind: ComponentKind,
    leading: Option<Regex>,
    anywhere: Option<Regex>,
    headers: Option<Regex>,
}

fn alternation(patterns: &[String], prefix: &str, suffix: &str) -> Result<Option<Regex>, SegmentError> {
    if patterns.is_empty() {
        return Ok(None);
    }
    let body = patterns.iter().map(|p| format!("(?:{p})")).collect::<Vec<_>>().join("|");
    let src = format!("{prefix}(?:{body}){suffix}");
    Regex::new(&src).map(Some).map_err(|e| SegmentError::BadPattern { pattern: src, message: e.to_string() })
}

/// Per-sentence labelling result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SentenceLabel {
    pub sentence: usize,
    pub kind: ComponentKind,
    /// Every kind whose cues fired, before priority resolution.
    pub matched: Vec<ComponentKind>,
    pub inherited: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComponentSpan {
    pub kind: ComponentKind,
    pub span: ByteSpan,
    pub sentence_range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segmentation {
    pub sentences: Vec<Sentence>,
    pub labels: Vec<SentenceLabel>,
    pub spans: Vec<ComponentSpan>,
}

impl Segmentation {
    /// Sentences where two or more lexicons fired.
    pub fn ambiguous_sentences(&self) -> Vec<usize> {
        self.labels.iter().filter(|l| l.matched.len() > 1).map(|l| l.sentence).collect()
    }

    pub fn spans_of(&self, kind: ComponentKind) -> impl Iterator<Item = &ComponentSpan> {
        self.spans.iter().filter(move |s| s.kind == kind)
    }
}

pub struct Segmenter {
    lexicons: Vec<CompiledLexicon>,
    verbs: BTreeSet<String>,
    bullet: Regex,
    enumerator: Regex,
    header_prefix: Regex,
    schema_line: Regex,
    bare_header: Regex,
    weak_format: Regex,
    inherit: bool,
}

impl Segmenter {
    pub fn new(config: &SegmenterConfig) -> Result<Self, SegmentError> {
        let mut lexicons = Vec::new();
        for kind in ComponentKind::CORE {
            let lex = config.lexicon(kind).expect("core kind has a lexicon");
            lexicons.push(CompiledLexicon {
                kind,
                leading: alternation(&lex.leading, "^", "")?,
                anywhere: alternation(&lex.anywhere, "", "")?,
                headers: alternation(&lex.headers, r"^(?:#+\s*)?(?:\*\*)?", r"(?:\*\*)?\s*(?::|$)")?,
            });
        }
        Ok(Self {
            lexicons,
            verbs: config.imperative_verbs.iter().map(|v| v.to_lowercase()).collect(),
            bullet: Regex::new(r"^(?:[-*•>]|\d+[.)]|[a-z][.)]|#+)\s+").unwrap(),
            enumerator: Regex::new(r"^\s*(?:\d+[.):]|step \d+\b)").unwrap(),
            header_prefix: Regex::new(r"^[A-Za-z][\w ]{0,30}:\s*").unwrap(),
            schema_line: Regex::new(r#"^(?:\{\{?\s*$|\[\s*$|\{\{?\s*"|"[A-Za-z_][\w ]*"\s*:)"#).unwrap(),
            bare_header: Regex::new(r"^(?:#+\s*)?[A-Za-z][\w '-]{0,30}:$").unwrap(),
            weak_format: Regex::new(
                r"(?i)\b(?:only|words?|sentences?|paragraphs?|characters?|lines?|list|notation|person|headings?|yes or no|by (?:week|day|month)|mood|voice|comma-separated|numbered|checklist|table)\b",
            )
            .unwrap(),
            inherit: config.inherit_in_paragraph,
        })
    }

    pub fn segment(&self, template: &PromptTemplate) -> Segmentation {
        let text = &template.text;
        let sentences = split_sentences(text);
        let lines: Vec<&str> = text.split('\n').collect();
        let enumerated: Vec<bool> = lines.iter().map(|l| self.enumerator.is_match(&l.to_lowercase())).collect();
        let in_enumerated_run = |line: usize| {
            enumerated[line]
                && ((line > 0 && enumerated[line - 1]) || enumerated.get(line + 1).copied().unwrap_or(false))
        };

        let bare: Vec<bool> = sentences.iter().map(|s| self.bare_header.is_match(&text[s.span.range()])).collect();
        let mut labels: Vec<SentenceLabel> = Vec::with_capacity(sentences.len());
        let mut seen_directive = false;
        for s in &sentences {
            let raw = &text[s.span.range()];
            let mut matched = self.cue_matches(raw);
            if s.line_start && in_enumerated_run(s.line) && !matched.contains(&ComponentKind::Workflow) {
                matched.push(ComponentKind::Workflow);
            }
            let mut imperative_only = matched == [ComponentKind::Directive] && self.starts_imperative(raw);
            // a cue-less bare header opens a new section, so nothing inherits across it
            let prev = labels
                .last()
                .filter(|_| self.inherit)
                .filter(|l| sentences[l.sentence].paragraph == s.paragraph)
                .filter(|l| !(bare[l.sentence] && l.matched.is_empty()))
                .map(|l| l.kind);
            // a bare schema line opening a paragraph, e.g. `{` or `"key": ...`
            if matched.is_empty() && prev.is_none() && self.schema_line.is_match(raw.trim()) {
                matched.push(ComponentKind::OutputFormatStyle);
            }
            // a follow-up instruction about length or shape describes the output
            if imperative_only && seen_directive && self.weak_format.is_match(raw) {
                matched = vec![ComponentKind::OutputFormatStyle];
                imperative_only = false;
            }

            let (kind, inherited) = match (matched.iter().max_by_key(|k| k.priority()), prev) {
                (None, Some(ComponentKind::Directive | ComponentKind::ProfileRole)) if self.holds_input_slot(raw) => {
                    (ComponentKind::Context, false)
                }
                (None, Some(ComponentKind::ProfileRole)) if !seen_directive && !self.addresses_model(raw) => {
                    (ComponentKind::Directive, false)
                }
                (None, Some(p)) => (p, true),
                (None, None) => (ComponentKind::Others, false),
                (
                    Some(_),
                    Some(p @ (ComponentKind::Constraints | ComponentKind::Workflow | ComponentKind::OutputFormatStyle)),
                ) if imperative_only => (p, true),
                (Some(k), _) => (*k, false),
            };
            seen_directive |= kind == ComponentKind::Directive;
            matched.sort();
            labels.push(SentenceLabel { sentence: s.index, kind, matched, inherited });
        }

        // Bare headers take the kind of the section they open; one that closes the
        // template is an answer primer (`Sentiment:`) and so belongs to the format.
        for i in (0..labels.len()).rev() {
            if !bare[i] {
                continue;
            }
            if i + 1 == labels.len() {
                labels[i].kind = ComponentKind::OutputFormatStyle;
            } else if labels[i].matched.is_empty() || labels[i].inherited {
                labels[i].kind = labels[i + 1].kind;
                labels[i].inherited = true;
            }
        }

        let mut spans: Vec<ComponentSpan> = Vec::new();
        for (s, l) in sentences.iter().zip(&labels) {
            match spans.last_mut() {
                Some(last) if last.kind == l.kind => {
                    last.span.end = s.span.end;
                    last.sentence_range.end = s.index + 1;
                }
                _ => spans.push(ComponentSpan { kind: l.kind, span: s.span, sentence_range: s.index..s.index + 1 }),
            }
        }
        Segmentation { sentences, labels, spans }
    }

    /// Contains a placeholder other than a user question.
    fn holds_input_slot(&self, raw: &str) -> bool {
        scan_placeholders(raw).iter().any(|p| classify_placeholder(&p.name, raw) != PlaceholderType::UserQuestion)
    }

    fn addresses_model(&self, raw: &str) -> bool {
        let first: String =
            raw.trim_start().chars().take_while(|c| c.is_alphabetic()).collect::<String>().to_lowercase();
        matches!(first.as_str(), "you" | "your" | "you're")
    }

    fn starts_imperative(&self, raw: &str) -> bool {
        let body = self.strip_bullet(&raw.to_lowercase());
        let body = body.strip_prefix("please ").unwrap_or(&body).to_string();
        let first: String = body.chars().take_while(|c| c.is_alphabetic()).collect();
        self.verbs.contains(&first)
    }

    fn strip_bullet(&self, lower: &str) -> String {
        let trimmed = lower.trim_start();
        let mut s = trimmed;
        // bullets can stack, e.g. "- 1. do x"
        while let Some(m) = self.bullet.find(s) {
            s = &s[m.end()..];
        }
        s.to_string()
    }

    fn cue_matches(&self, raw: &str) -> Vec<ComponentKind> {
        let lower = raw.to_lowercase();
        let body = self.strip_bullet(&lower);
        let body = body.trim_start_matches(['*', '_', ' ']).to_string();
        let mut out = Vec::new();
        for lex in &self.lexicons {
            let hit = lex.leading.as_ref().is_some_and(|r| r.is_match(&body))
                || lex.anywhere.as_ref().is_some_and(|r| r.is_match(&body))
                || lex.headers.as_ref().is_some_and(|r| r.is_match(&body));
            if hit {
                out.push(lex.kind);
            }
        }
        if let Some(kind) = self.lone_placeholder_kind(raw) {
            if !out.contains(&kind) {
                out.push(kind);
            }
        }
        if !out.contains(&ComponentKind::Directive) && (self.starts_imperative(raw) || lower.trim_end().ends_with('?'))
        {
            out.push(ComponentKind::Directive);
        }
        out
    }

    /// A line holding only placeholders (optionally behind a short `Header:`) takes its
    /// kind from what the placeholders carry: questions are directives, other slots context.
    fn lone_placeholder_kind(&self, raw: &str) -> Option<ComponentKind> {
        let body = self.header_prefix.find(raw).map_or(raw, |m| &raw[m.end()..]);
        let slots = scan_placeholders(body);
        if slots.is_empty() {
            return None;
        }
        let mut rest = body.to_string();
        for p in slots.iter().rev() {
            rest.replace_range(p.span.range(), "");
        }
        if rest.chars().any(|c| c.is_alphanumeric()) {
            return None;
        }
        let types: Vec<PlaceholderType> = slots.iter().map(|p| classify_placeholder(&p.name, raw)).collect();
        if types.contains(&PlaceholderType::UserQuestion) {
            Some(ComponentKind::Directive)
        } else {
            Some(ComponentKind::Context)
        }
    }
}

fn default_segmenter() -> &'static Segmenter {
    static SEG: OnceLock<Segmenter> = OnceLock::new();
    SEG.get_or_init(|| Segmenter::new(&SegmenterConfig::default()).expect("default lexicons compile"))
}

/// Segment with the built-in lexicons.
pub fn segment(template: &PromptTemplate) -> Vec<ComponentSpan> {
    default_segmenter().segment(template).spans
}

pub fn segment_full(template: &PromptTemplate) -> Segmentation {
    default_segmenter().segment(template)
}

/// Kinds present in the segmentation, `Others` excluded.
pub fn component_presence(spans: &[ComponentSpan]) -> BTreeSet<ComponentKind> {
    spans.iter().map(|s| s.kind).filter(|k| *k != ComponentKind::Others).collect()
}

/// Kinds by first occurrence, `Others` excluded.
pub fn component_order(spans: &[ComponentSpan]) -> Vec<ComponentKind> {
    let mut sorted: Vec<&ComponentSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| s.span.start);
    let mut seen = BTreeSet::new();
    sorted.into_iter().map(|s| s.kind).filter(|k| *k != ComponentKind::Others && seen.insert(*k)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub sentence: usize,
    pub kind: ComponentKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabeling {
    pub id: String,
    pub labels: Vec<GoldLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchScores {
    pub precision: f64,
    pub p_full: f64,
    pub p_partial: f64,
    pub identified: usize,
    pub correct: usize,
    pub templates_with_identified: usize,
}

/// Component-level precision and prompt-level full/partial match rates.
///
/// A predicted component is all sentences given one kind (Others excluded) in one
/// template; it is correct when a strict majority of those sentences carry that kind
/// in the gold labelling.
pub fn score_against_gold(
    predicted: &[(String, Vec<ComponentSpan>)],
    gold: &[GoldLabeling],
) -> Result<MatchScores, SegmentError> {
    let gold_by_id: BTreeMap<&str, &GoldLabeling> = gold.iter().map(|g| (g.id.as_str(), g)).collect();
    let pred_ids: BTreeSet<&str> = predicted.iter().map(|(id, _)| id.as_str()).collect();
    let gold_ids: BTreeSet<&str> = gold_by_id.keys().copied().collect();
    if pred_ids != gold_ids || pred_ids.len() != predicted.len() {
        let diff: Vec<&str> = pred_ids.symmetric_difference(&gold_ids).copied().collect();
        let detail = if diff.is_empty() { "duplicate ids".to_string() } else { diff.join(", ") };
        return Err(SegmentError::IdMismatch(detail));
    }

    let (mut identified, mut correct, mut with_identified, mut full, mut partial) = (0, 0, 0, 0, 0);
    for (id, spans) in predicted {
        let gold_kinds: BTreeMap<usize, ComponentKind> =
            gold_by_id[id.as_str()].labels.iter().map(|l| (l.sentence, l.kind)).collect();
        let mut components: BTreeMap<ComponentKind, BTreeSet<usize>> = BTreeMap::new();
        for s in spans.iter().filter(|s| s.kind != ComponentKind::Others) {
            components.entry(s.kind).or_default().extend(s.sentence_range.clone());
        }
        if components.is_empty() {
            continue;
        }
        with_identified += 1;
        let mut right = 0;
        for (kind, sentences) in &components {
            let agree = sentences.iter().filter(|i| gold_kinds.get(i) == Some(kind)).count();
            if agree * 2 > sentences.len() {
                right += 1;
            }
        }
        identified += components.len();
        correct += right;
        if right == components.len() {
            full += 1;
        }
        if right > 0 {
            partial += 1;
        }
    }
    if identified == 0 {
        return Err(SegmentError::NoIdentified);
    }
    Ok(MatchScores {
        precision: correct as f64 / identified as f64,
        p_full: full as f64 / with_identified as f64,
        p_partial: partial as f64 / with_identified as f64,
        identified,
        correct,
        templates_with_identified: with_identified,
    })
}

/// Convert an external labeller's `{kind name -> text}` answer into spans. Keys go
/// through [`canonicalize_label_with`]; each text is located verbatim in the template.
pub fn spans_from_labels(
    template: &PromptTemplate,
    labels: &BTreeMap<String, String>,
    threshold: f64,
) -> Result<Vec<ComponentSpan>, SegmentError> {
    let sentences = split_sentences(&template.text);
    let mut spans = Vec::new();
    for (key, value) in labels {
        let needle = value.trim();
        if needle.is_empty() {
            continue;
        }
        let kind = canonicalize_label_with(key, threshold);
        let start = template.text.find(needle).ok_or_else(|| SegmentError::LabelTextNotFound(key.clone()))?;
        let span = ByteSpan::new(start, start + needle.len());
        let covered: Vec<usize> =
            sentences.iter().filter(|s| s.span.start < span.end && span.start < s.span.end).map(|s| s.index).collect();
        let sentence_range = match (covered.first(), covered.last()) {
            (Some(a), Some(b)) => *a..*b + 1,
            _ => continue,
        };
        spans.push(ComponentSpan { kind, span, sentence_range });
    }
    spans.sort_by_key(|s| (s.span.start, s.kind));
    Ok(spans)
}

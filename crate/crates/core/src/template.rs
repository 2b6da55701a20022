//! Placeholder grammar, template parsing and rendering.
//!
//! A placeholder is `{{IDENT}}` or `{IDENT}` where `IDENT` is
//! `[A-Za-z_][A-Za-z0-9_]*`. Anything else between braces (JSON literals,
//! prose, nested braces) is static text. Double braces are tried first at
//! every offset so `{{q}}` is never read as `{` + `{q}` + `}`.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template text is empty")]
    EmptyText,
    #[error("template text is not valid UTF-8 (at byte {0})")]
    MalformedUtf8(usize),
    #[error("no binding for placeholder `{0}`")]
    MissingBinding(String),
    #[error("placeholder `{0}` does not belong to this template")]
    ForeignPlaceholder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlaceholderSyntax {
    SingleBrace,
    DoubleBrace,
}

/// Half-open byte interval into a template's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ByteSpan {
    pub start: usize,
    pub end: usize,
}

impl ByteSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, other: &ByteSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placeholder {
    pub name: String,
    pub syntax: PlaceholderSyntax,
    pub span: ByteSpan,
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
    pub placeholders: Vec<Placeholder>,
    pub char_length: usize,
}

/// Which third of the template a placeholder starts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PositionThird {
    Beginning,
    Middle,
    End,
}

impl PositionThird {
    pub const ALL: [PositionThird; 3] = [Self::Beginning, Self::Middle, Self::End];

    pub fn name(self) -> &'static str {
        match self {
            Self::Beginning => "Beginning",
            Self::Middle => "Middle",
            Self::End => "End",
        }
    }
}

/// A render result plus binding names that matched no placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub unused_bindings: Vec<String>,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Length of the identifier starting at `at`, or 0.
fn ident_len(bytes: &[u8], at: usize) -> usize {
    if at >= bytes.len() || !is_ident_start(bytes[at]) {
        return 0;
    }
    let mut end = at + 1;
    while end < bytes.len() && is_ident_continue(bytes[end]) {
        end += 1;
    }
    end - at
}

/// Try to match a placeholder at byte offset `at`.
fn match_at(bytes: &[u8], at: usize) -> Option<(PlaceholderSyntax, usize, Range<usize>)> {
    if bytes.get(at) != Some(&b'{') {
        return None;
    }
    if bytes.get(at + 1) == Some(&b'{') {
        let n = ident_len(bytes, at + 2);
        let close = at + 2 + n;
        if n > 0 && bytes.get(close) == Some(&b'}') && bytes.get(close + 1) == Some(&b'}') {
            return Some((PlaceholderSyntax::DoubleBrace, close + 2, at + 2..close));
        }
    }
    let n = ident_len(bytes, at + 1);
    let close = at + 1 + n;
    if n > 0 && bytes.get(close) == Some(&b'}') {
        return Some((PlaceholderSyntax::SingleBrace, close + 1, at + 1..close));
    }
    None
}

/// Scan `text` for placeholders, left to right, non-overlapping.
pub fn scan_placeholders(text: &str) -> Vec<Placeholder> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some((syntax, end, name)) = match_at(bytes, i) {
                out.push(Placeholder {
                    name: text[name].to_string(),
                    syntax,
                    span: ByteSpan::new(i, end),
                    ordinal: out.len(),
                });
                i = end;
                continue;
            }
        }
        i += 1;
    }
    out
}

pub fn parse_template(text: &str, id: &str) -> Result<PromptTemplate, TemplateError> {
    if text.trim().is_empty() {
        return Err(TemplateError::EmptyText);
    }
    Ok(PromptTemplate {
        id: id.to_string(),
        text: text.to_string(),
        placeholders: scan_placeholders(text),
        char_length: text.chars().count(),
    })
}

/// Parse raw bytes, rejecting invalid UTF-8.
pub fn parse_template_bytes(bytes: &[u8], id: &str) -> Result<PromptTemplate, TemplateError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TemplateError::MalformedUtf8(e.valid_up_to()))?;
    parse_template(text, id)
}

impl PromptTemplate {
    /// Distinct placeholder names in first-occurrence order.
    pub fn placeholder_names(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.placeholders.iter().filter(|p| seen.insert(p.name.as_str())).map(|p| p.name.as_str()).collect()
    }

    pub fn byte_len(&self) -> usize {
        self.text.len()
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<Rendered, TemplateError> {
        render(self, bindings)
    }
}

pub fn render(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<Rendered, TemplateError> {
    if let Some(missing) = template.placeholders.iter().find(|p| !bindings.contains_key(&p.name)) {
        return Err(TemplateError::MissingBinding(missing.name.clone()));
    }
    let mut out = String::with_capacity(template.text.len());
    let mut cursor = 0;
    for p in &template.placeholders {
        out.push_str(&template.text[cursor..p.span.start]);
        out.push_str(&bindings[&p.name]);
        cursor = p.span.end;
    }
    out.push_str(&template.text[cursor..]);
    let used: BTreeSet<&str> = template.placeholders.iter().map(|p| p.name.as_str()).collect();
    let unused_bindings = bindings.keys().filter(|k| !used.contains(k.as_str())).cloned().collect();
    Ok(Rendered { text: out, unused_bindings })
}

/// Third of the template (by byte offset of the span start) the placeholder falls in.
pub fn placeholder_position(template: &PromptTemplate, p: &Placeholder) -> Result<PositionThird, TemplateError> {
    if !template.placeholders.iter().any(|q| q == p) {
        return Err(TemplateError::ForeignPlaceholder(p.name.clone()));
    }
    Ok(third_of(p.span.start, template.byte_len()))
}

/// `offset / len` bucketed into [0,1/3), [1/3,2/3), [2/3,1], in exact integer arithmetic.
pub fn third_of(offset: usize, len: usize) -> PositionThird {
    let (o, l) = (offset as u128 * 3, len as u128);
    if o < l {
        PositionThird::Beginning
    } else if o < 2 * l {
        PositionThird::Middle
    } else {
        PositionThird::End
    }
}

/// Number of UAX-29 word tokens that contain a letter or digit.
pub fn token_count(text: &str) -> usize {
    text.unicode_words().count()
}

pub fn is_template(text: &str) -> bool {
    !scan_placeholders(text).is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(t: &PromptTemplate) -> Vec<(&str, PlaceholderSyntax)> {
        t.placeholders.iter().map(|p| (p.name.as_str(), p.syntax)).collect()
    }

    #[test]
    fn single_placeholder() {
        let t = parse_template("Suggest songs for {user_requirement}.", "t").unwrap();
        assert_eq!(names(&t), vec![("user_requirement", PlaceholderSyntax::SingleBrace)]);
        assert_eq!(&t.text[t.placeholders[0].span.range()], "{user_requirement}");
    }

    #[test]
    fn json_literal_is_static() {
        let t = parse_template("Return { \"summary\": \"x\" } as output", "t").unwrap();
        assert!(t.placeholders.is_empty());
        assert!(!is_template("JSON: { \"k\": 1 }"));
    }

    #[test]
    fn mixed_syntax() {
        let t = parse_template("Q: {{question}} Ctx: {context}", "t").unwrap();
        assert_eq!(
            names(&t),
            vec![("question", PlaceholderSyntax::DoubleBrace), ("context", PlaceholderSyntax::SingleBrace)]
        );
        assert_eq!(t.placeholders[1].ordinal, 1);
    }

    #[test]
    fn rejected_contents() {
        for s in ["{}", "{ a}", "{a b}", "{a:b}", "{a,b}", "{\"a\"}", "{a\n}", "{1a}", "{a-b}", "{{}}"] {
            assert!(!is_template(s), "{s:?}");
        }
        // nested braces: the inner identifier is still a slot
        let t = parse_template("{a{b}c}", "t").unwrap();
        assert_eq!(names(&t), vec![("b", PlaceholderSyntax::SingleBrace)]);
    }

    #[test]
    fn brace_runs() {
        let t = parse_template("{{{x}}}", "t").unwrap();
        assert_eq!(t.placeholders[0].span, ByteSpan::new(1, 6));
        assert_eq!(t.placeholders[0].syntax, PlaceholderSyntax::DoubleBrace);
        let t = parse_template("{{x}", "t").unwrap();
        assert_eq!(t.placeholders[0].span, ByteSpan::new(1, 4));
        assert_eq!(t.placeholders[0].syntax, PlaceholderSyntax::SingleBrace);
    }

    #[test]
    fn bracket_slots_are_not_placeholders() {
        assert!(!is_template("Topic 1: [Title] - [One-sentence explanation]"));
    }

    #[test]
    fn empty_and_bad_utf8() {
        assert_eq!(parse_template("  \n", "t"), Err(TemplateError::EmptyText));
        assert_eq!(parse_template_bytes(b"ab\xffc", "t"), Err(TemplateError::MalformedUtf8(2)));
    }

    #[test]
    fn char_length_counts_scalars() {
        let t = parse_template("héllo {x}", "t").unwrap();
        assert_eq!(t.char_length, 9);
        assert_eq!(t.byte_len(), 10);
    }

    #[test]
    fn render_examples() {
        let b = |pairs: &[(&str, &str)]| -> BTreeMap<String, String> {
            pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
        };
        let t = parse_template("Hi {name}", "t").unwrap();
        assert_eq!(render(&t, &b(&[("name", "Ada")])).unwrap().text, "Hi Ada");

        let t = parse_template("No slots here.", "t").unwrap();
        assert_eq!(render(&t, &b(&[])).unwrap().text, "No slots here.");

        let t = parse_template("{a}{a}", "t").unwrap();
        assert_eq!(render(&t, &b(&[("a", "x")])).unwrap().text, "xx");

        let t = parse_template("{{q}} and {c}", "t").unwrap();
        let r = render(&t, &b(&[("q", "1"), ("c", "2"), ("z", "3")])).unwrap();
        assert_eq!(r.text, "1 and 2");
        assert_eq!(r.unused_bindings, vec!["z".to_string()]);

        assert_eq!(render(&t, &b(&[("q", "1")])), Err(TemplateError::MissingBinding("c".into())));
    }

    #[test]
    fn thirds() {
        let t = parse_template("{a} bcdef", "t").unwrap();
        assert_eq!(placeholder_position(&t, &t.placeholders[0]), Ok(PositionThird::Beginning));

        // 9 bytes, slot at offset 3 = exactly 1/3
        let t = parse_template("abc{x}def", "t").unwrap();
        assert_eq!(placeholder_position(&t, &t.placeholders[0]), Ok(PositionThird::Middle));
        assert_eq!(third_of(6, 9), PositionThird::End);
        assert_eq!(third_of(5, 9), PositionThird::Middle);

        // 90 bytes, slot at 75 -> 0.833
        let text = format!("{}{{slot}}{}", "a".repeat(75), "b".repeat(9));
        assert_eq!(text.len(), 90);
        let t = parse_template(&text, "t").unwrap();
        assert_eq!(placeholder_position(&t, &t.placeholders[0]), Ok(PositionThird::End));

        let other = parse_template("{zzz}", "o").unwrap();
        assert!(matches!(placeholder_position(&t, &other.placeholders[0]), Err(TemplateError::ForeignPlaceholder(_))));
    }

    #[test]
    fn tokens() {
        assert_eq!(token_count(""), 0);
        assert_eq!(token_count("a b c d e"), 5);
        assert_eq!(token_count("You are an AI assistant."), 5);
        assert_eq!(token_count("a b c d"), 4);
    }

    #[test]
    fn is_template_examples() {
        assert!(is_template("Summarize {doc}"));
        assert!(!is_template("Summarize the report"));
    }
}

//! Fixture loaders shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;

use promptscope::component::{split_sentences, GoldLabel, GoldLabeling};
use promptscope::ComponentKind;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub struct GoldTemplate {
    pub id: String,
    pub text: String,
    pub sentences: Vec<String>,
    pub kinds: Vec<ComponentKind>,
}

impl GoldTemplate {
    pub fn labeling(&self) -> GoldLabeling {
        GoldLabeling {
            id: self.id.clone(),
            labels: self.kinds.iter().enumerate().map(|(sentence, kind)| GoldLabel { sentence, kind: *kind }).collect(),
        }
    }
}

fn kind_tag(tag: &str) -> ComponentKind {
    match tag {
        "Role" => ComponentKind::ProfileRole,
        "Directive" => ComponentKind::Directive,
        "Context" => ComponentKind::Context,
        "Workflow" => ComponentKind::Workflow,
        "Examples" => ComponentKind::Examples,
        "Output" => ComponentKind::OutputFormatStyle,
        "Constraints" => ComponentKind::Constraints,
        "Others" => ComponentKind::Others,
        other => panic!("unknown kind tag {other}"),
    }
}

/// Parses the `=== id` / `[Kind] sentence` annotation format.
pub fn load_gold(rel: &str) -> Vec<GoldTemplate> {
    let raw = read_fixture(rel);
    let mut out: Vec<GoldTemplate> = Vec::new();
    let mut lines: Vec<String> = Vec::new();
    let flush = |id: Option<String>,
                 lines: &mut Vec<String>,
                 out: &mut Vec<GoldTemplate>,
                 sentences: &mut Vec<String>,
                 kinds: &mut Vec<ComponentKind>| {
        if let Some(id) = id {
            let text = lines.join("\n").trim_end().to_string();
            out.push(GoldTemplate { id, text, sentences: std::mem::take(sentences), kinds: std::mem::take(kinds) });
        }
        lines.clear();
    };
    let mut id = None;
    let mut sentences = Vec::new();
    let mut kinds = Vec::new();
    for line in raw.lines() {
        if line.starts_with('#') && id.is_none() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("=== ") {
            flush(id.take(), &mut lines, &mut out, &mut sentences, &mut kinds);
            id = Some(rest.trim().to_string());
            continue;
        }
        if line.trim().is_empty() {
            if !lines.is_empty() {
                lines.push(String::new());
            }
            continue;
        }
        let mut parts = Vec::new();
        for seg in line.split(" || ") {
            let seg = seg.trim();
            let close = seg.find("] ").unwrap_or_else(|| panic!("bad annotation: {seg}"));
            kinds.push(kind_tag(&seg[1..close]));
            let s = seg[close + 2..].to_string();
            parts.push(s.clone());
            sentences.push(s);
        }
        lines.push(parts.join(" "));
    }
    flush(id, &mut lines, &mut out, &mut sentences, &mut kinds);
    for t in &out {
        let split: Vec<&str> = split_sentences(&t.text).iter().map(|s| &t.text[s.span.range()]).collect();
        assert_eq!(split, t.sentences, "{}: splitter disagrees with the annotation", t.id);
    }
    out
}

pub struct Block {
    pub id: String,
    pub tag: String,
    pub text: String,
}

/// `=== id TAG` headers followed by verbatim text up to the next header.
pub fn load_blocks(rel: &str) -> Vec<Block> {
    let raw = read_fixture(rel);
    let mut out: Vec<Block> = Vec::new();
    for line in raw.lines() {
        if let Some(rest) = line.strip_prefix("=== ") {
            let (id, tag) = rest.trim().split_once(' ').unwrap_or((rest.trim(), ""));
            out.push(Block { id: id.into(), tag: tag.trim().into(), text: String::new() });
        } else if let Some(b) = out.last_mut() {
            if !b.text.is_empty() {
                b.text.push('\n');
            }
            b.text.push_str(line);
        }
    }
    for b in &mut out {
        b.text = b.text.trim_end().to_string();
    }
    out
}

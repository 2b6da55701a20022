//! Reference routines written independently of the library code they check.

use std::collections::BTreeMap;

use promptscope::{ComponentKind, DirectiveStyle};
use regex::Regex;
use serde_json::Value;

/// Placeholders as (start, end, name): leftmost, non-overlapping, double brace preferred.
pub fn placeholders(text: &str) -> Vec<(usize, usize, String)> {
    let re = Regex::new(r"\{\{([A-Za-z_][A-Za-z0-9_]*)\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap();
    re.captures_iter(text)
        .map(|c| {
            let m = c.get(0).unwrap();
            let name = c.get(1).or(c.get(2)).unwrap().as_str().to_string();
            (m.start(), m.end(), name)
        })
        .collect()
}

/// If the whole trimmed output is wrapped in ``` fences, drop them and an optional
/// language word; the remainder must then parse as a JSON object.
pub fn format_following(output: &str) -> u8 {
    let t = output.trim();
    let body = if t.len() >= 6 && t.starts_with("```") && t.ends_with("```") {
        let inner = &t[3..t.len() - 3];
        match inner.split_once('\n') {
            Some((lang, rest)) if lang.chars().all(|c| c.is_ascii_alphanumeric()) => rest,
            _ => inner,
        }
    } else {
        t
    };
    u8::from(matches!(serde_json::from_str::<Value>(body.trim()), Ok(Value::Object(_))))
}

/// Adjacent-pair counts by direct enumeration.
pub fn pair_counts(orders: &[Vec<ComponentKind>]) -> BTreeMap<(ComponentKind, ComponentKind), u64> {
    let mut counts = BTreeMap::new();
    for order in orders {
        for i in 0..order.len().saturating_sub(1) {
            *counts.entry((order[i], order[i + 1])).or_insert(0) += 1;
        }
    }
    counts
}

const QUESTION_WORDS: [&str; 15] = [
    "how", "what", "why", "when", "where", "which", "who", "can", "could", "would", "should", "do", "does", "is", "are",
];

/// Question word first, or a trailing question mark.
pub fn directive_style(text: &str) -> DirectiveStyle {
    let first =
        text.split(|c: char| !c.is_alphanumeric() && c != '\'').find(|w| !w.is_empty()).unwrap_or("").to_lowercase();
    if text.trim_end().ends_with('?') || QUESTION_WORDS.contains(&first.as_str()) {
        DirectiveStyle::Question
    } else {
        DirectiveStyle::Instruction
    }
}

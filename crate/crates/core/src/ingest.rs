//! Dataset filtering: language, repository quality, splitting, de-duplication,
//! length and template checks, with a per-stage count trace.

use std::collections::HashSet;
use std::io::BufRead;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::template::{is_template, token_count};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("record {0} has no star count or push time")]
    MissingMetadata(String),
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub repo: String,
    /// A single prompt may be given as `text`.
    #[serde(alias = "text", deserialize_with = "one_or_many")]
    pub prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stars: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pushed_at: Option<DateTime<Utc>>,
}

impl DatasetRecord {
    pub fn has_metadata(&self) -> bool {
        self.stars.is_some() && self.pushed_at.is_some()
    }
}

/// Reads JSON Lines, skipping blank lines. Ids must be unique.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<DatasetRecord>, IngestError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::BadRecord { line: i + 1, message: e.to_string() })?;
        if !ids.insert(rec.id.clone()) {
            return Err(IngestError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub min_stars: u64,
    pub max_age_days: i64,
    pub min_tokens: usize,
    /// Fail on records lacking metadata instead of dropping them.
    pub strict: bool,
    /// Minimum share of ASCII among letters for the English check.
    pub ascii_letter_ratio: f64,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self { min_stars: 5, max_age_days: 365, min_tokens: 5, strict: false, ascii_letter_ratio: 0.9 }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

/// Crude English check: no CJK characters and mostly ASCII letters.
/// Text without any letters is rejected.
pub fn looks_english(text: &str, ascii_ratio: f64) -> bool {
    let mut letters = 0usize;
    let mut ascii = 0usize;
    for c in text.chars() {
        if is_cjk(c) {
            return false;
        }
        if c.is_alphabetic() {
            letters += 1;
            if c.is_ascii() {
                ascii += 1;
            }
        }
    }
    letters > 0 && ascii as f64 >= ascii_ratio * letters as f64
}

/// Whitespace-insensitive, case-sensitive key used for duplicate detection.
pub fn normalize_for_dedupe(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").nfc().collect()
}

pub fn dedupe(prompts: &[String]) -> Vec<String> {
    dedupe_by(prompts.to_vec(), |p| p.as_str())
}

fn dedupe_by<T>(items: Vec<T>, key: impl Fn(&T) -> &str) -> Vec<T> {
    let mut seen = HashSet::new();
    items.into_iter().filter(|it| seen.insert(normalize_for_dedupe(key(it)))).collect()
}

/// One record per prompt; ids get `-N` suffixes, metadata is copied.
pub fn split_multiprompt(record: &DatasetRecord) -> Vec<DatasetRecord> {
    record
        .prompts
        .iter()
        .enumerate()
        .map(|(i, p)| DatasetRecord { id: format!("{}-{i}", record.id), prompts: vec![p.clone()], ..record.clone() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterTrace {
    /// Stages 1–2 count records, later stages count prompts.
    pub stages: Vec<StageCount>,
    pub dedupe_normalization: String,
    pub dropped_missing_metadata: usize,
    pub reference_time: DateTime<Utc>,
}

impl FilterTrace {
    pub fn outputs(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.output).collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<24} {:>8} {:>8}\n", "stage", "in", "out");
        for s in &self.stages {
            out.push_str(&format!("{:<24} {:>8} {:>8}\n", s.stage, s.input, s.output));
        }
        out
    }
}

pub const DEDUPE_NORMALIZATION: &str = "trim, collapse whitespace runs, NFC; case-sensitive";

pub fn filter_records(
    records: &[DatasetRecord],
    policy: &FilterPolicy,
    reference_time: DateTime<Utc>,
) -> Result<(Vec<DatasetRecord>, FilterTrace), IngestError> {
    let mut stages = Vec::new();
    let mut stage = |name: &str, input: usize, output: usize| {
        stages.push(StageCount { stage: name.to_string(), input, output });
    };

    // (1) keep non-empty English prompts; records left with none are dropped
    let english: Vec<DatasetRecord> = records
        .iter()
        .filter_map(|r| {
            let prompts: Vec<String> = r
                .prompts
                .iter()
                .filter(|p| !p.trim().is_empty() && looks_english(p, policy.ascii_letter_ratio))
                .cloned()
                .collect();
            (!prompts.is_empty()).then(|| DatasetRecord { prompts, ..r.clone() })
        })
        .collect();
    stage("english_non_empty", records.len(), english.len());

    // (2) repository quality
    let max_age = Duration::days(policy.max_age_days);
    let mut missing = 0;
    let mut popular = Vec::new();
    for r in english.iter() {
        let (Some(stars), Some(pushed)) = (r.stars, r.pushed_at) else {
            if policy.strict {
                return Err(IngestError::MissingMetadata(r.id.clone()));
            }
            missing += 1;
            continue;
        };
        if stars >= policy.min_stars && reference_time - pushed <= max_age {
            popular.push(r);
        }
    }
    stage("stars_and_recency", english.len(), popular.len());

    // (3) split
    let split: Vec<DatasetRecord> = popular.iter().flat_map(|r| split_multiprompt(r)).collect();
    stage("split_multiprompt", popular.len(), split.len());

    // (4) dedupe
    let n = split.len();
    let unique = dedupe_by(split, |r| r.prompts[0].as_str());
    stage("dedupe", n, unique.len());

    // (5) length
    let n = unique.len();
    let long: Vec<DatasetRecord> =
        unique.into_iter().filter(|r| token_count(&r.prompts[0]) >= policy.min_tokens).collect();
    stage("min_tokens", n, long.len());

    // (6) templates only
    let n = long.len();
    let kept: Vec<DatasetRecord> = long.into_iter().filter(|r| is_template(&r.prompts[0])).collect();
    stage("is_template", n, kept.len());

    Ok((
        kept,
        FilterTrace {
            stages,
            dedupe_normalization: DEDUPE_NORMALIZATION.to_string(),
            dropped_missing_metadata: missing,
            reference_time,
        },
    ))
}

//! Corpus statistics over analysed templates.
//!
//! Every ratio is reported with its numerator and denominator. Presence rates are
//! template-level (does the template contain the kind at all), and transitions count
//! each consecutive pair of a template's first-occurrence order once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::AnalysisBundle;
use crate::cluster::content_terms;
use crate::component::ComponentKind;
use crate::manifest::RunManifest;
use crate::scalar::Scalar;
use crate::taxonomy::{ConstraintType, DirectiveStyle, JsonFormatPattern, PlaceholderType};
use crate::template::PositionThird;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// The JSON report keeps every name; the markdown view is trimmed.
const MARKDOWN_NAME_ROWS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no template contains {0}")]
    KindAbsent(ComponentKind),
    #[error("no template declares JSON output")]
    NoJsonTemplates,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution<F> {
    pub labels: Vec<String>,
    pub numerators: Vec<u64>,
    pub denominators: Vec<u64>,
    pub fractions: Vec<F>,
}

impl<F: Scalar> Distribution<F> {
    fn from_counts(rows: Vec<(String, u64, u64)>) -> Self {
        let mut d = Distribution { labels: vec![], numerators: vec![], denominators: vec![], fractions: vec![] };
        for (label, num, den) in rows {
            d.fractions.push(if den == 0 { F::zero() } else { F::from_usize_ratio(num as usize, den as usize) });
            d.labels.push(label);
            d.numerators.push(num);
            d.denominators.push(den);
        }
        d
    }

    pub fn fraction(&self, label: &str) -> Option<F> {
        self.labels.iter().position(|l| l == label).map(|i| self.fractions[i])
    }

    pub fn numerator(&self, label: &str) -> Option<u64> {
        self.labels.iter().position(|l| l == label).map(|i| self.numerators[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionMatrix<F> {
    pub kinds: Vec<ComponentKind>,
    pub counts: Vec<Vec<u64>>,
    pub probs: Vec<Vec<F>>,
    /// Rows with no outgoing transitions.
    pub absorbing: Vec<bool>,
}

impl<F: Scalar> TransitionMatrix<F> {
    pub fn index(&self, kind: ComponentKind) -> Option<usize> {
        self.kinds.iter().position(|k| *k == kind)
    }

    pub fn prob(&self, from: ComponentKind, to: ComponentKind) -> F {
        match (self.index(from), self.index(to)) {
            (Some(i), Some(j)) => self.probs[i][j],
            _ => F::zero(),
        }
    }

    pub fn count(&self, from: ComponentKind, to: ComponentKind) -> u64 {
        match (self.index(from), self.index(to)) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }
}

fn non_empty(corpus: &[AnalysisBundle]) -> Result<(), AnalyticsError> {
    if corpus.is_empty() {
        Err(AnalyticsError::EmptyCorpus)
    } else {
        Ok(())
    }
}

pub fn component_frequency<F: Scalar>(corpus: &[AnalysisBundle]) -> Result<Distribution<F>, AnalyticsError> {
    non_empty(corpus)?;
    let n = corpus.len() as u64;
    let presence: Vec<BTreeSet<ComponentKind>> = corpus.iter().map(|b| b.presence()).collect();
    Ok(Distribution::from_counts(
        ComponentKind::CORE
            .iter()
            .map(|k| (k.name().to_string(), presence.iter().filter(|p| p.contains(k)).count() as u64, n))
            .collect(),
    ))
}

/// Row-normalised counts of consecutive kinds in each order list.
pub fn transition_matrix_from_orders<F: Scalar>(orders: &[Vec<ComponentKind>]) -> TransitionMatrix<F> {
    let kinds = ComponentKind::CORE.to_vec();
    let idx = |k: ComponentKind| kinds.iter().position(|x| *x == k);
    let n = kinds.len();
    let mut counts = vec![vec![0u64; n]; n];
    for order in orders {
        for pair in order.windows(2) {
            if let (Some(i), Some(j)) = (idx(pair[0]), idx(pair[1])) {
                counts[i][j] += 1;
            }
        }
    }
    let mut probs = vec![vec![F::zero(); n]; n];
    let mut absorbing = vec![false; n];
    for i in 0..n {
        let total: u64 = counts[i].iter().sum();
        if total == 0 {
            absorbing[i] = true;
            continue;
        }
        for j in 0..n {
            probs[i][j] = F::from_usize_ratio(counts[i][j] as usize, total as usize);
        }
    }
    TransitionMatrix { kinds, counts, probs, absorbing }
}

pub fn transition_matrix<F: Scalar>(corpus: &[AnalysisBundle]) -> Result<TransitionMatrix<F>, AnalyticsError> {
    non_empty(corpus)?;
    let orders: Vec<Vec<ComponentKind>> = corpus.iter().map(|b| b.order()).collect();
    Ok(transition_matrix_from_orders(&orders))
}

/// Among templates containing `kind`, the fraction whose order starts with it.
pub fn start_position_frequency<F: Scalar>(
    corpus: &[AnalysisBundle],
    kind: ComponentKind,
) -> Result<F, AnalyticsError> {
    let orders: Vec<Vec<ComponentKind>> = corpus.iter().map(|b| b.order()).collect();
    start_rate(&orders, kind)
}

fn start_rate<F: Scalar>(orders: &[Vec<ComponentKind>], kind: ComponentKind) -> Result<F, AnalyticsError> {
    let containing: Vec<&Vec<ComponentKind>> = orders.iter().filter(|o| o.contains(&kind)).collect();
    if containing.is_empty() {
        return Err(AnalyticsError::KindAbsent(kind));
    }
    let starts = containing.iter().filter(|o| o.first() == Some(&kind)).count();
    Ok(F::from_usize_ratio(starts, containing.len()))
}

/// Greedy walk: begin at the most frequent first kind, then repeatedly take the most
/// probable unvisited successor. Ties go to the kind present in more templates.
pub fn canonical_order<F: Scalar>(corpus: &[AnalysisBundle]) -> Result<Vec<ComponentKind>, AnalyticsError> {
    non_empty(corpus)?;
    let orders: Vec<Vec<ComponentKind>> = corpus.iter().map(|b| b.order()).collect();
    let matrix: TransitionMatrix<F> = transition_matrix_from_orders(&orders);
    let freq = |k: ComponentKind| orders.iter().filter(|o| o.contains(&k)).count();
    let mut first_counts: BTreeMap<ComponentKind, usize> = BTreeMap::new();
    for o in &orders {
        if let Some(k) = o.first() {
            *first_counts.entry(*k).or_default() += 1;
        }
    }
    let Some(start) = first_counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(freq(*a.0).cmp(&freq(*b.0))).then(b.0.cmp(a.0)))
        .map(|(k, _)| *k)
    else {
        return Ok(vec![]);
    };
    let mut walk = vec![start];
    loop {
        let cur = *walk.last().unwrap();
        let next = matrix.kinds.iter().filter(|k| !walk.contains(k) && matrix.count(cur, **k) > 0).max_by(|a, b| {
            matrix
                .prob(cur, **a)
                .partial_cmp(&matrix.prob(cur, **b))
                .unwrap()
                .then(freq(**a).cmp(&freq(**b)))
                .then(b.cmp(a))
        });
        match next {
            Some(k) => walk.push(*k),
            None => break,
        }
    }
    Ok(walk)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NameFrequency<F> {
    pub name: String,
    pub count: u64,
    pub fraction: F,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceholderStats<F> {
    pub total_placeholders: u64,
    /// Templates containing at least one placeholder of each type, over all templates.
    pub types: Distribution<F>,
    /// Per type, occurrences in each third over occurrences of that type.
    pub positions: BTreeMap<String, Distribution<F>>,
    pub names: Vec<NameFrequency<F>>,
}

pub fn placeholder_stats<F: Scalar>(corpus: &[AnalysisBundle]) -> Result<PlaceholderStats<F>, AnalyticsError> {
    non_empty(corpus)?;
    let n = corpus.len() as u64;
    let types = Distribution::from_counts(
        PlaceholderType::ALL
            .iter()
            .map(|t| {
                let with = corpus.iter().filter(|b| b.has_placeholder_type(*t)).count() as u64;
                (t.name().to_string(), with, n)
            })
            .collect(),
    );
    let mut positions = BTreeMap::new();
    for t in PlaceholderType::ALL {
        let occ: Vec<PositionThird> =
            corpus.iter().flat_map(|b| b.placeholders.iter()).filter(|p| p.kind == t).map(|p| p.position).collect();
        if occ.is_empty() {
            continue;
        }
        let total = occ.len() as u64;
        positions.insert(
            t.name().to_string(),
            Distribution::from_counts(
                PositionThird::ALL
                    .iter()
                    .map(|third| (third.name().to_string(), occ.iter().filter(|p| *p == third).count() as u64, total))
                    .collect(),
            ),
        );
    }
    let mut name_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for p in corpus.iter().flat_map(|b| b.placeholders.iter()) {
        *name_counts.entry(p.placeholder.name.as_str()).or_default() += 1;
    }
    let total: u64 = name_counts.values().sum();
    let mut names: Vec<NameFrequency<F>> = name_counts
        .into_iter()
        .map(|(name, count)| NameFrequency {
            name: name.to_string(),
            count,
            fraction: F::from_usize_ratio(count as usize, total as usize),
        })
        .collect();
    names.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.name.cmp(&b.name)));
    Ok(PlaceholderStats { total_placeholders: total, types, positions, names })
}

/// P1/P2/P3 shares among templates that declare JSON output.
pub fn json_pattern_distribution<F: Scalar>(corpus: &[AnalysisBundle]) -> Result<Distribution<F>, AnalyticsError> {
    let json: Vec<JsonFormatPattern> = corpus.iter().map(|b| b.json_pattern).filter(|p| p.is_json()).collect();
    if json.is_empty() {
        return Err(AnalyticsError::NoJsonTemplates);
    }
    let n = json.len() as u64;
    Ok(Distribution::from_counts(
        JsonFormatPattern::JSON
            .iter()
            .map(|p| (p.tag().to_string(), json.iter().filter(|x| *x == p).count() as u64, n))
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TermCount {
    pub term: String,
    pub count: u64,
}

/// Lowercased, stoplisted word counts inside spans of `kind`; count descending, then term.
pub fn term_frequencies(
    corpus: &[AnalysisBundle],
    kind: ComponentKind,
    top_k: usize,
) -> Result<Vec<TermCount>, AnalyticsError> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut seen = false;
    for b in corpus {
        for text in b.text_of(kind) {
            seen = true;
            for t in content_terms(text) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    if !seen {
        return Err(AnalyticsError::KindAbsent(kind));
    }
    let mut ranked: Vec<TermCount> = counts.into_iter().map(|(term, count)| TermCount { term, count }).collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.term.cmp(&b.term)));
    ranked.truncate(top_k);
    Ok(ranked)
}

pub fn directive_style_distribution<F: Scalar>(corpus: &[AnalysisBundle]) -> Distribution<F> {
    let styles: Vec<DirectiveStyle> = corpus.iter().filter_map(|b| b.directive_style).collect();
    let n = styles.len() as u64;
    Distribution::from_counts(
        [DirectiveStyle::Instruction, DirectiveStyle::Question]
            .iter()
            .map(|s| (format!("{s:?}"), styles.iter().filter(|x| *x == s).count() as u64, n))
            .collect(),
    )
}

pub fn constraint_type_distribution<F: Scalar>(corpus: &[AnalysisBundle]) -> Distribution<F> {
    let kinds: Vec<ConstraintType> = corpus.iter().flat_map(|b| b.constraints.iter().map(|c| c.kind)).collect();
    let n = kinds.len() as u64;
    Distribution::from_counts(
        ConstraintType::ALL
            .iter()
            .map(|t| (format!("{t:?}"), kinds.iter().filter(|x| *x == t).count() as u64, n))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportNotes {
    pub transition_counting: &'static str,
    pub presence_semantics: &'static str,
    pub position_anchor: &'static str,
}

impl Default for ReportNotes {
    fn default() -> Self {
        Self {
            transition_counting: "per-template-once, first-occurrence order",
            presence_semantics: "fraction of templates containing the kind",
            position_anchor: "placeholder span start, bytes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport<F> {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<RunManifest>,
    pub n_templates: usize,
    pub component_frequency: Distribution<F>,
    pub transitions: TransitionMatrix<F>,
    pub start_rates: BTreeMap<String, F>,
    pub canonical_order: Vec<ComponentKind>,
    pub placeholders: PlaceholderStats<F>,
    pub json_patterns: Option<Distribution<F>>,
    pub directive_styles: Distribution<F>,
    pub constraint_types: Distribution<F>,
    pub term_tables: BTreeMap<String, Vec<TermCount>>,
    pub notes: ReportNotes,
}

pub fn build_report<F: Scalar>(corpus: &[AnalysisBundle], top_terms: usize) -> Result<CorpusReport<F>, AnalyticsError> {
    non_empty(corpus)?;
    let orders: Vec<Vec<ComponentKind>> = corpus.iter().map(|b| b.order()).collect();
    let start_rates = ComponentKind::CORE
        .iter()
        .filter_map(|k| start_rate::<F>(&orders, *k).ok().map(|r| (k.name().to_string(), r)))
        .collect();
    let term_tables = ComponentKind::CORE
        .iter()
        .filter_map(|k| term_frequencies(corpus, *k, top_terms).ok().map(|t| (k.name().to_string(), t)))
        .collect();
    let json_patterns = match json_pattern_distribution(corpus) {
        Ok(d) => Some(d),
        Err(AnalyticsError::NoJsonTemplates) => None,
        Err(e) => return Err(e),
    };
    Ok(CorpusReport {
        schema_version: REPORT_SCHEMA_VERSION,
        manifest: None,
        n_templates: corpus.len(),
        component_frequency: component_frequency(corpus)?,
        transitions: transition_matrix_from_orders(&orders),
        start_rates,
        canonical_order: canonical_order::<F>(corpus)?,
        placeholders: placeholder_stats(corpus)?,
        json_patterns,
        directive_styles: directive_style_distribution(corpus),
        constraint_types: constraint_type_distribution(corpus),
        term_tables,
        notes: ReportNotes::default(),
    })
}

fn distribution_table<F: Scalar>(out: &mut String, header: &str, d: &Distribution<F>) {
    let _ = writeln!(out, "| {header} | Count | Of | Fraction |\n|---|---:|---:|---:|");
    for i in 0..d.labels.len() {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.4} |",
            d.labels[i],
            d.numerators[i],
            d.denominators[i],
            d.fractions[i].to_f64().unwrap()
        );
    }
    out.push('\n');
}

impl<F: Scalar> CorpusReport<F> {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Corpus report\n");
        if let Some(m) = &self.manifest {
            let _ = writeln!(
                out,
                "Generated by promptscope {} (`{}`), config `{}`.\n",
                m.tool_version,
                m.subcommand,
                &m.config_hash[..12.min(m.config_hash.len())]
            );
        }
        let _ = writeln!(out, "Templates analysed: {}\n", self.n_templates);

        let _ = writeln!(out, "## Component frequency\n");
        distribution_table(&mut out, "Component", &self.component_frequency);

        let _ = writeln!(out, "## Component transitions\n");
        let short: Vec<&str> = self.transitions.kinds.iter().map(|k| k.name()).collect();
        let _ = writeln!(out, "| from \\ to | {} |", short.join(" | "));
        let _ = writeln!(out, "|---|{}", "---:|".repeat(short.len()));
        for (i, k) in self.transitions.kinds.iter().enumerate() {
            let cells: Vec<String> =
                self.transitions.probs[i].iter().map(|p| format!("{:.3}", p.to_f64().unwrap())).collect();
            let mark = if self.transitions.absorbing[i] { " (absorbing)" } else { "" };
            let _ = writeln!(out, "| {}{} | {} |", k.name(), mark, cells.join(" | "));
        }
        out.push('\n');

        let _ = writeln!(out, "## First-position rates\n\n| Component | Rate |\n|---|---:|");
        for k in ComponentKind::CORE.iter().map(|k| k.name()) {
            if let Some(r) = self.start_rates.get(k) {
                let _ = writeln!(out, "| {k} | {:.4} |", r.to_f64().unwrap());
            }
        }
        let order: Vec<&str> = self.canonical_order.iter().map(|k| k.name()).collect();
        let _ = writeln!(out, "\nCanonical order: {}\n", order.join(" -> "));

        let _ = writeln!(out, "## Placeholders\n\nTotal occurrences: {}\n", self.placeholders.total_placeholders);
        distribution_table(&mut out, "Type", &self.placeholders.types);
        for (ty, d) in &self.placeholders.positions {
            let _ = writeln!(out, "### Position of {ty}\n");
            distribution_table(&mut out, "Third", d);
        }
        let names = &self.placeholders.names;
        let shown = names.len().min(MARKDOWN_NAME_ROWS);
        let _ = writeln!(out, "### Names\n\nTop {shown} of {} distinct names.\n", names.len());
        let _ = writeln!(out, "| Name | Count | Fraction |\n|---|---:|---:|");
        for n in &names[..shown] {
            let _ = writeln!(out, "| {} | {} | {:.4} |", n.name, n.count, n.fraction.to_f64().unwrap());
        }
        out.push('\n');

        let _ = writeln!(out, "## JSON output patterns\n");
        match &self.json_patterns {
            Some(d) => distribution_table(&mut out, "Pattern", d),
            None => out.push_str("No template declares JSON output.\n\n"),
        }
        let _ = writeln!(out, "## Directive style\n");
        distribution_table(&mut out, "Style", &self.directive_styles);
        let _ = writeln!(out, "## Constraint types\n");
        distribution_table(&mut out, "Type", &self.constraint_types);

        let _ = writeln!(out, "## Terms by component\n");
        for (kind, terms) in &self.term_tables {
            let row: Vec<String> = terms.iter().map(|t| format!("{} ({})", t.term, t.count)).collect();
            let _ = writeln!(out, "- **{kind}**: {}", row.join(", "));
        }
        out
    }
}

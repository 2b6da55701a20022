//! Per-template analysis: everything the linter and the corpus statistics consume.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::component::{
    component_order, component_presence, ComponentKind, ComponentSpan, SegmentError, Segmentation, Segmenter,
    SegmenterConfig,
};
use crate::taxonomy::{
    classify_constraint, classify_directive_style_with, classify_placeholder_with, detect_json_pattern_with,
    extract_json_attributes, ConstraintType, DirectiveStyle, JsonAttribute, JsonFormatPattern, PlaceholderType,
    TaxonomyConfig,
};
use crate::template::{third_of, ByteSpan, Placeholder, PositionThird, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceholderInfo {
    pub placeholder: Placeholder,
    pub kind: PlaceholderType,
    pub position: PositionThird,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintInfo {
    pub sentence: usize,
    pub span: ByteSpan,
    pub text: String,
    pub kind: ConstraintType,
}

/// All facets computed from one template.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisBundle {
    pub template: PromptTemplate,
    pub segmentation: Segmentation,
    pub placeholders: Vec<PlaceholderInfo>,
    pub constraints: Vec<ConstraintInfo>,
    pub json_pattern: JsonFormatPattern,
    pub json_attributes: Vec<JsonAttribute>,
    pub directive_style: Option<DirectiveStyle>,
}

impl AnalysisBundle {
    pub fn spans(&self) -> &[ComponentSpan] {
        &self.segmentation.spans
    }

    pub fn presence(&self) -> BTreeSet<ComponentKind> {
        component_presence(&self.segmentation.spans)
    }

    pub fn order(&self) -> Vec<ComponentKind> {
        component_order(&self.segmentation.spans)
    }

    pub fn span_text(&self, span: &ComponentSpan) -> &str {
        &self.template.text[span.span.range()]
    }

    pub fn text_of(&self, kind: ComponentKind) -> Vec<&str> {
        self.segmentation.spans_of(kind).map(|s| self.span_text(s)).collect()
    }

    pub fn has_placeholder_type(&self, ty: PlaceholderType) -> bool {
        self.placeholders.iter().any(|p| p.kind == ty)
    }
}

pub struct Analyzer {
    segmenter: Segmenter,
    taxonomy: TaxonomyConfig,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self::new(&SegmenterConfig::default(), TaxonomyConfig::default()).expect("default lexicons compile")
    }
}

impl Analyzer {
    pub fn new(segmenter: &SegmenterConfig, taxonomy: TaxonomyConfig) -> Result<Self, SegmentError> {
        Ok(Self { segmenter: Segmenter::new(segmenter)?, taxonomy })
    }

    pub fn analyze(&self, template: &PromptTemplate) -> AnalysisBundle {
        let segmentation = self.segmenter.segment(template);
        let text = &template.text;

        let placeholders = template
            .placeholders
            .iter()
            .map(|p| {
                let window = segmentation
                    .sentences
                    .iter()
                    .find(|s| s.span.contains(&p.span))
                    .map_or("", |s| &text[s.span.range()]);
                PlaceholderInfo {
                    placeholder: p.clone(),
                    kind: classify_placeholder_with(&p.name, window, &self.taxonomy),
                    position: third_of(p.span.start, text.len()),
                }
            })
            .collect();

        let constraints = segmentation
            .spans_of(ComponentKind::Constraints)
            .flat_map(|span| span.sentence_range.clone())
            .map(|i| {
                let s = &segmentation.sentences[i];
                let sentence_text = &text[s.span.range()];
                ConstraintInfo {
                    sentence: i,
                    span: s.span,
                    text: sentence_text.to_string(),
                    kind: classify_constraint(sentence_text),
                }
            })
            .collect();

        let format_text: Vec<&str> =
            segmentation.spans_of(ComponentKind::OutputFormatStyle).map(|s| &text[s.span.range()]).collect();
        let format_text = if format_text.is_empty() { text.clone() } else { format_text.join("\n") };
        let json_pattern = detect_json_pattern_with(&format_text, self.taxonomy.description_threshold);
        let json_attributes = if json_pattern.is_json() { extract_json_attributes(&format_text) } else { vec![] };

        let directive_style = segmentation
            .spans_of(ComponentKind::Directive)
            .next()
            .map(|s| classify_directive_style_with(&text[s.span.range()], &self.taxonomy));

        AnalysisBundle {
            template: template.clone(),
            segmentation,
            placeholders,
            constraints,
            json_pattern,
            json_attributes,
            directive_style,
        }
    }

    /// Parallel map over a corpus; output order follows input order.
    pub fn analyze_corpus(&self, templates: &[PromptTemplate]) -> Vec<AnalysisBundle> {
        templates.par_iter().map(|t| self.analyze(t)).collect()
    }
}

//! Static analysis, linting and corpus statistics for LLM prompt templates.
//!
//! The pipeline is: [`template::parse_template`] → [`analysis::Analyzer::analyze`] →
//! either [`lint::lint`] for one template or [`analytics::build_report`] over a corpus.
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to `f64`.

pub mod analysis;
pub mod analytics;
pub mod cluster;
pub mod component;
pub mod config;
pub mod harness;
pub mod ingest;
pub mod lint;
pub mod manifest;
pub mod metadata;
pub mod scalar;
pub mod similarity;
pub mod taxonomy;
pub mod template;

pub use analysis::{AnalysisBundle, Analyzer};
pub use component::{ComponentKind, ComponentSpan, Segmenter, SegmenterConfig};
pub use config::Config;
pub use manifest::RunManifest;
pub use scalar::Scalar;
pub use taxonomy::{ConstraintType, DirectiveStyle, JsonFormatPattern, PlaceholderType, TaxonomyConfig};
pub use template::{parse_template, ByteSpan, Placeholder, PositionThird, PromptTemplate};

pub type Distribution = analytics::Distribution<f64>;
pub type TransitionMatrix = analytics::TransitionMatrix<f64>;
pub type CorpusReport = analytics::CorpusReport<f64>;
pub type KMeansFit = cluster::KMeansFit<f64>;

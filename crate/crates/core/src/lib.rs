//! Explain where a code model's confidence lives in the syntax of what it
//! wrote.
//!
//! The pipeline: parse Python into a syntax tree ([`syntax`]), load per-token
//! probabilities ([`tlp`]), align tokens to tree terminals by byte-span
//! overlap ([`align`]), aggregate probabilities up the tree and into named
//! syntax categories ([`cluster`]), render local explanations ([`render`]),
//! roll a corpus into bootstrapped per-model reports ([`report`]), and
//! validate that the scores track real performance ([`causal`]).
//!
//! Everything downstream of parsing is deterministic for a fixed seed;
//! repeated runs produce byte-identical artifacts.

pub mod align;
pub mod causal;
pub mod cluster;
pub mod render;
pub mod report;
pub mod syntax;
pub mod tlp;

pub use align::{align, AlignError, AlignmentMap, CoverageReport};
pub use causal::{
    causal_csv, causal_report, CausalConfig, CausalError, CausalReport, CausalRow, Treatment,
};
pub use cluster::{
    annotate, build_category_report, default_mapping, Aggregator, AnnotatedNode, AnnotatedTree,
    Category, CategoryMapping, CategoryReport, ScoreStats,
};
pub use render::{render_ast, render_sequence, OutputFormat, Palette, RenderConfig, RenderMode};
pub use report::{
    analyze_corpus, compare_models, threshold_flags, AnalysisOptions, CorpusReport,
    DatasetSnippet, ReportError, SnippetAnalysis, ThresholdFlag,
};
pub use syntax::{parse, structural_metrics, AstNode, Span, StructuralMetrics, SyntaxTree};
pub use tlp::{
    cross_entropy, read_tlp_jsonl, tlp_from_distributions, tlp_from_pairs, write_tlp_jsonl,
    TlpError, TlpRecord, TlpSequence,
};

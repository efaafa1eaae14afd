//! Corpus-level analysis: run alignment and aggregation over every snippet of
//! a dataset, bootstrap category scores, flag categories against a confidence
//! threshold, and compare models.
//!
//! The whole pipeline is deterministic for a fixed seed: rerunning the same
//! inputs yields byte-identical serialized reports. Snippets that cannot be
//! analyzed (unparseable, empty, or zero-probability sequences) are logged,
//! skipped, and counted — never silently dropped or clamped.

use crate::align::align;
use crate::cluster::{
    build_category_report, subcategory_scores, Aggregator, AnnotatedTree, Category,
    CategoryMapping, CategoryReport,
};
use crate::syntax::{parse, structural_metrics, StructuralMetrics};
use crate::tlp::{cross_entropy, mean_probability, TlpSequence};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;

/// Hard cap on tokens per snippet; longer sequences are truncated and flagged.
pub const DEFAULT_MAX_TOKENS: usize = 1024;

/// Confidence threshold separating reliable from unreliable categories.
pub const DEFAULT_TAU: f64 = 0.6;

/// One dataset snippet: source plus optional precomputed structure columns.
///
/// Absent metrics are recomputed from the parse; present ones are trusted so
/// externally curated structure measurements survive a re-run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSnippet {
    pub snippet_id: String,
    pub source: String,
    #[serde(default)]
    pub cyclomatic_complexity: Option<u32>,
    #[serde(default)]
    pub ast_levels: Option<u32>,
    #[serde(default)]
    pub node_count: Option<u32>,
    #[serde(default)]
    pub token_count: Option<u32>,
}

/// Per-snippet analysis results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetAnalysis {
    pub snippet_id: String,
    pub metrics: StructuralMetrics,
    pub cross_entropy: f64,
    /// Mean token probability of this snippet.
    pub intrinsic: f64,
    /// Per node kind: the snippet's aggregated confidence for that kind.
    pub per_kind: BTreeMap<String, f64>,
    /// Whether the token sequence was cut at the token cap.
    pub truncated: bool,
}

/// Full corpus analysis for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub model_id: String,
    pub snippet_analyses: Vec<SnippetAnalysis>,
    pub category_report: CategoryReport,
    /// Mean probability over every token of every analyzed snippet.
    pub intrinsic: f64,
    /// Snippets dropped because they could not be analyzed.
    pub skipped_snippets: usize,
    /// Snippets whose sequences were cut at the token cap.
    pub truncated_snippets: usize,
}

/// Tuning for a corpus run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub aggregator: Aggregator,
    pub bootstrap_reps: u32,
    pub bootstrap_seed: u64,
    pub max_tokens: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            aggregator: Aggregator::default(),
            bootstrap_reps: crate::cluster::DEFAULT_BOOTSTRAP_REPS,
            bootstrap_seed: 0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// Corpus-level errors.
#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("snippet {0:?} has no scored token sequence")]
    MissingTlp(String),
    #[error("reports disagree on {0}; refusing to compare")]
    ConfigMismatch(String),
    #[error("no report for model {0:?}")]
    UnknownModel(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {source}")]
    Json { line: usize, source: serde_json::Error },
}

/// Analyze a dataset against its scored sequences.
///
/// Every dataset snippet must have a sequence; a missing one is an input error.
/// Snippets that fail analysis after that (parse failure, empty sequence,
/// zero probability) are logged and skipped, with the count reported.
pub fn analyze_corpus(
    dataset: &[DatasetSnippet],
    tlp_by_snippet: &BTreeMap<String, TlpSequence>,
    mapping: &CategoryMapping,
    opts: &AnalysisOptions,
) -> Result<CorpusReport, ReportError> {
    let mut analyses = Vec::with_capacity(dataset.len());
    let mut trees: Vec<AnnotatedTree> = Vec::with_capacity(dataset.len());
    let mut skipped = 0usize;
    let mut truncated_count = 0usize;
    let mut prob_sum = 0.0f64;
    let mut token_count = 0usize;
    let mut model_id = String::new();
    for snip in dataset {
        let seq_full = tlp_by_snippet
            .get(&snip.snippet_id)
            .ok_or_else(|| ReportError::MissingTlp(snip.snippet_id.clone()))?;
        if model_id.is_empty() {
            model_id = seq_full.model_id.clone();
        }
        let mut seq = seq_full.clone();
        let truncated = seq.records.len() > opts.max_tokens;
        if truncated {
            log::warn!(
                "snippet {}: {} tokens exceed the cap of {}; truncating",
                snip.snippet_id,
                seq.records.len(),
                opts.max_tokens
            );
            seq.records.truncate(opts.max_tokens);
            truncated_count += 1;
        }
        let tree = match parse(&snip.source) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("snippet {}: parse failed ({e}); skipping", snip.snippet_id);
                skipped += 1;
                continue;
            }
        };
        let ce = match cross_entropy(&seq) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("snippet {}: {e}; skipping", snip.snippet_id);
                skipped += 1;
                continue;
            }
        };
        let map = match align(&seq, &tree) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("snippet {}: {e}; skipping", snip.snippet_id);
                skipped += 1;
                continue;
            }
        };
        let annotated = match crate::cluster::annotate(&tree, &map, &seq, opts.aggregator) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("snippet {}: {e}; skipping", snip.snippet_id);
                skipped += 1;
                continue;
            }
        };
        let mut metrics = structural_metrics(&tree);
        if let Some(cc) = snip.cyclomatic_complexity {
            metrics.cyclomatic_complexity = cc;
        }
        if let Some(d) = snip.ast_levels {
            metrics.ast_levels = d;
        }
        if let Some(nc) = snip.node_count {
            metrics.node_count = nc;
        }
        metrics.sequence_size = snip.token_count.unwrap_or(seq.records.len() as u32);
        let per_kind: BTreeMap<String, f64> =
            subcategory_scores(std::slice::from_ref(&annotated), opts.aggregator)
                .into_iter()
                .map(|(kind, values)| (kind, values[0]))
                .collect();
        prob_sum += seq.records.iter().map(|r| r.probability).sum::<f64>();
        token_count += seq.records.len();
        analyses.push(SnippetAnalysis {
            snippet_id: snip.snippet_id.clone(),
            metrics,
            cross_entropy: ce,
            intrinsic: mean_probability(&seq).expect("non-empty after cross_entropy"),
            per_kind,
            truncated,
        });
        trees.push(annotated);
    }
    let category_report = build_category_report(
        &trees,
        mapping,
        opts.aggregator,
        opts.bootstrap_reps,
        opts.bootstrap_seed,
        &model_id,
    );
    Ok(CorpusReport {
        model_id,
        snippet_analyses: analyses,
        category_report,
        intrinsic: if token_count == 0 { 0.0 } else { prob_sum / token_count as f64 },
        skipped_snippets: skipped,
        truncated_snippets: truncated_count,
    })
}

// ---------------------------------------------------------------------------
// Threshold flags
// ---------------------------------------------------------------------------

/// Outcome of checking one category against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdFlag {
    /// Point estimate at or above the threshold.
    Pass,
    /// Point estimate below the threshold.
    Fail,
    /// No estimate: the category never occurred. Kept apart from pass/fail so
    /// absence is never mistaken for performance.
    Null,
}

/// Flag every category of a report against threshold `tau`.
pub fn threshold_flags(
    report: &CategoryReport,
    tau: f64,
) -> BTreeMap<Category, ThresholdFlag> {
    report
        .per_category
        .iter()
        .map(|(category, stats)| {
            let flag = match stats.point {
                None => ThresholdFlag::Null,
                Some(p) if p >= tau => ThresholdFlag::Pass,
                Some(_) => ThresholdFlag::Fail,
            };
            (*category, flag)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Model comparison
// ---------------------------------------------------------------------------

/// Level of a comparison row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowLevel {
    Category,
    Subcategory,
}

/// Label of one comparison row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub level: RowLevel,
    pub name: String,
}

/// Pairwise difference column: `left` minus `right` per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaColumn {
    pub left: String,
    pub right: String,
    pub values: Vec<Option<f64>>,
}

/// Point estimates side by side for several models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMatrix {
    pub rows: Vec<RowLabel>,
    pub model_ids: Vec<String>,
    /// Row-major: `cells[row][column]`.
    pub cells: Vec<Vec<Option<f64>>>,
    pub deltas: Vec<DeltaColumn>,
}

/// Put category and subcategory points of several reports side by side, with
/// difference columns for the requested model pairs.
///
/// All reports must share the aggregator and the mapping digest; a cell is
/// `None` where a model has no estimate, and a delta is `None` unless both
/// sides have one.
pub fn compare_models(
    reports: &[CategoryReport],
    pairs: &[(String, String)],
) -> Result<ComparisonMatrix, ReportError> {
    if let Some(first) = reports.first() {
        for r in reports {
            if r.aggregator != first.aggregator {
                return Err(ReportError::ConfigMismatch("the aggregator".into()));
            }
            if r.mapping_digest != first.mapping_digest {
                return Err(ReportError::ConfigMismatch("the category mapping".into()));
            }
        }
    }
    let model_ids: Vec<String> = reports.iter().map(|r| r.model_id.clone()).collect();
    let mut rows: Vec<RowLabel> = Category::ALL
        .iter()
        .map(|c| RowLabel { level: RowLevel::Category, name: c.name().to_string() })
        .collect();
    let mut kinds: Vec<String> = reports
        .iter()
        .flat_map(|r| r.per_subcategory.keys().cloned())
        .collect();
    kinds.sort();
    kinds.dedup();
    rows.extend(
        kinds
            .iter()
            .map(|k| RowLabel { level: RowLevel::Subcategory, name: k.clone() }),
    );
    let cell = |report: &CategoryReport, row: &RowLabel| -> Option<f64> {
        match row.level {
            RowLevel::Category => {
                let cat: Category = row.name.parse().expect("row built from category names");
                report.per_category.get(&cat).and_then(|s| s.point)
            }
            RowLevel::Subcategory => {
                report.per_subcategory.get(&row.name).and_then(|s| s.point)
            }
        }
    };
    let cells: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|row| reports.iter().map(|r| cell(r, row)).collect())
        .collect();
    let mut deltas = Vec::with_capacity(pairs.len());
    for (left, right) in pairs {
        let li = model_ids
            .iter()
            .position(|m| m == left)
            .ok_or_else(|| ReportError::UnknownModel(left.clone()))?;
        let ri = model_ids
            .iter()
            .position(|m| m == right)
            .ok_or_else(|| ReportError::UnknownModel(right.clone()))?;
        deltas.push(DeltaColumn {
            left: left.clone(),
            right: right.clone(),
            values: cells
                .iter()
                .map(|row| match (row[li], row[ri]) {
                    (Some(a), Some(b)) => Some(a - b),
                    _ => None,
                })
                .collect(),
        });
    }
    Ok(ComparisonMatrix { rows, model_ids, cells, deltas })
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

/// Pretty JSON export of the full corpus report.
pub fn report_json(report: &CorpusReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn csv_num(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Flat CSV of category and subcategory estimates.
pub fn report_csv(report: &CorpusReport) -> String {
    let mut out = String::from("model_id,level,name,point,ci_low,ci_high,n\n");
    let cr = &report.category_report;
    for (category, stats) in &cr.per_category {
        out.push_str(&format!(
            "{},category,{},{},{},{},{}\n",
            cr.model_id,
            category.name(),
            csv_num(stats.point),
            csv_num(stats.ci_low),
            csv_num(stats.ci_high),
            stats.n_samples
        ));
    }
    for (kind, stats) in &cr.per_subcategory {
        let name = if kind.contains(',') || kind.contains('"') {
            format!("\"{}\"", kind.replace('"', "\"\""))
        } else {
            kind.clone()
        };
        out.push_str(&format!(
            "{},subcategory,{},{},{},{},{}\n",
            cr.model_id,
            name,
            csv_num(stats.point),
            csv_num(stats.ci_low),
            csv_num(stats.ci_high),
            stats.n_samples
        ));
    }
    out
}

/// Category × model heatmap data for external render tooling.
pub fn heatmap_json(reports: &[&CategoryReport]) -> String {
    #[derive(Serialize)]
    struct Heatmap<'a> {
        rows: Vec<&'a str>,
        cols: Vec<&'a str>,
        /// `cells[row][col]`, null where a model has no estimate.
        cells: Vec<Vec<Option<f64>>>,
    }
    let rows: Vec<&str> = Category::ALL.iter().map(|c| c.name()).collect();
    let doc = Heatmap {
        cells: Category::ALL
            .iter()
            .map(|c| {
                reports
                    .iter()
                    .map(|r| r.per_category.get(c).and_then(|s| s.point))
                    .collect()
            })
            .collect(),
        rows,
        cols: reports.iter().map(|r| r.model_id.as_str()).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("heatmap serializes") + "\n"
}

// ---------------------------------------------------------------------------
// Dataset JSONL
// ---------------------------------------------------------------------------

/// Read dataset snippets from JSONL, skipping blank lines.
pub fn read_dataset_jsonl<R: BufRead>(reader: R) -> Result<Vec<DatasetSnippet>, ReportError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let snip: DatasetSnippet = serde_json::from_str(&text)
            .map_err(|source| ReportError::Json { line: idx + 1, source })?;
        out.push(snip);
    }
    Ok(out)
}

/// Write dataset snippets as JSONL.
pub fn write_dataset_jsonl<W: std::io::Write>(
    mut writer: W,
    snippets: &[DatasetSnippet],
) -> Result<(), ReportError> {
    for snip in snippets {
        serde_json::to_writer(&mut writer, snip)
            .map_err(|source| ReportError::Json { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

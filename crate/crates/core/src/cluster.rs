//! Hierarchical aggregation of token confidence onto syntax-tree nodes, and
//! from nodes into syntax subcategories and categories.
//!
//! Every tree node is scored by aggregating the probabilities of all tokens
//! aligned anywhere inside its subtree — one flat pool of raw token values, not
//! a cascade of child aggregates, so a node's score never depends on how the
//! grammar happens to group its children. Nodes whose subtree received no
//! tokens stay unscored (`None`) and are reported as NULL rather than silently
//! defaulting to a number.
//!
//! Per-snippet node scores roll up by node kind (subcategory) and then by a
//! configurable kind → category mapping into ten fixed syntax categories plus
//! an UNMAPPED bucket. Uncertainty comes from a seeded bootstrap over the
//! per-snippet values.

use crate::syntax::{AstNode, Span, SyntaxTree};
use crate::tlp::TlpSequence;
use crate::align::AlignmentMap;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

/// How a pool of probabilities collapses to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Median,
    Mean,
    Max,
}

impl Default for Aggregator {
    /// Median: robust to the skewed, heavy-tailed probability pools code
    /// tokens produce.
    fn default() -> Self {
        Aggregator::Median
    }
}

impl Aggregator {
    /// Collapse `values` to one number; `None` on an empty pool.
    ///
    /// Median of an even-sized pool is the mean of the two middle values.
    /// Inputs are probabilities (never NaN), so total ordering is safe.
    pub fn apply(&self, values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        Some(match self {
            Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Median => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let n = sorted.len();
                if n % 2 == 1 {
                    sorted[n / 2]
                } else {
                    (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
                }
            }
        })
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Median => "median",
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
        })
    }
}

impl FromStr for Aggregator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "median" => Ok(Aggregator::Median),
            "mean" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            other => Err(format!("unknown aggregator {other:?} (median|mean|max)")),
        }
    }
}

/// A syntax-tree node with its aggregated confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedNode {
    pub node_id: usize,
    pub kind: String,
    pub span: Span,
    /// Aggregate over all aligned tokens in this subtree; `None` when none.
    pub confidence: Option<f64>,
    /// Number of aligned tokens in this subtree.
    pub token_count: usize,
    pub children: Vec<AnnotatedNode>,
}

impl AnnotatedNode {
    /// Preorder iterator over this node and all descendants.
    pub fn walk(&self) -> impl Iterator<Item = &AnnotatedNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            for child in node.children.iter().rev() {
                stack.push(child);
            }
            Some(node)
        })
    }
}

/// A fully scored tree for one snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTree {
    pub root: AnnotatedNode,
    pub aggregator: Aggregator,
    pub model_id: String,
    /// Generated region carried over from the scored sequence, if known.
    pub generated_span: Option<Span>,
}

impl AnnotatedTree {
    pub fn nodes(&self) -> impl Iterator<Item = &AnnotatedNode> {
        self.root.walk()
    }
}

/// Errors from scoring a tree.
#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("alignment, sequence, and tree disagree ({0})")]
    AggregationMismatch(String),
}

/// Score every node of `tree` with the aggregate of its subtree's aligned
/// token probabilities.
///
/// Terminals pool their own tokens; inner nodes pool every aligned token under
/// them, in token order. The three inputs must describe the same snippet.
pub fn annotate(
    tree: &SyntaxTree,
    map: &AlignmentMap,
    seq: &TlpSequence,
    agg: Aggregator,
) -> Result<AnnotatedTree, ClusterError> {
    if seq.source != tree.source {
        return Err(ClusterError::AggregationMismatch(
            "sequence and tree sources differ".into(),
        ));
    }
    if map.entries.len() != seq.records.len() {
        return Err(ClusterError::AggregationMismatch(format!(
            "alignment covers {} tokens but sequence has {}",
            map.entries.len(),
            seq.records.len()
        )));
    }
    let max_id: usize = tree.nodes().map(|n| n.node_id).max().unwrap_or(0);
    if let Some(bad) = map.per_terminal.keys().find(|id| **id > max_id) {
        return Err(ClusterError::AggregationMismatch(format!(
            "alignment references node id {bad} beyond the tree"
        )));
    }
    let root = build(&tree.root, map, seq, agg).0;
    Ok(AnnotatedTree {
        root,
        aggregator: agg,
        model_id: seq.model_id.clone(),
        generated_span: seq.generated_span,
    })
}

/// Returns the annotated node plus the flat pool of token probabilities under
/// it, in token order.
fn build(
    node: &AstNode,
    map: &AlignmentMap,
    seq: &TlpSequence,
    agg: Aggregator,
) -> (AnnotatedNode, Vec<f64>) {
    let mut pool: Vec<f64> = Vec::new();
    let mut children = Vec::with_capacity(node.children.len());
    if node.is_terminal {
        if let Some(tokens) = map.per_terminal.get(&node.node_id) {
            pool.extend(tokens.iter().map(|&i| seq.records[i].probability));
        }
    } else {
        for child in &node.children {
            let (annotated, child_pool) = build(child, map, seq, agg);
            children.push(annotated);
            pool.extend_from_slice(&child_pool);
        }
    }
    let annotated = AnnotatedNode {
        node_id: node.node_id,
        kind: node.kind.clone(),
        span: node.span,
        confidence: agg.apply(&pool),
        token_count: pool.len(),
        children,
    };
    (annotated, pool)
}

/// Per-kind, per-snippet scores across a corpus.
///
/// For each snippet and each node kind occurring in it, the non-NULL node
/// confidences of that kind are aggregated to one value; each snippet thus
/// contributes at most one value per kind, appended in corpus order.
pub fn subcategory_scores(
    trees: &[AnnotatedTree],
    agg: Aggregator,
) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for tree in trees {
        let mut per_kind: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for node in tree.nodes() {
            if let Some(c) = node.confidence {
                per_kind.entry(node.kind.as_str()).or_default().push(c);
            }
        }
        for (kind, values) in per_kind {
            if let Some(v) = agg.apply(&values) {
                out.entry(kind.to_string()).or_default().push(v);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Categories
// ---------------------------------------------------------------------------

/// The ten fixed syntax categories plus the bucket for unmapped kinds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Category {
    #[serde(rename = "Decisions")]
    Decisions,
    #[serde(rename = "Data Structures")]
    DataStructures,
    #[serde(rename = "Exceptions")]
    Exceptions,
    #[serde(rename = "Iterations")]
    Iterations,
    #[serde(rename = "Functional Programming")]
    FunctionalProgramming,
    #[serde(rename = "Operators")]
    Operators,
    #[serde(rename = "Testing")]
    Testing,
    #[serde(rename = "Scope")]
    Scope,
    #[serde(rename = "Data Types")]
    DataTypes,
    #[serde(rename = "Natural Language")]
    NaturalLanguage,
    #[serde(rename = "UNMAPPED")]
    Unmapped,
}

impl Category {
    /// The ten real categories, excluding the UNMAPPED bucket.
    pub const TEN: [Category; 10] = [
        Category::Decisions,
        Category::DataStructures,
        Category::Exceptions,
        Category::Iterations,
        Category::FunctionalProgramming,
        Category::Operators,
        Category::Testing,
        Category::Scope,
        Category::DataTypes,
        Category::NaturalLanguage,
    ];

    /// All categories including UNMAPPED.
    pub const ALL: [Category; 11] = [
        Category::Decisions,
        Category::DataStructures,
        Category::Exceptions,
        Category::Iterations,
        Category::FunctionalProgramming,
        Category::Operators,
        Category::Testing,
        Category::Scope,
        Category::DataTypes,
        Category::NaturalLanguage,
        Category::Unmapped,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Category::Decisions => "Decisions",
            Category::DataStructures => "Data Structures",
            Category::Exceptions => "Exceptions",
            Category::Iterations => "Iterations",
            Category::FunctionalProgramming => "Functional Programming",
            Category::Operators => "Operators",
            Category::Testing => "Testing",
            Category::Scope => "Scope",
            Category::DataTypes => "Data Types",
            Category::NaturalLanguage => "Natural Language",
            Category::Unmapped => "UNMAPPED",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .find(|c| c.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown category name {s:?}"))
    }
}

/// A kind → category mapping, loaded from JSON or built in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMapping {
    pub kinds: BTreeMap<String, Category>,
}

impl CategoryMapping {
    /// The category for a kind; kinds absent from the mapping go to UNMAPPED.
    pub fn category_for(&self, kind: &str) -> Category {
        self.kinds.get(kind).copied().unwrap_or(Category::Unmapped)
    }

    /// Stable content digest, for detecting mixed-mapping comparisons.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (kind, category) in &self.kinds {
            hasher.update(kind.as_bytes());
            hasher.update(b"\t");
            hasher.update(category.name().as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Errors loading a category mapping file.
#[derive(Debug, thiserror::Error)]
pub enum MappingError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("kind {kind:?} appears more than once")]
    DuplicateKind { kind: String },
    #[error("kind {kind:?} maps to unknown category {name:?}")]
    UnknownCategoryName { kind: String, name: String },
}

/// Parse a mapping from JSON text: one object of `"kind": "Category Name"`
/// pairs. Duplicate kinds and unknown category names are rejected.
pub fn parse_category_mapping(text: &str) -> Result<CategoryMapping, MappingError> {
    // Deserialize to ordered pairs first: a plain map would silently collapse
    // duplicate keys before we could reject them.
    struct Pairs(Vec<(String, String)>);
    impl<'de> Deserialize<'de> for Pairs {
        fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            struct V;
            impl<'de> serde::de::Visitor<'de> for V {
                type Value = Pairs;
                fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                    f.write_str("an object of kind → category-name pairs")
                }
                fn visit_map<A: serde::de::MapAccess<'de>>(
                    self,
                    mut access: A,
                ) -> Result<Pairs, A::Error> {
                    let mut pairs = Vec::new();
                    while let Some((k, v)) = access.next_entry::<String, String>()? {
                        pairs.push((k, v));
                    }
                    Ok(Pairs(pairs))
                }
            }
            d.deserialize_map(V)
        }
    }
    let Pairs(pairs) = serde_json::from_str(text)?;
    let mut kinds = BTreeMap::new();
    for (kind, name) in pairs {
        let category = Category::from_str(&name)
            .map_err(|_| MappingError::UnknownCategoryName { kind: kind.clone(), name })?;
        if kinds.insert(kind.clone(), category).is_some() {
            return Err(MappingError::DuplicateKind { kind });
        }
    }
    Ok(CategoryMapping { kinds })
}

/// Load a mapping from a JSON file.
pub fn load_category_mapping(path: &Path) -> Result<CategoryMapping, MappingError> {
    parse_category_mapping(&std::fs::read_to_string(path)?)
}

/// The built-in mapping shipped with the crate, as JSON text.
pub const DEFAULT_MAPPING_JSON: &str = include_str!("default_mapping.json");

/// The built-in kind → category mapping.
pub fn default_mapping() -> &'static CategoryMapping {
    static MAPPING: OnceLock<CategoryMapping> = OnceLock::new();
    MAPPING.get_or_init(|| {
        parse_category_mapping(DEFAULT_MAPPING_JSON)
            .expect("built-in mapping file is valid")
    })
}

/// Pool per-kind, per-snippet values into their categories.
///
/// Pure pooling: lists concatenate in lexicographic kind order, no extra
/// aggregation step. Every category (and UNMAPPED) is present in the result,
/// with an empty list when nothing mapped to it.
pub fn category_scores(
    sub: &BTreeMap<String, Vec<f64>>,
    mapping: &CategoryMapping,
) -> BTreeMap<Category, Vec<f64>> {
    let mut out: BTreeMap<Category, Vec<f64>> =
        Category::ALL.iter().map(|c| (*c, Vec::new())).collect();
    for (kind, values) in sub {
        out.get_mut(&mapping.category_for(kind))
            .expect("all categories preinitialized")
            .extend_from_slice(values);
    }
    out
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

/// Point estimate with an empirical confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate {
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

pub const DEFAULT_BOOTSTRAP_REPS: u32 = 500;

/// Bootstrap the median of `values`.
///
/// Draws `reps` resamples with replacement, takes each resample's median, and
/// reports the mean of those medians with the empirical 2.5/97.5 percentile
/// interval. Fully determined by `seed`. Empty input yields all-`None`; a
/// constant input yields exactly that constant.
pub fn bootstrap_estimate(values: &[f64], reps: u32, seed: u64) -> BootstrapEstimate {
    if values.is_empty() {
        return BootstrapEstimate { point: None, ci_low: None, ci_high: None };
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medians = Vec::with_capacity(reps as usize);
    let mut resample = Vec::with_capacity(n);
    for _ in 0..reps {
        resample.clear();
        for _ in 0..n {
            resample.push(values[rng.random_range(0..n)]);
        }
        medians.push(Aggregator::Median.apply(&resample).expect("resample is non-empty"));
    }
    medians.sort_by(f64::total_cmp);
    let point = if medians[0] == medians[medians.len() - 1] {
        // All resample medians agree; return the value verbatim instead of a
        // float mean that could round.
        medians[0]
    } else {
        medians.iter().sum::<f64>() / medians.len() as f64
    };
    BootstrapEstimate {
        point: Some(point),
        ci_low: Some(percentile_sorted(&medians, 2.5)),
        ci_high: Some(percentile_sorted(&medians, 97.5)),
    }
}

/// Linear-interpolation percentile over already-sorted data.
fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = pct / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

// ---------------------------------------------------------------------------
// Category report
// ---------------------------------------------------------------------------

/// Bootstrap summary for one category or subcategory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Number of per-snippet values pooled into the estimate.
    pub n_samples: usize,
}

/// Bootstrapped category and subcategory scores for one model over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub model_id: String,
    pub aggregator: Aggregator,
    pub bootstrap_seed: u64,
    pub bootstrap_reps: u32,
    /// Digest of the mapping used, so reports from different mappings are
    /// never compared as if they agreed.
    pub mapping_digest: String,
    pub per_category: BTreeMap<Category, ScoreStats>,
    pub per_subcategory: BTreeMap<String, ScoreStats>,
}

/// Build the category report for one model's annotated corpus.
///
/// All ten categories (plus UNMAPPED) always appear; categories with no
/// samples report NULL estimates rather than vanishing. Per-list bootstrap
/// seeds derive deterministically from `seed` in fixed iteration order.
pub fn build_category_report(
    trees: &[AnnotatedTree],
    mapping: &CategoryMapping,
    agg: Aggregator,
    reps: u32,
    seed: u64,
    model_id: &str,
) -> CategoryReport {
    let sub = subcategory_scores(trees, agg);
    let cats = category_scores(&sub, mapping);
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut per_category = BTreeMap::new();
    for (category, values) in &cats {
        let sub_seed = master.random::<u64>();
        let est = bootstrap_estimate(values, reps, sub_seed);
        per_category.insert(
            *category,
            ScoreStats {
                point: est.point,
                ci_low: est.ci_low,
                ci_high: est.ci_high,
                n_samples: values.len(),
            },
        );
    }
    let mut per_subcategory = BTreeMap::new();
    for (kind, values) in &sub {
        let sub_seed = master.random::<u64>();
        let est = bootstrap_estimate(values, reps, sub_seed);
        per_subcategory.insert(
            kind.clone(),
            ScoreStats {
                point: est.point,
                ci_low: est.ci_low,
                ci_high: est.ci_high,
                n_samples: values.len(),
            },
        );
    }
    CategoryReport {
        model_id: model_id.to_string(),
        aggregator: agg,
        bootstrap_seed: seed,
        bootstrap_reps: reps,
        mapping_digest: mapping.digest(),
        per_category,
        per_subcategory,
    }
}

//! Local explanation renderings: a token sequence strip, the complete scored
//! tree, or just the subtree touching the generated region — as DOT, SVG, or
//! HTML (the HTML wraps the SVG in a minimal self-contained page).
//!
//! Colors come from an ordered palette of probability bands; unscored nodes
//! render as a neutral "—" so NULL stays visibly distinct from 0.00. Output is
//! deterministic: same inputs, same bytes.

use crate::cluster::{AnnotatedNode, AnnotatedTree};
use crate::syntax::Span;
use crate::tlp::TlpSequence;
use serde::{Deserialize, Serialize};

/// What to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// One colored cell per token, in order.
    Sequence,
    /// The whole annotated tree.
    AstComplete,
    /// Only nodes whose span intersects the generated region.
    AstPartial,
}

impl RenderMode {
    pub fn name(&self) -> &'static str {
        match self {
            RenderMode::Sequence => "sequence",
            RenderMode::AstComplete => "ast_complete",
            RenderMode::AstPartial => "ast_partial",
        }
    }
}

impl std::fmt::Display for RenderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RenderMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequence" => Ok(RenderMode::Sequence),
            "ast_complete" => Ok(RenderMode::AstComplete),
            "ast_partial" => Ok(RenderMode::AstPartial),
            other => Err(format!(
                "unknown render mode {other:?} (sequence|ast_complete|ast_partial)"
            )),
        }
    }
}

/// Output document format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Dot,
    Svg,
    Html,
}

impl std::fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.extension())
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(OutputFormat::Dot),
            "svg" => Ok(OutputFormat::Svg),
            "html" => Ok(OutputFormat::Html),
            other => Err(format!("unknown output format {other:?} (dot|svg|html)")),
        }
    }
}

impl OutputFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            OutputFormat::Dot => "dot",
            OutputFormat::Svg => "svg",
            OutputFormat::Html => "html",
        }
    }
}

/// Ordered color bands over probabilities.
///
/// `thresholds` split [0, 1] into `thresholds.len() + 1` bands; band `i`
/// covers values in `[thresholds[i-1], thresholds[i])` and takes `colors[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub thresholds: Vec<f64>,
    pub colors: Vec<String>,
}

impl Default for Palette {
    /// Red below 0.3, amber up to 0.6, blue from 0.6.
    fn default() -> Self {
        Palette {
            thresholds: vec![0.3, 0.6],
            colors: vec!["#d9534f".into(), "#f0ad4e".into(), "#4779c4".into()],
        }
    }
}

/// Fill used for nodes and cells with no probability.
const NULL_COLOR: &str = "#d8d8d8";

impl Palette {
    /// Check band structure: strictly increasing thresholds inside [0, 1] and
    /// exactly one more color than thresholds.
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.colors.len() != self.thresholds.len() + 1 {
            return Err(RenderError::InvalidPalette(format!(
                "{} colors for {} thresholds (need thresholds + 1)",
                self.colors.len(),
                self.thresholds.len()
            )));
        }
        for (i, t) in self.thresholds.iter().enumerate() {
            if !(0.0..=1.0).contains(t) {
                return Err(RenderError::InvalidPalette(format!(
                    "threshold {t} outside [0, 1]"
                )));
            }
            if i > 0 && self.thresholds[i - 1] >= *t {
                return Err(RenderError::InvalidPalette(
                    "thresholds must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    /// Index of the band containing `p`; monotone in `p`.
    pub fn band_for(&self, p: f64) -> usize {
        self.thresholds.iter().filter(|t| p >= **t).count()
    }

    /// Fill color for a probability; `None` gets the neutral NULL fill.
    pub fn color_for(&self, p: Option<f64>) -> &str {
        match p {
            Some(p) => &self.colors[self.band_for(p)],
            None => NULL_COLOR,
        }
    }
}

/// Full rendering configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub mode: RenderMode,
    pub format: OutputFormat,
    pub palette: Palette,
    /// Visually mark content inside the generated region.
    pub highlight_generated: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            mode: RenderMode::AstComplete,
            format: OutputFormat::Svg,
            palette: Palette::default(),
            highlight_generated: true,
        }
    }
}

/// Rendering errors.
#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid palette: {0}")]
    InvalidPalette(String),
    #[error("partial tree rendering requires a generated span")]
    MissingGeneratedSpan,
    #[error("nothing to draw: no node intersects the generated span")]
    EmptyPartialTree,
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Make whitespace visible in cell labels.
fn visible_text(s: &str) -> String {
    s.replace(' ', "␣").replace('\n', "⏎").replace('\t', "⇥")
}

fn confidence_label(c: Option<f64>) -> String {
    match c {
        Some(v) => format!("{v:.2}"),
        None => "—".to_string(),
    }
}

// ---------------------------------------------------------------------------
// Sequence rendering
// ---------------------------------------------------------------------------

/// Render one colored cell per token, in sequence order.
///
/// Cells are colored by the palette band of the token's probability, labeled
/// with the probability to two decimals, and cells inside the generated region
/// are underlined (when highlighting is on).
pub fn render_sequence(seq: &TlpSequence, cfg: &RenderConfig) -> Result<String, RenderError> {
    cfg.palette.validate()?;
    match cfg.format {
        OutputFormat::Dot => render_sequence_dot(seq, cfg),
        OutputFormat::Svg => render_sequence_svg(seq, cfg).map(|(doc, _, _)| doc),
        OutputFormat::Html => {
            let (svg, _, _) = render_sequence_svg(seq, cfg)?;
            Ok(wrap_html(&format!("token confidence · {}", seq.model_id), &svg))
        }
    }
}

fn in_generated(seq: &TlpSequence, span: &Span, cfg: &RenderConfig) -> bool {
    cfg.highlight_generated
        && seq
            .generated_span
            .map(|g| g.intersects(span))
            .unwrap_or(false)
}

fn render_sequence_dot(seq: &TlpSequence, cfg: &RenderConfig) -> Result<String, RenderError> {
    let mut out = String::new();
    out.push_str("digraph token_sequence {\n");
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [shape=box, style=filled, fontname=\"Helvetica\"];\n");
    for (i, rec) in seq.records.iter().enumerate() {
        let marker = if in_generated(seq, &rec.span, cfg) { " *" } else { "" };
        out.push_str(&format!(
            "  t{i} [label=\"{}\\n{}{}\", fillcolor=\"{}\", class=\"cell\"];\n",
            dot_escape(&visible_text(&rec.token_text)),
            confidence_label(Some(rec.probability)),
            marker,
            cfg.palette.color_for(Some(rec.probability)),
        ));
    }
    for i in 1..seq.records.len() {
        out.push_str(&format!("  t{} -> t{};\n", i - 1, i));
    }
    out.push_str("}\n");
    Ok(out)
}

/// Returns `(svg, width, height)` so the HTML wrapper can reuse the geometry.
fn render_sequence_svg(
    seq: &TlpSequence,
    cfg: &RenderConfig,
) -> Result<(String, usize, usize), RenderError> {
    const CHAR_W: usize = 9;
    const PAD: usize = 10;
    const CELL_H: usize = 42;
    const ROW_GAP: usize = 10;
    const MAX_W: usize = 960;
    let mut cells = String::new();
    let (mut x, mut y) = (PAD, PAD);
    let mut max_x = 0usize;
    for rec in &seq.records {
        let label = visible_text(&rec.token_text);
        let w = (label.chars().count().max(1)) * CHAR_W + 12;
        if x + w + PAD > MAX_W && x > PAD {
            x = PAD;
            y += CELL_H + ROW_GAP;
        }
        let color = cfg.palette.color_for(Some(rec.probability));
        cells.push_str(&format!(
            "<g class=\"cell\"><rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{CELL_H}\" rx=\"4\" fill=\"{color}\" stroke=\"#555555\"/>"
        ));
        cells.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
            x + w / 2,
            y + 17,
            xml_escape(&label)
        ));
        cells.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"Helvetica\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            x + w / 2,
            y + 33,
            confidence_label(Some(rec.probability))
        ));
        if in_generated(seq, &rec.span, cfg) {
            cells.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#222222\" stroke-width=\"3\" class=\"generated\"/>",
                x,
                y + CELL_H + 3,
                x + w,
                y + CELL_H + 3
            ));
        }
        cells.push_str("</g>\n");
        x += w + 6;
        max_x = max_x.max(x);
    }
    let width = (max_x + PAD).max(2 * PAD);
    let height = y + CELL_H + ROW_GAP + PAD;
    let svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n{cells}</svg>\n"
    );
    Ok((svg, width, height))
}

// ---------------------------------------------------------------------------
// Tree rendering
// ---------------------------------------------------------------------------

/// Render the annotated tree (complete, or restricted to the generated span).
///
/// Nodes are labeled `kind` + confidence, filled by palette band (neutral for
/// NULL); edges always run parent → child. In partial mode only nodes whose
/// span intersects the tree's generated region are kept — ancestors of an
/// intersecting node intersect too, so the result stays a connected tree.
pub fn render_ast(tree: &AnnotatedTree, cfg: &RenderConfig) -> Result<String, RenderError> {
    cfg.palette.validate()?;
    let pruned;
    let (root, highlight) = match cfg.mode {
        RenderMode::AstPartial => {
            let span = tree.generated_span.ok_or(RenderError::MissingGeneratedSpan)?;
            pruned = prune_to_span(&tree.root, &span).ok_or(RenderError::EmptyPartialTree)?;
            (&pruned, None)
        }
        _ => (
            &tree.root,
            if cfg.highlight_generated { tree.generated_span } else { None },
        ),
    };
    match cfg.format {
        OutputFormat::Dot => Ok(render_ast_dot(root, cfg, highlight)),
        OutputFormat::Svg => Ok(render_ast_svg(root, cfg, highlight)),
        OutputFormat::Html => {
            let svg = render_ast_svg(root, cfg, highlight);
            Ok(wrap_html(&format!("syntax confidence · {}", tree.model_id), &svg))
        }
    }
}

/// Copy the subtree of nodes whose span intersects `span`.
fn prune_to_span(node: &AnnotatedNode, span: &Span) -> Option<AnnotatedNode> {
    if !node.span.intersects(span) {
        return None;
    }
    Some(AnnotatedNode {
        node_id: node.node_id,
        kind: node.kind.clone(),
        span: node.span,
        confidence: node.confidence,
        token_count: node.token_count,
        children: node
            .children
            .iter()
            .filter_map(|c| prune_to_span(c, span))
            .collect(),
    })
}

fn render_ast_dot(
    root: &AnnotatedNode,
    cfg: &RenderConfig,
    highlight: Option<Span>,
) -> String {
    let mut out = String::new();
    out.push_str("digraph syntax_confidence {\n");
    out.push_str("  rankdir=TB;\n");
    out.push_str("  node [shape=box, style=\"rounded,filled\", fontname=\"Helvetica\"];\n");
    for node in root.walk() {
        let hot = highlight.map(|g| g.intersects(&node.span)).unwrap_or(false);
        let pen = if hot { ", penwidth=2.5, color=\"#222222\"" } else { "" };
        out.push_str(&format!(
            "  n{} [label=\"{}\\n{}\", fillcolor=\"{}\", tooltip=\"tokens: {}\"{}];\n",
            node.node_id,
            dot_escape(&node.kind),
            confidence_label(node.confidence),
            cfg.palette.color_for(node.confidence),
            node.token_count,
            pen,
        ));
    }
    for node in root.walk() {
        for child in &node.children {
            out.push_str(&format!("  n{} -> n{};\n", node.node_id, child.node_id));
        }
    }
    out.push_str("}\n");
    out
}

/// Simple tidy layout: leaves take consecutive slots in traversal order,
/// inner nodes sit centered over their children, depth fixes the row.
fn render_ast_svg(
    root: &AnnotatedNode,
    cfg: &RenderConfig,
    highlight: Option<Span>,
) -> String {
    const NODE_W: usize = 118;
    const NODE_H: usize = 40;
    const H_GAP: usize = 14;
    const V_GAP: usize = 34;
    const PAD: usize = 12;

    // node_id → (x center, depth)
    let mut pos: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    let mut next_slot = 0usize;
    fn place(
        node: &AnnotatedNode,
        depth: usize,
        next_slot: &mut usize,
        pos: &mut std::collections::BTreeMap<usize, (f64, usize)>,
    ) -> f64 {
        let x = if node.children.is_empty() {
            let slot = *next_slot;
            *next_slot += 1;
            slot as f64
        } else {
            let xs: Vec<f64> = node
                .children
                .iter()
                .map(|c| place(c, depth + 1, next_slot, pos))
                .collect();
            (xs[0] + xs[xs.len() - 1]) / 2.0
        };
        pos.insert(node.node_id, (x, depth));
        x
    }
    place(root, 0, &mut next_slot, &mut pos);

    let max_depth = pos.values().map(|(_, d)| *d).max().unwrap_or(0);
    let width = next_slot.max(1) * (NODE_W + H_GAP) + 2 * PAD;
    let height = (max_depth + 1) * (NODE_H + V_GAP) + 2 * PAD;
    let center = |slot: f64| PAD as f64 + slot * (NODE_W + H_GAP) as f64 + NODE_W as f64 / 2.0;
    let top = |depth: usize| PAD + depth * (NODE_H + V_GAP);

    let mut shapes = String::new();
    // Edges first so nodes draw over them.
    for node in root.walk() {
        let (px, pd) = pos[&node.node_id];
        for child in &node.children {
            let (cx, cd) = pos[&child.node_id];
            shapes.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{}\" x2=\"{:.1}\" y2=\"{}\" stroke=\"#888888\"/>\n",
                center(px),
                top(pd) + NODE_H,
                center(cx),
                top(cd)
            ));
        }
    }
    for node in root.walk() {
        let (x, d) = pos[&node.node_id];
        let left = center(x) - NODE_W as f64 / 2.0;
        let hot = highlight.map(|g| g.intersects(&node.span)).unwrap_or(false);
        let stroke = if hot { "#222222\" stroke-width=\"2.5" } else { "#666666" };
        let mut kind = node.kind.clone();
        if kind.chars().count() > 14 {
            kind = kind.chars().take(13).collect::<String>() + "…";
        }
        shapes.push_str(&format!(
            "<g class=\"node\"><rect x=\"{left:.1}\" y=\"{}\" width=\"{NODE_W}\" height=\"{NODE_H}\" rx=\"6\" fill=\"{}\" stroke=\"{stroke}\"/>",
            top(d),
            cfg.palette.color_for(node.confidence),
        ));
        shapes.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            center(x),
            top(d) + 16,
            xml_escape(&kind)
        ));
        shapes.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" font-family=\"Helvetica\" font-size=\"11\" text-anchor=\"middle\">{}</text></g>\n",
            center(x),
            top(d) + 32,
            confidence_label(node.confidence)
        ));
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n{shapes}</svg>\n"
    )
}

/// Minimal self-contained page embedding the SVG.
fn wrap_html(title: &str, svg: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"/><title>{}</title></head>\n<body style=\"font-family:Helvetica,sans-serif;background:#fafafa\">\n{}</body></html>\n",
        xml_escape(title),
        svg
    )
}

/// Sidecar JSON listing every node with its span, confidence, and token count.
pub fn annotations_json(tree: &AnnotatedTree, snippet_id: &str) -> String {
    #[derive(Serialize)]
    struct Row<'a> {
        node_id: usize,
        kind: &'a str,
        start: usize,
        end: usize,
        confidence: Option<f64>,
        token_count: usize,
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        snippet_id: &'a str,
        model_id: &'a str,
        aggregator: &'a crate::cluster::Aggregator,
        nodes: Vec<Row<'a>>,
    }
    let nodes = tree
        .nodes()
        .map(|n| Row {
            node_id: n.node_id,
            kind: &n.kind,
            start: n.span.start,
            end: n.span.end,
            confidence: n.confidence,
            token_count: n.token_count,
        })
        .collect();
    let doc = Doc {
        snippet_id,
        model_id: &tree.model_id,
        aggregator: &tree.aggregator,
        nodes,
    };
    serde_json::to_string_pretty(&doc).expect("annotation rows serialize") + "\n"
}

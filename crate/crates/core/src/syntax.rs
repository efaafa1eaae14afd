//! Python concrete syntax trees and per-snippet structural metrics.
//!
//! Parsing is delegated to tree-sitter with the bundled Python grammar; the
//! resulting tree is copied into an owned, immutable [`SyntaxTree`] so the rest
//! of the pipeline can serialize, share, and traverse nodes without borrowing
//! from the parser. Malformed input still yields a tree: error recovery keeps
//! `ERROR` nodes in place and `has_errors` is set instead of failing the parse.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Half-open byte range `[start, end)` into the snippet source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "span start must not exceed end");
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Number of bytes shared by two half-open ranges.
    pub fn overlap(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }

    /// Whether the two half-open ranges share at least one byte.
    pub fn intersects(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// One node of the concrete syntax tree.
///
/// `node_id` is the DFS preorder index, unique within the tree. A node is
/// terminal iff it has no children and covers at least one byte; zero-width
/// leaves (parser recovery artifacts, empty containers) carry no lexeme and are
/// deliberately excluded from the terminal set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub node_id: usize,
    pub kind: String,
    pub span: Span,
    pub is_terminal: bool,
    pub children: Vec<AstNode>,
}

impl AstNode {
    /// Preorder iterator over this node and all descendants.
    pub fn walk(&self) -> impl Iterator<Item = &AstNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            // Push children reversed so they pop in source order.
            for child in node.children.iter().rev() {
                stack.push(child);
            }
            Some(node)
        })
    }
}

/// An immutable parse result: owned node tree plus the source it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxTree {
    pub root: AstNode,
    pub source: String,
    pub has_errors: bool,
}

impl SyntaxTree {
    /// Preorder iterator over every node in the tree.
    pub fn nodes(&self) -> impl Iterator<Item = &AstNode> {
        self.root.walk()
    }

    /// All terminal nodes sorted by span start.
    ///
    /// Terminals carry the lexemes token alignment targets; for empty source
    /// this is empty even though the bare `module` root has no children.
    pub fn terminals_in_order(&self) -> Vec<&AstNode> {
        let mut terms: Vec<&AstNode> = self.nodes().filter(|n| n.is_terminal).collect();
        // Preorder already yields source order; sort defensively so the
        // ordering contract never depends on grammar internals.
        terms.sort_by_key(|n| (n.span.start, n.span.end));
        terms
    }

    /// Look up a node by its DFS preorder id.
    pub fn node_by_id(&self, node_id: usize) -> Option<&AstNode> {
        self.nodes().find(|n| n.node_id == node_id)
    }
}

/// Per-snippet structural measures used as confounders and report metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralMetrics {
    pub cyclomatic_complexity: u32,
    pub ast_levels: u32,
    pub node_count: u32,
    pub loc: u32,
    pub whitespace_count: u32,
    /// Token count of the associated confidence sequence; parsing alone cannot
    /// know it, so the caller fills it in (defaults to 0).
    pub sequence_size: u32,
}

/// Errors from parsing a snippet.
#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("parser backend failed to produce a tree")]
    Backend,
}

/// Node kinds that open an additional independent path through the code.
/// Cyclomatic complexity is 1 plus the number of such nodes.
const DECISION_KINDS: &[&str] = &[
    "if_statement",
    "elif_clause",
    "while_statement",
    "for_statement",
    "except_clause",
    "with_statement",
    "assert_statement",
    "boolean_operator",
    "conditional_expression",
    "if_clause",
    "case_clause",
];

/// Parse Python source into an owned syntax tree.
///
/// Never fails on malformed code: tree-sitter's recovery keeps `ERROR` nodes in
/// the tree and `has_errors` reports their presence. The source is retained in
/// the result so spans always have something to resolve against.
pub fn parse(source: &str) -> Result<SyntaxTree, ParseError> {
    let mut parser = tree_sitter::Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .expect("bundled Python grammar is version-compatible");
    let tree = parser.parse(source, None).ok_or(ParseError::Backend)?;
    let mut next_id = 0usize;
    let root = convert(tree.root_node(), &mut next_id);
    Ok(SyntaxTree {
        has_errors: tree.root_node().has_error(),
        root,
        source: source.to_string(),
    })
}

fn convert(node: tree_sitter::Node<'_>, next_id: &mut usize) -> AstNode {
    let node_id = *next_id;
    *next_id += 1;
    let span = Span::new(node.start_byte(), node.end_byte());
    let mut children = Vec::with_capacity(node.child_count());
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        children.push(convert(child, next_id));
    }
    AstNode {
        node_id,
        kind: node.kind().to_string(),
        is_terminal: children.is_empty() && !span.is_empty(),
        span,
        children,
    }
}

/// Compute structural metrics for a parsed snippet.
///
/// `sequence_size` is left at 0; callers that know the token sequence length
/// overwrite it.
pub fn structural_metrics(tree: &SyntaxTree) -> StructuralMetrics {
    let mut node_count = 0u32;
    let mut decisions = 0u32;
    for node in tree.nodes() {
        node_count += 1;
        if DECISION_KINDS.contains(&node.kind.as_str()) {
            decisions += 1;
        }
    }
    StructuralMetrics {
        cyclomatic_complexity: 1 + decisions,
        ast_levels: depth(&tree.root),
        node_count,
        loc: tree.source.lines().count() as u32,
        whitespace_count: tree
            .source
            .bytes()
            .filter(|b| b.is_ascii_whitespace())
            .count() as u32,
        sequence_size: 0,
    }
}

fn depth(node: &AstNode) -> u32 {
    1 + node.children.iter().map(depth).max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_preorder(tree: &SyntaxTree) -> Vec<&str> {
        tree.nodes().map(|n| n.kind.as_str()).collect()
    }

    #[test]
    fn parses_simple_assignment_under_if() {
        let tree = parse("if x:\n    y = 1").unwrap();
        assert!(!tree.has_errors);
        assert_eq!(tree.root.kind, "module");
        assert_eq!(tree.root.children.len(), 1);
        assert_eq!(tree.root.children[0].kind, "if_statement");
        let kinds = kinds_preorder(&tree);
        assert!(kinds.contains(&"assignment"));
        assert!(kinds.contains(&"block"));
    }

    #[test]
    fn empty_source_parses_to_bare_module() {
        let tree = parse("").unwrap();
        assert!(!tree.has_errors);
        assert_eq!(tree.root.kind, "module");
        assert!(tree.root.children.is_empty());
        assert_eq!(tree.root.span, Span::new(0, 0));
        // The bare module is not a lexeme: no terminals at all.
        assert!(tree.terminals_in_order().is_empty());
    }

    #[test]
    fn malformed_source_keeps_error_flag_and_partial_tree() {
        let tree = parse("def f(:").unwrap();
        assert!(tree.has_errors);
        // Recovery keeps real structure around the error point.
        let kinds = kinds_preorder(&tree);
        assert!(kinds.contains(&"identifier"));
        assert_eq!(tree.root.span, Span::new(0, "def f(:".len()));
    }

    #[test]
    fn node_ids_are_dfs_preorder() {
        let tree = parse("if x:\n    y = 1").unwrap();
        let ids: Vec<usize> = tree.nodes().map(|n| n.node_id).collect();
        let expect: Vec<usize> = (0..ids.len()).collect();
        assert_eq!(ids, expect);
    }

    #[test]
    fn terminals_are_ordered_and_disjoint() {
        let tree = parse("a=1").unwrap();
        let terms = tree.terminals_in_order();
        let got: Vec<(&str, usize, usize)> = terms
            .iter()
            .map(|t| (t.kind.as_str(), t.span.start, t.span.end))
            .collect();
        assert_eq!(got, vec![("identifier", 0, 1), ("=", 1, 2), ("integer", 2, 3)]);
        for w in terms.windows(2) {
            assert!(w[0].span.end <= w[1].span.start);
        }
    }

    #[test]
    fn comments_are_terminal_nodes() {
        let tree = parse("x # c").unwrap();
        let terms = tree.terminals_in_order();
        assert!(terms.iter().any(|t| t.kind == "comment" && t.span == Span::new(2, 5)));
    }

    #[test]
    fn terminal_iff_childless_with_extent() {
        let tree = parse("def f(a, b):\n    return a").unwrap();
        for node in tree.nodes() {
            if node.span.is_empty() {
                assert!(!node.is_terminal);
            } else {
                assert_eq!(node.is_terminal, node.children.is_empty());
            }
        }
    }

    #[test]
    fn sibling_spans_do_not_overlap() {
        let tree = parse("try:\n    x = float(a)\nexcept ValueError:\n    pass").unwrap();
        fn check(node: &AstNode) {
            for w in node.children.windows(2) {
                assert!(w[0].span.end <= w[1].span.start || w[0].span.is_empty());
            }
            for child in &node.children {
                assert!(child.span.start >= node.span.start && child.span.end <= node.span.end);
                check(child);
            }
        }
        check(&tree.root);
    }

    #[test]
    fn metrics_on_flat_assignment() {
        let tree = parse("x = 1").unwrap();
        let m = structural_metrics(&tree);
        assert_eq!(m.cyclomatic_complexity, 1);
        assert_eq!(m.loc, 1);
        assert_eq!(m.whitespace_count, 2);
        assert_eq!(m.sequence_size, 0);
        // module > expression_statement > assignment > {identifier, =, integer}
        assert_eq!(m.ast_levels, 4);
        assert_eq!(m.node_count, 6);
    }

    #[test]
    fn if_else_counts_one_decision_point() {
        let tree = parse("if a:\n    b\nelse:\n    c").unwrap();
        let m = structural_metrics(&tree);
        assert_eq!(m.cyclomatic_complexity, 2);
    }

    #[test]
    fn boolean_operators_and_loops_add_paths() {
        // 1 + if_statement + while_statement + 2 boolean_operator = 5
        let src = "if a and b or c:\n    while d:\n        pass";
        let m = structural_metrics(&parse(src).unwrap());
        assert_eq!(m.cyclomatic_complexity, 5);
    }

    #[test]
    fn metrics_are_nonnegative_and_depth_matches_bruteforce() {
        // Brute-force oracle: recompute depth by explicit stack walk.
        let tree = parse("def f(a):\n    if a:\n        return [x for x in a if x]\n").unwrap();
        let m = structural_metrics(&tree);
        let mut max_depth = 0;
        let mut stack = vec![(&tree.root, 1u32)];
        while let Some((n, d)) = stack.pop() {
            max_depth = max_depth.max(d);
            for c in &n.children {
                stack.push((c, d + 1));
            }
        }
        assert_eq!(m.ast_levels, max_depth);
        assert!(m.cyclomatic_complexity >= 1);
        assert_eq!(m.node_count, tree.nodes().count() as u32);
    }

    #[test]
    fn tree_serializes_round_trip() {
        let tree = parse("for i in xs:\n    print(i)").unwrap();
        let json = serde_json::to_string(&tree).unwrap();
        let back: SyntaxTree = serde_json::from_str(&json).unwrap();
        assert_eq!(tree, back);
    }
}

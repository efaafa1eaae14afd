//! Alignment of scored tokens to syntax-tree terminals.
//!
//! Model tokenizers split source on subword boundaries, so a token rarely
//! corresponds to exactly one lexeme. Alignment maps every token to at most one
//! terminal by byte-span overlap: the terminal sharing the most bytes wins,
//! ties go to the earliest terminal, and tokens that touch no terminal at all
//! (inter-lexeme whitespace, zero-width artifacts) stay unaligned. A terminal
//! may collect several tokens; a token never splits across terminals.

use crate::syntax::{AstNode, SyntaxTree};
use crate::tlp::TlpSequence;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Result of aligning one token sequence against one tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    /// For each token index, the id of its terminal, or `None` if unaligned.
    pub entries: Vec<Option<usize>>,
    /// Inverse view: terminal node id → ordered token indices. Only terminals
    /// that received at least one token appear.
    pub per_terminal: BTreeMap<usize, Vec<usize>>,
}

/// Alignment coverage diagnostics for one snippet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub unaligned_token_count: usize,
    pub uncovered_terminal_count: usize,
    /// Aligned tokens / total tokens; an empty sequence counts as fully
    /// aligned (1.0) so the ratio is always defined.
    pub coverage_ratio: f64,
}

/// Errors from aligning a sequence against a tree.
#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("token sequence and syntax tree were built from different sources")]
    SourceMismatch,
}

/// Subword markers tokenizers prepend or append to mark word boundaries.
const EDGE_MARKERS: &[&str] = &["Ġ", "▁", "##", "_"];

/// Strip any run of subword boundary markers from the front of a token.
pub fn strip_leading_markers(text: &str) -> &str {
    let mut s = text;
    loop {
        let mut changed = false;
        for m in EDGE_MARKERS {
            if let Some(rest) = s.strip_prefix(m) {
                s = rest;
                changed = true;
            }
        }
        if !changed {
            return s;
        }
    }
}

/// Strip subword boundary markers from the edges of a token's text.
///
/// Removes any run of marker strings from both ends plus at most one leading
/// plain space; interior characters are untouched. Display-only: alignment
/// works on byte spans and never consults the normalized text.
pub fn normalize_token(text: &str) -> String {
    let mut s = text;
    if let Some(rest) = s.strip_prefix(' ') {
        s = rest;
    }
    s = strip_leading_markers(s);
    loop {
        let mut changed = false;
        for m in EDGE_MARKERS {
            if let Some(rest) = s.strip_suffix(m) {
                s = rest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    s.to_string()
}

/// Align each token to the terminal it shares the most bytes with.
///
/// Both inputs must come from the same source text. The mapping is
/// many-to-one: every token lands on at most one terminal, chosen by maximum
/// byte overlap with ties broken toward the earliest terminal in source order.
/// Tokens overlapping no terminal are recorded as unaligned rather than
/// dropped, so `entries` always has one slot per token.
pub fn align(seq: &TlpSequence, tree: &SyntaxTree) -> Result<AlignmentMap, AlignError> {
    if seq.source != tree.source {
        return Err(AlignError::SourceMismatch);
    }
    let terminals = tree.terminals_in_order();
    let mut entries = Vec::with_capacity(seq.records.len());
    let mut per_terminal: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    // Terminals and tokens are both ordered and non-overlapping, so the sweep
    // never needs to back up past the first terminal that could still overlap
    // the current token.
    let mut lo = 0usize;
    for (token_idx, rec) in seq.records.iter().enumerate() {
        while lo < terminals.len() && terminals[lo].span.end <= rec.span.start {
            lo += 1;
        }
        let mut best: Option<(usize, usize)> = None; // (overlap, terminal position)
        for (pos, term) in terminals.iter().enumerate().skip(lo) {
            if term.span.start >= rec.span.end {
                break;
            }
            let overlap = term.span.overlap(&rec.span);
            if overlap > 0 && best.map_or(true, |(b, _)| overlap > b) {
                // Strict > keeps the earliest terminal on ties.
                best = Some((overlap, pos));
            }
        }
        match best {
            Some((_, pos)) => {
                let id = terminals[pos].node_id;
                entries.push(Some(id));
                per_terminal.entry(id).or_default().push(token_idx);
            }
            None => entries.push(None),
        }
    }
    Ok(AlignmentMap { entries, per_terminal })
}

/// Summarize how much of the token stream and terminal set the alignment used.
pub fn coverage_report(map: &AlignmentMap, tree: &SyntaxTree) -> CoverageReport {
    let total = map.entries.len();
    let unaligned = map.entries.iter().filter(|e| e.is_none()).count();
    let uncovered = tree
        .terminals_in_order()
        .iter()
        .filter(|t| !map.per_terminal.contains_key(&t.node_id))
        .count();
    CoverageReport {
        unaligned_token_count: unaligned,
        uncovered_terminal_count: uncovered,
        coverage_ratio: if total == 0 {
            1.0
        } else {
            (total - unaligned) as f64 / total as f64
        },
    }
}

/// Convenience: the terminal node for an aligned token, if any.
pub fn terminal_of<'t>(
    map: &AlignmentMap,
    tree: &'t SyntaxTree,
    token_idx: usize,
) -> Option<&'t AstNode> {
    let id = map.entries.get(token_idx).copied().flatten()?;
    tree.nodes().find(|n| n.node_id == id)
}

/// Tokens aligned into the subtree rooted at `node`, i.e. whose terminal lies
/// inside the node's span. Relies on terminals being spanned by their
/// ancestors.
pub fn tokens_under<'a>(map: &'a AlignmentMap, node: &AstNode) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    collect_tokens(map, node, &mut out);
    out.sort_unstable();
    out
}

fn collect_tokens(map: &AlignmentMap, node: &AstNode, out: &mut Vec<usize>) {
    if node.is_terminal {
        if let Some(tokens) = map.per_terminal.get(&node.node_id) {
            out.extend_from_slice(tokens);
        }
        return;
    }
    for child in &node.children {
        collect_tokens(map, child, out);
    }
}

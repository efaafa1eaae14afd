//! Randomized cross-checks of the pipeline against brute-force oracles.
//!
//! The alignment sweep, the tree aggregation, and the category pooling all
//! have slow-but-obviously-correct counterparts; these properties pit the real
//! implementations against them over randomized tokenizations of a pool of
//! real Python snippets.

use proptest::prelude::*;
use std::collections::BTreeMap;
use treelens_core::align::align;
use treelens_core::cluster::{annotate, category_scores, subcategory_scores, Aggregator, Category};
use treelens_core::syntax::{parse, Span, SyntaxTree};
use treelens_core::tlp::{tlp_from_pairs, TlpSequence};

const SOURCES: &[&str] = &[
    "x = 1",
    "def add(a, b):\n    return a + b",
    "if x > 0:\n    y = [1, 2, 3]\nelse:\n    y = {}",
    "for i in range(10):\n    total += i",
    "try:\n    risky()\nexcept ValueError as e:\n    raise",
    "while alive:\n    step()\n    assert ok",
    "class Point:\n    def __init__(self, x):\n        self.x = x",
    "squares = [n ** 2 for n in nums if n % 2 == 0]",
    "with open(path) as f:\n    data = f.read()  # slurp",
    "async def main():\n    await task\n    return lambda q: q or None",
];

/// Cut a source into contiguous token spans with randomized run lengths.
fn segment(source: &str, lengths: &[usize]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut at = 0usize;
    let mut i = 0usize;
    while at < source.len() {
        let mut step = lengths[i % lengths.len()].max(1);
        i += 1;
        // Keep spans on UTF-8 boundaries; the pool sources are ASCII, but the
        // guard keeps the generator honest if the pool ever grows.
        while !source.is_char_boundary((at + step).min(source.len())) {
            step += 1;
        }
        let end = (at + step).min(source.len());
        spans.push(Span::new(at, end));
        at = end;
    }
    spans
}

fn sequence(source: &str, spans: &[Span], probs: &[f64]) -> TlpSequence {
    let rows = spans
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = probs[i % probs.len()];
            (source[s.start..s.end].to_string(), *s, p.ln())
        })
        .collect();
    tlp_from_pairs(source, "prop-model", None, rows).expect("generated rows are valid")
}

/// O(tokens × terminals) reference alignment: max overlap, earliest tie.
fn oracle_align(seq: &TlpSequence, tree: &SyntaxTree) -> Vec<Option<usize>> {
    let terms = tree.terminals_in_order();
    seq.records
        .iter()
        .map(|rec| {
            let mut best: Option<(usize, usize)> = None;
            for t in &terms {
                let ov = rec.span.overlap(&t.span);
                if ov > 0 && best.map_or(true, |(b, _)| ov > b) {
                    best = Some((ov, t.node_id));
                }
            }
            best.map(|(_, id)| id)
        })
        .collect()
}

fn token_strategy() -> impl Strategy<Value = (usize, Vec<usize>, Vec<f64>)> {
    (
        0..SOURCES.len(),
        prop::collection::vec(1..6usize, 1..8),
        prop::collection::vec(0.01..1.0f64, 1..8),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn alignment_matches_bruteforce_overlap_matrix(
        (src_idx, lengths, probs) in token_strategy()
    ) {
        let source = SOURCES[src_idx];
        let tree = parse(source).unwrap();
        let spans = segment(source, &lengths);
        let seq = sequence(source, &spans, &probs);
        let map = align(&seq, &tree).unwrap();
        prop_assert_eq!(&map.entries, &oracle_align(&seq, &tree));
    }

    #[test]
    fn per_terminal_is_exact_inverse_of_entries(
        (src_idx, lengths, probs) in token_strategy()
    ) {
        let source = SOURCES[src_idx];
        let tree = parse(source).unwrap();
        let spans = segment(source, &lengths);
        let seq = sequence(source, &spans, &probs);
        let map = align(&seq, &tree).unwrap();
        let mut rebuilt: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (token, terminal) in map.entries.iter().enumerate() {
            if let Some(t) = terminal {
                rebuilt.entry(*t).or_default().push(token);
            }
        }
        prop_assert_eq!(&map.per_terminal, &rebuilt);
    }

    #[test]
    fn node_confidence_stays_inside_its_token_pool(
        (src_idx, lengths, probs) in token_strategy(),
        agg_pick in 0..3usize
    ) {
        let agg = [Aggregator::Median, Aggregator::Mean, Aggregator::Max][agg_pick];
        let source = SOURCES[src_idx];
        let tree = parse(source).unwrap();
        let spans = segment(source, &lengths);
        let seq = sequence(source, &spans, &probs);
        let map = align(&seq, &tree).unwrap();
        let annotated = annotate(&tree, &map, &seq, agg).unwrap();
        for node in annotated.nodes() {
            match node.confidence {
                Some(c) => {
                    prop_assert!(node.token_count > 0);
                    prop_assert!((0.0..=1.0).contains(&c));
                }
                None => prop_assert_eq!(node.token_count, 0),
            }
        }
        // The root pools every aligned token.
        let aligned = map.entries.iter().filter(|e| e.is_some()).count();
        prop_assert_eq!(annotated.root.token_count, aligned);
    }

    #[test]
    fn category_pool_is_exactly_the_union_of_its_kind_pools(
        (src_idx, lengths, probs) in token_strategy()
    ) {
        let source = SOURCES[src_idx];
        let tree = parse(source).unwrap();
        let spans = segment(source, &lengths);
        let seq = sequence(source, &spans, &probs);
        let map = align(&seq, &tree).unwrap();
        let annotated = annotate(&tree, &map, &seq, Aggregator::Median).unwrap();
        let trees = vec![annotated];
        let sub = subcategory_scores(&trees, Aggregator::Median);
        let mapping = treelens_core::cluster::default_mapping();
        let cats = category_scores(&sub, mapping);
        // Every category pool equals the concatenation of its kinds' pools in
        // lexicographic kind order — recomputed here by brute force.
        for category in Category::ALL {
            let mut expected = Vec::new();
            for (kind, values) in &sub {
                if mapping.category_for(kind) == category {
                    expected.extend_from_slice(values);
                }
            }
            prop_assert_eq!(&cats[&category], &expected);
        }
        let pooled: usize = cats.values().map(|v| v.len()).sum();
        let listed: usize = sub.values().map(|v| v.len()).sum();
        prop_assert_eq!(pooled, listed);
    }
}

//! Token-level prediction sequences: per-token probabilities of the realized
//! source, plus ingestion from raw logits or precomputed logprobs and the JSONL
//! interchange format.
//!
//! Probabilities always refer to the token the model actually had to produce at
//! that position. Sequences are validated at construction (span ordering,
//! probability range) so downstream stages can rely on them unchecked.

use crate::syntax::Span;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// One token of a scored sequence.
///
/// `probability` and `logprob` describe the same quantity; `probability`
/// equals `exp(logprob)` by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlpRecord {
    pub token_text: String,
    pub span: Span,
    pub probability: f64,
    pub logprob: f64,
}

/// A scored token sequence over one snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlpSequence {
    pub source: String,
    pub records: Vec<TlpRecord>,
    /// Byte range the model generated (vs. prompt context), when known.
    pub generated_span: Option<Span>,
    pub model_id: String,
}

/// Input row carrying a full next-token distribution.
#[derive(Debug, Clone)]
pub struct DistributionRow {
    pub token_text: String,
    pub span: Span,
    /// Raw (unnormalized) scores per candidate token.
    pub logits: BTreeMap<String, f64>,
    /// Key of the token that actually occurs in the source.
    pub realized: String,
}

/// Validation and computation errors for scored sequences.
#[derive(Debug, thiserror::Error)]
pub enum TlpError {
    #[error("token {index}: logprob {logprob} implies probability outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, logprob: f64 },
    #[error("token {index}: span overlaps the previous token")]
    SpanOverlap { index: usize },
    #[error("token {index}: span starts before the previous token")]
    UnsortedSpans { index: usize },
    #[error("token {index}: span {span} exceeds source length {len}")]
    SpanOutOfBounds { index: usize, span: Span, len: usize },
    #[error("token {index}: realized token {realized:?} absent from its distribution")]
    MissingRealizedToken { index: usize, realized: String },
    #[error("token {index}: empty distribution")]
    EmptyDistribution { index: usize },
    #[error("cross-entropy of an empty sequence is undefined")]
    EmptySequence,
    #[error("token {index} has probability 0; refusing to clamp")]
    ZeroProbability { index: usize },
}

/// Highest logprob accepted as "zero within producer rounding".
const LOGPROB_SLACK: f64 = 1e-6;

fn validate_spans(source: &str, spans: impl Iterator<Item = Span>) -> Result<(), TlpError> {
    let mut prev: Option<Span> = None;
    for (index, span) in spans.enumerate() {
        if span.start > span.end || span.end > source.len() {
            return Err(TlpError::SpanOutOfBounds { index, span, len: source.len() });
        }
        if let Some(p) = prev {
            if span.start < p.start {
                return Err(TlpError::UnsortedSpans { index });
            }
            if span.start < p.end {
                return Err(TlpError::SpanOverlap { index });
            }
        }
        prev = Some(span);
    }
    Ok(())
}

/// Build a sequence from `(token_text, span, logprob)` rows.
///
/// Logprobs must be ≤ 0 up to a small producer-rounding slack; values inside
/// the slack are clamped to exactly 0 so `probability = exp(logprob)` stays in
/// range. Spans must be ordered by start, non-overlapping, and inside the
/// source.
pub fn tlp_from_pairs(
    source: &str,
    model_id: &str,
    generated_span: Option<Span>,
    rows: Vec<(String, Span, f64)>,
) -> Result<TlpSequence, TlpError> {
    validate_spans(source, rows.iter().map(|r| r.1))?;
    let mut records = Vec::with_capacity(rows.len());
    for (index, (token_text, span, logprob)) in rows.into_iter().enumerate() {
        if !(logprob <= LOGPROB_SLACK) {
            return Err(TlpError::ProbabilityOutOfRange { index, logprob });
        }
        let logprob = logprob.min(0.0);
        records.push(TlpRecord { token_text, span, probability: logprob.exp(), logprob });
    }
    Ok(TlpSequence {
        source: source.to_string(),
        records,
        generated_span,
        model_id: model_id.to_string(),
    })
}

/// Log softmax mass of the realized token, with max-subtraction for numerical
/// stability; summation follows the distribution's key order so results are
/// deterministic.
fn realized_logprob(
    index: usize,
    logits: &BTreeMap<String, f64>,
    realized: &str,
) -> Result<f64, TlpError> {
    let max = logits.values().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    if !max.is_finite() {
        return Err(TlpError::EmptyDistribution { index });
    }
    let realized_logit = *logits
        .get(realized)
        .ok_or_else(|| TlpError::MissingRealizedToken { index, realized: realized.to_string() })?;
    let denom: f64 = logits.values().map(|&v| (v - max).exp()).sum();
    Ok((realized_logit - max) - denom.ln())
}

/// Build a sequence from full per-position distributions.
///
/// The probability of each position is the softmax mass of the realized token,
/// computed with max-subtraction for numerical stability; summation follows the
/// distribution's key order so results are deterministic.
pub fn tlp_from_distributions(
    source: &str,
    model_id: &str,
    generated_span: Option<Span>,
    rows: Vec<DistributionRow>,
) -> Result<TlpSequence, TlpError> {
    validate_spans(source, rows.iter().map(|r| r.span))?;
    let mut records = Vec::with_capacity(rows.len());
    for (index, row) in rows.into_iter().enumerate() {
        let logprob = realized_logprob(index, &row.logits, &row.realized)?;
        records.push(TlpRecord {
            token_text: row.token_text,
            span: row.span,
            probability: logprob.exp(),
            logprob,
        });
    }
    Ok(TlpSequence {
        source: source.to_string(),
        records,
        generated_span,
        model_id: model_id.to_string(),
    })
}

/// Mean negative log probability over the sequence.
///
/// Errors on empty sequences and on any exactly-zero probability instead of
/// clamping: a zero would silently turn into infinity and poison corpus means.
pub fn cross_entropy(seq: &TlpSequence) -> Result<f64, TlpError> {
    if seq.records.is_empty() {
        return Err(TlpError::EmptySequence);
    }
    let mut sum = 0.0;
    for (index, rec) in seq.records.iter().enumerate() {
        if rec.probability == 0.0 {
            return Err(TlpError::ZeroProbability { index });
        }
        sum += -rec.probability.ln();
    }
    Ok(sum / seq.records.len() as f64)
}

/// Mean probability over the sequence (the model's intrinsic per-token score).
pub fn mean_probability(seq: &TlpSequence) -> Option<f64> {
    if seq.records.is_empty() {
        return None;
    }
    let sum: f64 = seq.records.iter().map(|r| r.probability).sum();
    Some(sum / seq.records.len() as f64)
}

// ---------------------------------------------------------------------------
// JSONL interchange
// ---------------------------------------------------------------------------

/// One JSONL line: a scored sequence tagged with its snippet id.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TlpLine {
    snippet_id: String,
    model_id: String,
    source: String,
    generated_start: Option<usize>,
    generated_end: Option<usize>,
    tokens: Vec<TokenLine>,
}

/// Token payloads come either as precomputed logprobs or as raw distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum TokenLine {
    Dist {
        text: String,
        start: usize,
        end: usize,
        logits: BTreeMap<String, f64>,
        realized: String,
    },
    Pair {
        text: String,
        start: usize,
        end: usize,
        logprob: f64,
    },
}

/// Errors reading or writing the JSONL interchange format.
#[derive(Debug, thiserror::Error)]
pub enum TlpFileError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line} (snippet {snippet_id:?}): {source}")]
    Invalid { line: usize, snippet_id: String, source: TlpError },
    #[error("line {line}: generated_start and generated_end must be both present or both null")]
    HalfGeneratedSpan { line: usize },
}

/// Read scored sequences from JSONL, one `(snippet_id, sequence)` per line.
///
/// Blank lines are skipped. Both token payload forms are accepted and validated
/// through the same constructors as programmatic input.
pub fn read_tlp_jsonl<R: BufRead>(reader: R) -> Result<Vec<(String, TlpSequence)>, TlpFileError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: TlpLine = serde_json::from_str(&text)
            .map_err(|source| TlpFileError::Json { line: line_no, source })?;
        let generated_span = match (parsed.generated_start, parsed.generated_end) {
            (Some(s), Some(e)) => Some(Span::new(s, e)),
            (None, None) => None,
            _ => return Err(TlpFileError::HalfGeneratedSpan { line: line_no }),
        };
        let invalid = |source| TlpFileError::Invalid {
            line: line_no,
            snippet_id: parsed.snippet_id.clone(),
            source,
        };
        // Distribution tokens collapse to their realized log softmax mass, so
        // a line may freely mix both token forms.
        let rows: Vec<(String, Span, f64)> = parsed
            .tokens
            .iter()
            .enumerate()
            .map(|(index, t)| match t {
                TokenLine::Pair { text, start, end, logprob } => {
                    Ok((text.clone(), Span::new(*start, *end), *logprob))
                }
                TokenLine::Dist { text, start, end, logits, realized } => {
                    let logprob = realized_logprob(index, logits, realized)?;
                    Ok((text.clone(), Span::new(*start, *end), logprob))
                }
            })
            .collect::<Result<_, TlpError>>()
            .map_err(&invalid)?;
        let seq = tlp_from_pairs(&parsed.source, &parsed.model_id, generated_span, rows)
            .map_err(invalid)?;
        out.push((parsed.snippet_id, seq));
    }
    Ok(out)
}

/// Write scored sequences as JSONL in the logprob form.
///
/// Finite values round-trip bit-exactly through [`read_tlp_jsonl`].
pub fn write_tlp_jsonl<W: Write>(
    mut writer: W,
    entries: &[(String, TlpSequence)],
) -> Result<(), TlpFileError> {
    for (snippet_id, seq) in entries {
        let line = TlpLine {
            snippet_id: snippet_id.clone(),
            model_id: seq.model_id.clone(),
            source: seq.source.clone(),
            generated_start: seq.generated_span.map(|s| s.start),
            generated_end: seq.generated_span.map(|s| s.end),
            tokens: seq
                .records
                .iter()
                .map(|r| TokenLine::Pair {
                    text: r.token_text.clone(),
                    start: r.span.start,
                    end: r.span.end,
                    logprob: r.logprob,
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &line)
            .map_err(|source| TlpFileError::Json { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

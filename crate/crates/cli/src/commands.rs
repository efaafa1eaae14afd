//! One function per subcommand. Each loads its inputs, runs the library
//! pipeline, writes outputs atomically, and reports to standard output —
//! logging stays on standard error so the data stream pipes cleanly.

use crate::util::{
    fmt_ci, fmt_point, load_dataset, load_mapping, load_tlp_entries, load_tlp_map, write_atomic,
    CliError,
};
use crate::{
    AlignArgs, CausalArgs, ExplainGlobalArgs, ExplainLocalArgs, FetchArgs, OutFormat,
    ValidateArgs,
};
use serde::Serialize;
use treelens_client::{Client, EndpointConfig, SnippetRequest};
use treelens_core::align::{align, coverage_report};
use treelens_core::causal::{causal_csv, causal_report, CausalConfig, Treatment};
use treelens_core::cluster::{annotate, Category};
use treelens_core::render::{
    annotations_json, render_ast, render_sequence, RenderConfig, RenderError, RenderMode,
};
use treelens_core::report::{
    analyze_corpus, heatmap_json, report_csv, report_json, threshold_flags, AnalysisOptions,
    CorpusReport, ThresholdFlag,
};
use treelens_core::syntax::parse;
use treelens_core::tlp::{write_tlp_jsonl, TlpSequence};

/// Keep only the requested snippet ids (all of them when none were named),
/// preserving file order and failing fast on an unknown id.
fn select_snippets(
    entries: Vec<(String, TlpSequence)>,
    wanted: &[String],
) -> Result<Vec<(String, TlpSequence)>, CliError> {
    if wanted.is_empty() {
        return Ok(entries);
    }
    for w in wanted {
        if !entries.iter().any(|(id, _)| id == w) {
            return Err(CliError::input(format!(
                "snippet {w:?} is not present in the scored input"
            )));
        }
    }
    Ok(entries
        .into_iter()
        .filter(|(id, _)| wanted.iter().any(|w| w == id))
        .collect())
}

pub fn explain_local(args: &ExplainLocalArgs) -> Result<(), CliError> {
    let entries = load_tlp_entries(&args.tlp)?;
    let selected = select_snippets(entries, &args.snippet)?;
    let config = RenderConfig {
        mode: args.mode,
        format: args.render_format,
        ..RenderConfig::default()
    };
    for (id, seq) in &selected {
        let tree = parse(&seq.source).map_err(CliError::internal)?;
        let map = align(seq, &tree).map_err(CliError::internal)?;
        let annotated = annotate(&tree, &map, seq, args.agg).map_err(CliError::internal)?;
        let doc = match args.mode {
            RenderMode::Sequence => render_sequence(seq, &config),
            RenderMode::AstComplete | RenderMode::AstPartial => render_ast(&annotated, &config),
        }
        .map_err(|e| match e {
            RenderError::InvalidPalette(_) => CliError::internal(e),
            other => CliError::input(format!("snippet {id}: {other}")),
        })?;
        let doc_path = args.out.join(format!(
            "{id}.{}.{}",
            args.mode.name(),
            args.render_format.extension()
        ));
        write_atomic(&doc_path, doc.as_bytes())?;
        let notes_path = args.out.join(format!("{id}.annotations.json"));
        write_atomic(&notes_path, annotations_json(&annotated, id).as_bytes())?;
    }
    Ok(())
}

fn analyze(
    dataset_path: &std::path::Path,
    tlp_path: &std::path::Path,
    mapping: &treelens_core::cluster::CategoryMapping,
    opts: &AnalysisOptions,
) -> Result<CorpusReport, CliError> {
    let dataset = load_dataset(dataset_path)?;
    let tlp = load_tlp_map(tlp_path)?;
    analyze_corpus(&dataset, &tlp, mapping, opts).map_err(|e| CliError::input(e.to_string()))
}

pub fn explain_global(args: &ExplainGlobalArgs) -> Result<(), CliError> {
    let mapping = load_mapping(args.mapping.as_deref())?;
    let opts = AnalysisOptions {
        aggregator: args.agg,
        bootstrap_reps: args.reps,
        bootstrap_seed: args.seed,
        max_tokens: args.max_tokens,
    };
    let report = analyze(&args.dataset, &args.tlp, &mapping, &opts)?;
    write_atomic(&args.out.join("report.json"), report_json(&report).as_bytes())?;
    write_atomic(&args.out.join("report.csv"), report_csv(&report).as_bytes())?;
    write_atomic(
        &args.out.join("heatmap.json"),
        heatmap_json(&[&report.category_report]).as_bytes(),
    )?;
    match args.format {
        OutFormat::Json => print!("{}", report_json(&report)),
        OutFormat::Text => print_global_summary(&report, args.tau),
    }
    Ok(())
}

fn print_global_summary(report: &CorpusReport, tau: f64) {
    println!("model: {}", report.model_id);
    println!(
        "snippets: {} analyzed, {} skipped, {} truncated",
        report.snippet_analyses.len(),
        report.skipped_snippets,
        report.truncated_snippets
    );
    println!("intrinsic mean probability: {:.4}", report.intrinsic);
    println!();
    let flags = threshold_flags(&report.category_report, tau);
    println!(
        "{:<24} {:>6} {:>14} {:>6}  tau={tau}",
        "category", "point", "95% ci", "n"
    );
    for (category, stats) in &report.category_report.per_category {
        let flag = match flags[category] {
            ThresholdFlag::Pass => "pass",
            ThresholdFlag::Fail => "fail",
            ThresholdFlag::Null => "null",
        };
        println!(
            "{:<24} {:>6} {:>14} {:>6}  {flag}",
            category.name(),
            fmt_point(stats.point),
            fmt_ci(stats.ci_low, stats.ci_high),
            stats.n_samples
        );
    }
}

#[derive(Serialize)]
struct CoverageRow {
    snippet_id: String,
    tokens: usize,
    unaligned_tokens: usize,
    uncovered_terminals: usize,
    coverage_ratio: f64,
}

pub fn align_cmd(args: &AlignArgs) -> Result<(), CliError> {
    let entries = load_tlp_entries(&args.tlp)?;
    let selected = select_snippets(entries, &args.snippet)?;
    let mut rows = Vec::with_capacity(selected.len());
    for (id, seq) in &selected {
        let tree = parse(&seq.source).map_err(CliError::internal)?;
        let map = align(seq, &tree).map_err(CliError::internal)?;
        let coverage = coverage_report(&map, &tree);
        rows.push(CoverageRow {
            snippet_id: id.clone(),
            tokens: seq.records.len(),
            unaligned_tokens: coverage.unaligned_token_count,
            uncovered_terminals: coverage.uncovered_terminal_count,
            coverage_ratio: coverage.coverage_ratio,
        });
    }
    match args.format {
        OutFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&rows).map_err(CliError::internal)?
        ),
        OutFormat::Text => {
            println!(
                "{:<20} {:>7} {:>10} {:>10} {:>9}",
                "snippet", "tokens", "unaligned", "uncovered", "coverage"
            );
            for row in &rows {
                println!(
                    "{:<20} {:>7} {:>10} {:>10} {:>9.3}",
                    row.snippet_id,
                    row.tokens,
                    row.unaligned_tokens,
                    row.uncovered_terminals,
                    row.coverage_ratio
                );
            }
        }
    }
    Ok(())
}

pub fn causal_cmd(args: &CausalArgs) -> Result<(), CliError> {
    let mapping = load_mapping(args.mapping.as_deref())?;
    let opts = AnalysisOptions {
        aggregator: args.agg,
        bootstrap_reps: args.reps,
        bootstrap_seed: args.seed,
        max_tokens: args.max_tokens,
    };
    let corpus = analyze(&args.dataset, &args.tlp, &mapping, &opts)?;
    let treatments: Vec<Treatment> = if args.treatment.is_empty() {
        // Default sweep: the intrinsic baseline plus every named category.
        std::iter::once(Treatment::Intrinsic)
            .chain(Category::TEN.iter().map(|c| Treatment::Category(*c)))
            .collect()
    } else {
        args.treatment
            .iter()
            .map(|t| t.parse().map_err(CliError::input))
            .collect::<Result<_, _>>()?
    };
    let config = CausalConfig {
        seed: args.seed,
        permutations: args.permutations,
        zscore: args.zscore,
    };
    let report = causal_report(&corpus, &treatments, &mapping, &config);
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report).map_err(CliError::internal)? + "\n";
        write_atomic(&out.join("causal.json"), json.as_bytes())?;
        write_atomic(&out.join("causal.csv"), causal_csv(&report).as_bytes())?;
    }
    match args.format {
        OutFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(CliError::internal)?
        ),
        OutFormat::Text => {
            println!(
                "{:<22} {:<18} {:>5} {:>8} {:>8} {:>8}  placebo",
                "category", "subcategory", "n", "rho", "ate", "stderr"
            );
            for row in &report.rows {
                if let Some(err) = &row.error {
                    println!(
                        "{:<22} {:<18} {:>5} skipped: {err}",
                        row.category, row.subcategory, row.n
                    );
                    continue;
                }
                println!(
                    "{:<22} {:<18} {:>5} {:>8} {:>8} {:>8}  {}",
                    row.category,
                    row.subcategory,
                    row.n,
                    fmt_point(row.rho),
                    fmt_point(row.ate),
                    fmt_point(row.stderr),
                    match row.placebo_pass {
                        Some(true) => "pass",
                        Some(false) => "FAIL",
                        None => "—",
                    }
                );
            }
        }
    }
    Ok(())
}

/// Largest prompt offset that fits the snippet on a character boundary.
fn clamp_prompt(source: &str, prompt_bytes: usize) -> usize {
    let mut at = prompt_bytes.min(source.len());
    while !source.is_char_boundary(at) {
        at -= 1;
    }
    at
}

pub fn fetch_logprobs(args: &FetchArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.dataset)?;
    let mut cfg = EndpointConfig::from_env(&args.base_url, &args.model);
    cfg.timeout_secs = args.timeout_secs;
    cfg.max_tokens = args.max_tokens;
    cfg.echo = !args.no_echo;
    let mut client = Client::new(cfg).map_err(|e| CliError::input(e.to_string()))?;
    if let Some(dir) = &args.cache_dir {
        client = client.with_cache(dir);
    }
    let requests: Vec<SnippetRequest> = dataset
        .iter()
        .map(|s| SnippetRequest {
            snippet_id: s.snippet_id.clone(),
            source: s.source.clone(),
            prompt_len: clamp_prompt(&s.source, args.prompt_bytes),
        })
        .collect();
    let results = client.fetch_corpus(&requests, args.jobs);
    let mut scored = Vec::new();
    let mut failed = Vec::new();
    for (id, result) in results {
        match result {
            Ok(seq) => scored.push((id, seq)),
            Err(e) => {
                log::error!("snippet {id}: {e}");
                failed.push(id);
            }
        }
    }
    let mut buf = Vec::new();
    write_tlp_jsonl(&mut buf, &scored).map_err(CliError::internal)?;
    write_atomic(&args.out, &buf)?;
    log::info!("scored {} of {} snippets", scored.len(), dataset.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "{} of {} snippets failed (successes were written): {}",
            failed.len(),
            dataset.len(),
            failed.join(", ")
        )))
    }
}

#[derive(Serialize)]
struct FileCheck {
    kind: &'static str,
    path: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn validate_cmd(args: &ValidateArgs) -> Result<(), CliError> {
    if args.tlp.is_empty() && args.dataset.is_empty() && args.mapping.is_empty() {
        return Err(CliError::input(
            "nothing to validate: pass --tlp, --dataset, or --mapping",
        ));
    }
    let mut checks = Vec::new();
    let mut check = |kind: &'static str, path: &std::path::Path, result: Result<(), CliError>| {
        checks.push(FileCheck {
            kind,
            path: path.display().to_string(),
            ok: result.is_ok(),
            error: result.err().map(|e| e.to_string()),
        });
    };
    for path in &args.tlp {
        check("tlp", path, load_tlp_map(path).map(|_| ()));
    }
    for path in &args.dataset {
        check("dataset", path, load_dataset(path).map(|_| ()));
    }
    for path in &args.mapping {
        check("mapping", path, load_mapping(Some(path)).map(|_| ()));
    }
    match args.format {
        OutFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&checks).map_err(CliError::internal)?
        ),
        OutFormat::Text => {
            for c in &checks {
                match &c.error {
                    None => println!("ok    {:<8} {}", c.kind, c.path),
                    Some(e) => println!("FAIL  {:<8} {}: {e}", c.kind, c.path),
                }
            }
        }
    }
    let failed = checks.iter().filter(|c| !c.ok).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "{failed} of {} files failed validation",
            checks.len()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_clamp_respects_char_boundaries() {
        assert_eq!(clamp_prompt("héllo", 2), 1); // mid-é floors to 1
        assert_eq!(clamp_prompt("héllo", 3), 3);
        assert_eq!(clamp_prompt("abc", 99), 3);
        assert_eq!(clamp_prompt("", 5), 0);
    }

    #[test]
    fn snippet_selection_keeps_order_and_rejects_unknown() {
        let seq = |src: &str| treelens_core::tlp::tlp_from_pairs(src, "m", None, vec![]).unwrap();
        let entries = vec![
            ("a".to_string(), seq("x")),
            ("b".to_string(), seq("y")),
            ("c".to_string(), seq("z")),
        ];
        let picked =
            select_snippets(entries.clone(), &["c".to_string(), "a".to_string()]).unwrap();
        let ids: Vec<&str> = picked.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
        assert!(select_snippets(entries, &["ghost".to_string()]).is_err());
    }
}

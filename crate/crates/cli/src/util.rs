//! Shared plumbing: error-to-exit-code mapping, atomic file writes, and input
//! loaders with path context on every failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use treelens_core::cluster::{default_mapping, load_category_mapping, CategoryMapping};
use treelens_core::report::{read_dataset_jsonl, DatasetSnippet};
use treelens_core::tlp::{read_tlp_jsonl, TlpSequence};

/// A failure with its process exit code: 1 for anything the user can fix in
/// inputs or flags, 2 for violated internal invariants.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn internal(msg: impl std::fmt::Display) -> Self {
        CliError::Internal(msg.to_string())
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))
}

/// Load scored sequences keyed by snippet id, rejecting duplicates.
pub fn load_tlp_map(path: &Path) -> Result<BTreeMap<String, TlpSequence>, CliError> {
    let entries = load_tlp_entries(path)?;
    let mut map = BTreeMap::new();
    for (id, seq) in entries {
        if map.insert(id.clone(), seq).is_some() {
            return Err(CliError::input(format!(
                "{}: snippet id {id:?} appears more than once",
                path.display()
            )));
        }
    }
    Ok(map)
}

/// Load scored sequences in file order.
pub fn load_tlp_entries(path: &Path) -> Result<Vec<(String, TlpSequence)>, CliError> {
    read_tlp_jsonl(open(path)?)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetSnippet>, CliError> {
    let snippets = read_dataset_jsonl(open(path)?)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut seen = std::collections::BTreeSet::new();
    for snip in &snippets {
        if !seen.insert(&snip.snippet_id) {
            return Err(CliError::input(format!(
                "{}: snippet id {:?} appears more than once",
                path.display(),
                snip.snippet_id
            )));
        }
    }
    Ok(snippets)
}

/// The mapping at `path`, or the bundled default when no path is given.
pub fn load_mapping(path: Option<&Path>) -> Result<CategoryMapping, CliError> {
    match path {
        None => Ok(default_mapping().clone()),
        Some(p) => load_category_mapping(p)
            .map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
    }
}

/// Write a whole file through a same-directory temp file plus rename, so a
/// crash can never leave a half-written output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let context = |e: &dyn std::fmt::Display| {
        CliError::input(format!("cannot write {}: {e}", path.display()))
    };
    std::fs::create_dir_all(&parent).map_err(|e| context(&e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(|e| context(&e))?;
    tmp.write_all(bytes).map_err(|e| context(&e))?;
    tmp.persist(path).map_err(|e| context(&e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Text-table confidence formatting: two decimals, NULL as an em dash.
pub fn fmt_point(p: Option<f64>) -> String {
    match p {
        Some(v) => format!("{v:.2}"),
        None => "—".to_string(),
    }
}

/// Confidence interval as `[lo, hi]`, or a dash when absent.
pub fn fmt_ci(lo: Option<f64>, hi: Option<f64>) -> String {
    match (lo, hi) {
        (Some(lo), Some(hi)) => format!("[{lo:.2}, {hi:.2}]"),
        _ => "—".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_atomic_creates_parents_and_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep/nested/file.txt");
        write_atomic(&path, b"one").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "one");
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        // No stray temp files left next to the output.
        let siblings: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(siblings, vec![std::ffi::OsString::from("file.txt")]);
    }

    #[test]
    fn loaders_name_the_failing_file() {
        let missing = Path::new("/definitely/not/here.jsonl");
        let err = load_tlp_entries(missing).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.jsonl"));
        assert_eq!(err.code(), 1);
    }

    #[test]
    fn duplicate_snippet_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let line = r#"{"snippet_id":"s","model_id":"m","source":"x","generated_start":null,"generated_end":null,"tokens":[{"text":"x","start":0,"end":1,"logprob":-0.5}]}"#;
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        let err = load_tlp_map(&path).unwrap_err();
        assert!(err.to_string().contains("more than once"));
    }

    #[test]
    fn point_formatting_keeps_null_distinct() {
        assert_eq!(fmt_point(Some(0.0)), "0.00");
        assert_eq!(fmt_point(None), "—");
        assert_ne!(fmt_point(Some(0.0)), fmt_point(None));
    }
}

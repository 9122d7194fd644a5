//! Plain-text run reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::metrics::MetricsReport;
use crate::error::Result;
use crate::tokenizer::to_hex;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunMetadata {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub data_fingerprint: String,
}

/// Hash over `(name, content hash)` pairs in the given order, in the spirit
/// of a version-control tree hash.
pub fn fingerprint_files<'a>(
    base: &Path,
    names: impl IntoIterator<Item = &'a Path>,
) -> Result<String> {
    let mut tree = Sha256::new();
    for name in names {
        let blob = Sha256::digest(fs::read(base.join(name))?);
        tree.update(name.to_string_lossy().as_bytes());
        tree.update(b"\0");
        tree.update(blob);
    }
    Ok(to_hex(&tree.finalize()))
}

/// Renders a metrics report with run metadata as `key = value` lines.
pub fn render_report(meta: &RunMetadata, report: &MetricsReport, class_names: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "stage = {}", meta.stage);
    let _ = writeln!(s, "config_hash = {}", meta.config_hash);
    let _ = writeln!(s, "seed = {}", meta.seed);
    let _ = writeln!(s, "data_fingerprint = {}", meta.data_fingerprint);
    let _ = writeln!(s, "accuracy = {:.6}", report.accuracy);
    let _ = writeln!(s, "macro_f1 = {:.6}", report.macro_f1);
    if let Some(p) = report.perplexity {
        let _ = writeln!(s, "perplexity = {p:.6}");
    }
    for (c, m) in report.per_class.iter().enumerate() {
        let name = class_names
            .get(c)
            .map_or_else(|| c.to_string(), Clone::clone);
        let _ = writeln!(
            s,
            "class.{name} = precision {:.6} recall {:.6} f1 {:.6} support {}",
            m.precision, m.recall, m.f1, m.support
        );
    }
    for (c, row) in report.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "confusion.{c} = {}", cells.join(" "));
    }
    s
}

/// Report for a language-model run: perplexity only.
pub fn render_lm_report(meta: &RunMetadata, perplexity: f64, val_trace: &[(usize, f64)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "stage = {}", meta.stage);
    let _ = writeln!(s, "config_hash = {}", meta.config_hash);
    let _ = writeln!(s, "seed = {}", meta.seed);
    let _ = writeln!(s, "data_fingerprint = {}", meta.data_fingerprint);
    let _ = writeln!(s, "perplexity = {perplexity:.6}");
    for (step, p) in val_trace {
        let _ = writeln!(s, "val_perplexity.{step} = {p:.6}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::metrics::from_confusion;

    #[test]
    fn report_lists_every_field() {
        let meta = RunMetadata {
            stage: "evaluate".into(),
            config_hash: "abc".into(),
            seed: 7,
            data_fingerprint: "f00".into(),
        };
        let r = from_confusion(vec![vec![8, 2], vec![3, 7]]);
        let text = render_report(&meta, &r, &["bach".into(), "chopin".into()]);
        assert!(text.contains("config_hash = abc"));
        assert!(text.contains("macro_f1 = 0.749"));
        assert!(text.contains("class.chopin = "));
        assert!(text.contains("confusion.1 = 3 7"));
    }

    #[test]
    fn fingerprint_depends_on_content() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a"), b"one").unwrap();
        let p = Path::new("a");
        let h1 = fingerprint_files(dir.path(), [p]).unwrap();
        std::fs::write(dir.path().join("a"), b"two").unwrap();
        let h2 = fingerprint_files(dir.path(), [p]).unwrap();
        assert_ne!(h1, h2);
        assert_eq!(h1.len(), 64);
    }
}

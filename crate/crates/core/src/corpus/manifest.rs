use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const FIELDS: [&str; 5] = ["piece_id", "composer", "page", "path", "n_features"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PageRecord {
    pub piece_id: String,
    pub composer: String,
    pub page: u32,
    pub path: PathBuf,
    pub n_features: usize,
}

impl PageRecord {
    /// `piece:page`, used to name pages in outputs.
    pub fn page_id(&self) -> String {
        format!("{}:{}", self.piece_id, self.page)
    }
}

/// Ordered page records; `(piece_id, page)` pairs are unique.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<PageRecord>,
    /// Directory that relative record paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<PageRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert((r.piece_id.as_str(), r.page)) {
                return Err(Error::Config(format!(
                    "duplicate manifest entry for piece `{}` page {}",
                    r.piece_id, r.page
                )));
            }
        }
        Ok(Manifest {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &PageRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    pub fn pieces(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.piece_id.as_str()).collect()
    }

    pub fn composers(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.composer.as_str()).collect()
    }

    pub fn with_records(&self, records: Vec<PageRecord>) -> Manifest {
        Manifest {
            records,
            base_dir: self.base_dir.clone(),
        }
    }

    /// One tab-separated `key=value` record per line, fields in fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            writeln!(
                out,
                "piece_id={}\tcomposer={}\tpage={}\tpath={}\tn_features={}",
                r.piece_id,
                r.composer,
                r.page,
                r.path.display(),
                r.n_features
            )
            .unwrap();
        }
        out
    }

    /// Inverse of [`Manifest::to_text`]; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != FIELDS.len() {
                return Err(bad(format!(
                    "expected {} fields, got {}",
                    FIELDS.len(),
                    parts.len()
                )));
            }
            let mut values = [""; 5];
            for (k, (part, field)) in parts.iter().zip(FIELDS).enumerate() {
                let (key, value) = part
                    .split_once('=')
                    .ok_or_else(|| bad(format!("expected `key=value`, got `{part}`")))?;
                if key != field {
                    return Err(bad(format!(
                        "field {} must be `{field}`, got `{key}`",
                        k + 1
                    )));
                }
                values[k] = value;
            }
            records.push(PageRecord {
                piece_id: values[0].to_string(),
                composer: values[1].to_string(),
                page: values[2]
                    .parse()
                    .map_err(|_| bad(format!("bad page `{}`", values[2])))?,
                path: PathBuf::from(values[3]),
                n_features: values[4]
                    .parse()
                    .map_err(|_| bad(format!("bad n_features `{}`", values[4])))?,
            });
        }
        Manifest::new(records, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, base)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Dense label ids for composers, in sorted name order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(mut names: Vec<String>) -> Self {
        names.sort();
        names.dedup();
        LabelSet { names }
    }

    pub fn from_manifest(manifest: &Manifest) -> Self {
        LabelSet::new(
            manifest
                .composers()
                .into_iter()
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(piece: &str, page: u32) -> PageRecord {
        PageRecord {
            piece_id: piece.into(),
            composer: "chopin".into(),
            page,
            path: format!("scores/{piece}_{page}.bscr").into(),
            n_features: 120,
        }
    }

    #[test]
    fn text_format() {
        let m = Manifest::new(vec![rec("op10", 0), rec("op10", 1)], "").unwrap();
        let text = m.to_text();
        assert_eq!(
            text.lines().next().unwrap(),
            "piece_id=op10\tcomposer=chopin\tpage=0\tpath=scores/op10_0.bscr\tn_features=120"
        );
        assert_eq!(Manifest::parse(&text, "").unwrap(), m);
    }

    #[test]
    fn rejects_duplicates_and_bad_fields() {
        assert!(Manifest::new(vec![rec("a", 0), rec("a", 0)], "").is_err());
        assert!(
            Manifest::parse("composer=x\tpiece_id=a\tpage=0\tpath=p\tn_features=1\n", "").is_err()
        );
        assert!(Manifest::parse(
            "piece_id=a\tcomposer=x\tpage=zero\tpath=p\tn_features=1\n",
            ""
        )
        .is_err());
    }

    #[test]
    fn labels_are_sorted_and_dense() {
        let labels = LabelSet::new(vec!["liszt".into(), "bach".into(), "liszt".into()]);
        assert_eq!(labels.len(), 2);
        assert_eq!(labels.id("bach"), Some(0));
        assert_eq!(labels.id("liszt"), Some(1));
        assert_eq!(labels.id("mozart"), None);
    }
}

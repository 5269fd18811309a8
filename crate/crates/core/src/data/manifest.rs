use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One `label<TAB>image_path<TAB>text` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub label: String,
    /// Path as written in the file.
    pub image_ref: String,
    /// `image_ref` resolved against the manifest's directory.
    pub image_path: PathBuf,
    pub text: String,
}

/// Parsed manifest. Class indices follow the order in which labels first
/// appear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
    classes: Vec<String>,
    class_index: HashMap<String, usize>,
}

impl Manifest {
    pub fn from_rows(rows: Vec<ManifestRow>) -> Self {
        let mut classes = Vec::new();
        let mut class_index = HashMap::new();
        for row in &rows {
            if !class_index.contains_key(&row.label) {
                class_index.insert(row.label.clone(), classes.len());
                classes.push(row.label.clone());
            }
        }
        Self {
            rows,
            classes,
            class_index,
        }
    }

    /// Parses TSV text; relative image paths are resolved against `base`.
    /// `source` only labels error messages. Image existence is not checked.
    pub fn parse(text: &str, base: &Path, source: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::Parse {
                path: source.to_owned(),
                line: line_no,
                message,
            };
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 tab-separated columns, found {}", cols.len())));
            }
            let (label, image_ref, text) = (cols[0].trim(), cols[1].trim(), cols[2]);
            if label.is_empty() {
                return Err(err("empty label".into()));
            }
            if image_ref.is_empty() {
                return Err(err("empty image path".into()));
            }
            rows.push(ManifestRow {
                label: label.to_owned(),
                image_ref: image_ref.to_owned(),
                image_path: base.join(image_ref),
                text: text.to_owned(),
            });
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                path: source.to_owned(),
                line: 0,
                message: "manifest has no rows".into(),
            });
        }
        Ok(Self::from_rows(rows))
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_index.get(label).copied()
    }

    /// TSV text using each row's `image_ref`. Tabs and newlines inside the
    /// text column are replaced by spaces.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let text: String = r
                .text
                .chars()
                .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
                .collect();
            s.push_str(&format!("{}\t{}\t{}\n", r.label, r.image_ref, text));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a manifest file; every image path must exist.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let manifest = Manifest::parse(&text, base, path)?;
    // Line numbers of rows, skipping blank lines the same way parse does.
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1);
    for (row, line) in manifest.rows().iter().zip(lines) {
        if !row.image_path.is_file() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line,
                message: format!("image {} does not exist", row.image_path.display()),
            });
        }
    }
    Ok(manifest)
}

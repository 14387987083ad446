//! Dataset manifests: one `relative/path<TAB>class_name` line per image,
//! UTF-8 with LF endings, resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// Canonical class order for the four-category dataset.
pub const CLASS_NAMES: [&str; 4] = ["COVID-19", "Normal", "Pneumonia Bacterial", "Pneumonia Viral"];

/// Index of `name` in the canonical class list.
pub fn class_index(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&c| c == name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub path: PathBuf,
    /// Index into [`CLASS_NAMES`].
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let Some((rel, class)) = line.split_once('\t') else {
                return Err(CliError::Input(format!(
                    "{}:{}: expected `path<TAB>class`",
                    path.display(),
                    lineno + 1
                )));
            };
            let label = class_index(class).ok_or_else(|| {
                CliError::Input(format!(
                    "{}:{}: unknown class `{class}` (expected one of {:?})",
                    path.display(),
                    lineno + 1,
                    CLASS_NAMES
                ))
            })?;
            let entry_path = PathBuf::from(rel);
            let full = root.join(&entry_path);
            if !full.is_file() {
                return Err(CliError::Input(format!(
                    "{}:{}: referenced file {} does not exist",
                    path.display(),
                    lineno + 1,
                    full.display()
                )));
            }
            entries.push(ManifestEntry { path: entry_path, label });
        }
        if entries.is_empty() {
            return Err(CliError::Input(format!("{}: manifest has no entries", path.display())));
        }
        Ok(DatasetManifest { root, entries })
    }

    /// Writes entries in order, one line each.
    pub fn save(path: &Path, entries: &[(String, usize)]) -> Result<()> {
        let mut out = String::new();
        for (rel, label) in entries {
            out.push_str(rel);
            out.push('\t');
            out.push_str(CLASS_NAMES[*label]);
            out.push('\n');
        }
        fs::write(path, out).map_err(CliError::io(path))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Absolute path of an entry's image file.
    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Per-class sample counts in canonical order.
    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }
}

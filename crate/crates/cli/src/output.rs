//! Output files are staged in memory and written together, so a failing
//! command leaves no partial set behind.

use std::path::{Path, PathBuf};

use serde::Serialize;
use tvflow_core::io::write_atomic;

use crate::error::{CliError, CliResult};

#[derive(Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) -> String {
        let shown = path.display().to_string();
        self.files.push((path, bytes));
        shown
    }

    pub fn add_json(&mut self, path: PathBuf, value: &impl Serialize) -> String {
        self.add(path, to_json(value).into_bytes())
    }

    pub fn extend(&mut self, other: Staged) {
        self.files.extend(other.files);
    }

    /// Writes every staged file; on the first failure the files already
    /// written by this call are removed again.
    pub fn commit(self) -> CliResult<()> {
        let mut done: Vec<&Path> = Vec::new();
        for (path, bytes) in &self.files {
            let result = path
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map_or(Ok(()), std::fs::create_dir_all)
                .map_err(tvflow_core::Error::from)
                .and_then(|_| write_atomic(path, bytes));
            if let Err(e) = result {
                for p in done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(CliError::io(format!("{}: {e}", path.display())));
            }
            done.push(path);
        }
        Ok(())
    }
}

pub fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize");
    s.push('\n');
    s
}

/// File stem used to name per-input outputs.
pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

/// Output directory for one of possibly several inputs.
pub fn run_dir(out_dir: &Path, input: &Path, multiple: bool) -> PathBuf {
    if multiple {
        out_dir.join(stem(input))
    } else {
        out_dir.to_path_buf()
    }
}

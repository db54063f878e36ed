//! Run manifests: what was run, on which inputs, producing which bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bundle::{file_sha256, to_json};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command line after the program name, without the output directory.
    pub args: Vec<String>,
    pub seeds: Vec<u64>,
    /// Resolved configuration (presets expanded).
    pub config: serde_json::Value,
    /// Input path as given → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file relative to the output directory → sha256.
    pub outputs: BTreeMap<String, String>,
}

/// Files an invocation wrote, relative to its output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path for `name`, recorded as an output. The caller writes it.
    pub fn claim(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(p)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.claim(name)?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_text(name, &to_json(value)?)
    }

    pub fn hashes(&self) -> Result<BTreeMap<String, String>> {
        self.written
            .iter()
            .map(|n| Ok((n.clone(), file_sha256(&self.root.join(n))?)))
            .collect()
    }
}

/// Hashes a file, or every regular file directly inside a directory.
pub fn hash_inputs(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
            for entry in entries {
                let f = entry.map_err(|e| Error::io(p, e))?.path();
                if f.is_file() {
                    out.insert(display(&f), file_sha256(&f)?);
                }
            }
        } else {
            out.insert(display(p), file_sha256(p)?);
        }
    }
    Ok(out)
}

fn display(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

/// Drops `--out DIR` and `--out=DIR` from an argument list.
pub fn strip_out_flag(args: &[String]) -> Vec<String> {
    let mut kept = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}

impl Manifest {
    /// Inputs whose current bytes differ from the recorded hash.
    pub fn changed_inputs(&self) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for (path, want) in &self.inputs {
            let p = Path::new(path);
            if !p.is_file() || &file_sha256(p)? != want {
                changed.push(path.clone());
            }
        }
        Ok(changed)
    }

    /// Outputs of `other` that are missing or differ from this manifest's.
    pub fn diverging_outputs(&self, other: &Manifest) -> Vec<String> {
        let mut names: Vec<String> = self
            .outputs
            .iter()
            .filter(|(n, h)| other.outputs.get(*n) != Some(*h))
            .map(|(n, _)| n.clone())
            .collect();
        names.extend(other.outputs.keys().filter(|n| !self.outputs.contains_key(*n)).cloned());
        names
    }
}

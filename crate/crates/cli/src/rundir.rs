//! Output directory bookkeeping: the manifest is written before any work,
//! every output is recorded, and on failure the outputs are removed again.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};

pub const MANIFEST: &str = "manifest.txt";

pub struct RunDir {
    root: PathBuf,
    header: Vec<(String, String)>,
    outputs: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
}

impl RunDir {
    /// Creates `root` if needed and writes the initial manifest.
    pub fn start(root: &Path, header: Vec<(String, String)>) -> Result<Self> {
        let mut run = RunDir {
            root: root.to_path_buf(),
            header,
            outputs: Vec::new(),
            created_dirs: Vec::new(),
        };
        run.ensure_dir(root)?;
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        run.header.push(("version".into(), env!("CARGO_PKG_VERSION").into()));
        run.header.push(("timestamp".into(), stamp.to_string()));
        run.write_manifest("running")?;
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        if !dir.exists() {
            if let Some(parent) = dir.parent() {
                if !parent.as_os_str().is_empty() && !parent.exists() {
                    self.ensure_dir(parent)?;
                }
            }
            fs::create_dir(dir).with_context(|| format!("creating {}", dir.display()))?;
            self.created_dirs.push(dir.to_path_buf());
        }
        Ok(())
    }

    /// Path for an output under the root, creating parent directories.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            let parent = parent.to_path_buf();
            self.ensure_dir(&parent)?;
        }
        Ok(p)
    }

    /// Records a file written under the root.
    pub fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel)?;
        self.outputs.push(p.clone());
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    fn write_manifest(&self, status: &str) -> Result<()> {
        let mut s = String::from("# stochctl run manifest\n");
        for (k, v) in &self.header {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("status = {status}\n"));
        for p in &self.outputs {
            let rel = p.strip_prefix(&self.root).unwrap_or(p);
            s.push_str(&format!("output = {}\n", rel.display()));
        }
        let path = self.root.join(MANIFEST);
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(self) -> Result<()> {
        self.write_manifest("complete")
    }

    /// Removes every output of this run and marks the manifest as failed.
    pub fn abort(mut self) {
        for p in self.outputs.drain(..).rev() {
            let _ = fs::remove_file(p);
        }
        for d in self.created_dirs.iter().rev().filter(|d| **d != self.root) {
            let _ = fs::remove_dir(d);
        }
        let _ = self.write_manifest("failed");
    }
}

/// `key = value` pairs of an existing manifest, in file order.
pub fn read_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

pub fn manifest_value<'a>(entries: &'a [(String, String)], key: &str) -> Option<&'a str> {
    entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

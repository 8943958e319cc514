//! Artifact files: a `#@ key: value` provenance header followed by the body.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::{Error, Result};

const PREFIX: &str = "#@ ";
pub const FORMAT_TAG: &str = "smc-chain artifact v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub stage: String,
    pub config_hash: String,
    /// Additional entries such as seeds, in insertion order.
    pub entries: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(stage: &str, config_hash: &str) -> Self {
        Self { stage: stage.into(), config_hash: config_hash.into(), entries: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn render(&self) -> String {
        let mut s = format!("{PREFIX}format: {FORMAT_TAG}\n");
        s += &format!("{PREFIX}version: smc-core {}\n", env!("CARGO_PKG_VERSION"));
        s += &format!("{PREFIX}stage: {}\n", self.stage);
        s += &format!("{PREFIX}config_hash: {}\n", self.config_hash);
        for (k, v) in &self.entries {
            s += &format!("{PREFIX}{k}: {v}\n");
        }
        s
    }
}

/// Writes header and body to a temporary sibling and renames it into place.
pub fn write_artifact(path: &Path, prov: &Provenance, body: &str) -> Result<()> {
    let dir = path.parent().ok_or_else(|| Error::artifact(path, "no parent directory"))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::artifact(path, "no file name"))?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(prov.render().as_bytes()).and_then(|_| f.write_all(body.as_bytes())).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads an artifact and checks that it was produced under `config_hash`.
/// Returns the provenance and the body without header lines.
pub fn read_artifact(path: &Path, config_hash: &str) -> Result<(Provenance, String)> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::artifact(path, "missing; run the upstream stage first"),
        _ => Error::io(path, e),
    })?;
    let mut header = Vec::new();
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        match line.strip_prefix(PREFIX) {
            Some(kv) => {
                let (k, v) = kv.trim_end().split_once(": ").ok_or_else(|| Error::artifact(path, format!("malformed header line '{}'", line.trim_end())))?;
                header.push((k.to_string(), v.to_string()));
                body_start += line.len();
            }
            None => break,
        }
    }
    let take = |key: &str| header.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
    if take("format").as_deref() != Some(FORMAT_TAG) {
        return Err(Error::artifact(path, "missing provenance header"));
    }
    let hash = take("config_hash").ok_or_else(|| Error::artifact(path, "header lacks config_hash"))?;
    if hash != config_hash {
        return Err(Error::artifact(path, format!("config hash mismatch: artifact {hash}, current {config_hash}")));
    }
    let stage = take("stage").ok_or_else(|| Error::artifact(path, "header lacks stage"))?;
    let entries = header.into_iter().filter(|(k, _)| !matches!(k.as_str(), "format" | "version" | "stage" | "config_hash")).collect();
    Ok((Provenance { stage, config_hash: hash, entries }, text[body_start..].to_string()))
}

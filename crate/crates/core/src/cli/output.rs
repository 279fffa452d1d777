//! Artifact writing with a content-hashed manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "MANIFEST";

/// Shortest round-tripping decimal form.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Writes files into one directory and records their hashes.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), hashes: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))?;
        self.hashes.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    /// Comma-separated table with a one-line header and LF line endings.
    pub fn csv<I>(&mut self, name: &str, header: &[String], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(&r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, &bytes)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.hashes.keys()
    }

    /// Write the manifest listing every artifact; `status` is its first line.
    pub fn finish(&mut self, status: &str) -> Result<()> {
        let mut text = format!("status: {status}\n");
        for (name, hash) in &self.hashes {
            text.push_str(&format!("{hash}  {name}\n"));
        }
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
    }
}

/// Check every manifest entry against the file on disk.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    let mut names = vec![];
    for line in text.lines().skip(1) {
        let (hash, name) = line.split_once("  ").ok_or_else(|| Error::Data(format!("malformed manifest line '{line}'")))?;
        let bytes = std::fs::read(dir.join(name))?;
        if hex::encode(Sha256::digest(&bytes)) != hash {
            return Err(Error::Data(format!("hash mismatch for {name}")));
        }
        names.push(name.to_string());
    }
    Ok(names)
}

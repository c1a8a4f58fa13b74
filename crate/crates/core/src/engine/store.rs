//! Append-only store of canonical requests judged normal.
//!
//! On disk each record is one JSON string per line. Canonical text can
//! contain newlines and the request separator, so it is escaped rather than
//! framed.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::codec::CanonicalRequest;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Backing {
    File { path: PathBuf, out: BufWriter<File> },
    Memory(Vec<CanonicalRequest>),
}

#[derive(Debug)]
pub struct RetrainStore {
    backing: Backing,
    count: usize,
}

impl RetrainStore {
    /// Opens or creates the file; existing records are counted, never
    /// rewritten.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let count = if path.exists() { read_store(&path)?.len() } else { 0 };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(RetrainStore {
            backing: Backing::File {
                path,
                out: BufWriter::new(file),
            },
            count,
        })
    }

    pub fn in_memory() -> Self {
        RetrainStore {
            backing: Backing::Memory(Vec::new()),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.backing {
            Backing::File { path, .. } => Some(path),
            Backing::Memory(_) => None,
        }
    }

    /// Each append is flushed before returning.
    pub fn append(&mut self, c: &CanonicalRequest) -> Result<()> {
        match &mut self.backing {
            Backing::File { out, .. } => {
                serde_json::to_writer(&mut *out, c.text())?;
                out.write_all(b"\n")?;
                out.flush()?;
            }
            Backing::Memory(v) => v.push(c.clone()),
        }
        self.count += 1;
        Ok(())
    }

    /// Every record in append order.
    pub fn records(&mut self) -> Result<Vec<CanonicalRequest>> {
        match &mut self.backing {
            Backing::File { path, out } => {
                out.flush()?;
                read_store(path)
            }
            Backing::Memory(v) => Ok(v.clone()),
        }
    }
}

pub fn read_store(path: &Path) -> Result<Vec<CanonicalRequest>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let text: String = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.push(CanonicalRequest::from_text(text));
    }
    Ok(out)
}

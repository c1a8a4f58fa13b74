//! `.reqs` and `.lreqs` record files.
//!
//! Records are raw request bytes separated by a line that is exactly
//! `---END---`. The line terminator just before a separator belongs to the
//! framing, not the record. In labeled files each record starts with a
//! `LABEL:<ClassName>` line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use crate::classifier::{AttackClass, LabeledExample};
use crate::codec::{canonicalize_raw, CanonicalRequest};
use crate::error::{Error, Result};

pub const SEPARATOR: &str = "---END---";
const LABEL_PREFIX: &str = "LABEL:";

/// Streams records out of any buffered reader.
pub struct RecordReader<R> {
    inner: R,
    done: bool,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        RecordReader { inner, done: false }
    }
}

fn strip_terminator(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut record = Vec::new();
        let mut line = Vec::new();
        loop {
            line.clear();
            match self.inner.read_until(b'\n', &mut line) {
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Ok(0) => {
                    self.done = true;
                    // trailing separator is optional; a blank tail is not a record
                    if record.iter().all(u8::is_ascii_whitespace) {
                        return None;
                    }
                    return Some(Ok(record));
                }
                Ok(_) => {
                    if strip_terminator(&line) == SEPARATOR.as_bytes() {
                        let keep = strip_terminator(&record).len();
                        record.truncate(keep);
                        return Some(Ok(record));
                    }
                    record.extend_from_slice(&line);
                }
            }
        }
    }
}

pub fn open_records(path: &Path) -> Result<RecordReader<BufReader<File>>> {
    Ok(RecordReader::new(BufReader::new(File::open(path)?)))
}

pub fn read_records(path: &Path) -> Result<Vec<Vec<u8>>> {
    Ok(open_records(path)?.collect::<io::Result<_>>()?)
}

pub fn write_record(out: &mut impl Write, record: &[u8]) -> io::Result<()> {
    out.write_all(record)?;
    out.write_all(b"\n")?;
    out.write_all(SEPARATOR.as_bytes())?;
    out.write_all(b"\n")
}

pub fn write_records<I, T>(mut out: impl Write, records: I) -> io::Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    for r in records {
        write_record(&mut out, r.as_ref())?;
    }
    out.flush()
}

/// Splits the `LABEL:` line off a labeled record.
pub fn parse_labeled_record(record: &[u8]) -> Result<(AttackClass, Vec<u8>)> {
    let (first, rest) = match record.iter().position(|&b| b == b'\n') {
        Some(i) => (&record[..i], &record[i + 1..]),
        None => (record, &[][..]),
    };
    let first = std::str::from_utf8(strip_terminator(first))
        .map_err(|_| Error::invalid("label line is not UTF-8"))?;
    let name = first
        .strip_prefix(LABEL_PREFIX)
        .ok_or_else(|| Error::invalid(format!("expected {LABEL_PREFIX}<ClassName>, got {first:?}")))?;
    Ok((name.trim().parse()?, rest.to_vec()))
}

pub fn write_labeled_records<'a, I>(mut out: impl Write, records: I) -> io::Result<()>
where
    I: IntoIterator<Item = (AttackClass, &'a [u8])>,
{
    for (class, raw) in records {
        let mut rec = format!("{LABEL_PREFIX}{}\n", class.name()).into_bytes();
        rec.extend_from_slice(raw);
        write_record(&mut out, &rec)?;
    }
    out.flush()
}

pub fn read_labeled(path: &Path) -> Result<Vec<(AttackClass, Vec<u8>)>> {
    read_records(path)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            parse_labeled_record(r).map_err(|e| Error::invalid(format!("{}: record {i}: {e}", path.display())))
        })
        .collect()
}

/// Raw requests from either file kind; a leading label line is dropped.
pub fn read_requests(path: &Path) -> Result<Vec<Vec<u8>>> {
    read_records(path)?
        .into_iter()
        .map(|r| {
            if r.starts_with(LABEL_PREFIX.as_bytes()) {
                Ok(parse_labeled_record(&r)?.1)
            } else {
                Ok(r)
            }
        })
        .collect()
}

fn canonical_at(path: &Path, i: usize, raw: &[u8]) -> Result<CanonicalRequest> {
    canonicalize_raw(raw).map_err(|e| Error::invalid(format!("{}: record {i}: {e}", path.display())))
}

/// Canonical training data; any unparseable record is an error.
pub fn load_canonical(path: &Path) -> Result<Vec<CanonicalRequest>> {
    read_requests(path)?
        .iter()
        .enumerate()
        .map(|(i, r)| canonical_at(path, i, r))
        .collect()
}

pub fn load_labeled_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    read_labeled(path)?
        .iter()
        .enumerate()
        .map(|(i, (label, raw))| {
            Ok(LabeledExample {
                canonical: canonical_at(path, i, raw)?,
                label: *label,
            })
        })
        .collect()
}

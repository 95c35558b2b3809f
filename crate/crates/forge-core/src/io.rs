//! NDJSON reading and writing.
//!
//! Every pipeline artifact is a newline-delimited JSON file: one record per
//! line, UTF-8, no blank lines. Readers report malformed lines with the file
//! and 1-based line number; writers emit records in iteration order so the
//! bytes of an artifact are a pure function of its records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `records` to `path` as NDJSON, creating parent directories as
/// needed. Returns the number of lines written. An empty iterator yields an
/// empty file, which reads back as an empty stream.
pub fn write_ndjson<T, I>(path: &Path, records: I) -> Result<usize>
where
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut count = 0usize;
    for record in records {
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Config(format!("serialize for {}: {e}", path.display())))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
        count += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(count)
}

/// Reads a whole NDJSON file into memory.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    stream_ndjson(path)?.collect()
}

/// Returns an iterator over the records in an NDJSON file, so large files
/// can be scanned without holding every record at once. Each item carries
/// the line number in its error on failure.
pub fn stream_ndjson<T: DeserializeOwned>(
    path: &Path,
) -> Result<impl Iterator<Item = Result<T>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let path: PathBuf = path.to_path_buf();
    Ok(reader.lines().enumerate().filter_map(move |(idx, line)| {
        let lineno = idx + 1;
        match line {
            Err(e) => Some(Err(Error::io(&path, e))),
            Ok(text) if text.trim().is_empty() => None,
            Ok(text) => Some(serde_json::from_str::<T>(&text).map_err(|e| {
                Error::MalformedLine {
                    path: path.clone(),
                    line: lineno,
                    message: e.to_string(),
                }
            })),
        }
    }))
}

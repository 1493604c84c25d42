//! Line-delimited JSON helpers shared by the stage readers and writers.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

/// One line that could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct LineError {
    /// 1-based line number in the source.
    pub line: usize,
    pub reason: String,
}

/// Decode every non-blank line of `reader` as `T`.
///
/// Malformed lines are collected instead of aborting; only an I/O failure
/// on the underlying reader is fatal.
pub fn read_records<T, R>(reader: R) -> io::Result<(Vec<(usize, T)>, Vec<LineError>)>
where
    T: DeserializeOwned,
    R: BufRead,
{
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(trimmed) {
            Ok(v) => ok.push((idx + 1, v)),
            Err(e) => bad.push(LineError {
                line: idx + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok((ok, bad))
}

/// Write `records` one JSON document per line.
pub fn write_records<'a, T, W, I>(mut writer: W, records: I) -> io::Result<()>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

//! File formats: the sequence container, pressure streams and the
//! line-delimited record files written by the command-line tool.
//!
//! Every text format is JSON Lines. The first line is a header naming the
//! format, its version and the number of records that follow.

mod pressure;
mod records;
mod sequence;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pressure::{
    read_pressure, read_pressure_binary, read_pressure_jsonl, write_pressure_binary,
    write_pressure_jsonl, PRESSURE_MAGIC,
};
pub use records::{
    read_contact, read_fit, read_ground_truth, read_predictions, read_report, write_contact,
    write_energy_csv, write_fit, write_ground_truth, write_plot_csv, write_predictions,
    write_report, write_report_csv, FitRecord, GroundTruthRecord,
};
pub use sequence::{read_sequence, write_sequence, SEQUENCE_FORMAT};

/// Version written into every header.
pub const FORMAT_VERSION: u32 = 1;

/// First line of a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordHeader {
    pub format: String,
    pub version: u32,
    pub records: usize,
}

/// Writes a header line followed by one JSON line per record.
pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, format: &str, records: &[T]) -> Result<()> {
    let header = RecordHeader {
        format: format.into(),
        version: FORMAT_VERSION,
        records: records.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a file written by [`write_jsonl`], checking format name, version
/// and record count.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(input: R, format: &'static str) -> Result<Vec<T>> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format(format, "empty file"))??;
    let header: RecordHeader =
        serde_json::from_str(&first).map_err(|e| Error::format(format, format!("header: {e}")))?;
    check_header(&header.format, header.version, format)?;
    let mut out = Vec::with_capacity(header.records.min(1 << 20));
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(format, format!("record {}: {e}", i + 1)))?,
        );
    }
    if out.len() != header.records {
        return Err(Error::format(
            format,
            format!("header announces {} records, found {}", header.records, out.len()),
        ));
    }
    Ok(out)
}

fn check_header(found: &str, version: u32, expected: &'static str) -> Result<()> {
    if found != expected {
        return Err(Error::format(expected, format!("file holds `{found}` records")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::format(expected, format!("unsupported version {version}")));
    }
    Ok(())
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Missing(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests;

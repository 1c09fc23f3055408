//! Playback trace records and file readers.
//!
//! A trace is a flat list of per-playback observations. Two formats are
//! accepted, detected by file extension: CSV with a header row, and JSON
//! lines (`.jsonl` / `.ndjson`). Either may be gzip-compressed with a
//! trailing `.gz`. Readers yield one result per record so callers can count
//! and skip malformed lines instead of aborting.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation from playback telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Player bandwidth estimate in bits per second.
    pub estimated_bandwidth_bps: f64,
    /// Viewport height in pixels as reported, before snapping.
    pub viewport_height: u32,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub timestamp_ms: Option<i64>,
    /// Optional record weight; defaults to 1 when absent.
    #[serde(default)]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TraceFormat {
    Csv,
    JsonLines,
}

fn detect_format(path: &Path) -> Result<(TraceFormat, bool)> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let (stem, gzipped) = match name.strip_suffix(".gz") {
        Some(stem) => (stem, true),
        None => (name.as_str(), false),
    };
    if stem.ends_with(".csv") {
        Ok((TraceFormat::Csv, gzipped))
    } else if stem.ends_with(".jsonl") || stem.ends_with(".ndjson") {
        Ok((TraceFormat::JsonLines, gzipped))
    } else {
        Err(Error::UnknownTraceFormat {
            path: path.to_path_buf(),
        })
    }
}

/// Opens a trace file and returns an iterator of parse results.
///
/// The file format comes from the extension. Each malformed record surfaces
/// as an `Err` carrying the path and line number; iteration continues past
/// it.
pub fn open_trace(path: &Path) -> Result<Box<dyn Iterator<Item = Result<TraceRecord>>>> {
    let (format, gzipped) = detect_format(path)?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if gzipped {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let path = path.to_path_buf();
    match format {
        TraceFormat::Csv => Ok(Box::new(CsvTraceIter::new(reader, path))),
        TraceFormat::JsonLines => Ok(Box::new(JsonLinesTraceIter::new(reader, path))),
    }
}

struct CsvTraceIter {
    inner: csv::DeserializeRecordsIntoIter<Box<dyn Read>, TraceRecord>,
    path: PathBuf,
}

impl CsvTraceIter {
    fn new(reader: Box<dyn Read>, path: PathBuf) -> Self {
        let inner = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader)
            .into_deserialize();
        CsvTraceIter { inner, path }
    }
}

impl Iterator for CsvTraceIter {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.inner.next()?;
        Some(item.map_err(|e| Error::TraceParse {
            path: self.path.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        }))
    }
}

struct JsonLinesTraceIter {
    lines: std::io::Lines<BufReader<Box<dyn Read>>>,
    path: PathBuf,
    line: u64,
}

impl JsonLinesTraceIter {
    fn new(reader: Box<dyn Read>, path: PathBuf) -> Self {
        JsonLinesTraceIter {
            lines: BufReader::new(reader).lines(),
            path,
            line: 0,
        }
    }
}

impl Iterator for JsonLinesTraceIter {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line += 1;
            match line {
                Ok(text) if text.trim().is_empty() => continue,
                Ok(text) => {
                    return Some(serde_json::from_str(&text).map_err(|e| Error::TraceParse {
                        path: self.path.clone(),
                        line: self.line,
                        message: e.to_string(),
                    }));
                }
                Err(e) => {
                    return Some(Err(Error::TraceParse {
                        path: self.path.clone(),
                        line: self.line,
                        message: e.to_string(),
                    }));
                }
            }
        }
    }
}

/// Writes records as CSV, gzip-compressed when the path ends in `.gz`.
pub fn write_trace_csv<'a, I>(path: &Path, records: I) -> Result<()>
where
    I: IntoIterator<Item = &'a TraceRecord>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let writer: Box<dyn Write> = if path.to_string_lossy().ends_with(".gz") {
        Box::new(GzEncoder::new(file, flate2::Compression::fast()))
    } else {
        Box::new(file)
    };
    let mut csv_writer = csv::Writer::from_writer(writer);
    for record in records {
        csv_writer
            .serialize(record)
            .map_err(|e| Error::TraceParse {
                path: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
    }
    csv_writer
        .flush()
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

//! Reading and writing detection files.
//!
//! Primary format is JSON Lines, one flat record per line; CSV is the
//! secondary format with the fixed header
//! `image_id,class_id,x1,y1,x2,y2,score`. Records validate on load
//! (`x1 < x2`, `y1 < y2`, `score` in `[0, 1]`, all coordinates finite) and
//! errors carry the 1-based record line. Detections group into channels
//! keyed by `(image_id, class_id)`; within a channel the file order is the
//! ingestion order, which breaks score ties downstream.
//!
//! Written coordinates and scores are rounded to 10 significant digits and
//! serialized shortest-round-trip, so a write/read cycle preserves values
//! to within `1e-9` relative.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::nms::{Detection, DetectionSet};

/// One detection row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_id: i64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

pub const CSV_HEADER: &str = "image_id,class_id,x1,y1,x2,y2,score";

impl DetectionRecord {
    pub fn bbox(&self) -> BBox {
        BBox::from_corners(self.x1, self.y1, self.x2, self.y2)
    }

    fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("x1", self.x1),
            ("y1", self.y1),
            ("x2", self.x2),
            ("y2", self.y2),
            ("score", self.score),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        if self.x1 >= self.x2 {
            return Err(format!("x1 {} must be less than x2 {}", self.x1, self.x2));
        }
        if self.y1 >= self.y2 {
            return Err(format!("y1 {} must be less than y2 {}", self.y1, self.y2));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Jsonl,
    Csv,
}

impl FileFormat {
    /// By extension: `.csv` is CSV, anything else JSONL.
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Jsonl,
        }
    }

    pub fn parse(s: &str) -> Option<FileFormat> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Some(FileFormat::Jsonl),
            "csv" => Some(FileFormat::Csv),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DetectionIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("record {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {line} (image {image_id:?}, class {class_id}): {message}")]
    Invalid {
        line: usize,
        image_id: String,
        class_id: i64,
        message: String,
    },
}

/// Channel key: one image, one class.
pub type ChannelKey = (String, i64);

/// Detections grouped per `(image_id, class_id)`, each channel score-sorted
/// with ingestion-order tie-breaks.
#[derive(Debug, Default)]
pub struct DetectionFile {
    pub channels: BTreeMap<ChannelKey, DetectionSet>,
    pub record_count: usize,
}

/// Parses records from a reader. `line` in errors counts records for CSV
/// (header excluded) and physical lines for JSONL.
pub fn read_records<R: Read>(reader: R, format: FileFormat) -> Result<Vec<DetectionRecord>, DetectionIoError> {
    let mut out = Vec::new();
    match format {
        FileFormat::Jsonl => {
            for (idx, line) in BufReader::new(reader).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: DetectionRecord =
                    serde_json::from_str(&line).map_err(|e| DetectionIoError::Parse {
                        line: idx + 1,
                        message: e.to_string(),
                    })?;
                check(rec, idx + 1, &mut out)?;
            }
        }
        FileFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(reader);
            for (idx, row) in rdr.deserialize::<DetectionRecord>().enumerate() {
                let rec = row.map_err(|e| DetectionIoError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                check(rec, idx + 1, &mut out)?;
            }
        }
    }
    Ok(out)
}

fn check(
    rec: DetectionRecord,
    line: usize,
    out: &mut Vec<DetectionRecord>,
) -> Result<(), DetectionIoError> {
    rec.validate().map_err(|message| DetectionIoError::Invalid {
        line,
        image_id: rec.image_id.clone(),
        class_id: rec.class_id,
        message,
    })?;
    out.push(rec);
    Ok(())
}

/// Groups records into score-sorted channels; `source_id` is the record's
/// position in the file.
pub fn group_records(records: &[DetectionRecord]) -> DetectionFile {
    let mut buckets: BTreeMap<ChannelKey, Vec<Detection>> = BTreeMap::new();
    for (idx, rec) in records.iter().enumerate() {
        buckets
            .entry((rec.image_id.clone(), rec.class_id))
            .or_default()
            .push(Detection {
                bbox: rec.bbox(),
                score: rec.score,
                class_id: rec.class_id,
                source_id: idx,
            });
    }
    DetectionFile {
        channels: buckets
            .into_iter()
            .map(|(k, v)| (k, DetectionSet::new(v)))
            .collect(),
        record_count: records.len(),
    }
}

/// Loads and groups a detection file; format inferred from the extension
/// unless given.
pub fn load_detections(
    path: &Path,
    format: Option<FileFormat>,
) -> Result<DetectionFile, DetectionIoError> {
    let format = format.unwrap_or_else(|| FileFormat::from_path(path));
    let records = read_records(File::open(path)?, format)?;
    Ok(group_records(&records))
}

/// Rounds to 9 significant digits; relative error at most `5e-10`.
pub fn sig10(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let k = 9 - x.abs().log10().floor() as i32;
    if k > 307 {
        // scaling would overflow; values this small serialize exactly anyway
        return x;
    }
    let scale = 10f64.powi(k);
    (x * scale).round() / scale
}

fn rounded(rec: &DetectionRecord) -> DetectionRecord {
    DetectionRecord {
        image_id: rec.image_id.clone(),
        class_id: rec.class_id,
        x1: sig10(rec.x1),
        y1: sig10(rec.y1),
        x2: sig10(rec.x2),
        y2: sig10(rec.y2),
        score: sig10(rec.score),
    }
}

pub fn write_records<W: Write>(
    writer: W,
    records: &[DetectionRecord],
    format: FileFormat,
) -> Result<(), DetectionIoError> {
    match format {
        FileFormat::Jsonl => {
            let mut w = BufWriter::new(writer);
            for rec in records {
                serde_json::to_writer(&mut w, &rounded(rec)).map_err(std::io::Error::other)?;
                writeln!(w)?;
            }
            w.flush()?;
        }
        FileFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            for rec in records {
                w.serialize(rounded(rec)).map_err(std::io::Error::other)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Writes records to a path; format inferred from the extension unless
/// given.
pub fn write_records_to_path(
    path: &Path,
    records: &[DetectionRecord],
    format: Option<FileFormat>,
) -> Result<(), DetectionIoError> {
    let format = format.unwrap_or_else(|| FileFormat::from_path(path));
    write_records(File::create(path)?, records, format)
}

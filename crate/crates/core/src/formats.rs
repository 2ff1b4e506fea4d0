//! File formats: detection/ground-truth JSONL and numeric formatting shared by
//! the CSV writers.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One line of a detection or ground-truth JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFileRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<u64>,
    pub class_id: u32,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
}

impl DetectionFileRecord {
    pub fn bbox(&self) -> Result<BBox> {
        BBox::from_array(self.bbox)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox()?;
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidArgument(format!("score {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization cannot fail")
    }
}

/// Parses JSONL text; blank lines are skipped. `origin` is used in error messages.
pub fn parse_records(reader: impl BufRead, origin: &Path) -> Result<Vec<DetectionFileRecord>> {
    Ok(parse_numbered(reader, origin)?.into_iter().map(|(_, r)| r).collect())
}

/// Like [`parse_records`], keeping the 1-based line number of each record.
pub fn parse_numbered(reader: impl BufRead, origin: &Path) -> Result<Vec<(usize, DetectionFileRecord)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: DetectionFileRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        rec.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<DetectionFileRecord>> {
    Ok(read_numbered(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn read_numbered(path: &Path) -> Result<Vec<(usize, DetectionFileRecord)>> {
    let file = File::open(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_numbered(BufReader::new(file), path)
}

pub fn write_records<'a>(mut w: impl Write, records: impl IntoIterator<Item = &'a DetectionFileRecord>) -> Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_json_line())?;
    }
    Ok(())
}

/// A header plus rows of string cells.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parses every cell of column `name` as `f64`.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .column(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no column {name:?}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[idx]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("non-numeric {name} cell {:?}", r[idx])))
            })
            .collect()
    }
}

/// Reads one or more CSV tables separated by blank lines, each starting with
/// its own header row.
pub fn read_csv_tables(text: &str) -> Result<Vec<CsvTable>> {
    let mut tables = Vec::new();
    for block in text.split("\n\n").map(str::trim).filter(|b| !b.is_empty()) {
        let mut rdr = csv::ReaderBuilder::new().from_reader(block.as_bytes());
        let header = rdr.headers()?.iter().map(str::to_owned).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_owned).collect()))
            .collect::<std::result::Result<_, _>>()?;
        tables.push(CsvTable { header, rows });
    }
    Ok(tables)
}

/// Formats with nine significant digits, fixed-point for moderate magnitudes.
pub fn fmt_sig(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&mag) {
        return format!("{:.*e}", (DIGITS - 1) as usize, x);
    }
    let decimals = (DIGITS - 1 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit (9.9999999995 -> 10.00000000)
    if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > DIGITS as usize && decimals > 0 {
        return format!("{:.*}", decimals - 1, x);
    }
    s
}

//! Artifact formats: sample CSVs, metric tables, binary PGM images and the
//! per-run index file.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header `chain,x0,x1,...` followed by one row per sample.
pub fn write_samples_csv(rows: &[Vec<f64>], w: impl Write) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["chain".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    out.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(r.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Records and their optional class labels.
pub type LabeledRows = (Vec<Vec<f64>>, Option<Vec<usize>>);

/// Reads a headed CSV of coordinates. Columns named `chain`, `id` or
/// `label` are skipped; a `label` column is returned separately.
pub fn read_samples_csv(r: impl Read) -> Result<LabeledRows> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let label_col = header.iter().position(|h| h == "label");
    let coord_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| !matches!(*h, "chain" | "id" | "label"))
        .map(|(i, _)| i)
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: column {} is not a number", line + 1, i)))
        };
        rows.push(coord_cols.iter().map(|&i| parse(i)).collect::<Result<Vec<_>>>()?);
        if let Some(c) = label_col {
            let v = rec.get(c).unwrap_or("").trim();
            labels.push(
                v.parse::<usize>()
                    .map_err(|_| Error::Format(format!("row {}: bad label '{v}'", line + 1)))?,
            );
        }
    }
    if rows.is_empty() {
        return Err(Error::Format("csv has no data rows".into()));
    }
    Ok((rows, label_col.map(|_| labels)))
}

/// Like [`write_samples_csv`] with an extra `label` column.
pub fn write_labeled_csv(rows: &[Vec<f64>], labels: &[usize], w: impl Write) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["chain".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    out.write_record(&header)?;
    for (i, (r, y)) in rows.iter().zip(labels).enumerate() {
        let mut rec = vec![i.to_string(), y.to_string()];
        rec.extend(r.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// One row of an experiment table: `condition,seed,metric,value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub condition: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(condition: impl Into<String>, seed: u64, metric: impl Into<String>, value: f64) -> Self {
        Self {
            condition: condition.into(),
            seed,
            metric: metric.into(),
            value,
        }
    }
}

pub fn write_metrics_csv(rows: &[MetricRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Binary P5, 8-bit, row-major. Values are clamped to `[0, 1]` and scaled
/// to `0..=255`.
pub fn write_pgm(pixels: &[f64], width: usize, height: usize, mut w: impl Write) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: width * height,
            got: pixels.len(),
        });
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Returns `(width, height, pixels / maxval)`.
pub fn read_pgm(mut r: impl Read) -> Result<(usize, usize, Vec<f64>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated pgm header".into()));
        }
        Ok(String::from_utf8_lossy(&buf[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Format("not a binary pgm (P5)".into()));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| Error::Format(format!("bad pgm field '{s}'")));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported pgm maxval {maxval}")));
    }
    let data_start = pos + 1;
    let n = width * height;
    if buf.len() < data_start + n {
        return Err(Error::Format("pgm pixel data is truncated".into()));
    }
    let pixels = buf[data_start..data_start + n]
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    Ok((width, height, pixels))
}

/// Lists every artifact a run produced, relative to its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIndex {
    pub command: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
}

impl RunIndex {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

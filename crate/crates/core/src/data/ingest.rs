//! CSV ingestion of triaxial recordings.
//!
//! Expected layout: a header row naming the `subject,label,t,x,y,z` columns
//! (names remappable through [`CsvSchema`]), one sample per row, `t` in
//! seconds. Rows are grouped by subject in file order; each subject's rows
//! form one recording whose timestamps must be strictly increasing.

use std::collections::BTreeMap;
use std::path::Path;

use super::TriaxialSeries;
use crate::error::{Error, Result};

/// Column-name mapping for ingestion.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub subject: String,
    pub label: String,
    pub t: String,
    pub x: String,
    pub y: String,
    pub z: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            subject: "subject".into(),
            label: "label".into(),
            t: "t".into(),
            x: "x".into(),
            y: "y".into(),
            z: "z".into(),
        }
    }
}

/// Outcome of an ingestion: the recordings plus a count of dropped rows.
#[derive(Debug)]
pub struct IngestReport {
    pub series: Vec<TriaxialSeries>,
    /// Rows rejected because a numeric field was non-finite or unparseable.
    pub rejected_rows: usize,
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<IngestReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    ingest_csv_text(&text, schema)
}

/// Same as [`ingest_csv`] but over in-memory text.
pub fn ingest_csv_text(text: &str, schema: &CsvSchema) -> Result<IngestReport> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data("no data rows: file is empty"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|&c| c == name)
            .ok_or_else(|| Error::data(format!("missing column '{name}' in header '{header}'")))
    };
    let subject_col = col(&schema.subject)?;
    let label_col = col(&schema.label)?;
    let t_col = col(&schema.t)?;
    let x_col = col(&schema.x)?;
    let y_col = col(&schema.y)?;
    let z_col = col(&schema.z)?;

    struct Raw {
        t: Vec<f64>,
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        labels: Vec<u32>,
        last_row: usize,
    }

    // Grouped by subject; insertion order remembered separately so output
    // ordering follows first appearance in the file.
    let mut groups: BTreeMap<String, Raw> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut rejected = 0usize;
    let mut data_rows = 0usize;

    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        data_rows += 1;
        let row_no = line_no + 1; // 1-based, including header
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::data(format!(
                "row {row_no}: expected {} fields, found {}",
                columns.len(),
                fields.len()
            )));
        }
        let parse = |idx: usize| -> Option<f64> {
            fields[idx].parse::<f64>().ok().filter(|v| v.is_finite())
        };
        let (t, x, y, z) = match (parse(t_col), parse(x_col), parse(y_col), parse(z_col)) {
            (Some(t), Some(x), Some(y), Some(z)) => (t, x, y, z),
            _ => {
                rejected += 1;
                continue;
            }
        };
        let label: u32 = fields[label_col].parse().map_err(|_| {
            Error::data(format!(
                "row {row_no}: label '{}' is not a non-negative integer",
                fields[label_col]
            ))
        })?;
        let subject = fields[subject_col].to_string();

        let entry = groups.entry(subject.clone()).or_insert_with(|| {
            order.push(subject.clone());
            Raw {
                t: Vec::new(),
                x: Vec::new(),
                y: Vec::new(),
                z: Vec::new(),
                labels: Vec::new(),
                last_row: 0,
            }
        });
        if let Some(&prev) = entry.t.last() {
            if t <= prev {
                return Err(Error::data(format!(
                    "row {row_no}: non-monotone time {t} after {prev} for subject '{}' (previous row {})",
                    subject, entry.last_row
                )));
            }
        }
        entry.t.push(t);
        entry.x.push(x);
        entry.y.push(y);
        entry.z.push(z);
        entry.labels.push(label);
        entry.last_row = row_no;
    }

    if data_rows == 0 {
        return Err(Error::data("no data rows"));
    }

    let mut series = Vec::with_capacity(order.len());
    for subject in order {
        let raw = groups.remove(&subject).unwrap();
        if raw.t.len() < 2 {
            return Err(Error::data(format!(
                "subject '{subject}' has fewer than 2 usable samples"
            )));
        }
        series.push(TriaxialSeries::from_samples(
            raw.t,
            raw.x,
            raw.y,
            raw.z,
            subject,
            Some(raw.labels),
        )?);
    }

    Ok(IngestReport {
        series,
        rejected_rows: rejected,
    })
}

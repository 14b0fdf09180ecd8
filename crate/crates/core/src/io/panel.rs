use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kalman::YieldPanel;

fn parse_error(name: &str, row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: name.to_string(),
        row,
        column,
        message: message.into(),
    }
}

/// Reads `date,<m1>,<m2>,...` with ISO dates and decimal yields; empty cells
/// are missing. Rows and columns in errors are 1-based and count the header.
pub fn parse_panel<R: Read>(reader: R, name: &str) -> Result<YieldPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_error(name, 1, 1, e.to_string()))?,
        None => return Err(parse_error(name, 1, 1, "empty file")),
    };
    if header.get(0).map(|h| h.to_ascii_lowercase()) != Some("date".to_string()) {
        return Err(parse_error(name, 1, 1, "first header cell must be 'date'"));
    }
    if header.len() < 2 {
        return Err(parse_error(name, 1, 2, "no maturity columns"));
    }
    let mut maturities = Vec::with_capacity(header.len() - 1);
    for (j, cell) in header.iter().enumerate().skip(1) {
        let m: f64 = cell
            .parse()
            .map_err(|_| parse_error(name, 1, j + 1, format!("maturity '{cell}' is not a number")))?;
        if !(m.is_finite() && m > 0.0) {
            return Err(parse_error(name, 1, j + 1, format!("maturity {m} must be positive")));
        }
        if let Some(&prev) = maturities.last() {
            if m <= prev {
                return Err(parse_error(name, 1, j + 1, format!("maturity {m} does not increase (previous {prev})")));
            }
        }
        maturities.push(m);
    }
    let n = maturities.len();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut values = Vec::new();
    let mut observed = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| parse_error(name, row, 1, e.to_string()))?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != n + 1 {
            return Err(parse_error(name, row, rec.len().min(n + 1), format!("expected {} cells, found {}", n + 1, rec.len())));
        }
        let cell = rec.get(0).unwrap_or_default();
        let date = NaiveDate::parse_from_str(cell, "%Y-%m-%d")
            .map_err(|_| parse_error(name, row, 1, format!("'{cell}' is not an ISO date")))?;
        if let Some(&prev) = dates.last() {
            if date <= prev {
                return Err(parse_error(name, row, 1, format!("date {date} does not increase (previous {prev})")));
            }
        }
        dates.push(date);
        for (j, cell) in rec.iter().enumerate().skip(1) {
            if cell.is_empty() {
                values.push(0.0);
                observed.push(false);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_error(name, row, j + 1, format!("'{cell}' is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_error(name, row, j + 1, "yield is not finite"));
                }
                values.push(v);
                observed.push(true);
            }
        }
    }
    if dates.is_empty() {
        return Err(parse_error(name, 2, 1, "no data rows"));
    }
    let t = dates.len();
    let yields = DMatrix::from_row_slice(t, n, &values);
    let mask = DMatrix::from_row_slice(t, n, &observed);
    YieldPanel::with_mask(dates, maturities, yields, Some(mask))
}

pub fn read_panel(path: &Path) -> Result<YieldPanel> {
    let file = File::open(path)?;
    parse_panel(file, &path.display().to_string())
}

pub fn write_panel<W: Write>(panel: &YieldPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(panel.maturities.iter().map(|m| m.to_string()));
    w.write_record(&header).map_err(csv_io)?;
    for t in 0..panel.n_days() {
        let mut row = vec![panel.dates[t].to_string()];
        for j in 0..panel.n_maturities() {
            row.push(if panel.is_observed(t, j) {
                panel.yields[(t, j)].to_string()
            } else {
                String::new()
            });
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_file(panel: &YieldPanel, path: &Path) -> Result<()> {
    write_panel(panel, File::create(path)?)
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

//! Delimited-text interchange: readings as `series_id,timestamp,value`,
//! forecasts with additional `issue_time,model_version` columns. Timestamps
//! are RFC 3339 UTC.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{DataPoint, StoredForecast};
use crate::registry::SeriesId;
use crate::time::{format_instant, parse_instant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRowError {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Deserialize)]
struct ReadingRow {
    series_id: u32,
    timestamp: String,
    value: f64,
}

/// Parses a readings file. Malformed rows are reported, not fatal.
pub fn read_readings_csv<R: Read>(reader: R) -> Result<(Vec<(SeriesId, DataPoint)>, Vec<CsvRowError>), csv::Error> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["series_id", "timestamp", "value"];
    if headers.len() < 3 || headers.iter().take(3).ne(expected) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("expected header `series_id,timestamp,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        )));
    }
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, record) in rdr.deserialize::<ReadingRow>().enumerate() {
        let row = i + 1;
        match record {
            Ok(r) => match parse_instant(&r.timestamp) {
                Ok(t) => rows.push((SeriesId(r.series_id), DataPoint::new(t, r.value))),
                Err(e) => errors.push(CsvRowError { row, reason: format!("bad timestamp: {e}") }),
            },
            Err(e) => errors.push(CsvRowError { row, reason: e.to_string() }),
        }
    }
    Ok((rows, errors))
}

pub fn write_readings_csv<W: Write>(
    writer: W,
    rows: impl IntoIterator<Item = (SeriesId, DataPoint)>,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series_id", "timestamp", "value"])?;
    for (series, p) in rows {
        w.write_record([series.to_string(), format_instant(p.timestamp), p.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_forecasts_csv<'a, W: Write>(
    writer: W,
    forecasts: impl IntoIterator<Item = &'a StoredForecast>,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series_id", "timestamp", "value", "issue_time", "model_version"])?;
    for f in forecasts {
        let issue = format_instant(f.record.issue_time);
        for p in &f.record.points {
            w.write_record([
                f.record.series.to_string(),
                format_instant(p.timestamp),
                p.value.to_string(),
                issue.clone(),
                f.record.model_version.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

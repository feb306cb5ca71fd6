use std::path::Path;

use crate::error::{Error, Result};

pub const METRIC_LOG_HEADER: [&str; 5] = ["epoch", "train_loss", "val_precision", "val_recall", "val_f1"];

/// One row of the metric log. Validation fields are empty on epochs
/// without evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<ValScores>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Writes the whole log. Floats use the shortest representation that
/// reads back exactly.
pub fn write_metric_log(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRIC_LOG_HEADER)?;
    for r in records {
        let (p, rc, f) = match r.validation {
            Some(v) => (v.precision.to_string(), v.recall.to_string(), v.f1.to_string()),
            None => Default::default(),
        };
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), p, rc, f])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metric_log(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format {
                path: path.into(),
                msg: format!("{other:?}"),
            },
        })?;
    let bad = |row: usize, msg: String| Error::Format {
        path: path.into(),
        msg: format!("row {row}: {msg}"),
    };
    if rdr.headers()?.iter().collect::<Vec<_>>() != METRIC_LOG_HEADER {
        return Err(bad(1, format!("expected header {}", METRIC_LOG_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> { field(c).parse().map_err(|_| bad(row, format!("not a number: `{}`", field(c)))) };
        let epoch = field(0).parse().map_err(|_| bad(row, format!("bad epoch `{}`", field(0))))?;
        let validation = if field(4).is_empty() {
            None
        } else {
            Some(ValScores {
                precision: num(2)?,
                recall: num(3)?,
                f1: num(4)?,
            })
        };
        out.push(MetricRecord {
            epoch,
            train_loss: num(1)?,
            validation,
        });
    }
    Ok(out)
}

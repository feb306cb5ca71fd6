use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Half-open event interval in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub onset: f64,
    pub offset: f64,
}

impl Event {
    pub fn new(onset: f64, offset: f64) -> Result<Self> {
        if !(onset >= 0.0 && onset < offset && offset.is_finite()) {
            return Err(Error::Param(format!("invalid event [{onset}, {offset})")));
        }
        Ok(Event { onset, offset })
    }

    pub fn contains(&self, t: f64) -> bool {
        self.onset <= t && t < self.offset
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StrongAnnotation {
    pub id: String,
    /// May overlap.
    pub events: Vec<Event>,
}

/// Reads an `id,onset,offset` CSV, one event per row. Recordings without
/// rows simply have no entry.
pub fn load_strong_annotations(path: impl AsRef<Path>) -> Result<BTreeMap<String, StrongAnnotation>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Manifest {
                row: 1,
                msg: format!("{other:?}"),
            },
        })?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Manifest {
            row: 1,
            msg: format!("missing column `{name}`"),
        })
    };
    let (id_col, on_col, off_col) = (col("id")?, col("onset")?, col("offset")?);
    let mut out: BTreeMap<String, StrongAnnotation> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse().map_err(|_| Error::Manifest {
                row,
                msg: format!("not a number: `{s}`"),
            })
        };
        let id = rec.get(id_col).unwrap_or("").to_string();
        let event = Event::new(num(on_col)?, num(off_col)?).map_err(|e| Error::Manifest {
            row,
            msg: e.to_string(),
        })?;
        out.entry(id.clone())
            .or_insert_with(|| StrongAnnotation { id, events: Vec::new() })
            .events
            .push(event);
    }
    Ok(out)
}

pub fn write_strong_annotations<'a>(
    path: impl AsRef<Path>,
    annotations: impl IntoIterator<Item = &'a StrongAnnotation>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "onset", "offset"])?;
    for ann in annotations {
        for e in &ann.events {
            w.write_record([ann.id.clone(), format!("{:.6}", e.onset), format!("{:.6}", e.offset)])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Frame `j` is positive iff its centre `(j + 0.5) · hop` falls inside an
/// event.
pub fn frames_from_annotation(ann: &StrongAnnotation, frames: usize, hop_seconds: f64) -> Vec<bool> {
    let mut out = vec![false; frames];
    for e in &ann.events {
        // Only frames whose centre can land in [onset, offset) are visited.
        let first = ((e.onset / hop_seconds - 0.5).floor().max(0.0)) as usize;
        let last = (((e.offset / hop_seconds - 0.5).ceil().max(0.0)) as usize).min(frames);
        for (j, slot) in out.iter_mut().enumerate().take(last + 1).skip(first) {
            if e.contains((j as f64 + 0.5) * hop_seconds) {
                *slot = true;
            }
        }
    }
    out
}

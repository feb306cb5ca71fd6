use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeakManifestEntry {
    pub id: String,
    pub path: PathBuf,
    /// Raw labels; empty for a negative recording.
    pub labels: BTreeSet<String>,
}

/// Reads a `id,path,labels` CSV. `labels` is `;`-joined and may be empty.
/// Row numbers in errors count the header as row 1.
pub fn load_weak_manifest(path: impl AsRef<Path>) -> Result<Vec<WeakManifestEntry>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
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
    let (id_col, path_col) = (col("id")?, col("path")?);
    let label_col = col("labels")?;

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(Error::Manifest {
                row,
                msg: "empty id".into(),
            });
        }
        let file = field(path_col);
        if file.is_empty() {
            return Err(Error::Manifest {
                row,
                msg: format!("`{id}` has no path"),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Manifest {
                row,
                msg: format!("duplicate id `{id}`"),
            });
        }
        let labels = field(label_col)
            .split(';')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        entries.push(WeakManifestEntry {
            id,
            path: PathBuf::from(file),
            labels,
        });
    }
    Ok(entries)
}

pub fn write_weak_manifest(path: impl AsRef<Path>, entries: &[WeakManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "path", "labels"])?;
    for e in entries {
        let labels = e.labels.iter().cloned().collect::<Vec<_>>().join(";");
        w.write_record([e.id.as_str(), &e.path.to_string_lossy(), &labels])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Vec<WeakManifestEntry>> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, text).unwrap();
        load_weak_manifest(&p)
    }

    #[test]
    fn parses_label_sets() {
        let e = load("id,path,labels\nr1,a.wav,Dog;Cat\nr2,b.wav,\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].labels, ["Cat", "Dog"].iter().map(|s| s.to_string()).collect());
        assert!(e[1].labels.is_empty());
        assert_eq!(e[1].path, PathBuf::from("b.wav"));
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = load("id,path,labels\nr1,a.wav,\nr1,b.wav,x\n").unwrap_err();
        match err {
            Error::Manifest { row, msg } => {
                assert_eq!(row, 3);
                assert!(msg.contains("r1"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_path_column() {
        let err = load("id,labels\nr1,x\n").unwrap_err();
        assert!(matches!(err, Error::Manifest { row: 1, .. }), "{err}");
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let entries = vec![
            WeakManifestEntry {
                id: "a".into(),
                path: "audio/a.wav".into(),
                labels: ["x".to_string(), "y".to_string()].into(),
            },
            WeakManifestEntry {
                id: "b".into(),
                path: "audio/b.wav".into(),
                labels: BTreeSet::new(),
            },
        ];
        write_weak_manifest(&p, &entries).unwrap();
        assert_eq!(load_weak_manifest(&p).unwrap(), entries);
    }
}

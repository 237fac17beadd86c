use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["path", "content_id", "distortion_id", "level", "mos"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub content_id: u32,
    pub distortion_id: u32,
    pub level: u32,
    pub mos: Option<f64>,
}

impl ManifestEntry {
    pub fn key(&self) -> (u32, u32, u32) {
        (self.content_id, self.distortion_id, self.level)
    }
}

/// Ordered list of dataset samples. Entries without a MOS are only usable for
/// pre-training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.key()) {
                return Err(Error::Validation(format!(
                    "duplicate (content_id, distortion_id, level) = ({}, {}, {}) at {}",
                    e.content_id,
                    e.distortion_id,
                    e.level,
                    e.path.display()
                )));
            }
            if let Some(m) = e.mos {
                if !m.is_finite() {
                    return Err(Error::Validation(format!("non-finite mos for {}", e.path.display())));
                }
            }
        }
        Ok(())
    }

    /// Distinct content ids in first-appearance order.
    pub fn content_ids(&self) -> Vec<u32> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.content_id))
            .map(|e| e.content_id)
            .collect()
    }

    pub fn all_labeled(&self) -> bool {
        self.entries.iter().all(|e| e.mos.is_some())
    }

    /// Entries whose content id is in `ids`, in manifest order.
    pub fn filter_contents(&self, ids: &[u32]) -> DatasetManifest {
        DatasetManifest {
            entries: self
                .entries
                .iter()
                .filter(|e| ids.contains(&e.content_id))
                .cloned()
                .collect(),
        }
    }

    /// Makes relative entry paths absolute with respect to `base`.
    pub fn resolved(&self, base: &Path) -> DatasetManifest {
        DatasetManifest {
            entries: self
                .entries
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    if e.path.is_relative() {
                        e.path = base.join(&e.path);
                    }
                    e
                })
                .collect(),
        }
    }
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    name: &str,
    path: &Path,
    line: usize,
) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::format(path, line, format!("`{name}` is not numeric: `{raw}`")))
}

/// Reads a manifest CSV. Relative entry paths are returned as written.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, 0, format!("{other:?}")),
        })?;
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::format(path, 1, "missing header"))?
        .map_err(|e| Error::format(path, 1, e.to_string()))?;
    if header.iter().map(str::trim).ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::format(
            path,
            1,
            format!("header must be exactly `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut entries = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::format(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 5 {
            return Err(Error::format(path, line, format!("expected 5 fields, found {}", rec.len())));
        }
        let mos_raw = rec[4].trim();
        let mos = if mos_raw.is_empty() {
            None
        } else {
            Some(parse_field::<f64>(mos_raw, "mos", path, line)?)
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(rec[0].trim()),
            content_id: parse_field(&rec[1], "content_id", path, line)?,
            distortion_id: parse_field(&rec[2], "distortion_id", path, line)?,
            level: parse_field(&rec[3], "level", path, line)?,
            mos,
        });
    }
    DatasetManifest::new(entries)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, 0, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(MANIFEST_HEADER).map_err(io_err)?;
    for e in &manifest.entries {
        let mos = e.mos.map(|m| m.to_string()).unwrap_or_default();
        w.write_record([
            e.path.to_string_lossy().as_ref(),
            &e.content_id.to_string(),
            &e.distortion_id.to_string(),
            &e.level.to_string(),
            &mos,
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::fs;

    #[test]
    fn parses_rows_in_order_with_blank_mos() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(
            &p,
            "path,content_id,distortion_id,level,mos\na.ply,0,1,2,3.5\nb.ply,0,1,3,\n",
        )
        .unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].path, PathBuf::from("a.ply"));
        assert_eq!(m.entries[0].mos, Some(3.5));
        assert_eq!(m.entries[1].level, 3);
        assert_eq!(m.entries[1].mos, None);
    }

    #[test]
    fn duplicate_triple_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(
            &p,
            "path,content_id,distortion_id,level,mos\na.ply,0,1,2,1\nb.ply,0,1,2,2\n",
        )
        .unwrap();
        match load_manifest(&p) {
            Err(Error::Validation(msg)) => assert!(msg.contains("(0, 1, 2)"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_mos_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "path,content_id,distortion_id,level,mos\na.ply,0,1,2,good\n").unwrap();
        match load_manifest(&p) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "file,content,distortion,level,mos\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn random_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let entries = (0..50)
            .map(|i| ManifestEntry {
                path: PathBuf::from(format!("dir/sample_{i}.ply")),
                content_id: i / 10,
                distortion_id: i % 10,
                level: rng.random_range(1..=7),
                mos: if rng.random_bool(0.3) {
                    None
                } else {
                    Some(rng.random_range(0.0..100.0))
                },
            })
            .collect();
        let m = DatasetManifest::new(entries).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_manifest(&m, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }
}

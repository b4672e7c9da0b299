//! Records, manifests and the plain-text record format.
//!
//! A record file is decimal CSV with one lead per row and no header. Labels
//! live in the manifest, never in the record file, so the same signal file
//! can be relabelled without rewriting it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine rhythm classes of the CPSC 2018 taxonomy, in the order used by
/// the `cpsc-mini` preset.
pub const CPSC_CLASSES: [&str; 9] = ["Normal", "AF", "I-AVB", "LBBB", "RBBB", "PAC", "PVC", "STD", "STE"];

/// Per-class record totals after merging the supplementary sources
/// (same order as [`CPSC_CLASSES`]).
pub const CPSC_TOTALS: [usize; 9] = [9928, 1578, 788, 228, 1701, 642, 748, 826, 213];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId {
    pub index: usize,
    pub name: String,
}

impl ClassId {
    pub fn new(index: usize, name: impl Into<String>) -> Self {
        Self {
            index,
            name: name.into(),
        }
    }
}

/// One multi-lead recording: `leads` is `[lead, sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub id: String,
    pub label: ClassId,
    pub leads: Array2<f64>,
}

impl EcgRecord {
    pub fn new(id: impl Into<String>, label: ClassId, leads: Array2<f64>) -> Result<Self> {
        let id = id.into();
        if leads.nrows() == 0 || leads.ncols() == 0 {
            return Err(Error::data(format!("record {id} has an empty lead matrix")));
        }
        if let Some(pos) = leads.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos / leads.ncols(), pos % leads.ncols());
            return Err(Error::data(format!(
                "record {id} has a non-finite value at lead {r}, sample {c}"
            )));
        }
        Ok(Self { id, label, leads })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.leads.dim()
    }
}

/// Reads a record file into a `[lead, sample]` matrix.
pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_owned(),
        source,
    })?;
    parse_matrix(&text, path)
}

fn parse_matrix(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0usize;
        for (j, field) in line.split(',').enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::Format {
                path: path.to_owned(),
                line: i + 1,
                column: j + 1,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "{}:{}:{}: non-finite value {field:?}",
                    path.display(),
                    i + 1,
                    j + 1
                )));
            }
            values.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(Error::Format {
                    path: path.to_owned(),
                    line: i + 1,
                    column: count.min(w) + 1,
                    message: format!("expected {w} values, found {count}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = width.ok_or_else(|| Error::Format {
        path: path.to_owned(),
        line: 1,
        column: 1,
        message: "file contains no data".into(),
    })?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::internal(e.to_string()))
}

/// Writes a matrix as CSV. `{:e}` formatting emits the shortest decimal that
/// parses back to the identical `f64`, so save/load is exact.
pub fn save_matrix(m: &Array2<f64>, path: &Path) -> Result<()> {
    let werr = |source| Error::Write {
        path: path.to_owned(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(werr)?;
        }
    }
    let file = fs::File::create(path).map_err(werr)?;
    let mut out = BufWriter::new(file);
    let mut line = String::new();
    for row in m.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            write!(line, "{v:e}").expect("writing to a String cannot fail");
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(werr)?;
    }
    out.flush().map_err(werr)
}

pub fn load_record(path: &Path, label: ClassId) -> Result<EcgRecord> {
    let leads = load_matrix(path)?;
    EcgRecord::new(record_id(path), label, leads)
}

pub fn save_record(record: &EcgRecord, path: &Path) -> Result<()> {
    save_matrix(&record.leads, path)
}

/// Record id derived from a file path: the file stem.
pub fn record_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub label: usize,
    pub name: String,
}

impl ManifestEntry {
    pub fn class(&self) -> ClassId {
        ClassId::new(self.label, self.name.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
}

impl DatasetManifest {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            entries: Vec::new(),
            notes: String::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?;
        let manifest: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    /// A label index must always carry the same class name.
    pub fn validate(&self) -> Result<()> {
        let mut names: BTreeMap<usize, &str> = BTreeMap::new();
        for e in &self.entries {
            match names.get(&e.label) {
                Some(n) if *n != e.name => {
                    return Err(Error::data(format!(
                        "label {} is named both {n:?} and {:?}",
                        e.label, e.name
                    )))
                }
                _ => {
                    names.insert(e.label, &e.name);
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> Vec<ClassId> {
        let mut seen: BTreeMap<usize, String> = BTreeMap::new();
        for e in &self.entries {
            seen.entry(e.label).or_insert_with(|| e.name.clone());
        }
        seen.into_iter().map(|(i, n)| ClassId::new(i, n)).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.class()).or_insert(0) += 1;
        }
        counts
    }

    pub fn resolve(&self, entry: &ManifestEntry, base: &Path) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_owned()
        } else {
            base.join(p)
        }
    }

    /// Loads every record in manifest order; files are read in parallel.
    pub fn load_records(&self, base: &Path) -> Result<Vec<EcgRecord>> {
        self.entries
            .par_iter()
            .map(|e| load_record(&self.resolve(e, base), e.class()))
            .collect()
    }
}

/// Writes `records` under `dir/<subdir>/<id>.csv` and returns the manifest
/// describing them (paths relative to `dir`).
pub fn write_records(records: &[EcgRecord], dir: &Path, subdir: &str, seed: u64) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::new(seed);
    let rel: Vec<String> = records
        .iter()
        .map(|r| {
            if subdir.is_empty() {
                format!("{}.csv", r.id)
            } else {
                format!("{subdir}/{}.csv", r.id)
            }
        })
        .collect();
    records
        .par_iter()
        .zip(rel.par_iter())
        .try_for_each(|(r, p)| save_record(r, &dir.join(p)))?;
    for (r, p) in records.iter().zip(rel) {
        manifest.entries.push(ManifestEntry {
            path: p,
            label: r.label.index,
            name: r.label.name.clone(),
        });
    }
    Ok(manifest)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let werr = |source| Error::Write {
        path: path.to_owned(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(werr)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(werr)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

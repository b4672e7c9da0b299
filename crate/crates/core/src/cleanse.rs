//! Shape normalisation of raw records.
//!
//! Records with the wrong lead count or too few samples are rejected, long
//! records are truncated and medium-length ones are padded up to the target
//! length with a low-rank PCA reconstruction of their own leading columns.
//! Nothing here is random.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use ndarray::{concatenate, s, Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_records, ClassId, DatasetManifest, EcgRecord};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanseConfig {
    pub leads: usize,
    pub samples: usize,
    /// Records with this many samples or fewer are rejected.
    pub min_exclusive: usize,
    /// PCA components used to synthesise padding.
    pub components: usize,
}

impl Default for CleanseConfig {
    fn default() -> Self {
        Self {
            leads: 12,
            samples: 5000,
            min_exclusive: 2500,
            components: 5,
        }
    }
}

/// Principal axes of a record, treating each sample (column) as one
/// observation of a `leads`-dimensional vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `leads x r`, orthonormal columns.
    pub components: Array2<f64>,
    /// Non-increasing.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl PcaModel {
    pub fn rank(&self) -> usize {
        self.components.ncols()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.explained_variance.len()];
        }
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    /// `mean + V V^T (x - mean)` for every column of `x`.
    pub fn reconstruct(&self, x: &Array2<f64>) -> Array2<f64> {
        let centered = x - &self.mean.view().insert_axis(Axis(1));
        let scores = self.components.t().dot(&centered);
        let mut out = self.components.dot(&scores);
        out += &self.mean.view().insert_axis(Axis(1));
        out
    }
}

pub fn fit_pca(x: &Array2<f64>, r: usize) -> Result<PcaModel> {
    let (leads, cols) = x.dim();
    if r == 0 || r > leads {
        return Err(Error::argument(format!(
            "PCA needs 1 <= r <= {leads} components, got {r}"
        )));
    }
    if cols < leads || cols < 2 {
        return Err(Error::argument(format!(
            "PCA over {leads} leads needs at least {leads} samples, got {cols}"
        )));
    }
    let mean = x.mean_axis(Axis(1)).expect("cols > 0");
    let centered = x - &mean.view().insert_axis(Axis(1));
    let cov = centered.dot(&centered.t()) / (cols as f64 - 1.0);
    let (values, vectors) = symmetric_eigen(&cov);
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let total_variance: f64 = values.iter().sum();

    let tol = values[0] * leads as f64 * 1e-12;
    let numerical_rank = values.iter().filter(|&&v| v > tol && v > 0.0).count();
    let kept = if r > numerical_rank {
        warn!("requested {r} PCA components but covariance rank is {numerical_rank}; using {numerical_rank}");
        numerical_rank
    } else {
        r
    };
    Ok(PcaModel {
        mean,
        components: vectors.slice(s![.., ..kept]).to_owned(),
        explained_variance: values[..kept].to_vec(),
        total_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cleansed {
    Accepted(EcgRecord),
    Rejected(Rejection),
}

/// Applies the reject / truncate / pad rule to one record.
pub fn cleanse_record(record: &EcgRecord, cfg: &CleanseConfig) -> Result<Cleansed> {
    let (leads, cols) = record.shape();
    if leads != cfg.leads {
        return Ok(Cleansed::Rejected(Rejection {
            id: record.id.clone(),
            reason: format!("has {leads} leads, expected {}", cfg.leads),
        }));
    }
    if cols <= cfg.min_exclusive {
        return Ok(Cleansed::Rejected(Rejection {
            id: record.id.clone(),
            reason: format!("has {cols} samples, need more than {}", cfg.min_exclusive),
        }));
    }
    let leads_out = if cols >= cfg.samples {
        record.leads.slice(s![.., ..cfg.samples]).to_owned()
    } else {
        let missing = cfg.samples - cols;
        let model = fit_pca(&record.leads, cfg.components.min(leads))?;
        let recon = model.reconstruct(&record.leads);
        let idx: Vec<usize> = (0..missing).map(|j| j % cols).collect();
        let pad = recon.select(Axis(1), &idx);
        concatenate(Axis(1), &[record.leads.view(), pad.view()]).map_err(|e| Error::internal(e.to_string()))?
    };
    if leads_out.iter().any(|v| !v.is_finite()) {
        return Err(Error::internal(format!(
            "cleansing {} produced non-finite values",
            record.id
        )));
    }
    Ok(Cleansed::Accepted(EcgRecord {
        id: record.id.clone(),
        label: record.label.clone(),
        leads: leads_out,
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone)]
pub struct CleansedSet {
    pub accepted: Vec<EcgRecord>,
    pub report: RejectionReport,
}

impl CleansedSet {
    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.accepted {
            *counts.entry(r.label.clone()).or_insert(0) += 1;
        }
        counts
    }
}

/// Cleanses every record (in parallel, results in input order). Every class
/// present in the input must keep at least one record.
pub fn cleanse_records(records: &[EcgRecord], cfg: &CleanseConfig) -> Result<CleansedSet> {
    let outcomes: Vec<Cleansed> = records
        .par_iter()
        .map(|r| cleanse_record(r, cfg))
        .collect::<Result<_>>()?;
    let mut accepted = Vec::new();
    let mut report = RejectionReport::default();
    for o in outcomes {
        match o {
            Cleansed::Accepted(r) => accepted.push(r),
            Cleansed::Rejected(r) => report.rejected.push(r),
        }
    }
    let mut classes: BTreeMap<&ClassId, usize> = records.iter().map(|r| (&r.label, 0)).collect();
    for r in &accepted {
        *classes.get_mut(&r.label).expect("accepted records come from the input") += 1;
    }
    if let Some((class, _)) = classes.iter().find(|(_, n)| **n == 0) {
        return Err(Error::data(format!(
            "class {} ({}) has no records left after cleansing",
            class.index, class.name
        )));
    }
    Ok(CleansedSet { accepted, report })
}

/// Loads the manifest's records, cleanses them and writes the survivors under
/// `out_dir/records/`. Returns the new manifest (also saved as
/// `out_dir/manifest.json`) and the rejection report.
pub fn cleanse_dataset(
    manifest: &DatasetManifest,
    base: &Path,
    out_dir: &Path,
    cfg: &CleanseConfig,
) -> Result<(DatasetManifest, RejectionReport)> {
    if manifest.entries.is_empty() {
        return Err(Error::data("manifest has no entries"));
    }
    let records = manifest.load_records(base)?;
    let set = cleanse_records(&records, cfg)?;
    let mut out = write_records(&set.accepted, out_dir, "records", manifest.seed)?;
    out.notes = format!(
        "cleansed to {}x{}; {} rejected",
        cfg.leads,
        cfg.samples,
        set.report.rejected.len()
    );
    out.save(&out_dir.join("manifest.json"))?;
    Ok((out, set.report))
}

//! Stratified k-fold cross-validation.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::metrics::{MeanStd, Metrics};
use super::net::{EpochStats, NetConfig};
use super::{evaluate, train, LabeledSet};

/// Fold index of every sample. Within each class the samples are shuffled
/// (stream `folds/<class>`) and dealt round-robin; the dealing position
/// carries over between classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], names: &[String], folds: usize, seed: &RngStream) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::argument(format!("need at least 2 folds, got {folds}")));
    }
    let mut assignment = vec![usize::MAX; labels.len()];
    let mut counter = 0usize;
    for (class, name) in names.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::data(format!(
                "class {name} has {} samples, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut seed.substream(format!("folds/{name}")).rng());
        for i in members {
            assignment[i] = counter % folds;
            counter += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    pub curve: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    /// Mean and std of each class's recall across folds.
    pub recall: Vec<MeanStd>,
}

/// Trains one model per fold on the other folds and evaluates it on the held
/// out one. Fold `k` trains with stream `fold{k}` under `cfg.seed`.
pub fn cross_validate(set: &LabeledSet, cfg: &NetConfig, folds: usize) -> Result<CvReport> {
    let assignment = stratified_folds(&set.labels, &set.class_names, folds, &cfg.seed)?;
    let results: Vec<FoldResult> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train_idx: Vec<usize> = (0..set.len()).filter(|&i| assignment[i] != k).collect();
            let test_idx: Vec<usize> = (0..set.len()).filter(|&i| assignment[i] == k).collect();
            let train_set = set.select(&train_idx);
            let test_set = set.select(&test_idx);
            let mut fold_cfg = cfg.clone();
            fold_cfg.seed = cfg.seed.substream(format!("fold{k}"));
            let (model, curve) = train(&train_set, &fold_cfg)?;
            let metrics = evaluate(&model, &test_set)?;
            Ok(FoldResult {
                fold: k,
                metrics,
                curve,
            })
        })
        .collect::<Result<_>>()?;
    let acc: Vec<f64> = results.iter().map(|r| r.metrics.accuracy).collect();
    let f1: Vec<f64> = results.iter().map(|r| r.metrics.macro_f1).collect();
    let recall = (0..set.class_names.len())
        .map(|c| {
            let v: Vec<f64> = results.iter().map(|r| r.metrics.per_class[c].recall).collect();
            MeanStd::of(&v)
        })
        .collect();
    Ok(CvReport {
        folds: results,
        accuracy: MeanStd::of(&acc),
        macro_f1: MeanStd::of(&f1),
        recall,
    })
}

impl LabeledSet {
    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn empty(width: usize, class_names: Vec<String>) -> Self {
        LabeledSet {
            features: Array2::zeros((0, width)),
            labels: Vec::new(),
            class_names,
        }
    }
}

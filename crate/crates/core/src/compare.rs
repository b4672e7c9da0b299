//! Three-arm augmentation study and noise robustness sweep.
//!
//! The arms share one held-out set of original records (the test split of
//! the rebalancing pipeline) and one network seed:
//!
//! * `imbalanced`: trained on every other cleansed record as is;
//! * `oversampled`: the same records with each class duplicated up to the
//!   size of the largest class;
//! * `rebalanced`: trained on the pipeline's fused training set.
//!
//! The first two are evaluated on the held-out originals. The rebalanced arm
//! is evaluated on the pipeline's test set, i.e. the same originals fused
//! with their class's test prototype, and additionally on the plain
//! originals.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{self, EpochStats, LabeledSet, Metrics, Model, NetConfig};
use crate::data::{ClassId, EcgRecord};
use crate::error::{Error, Result};
use crate::fusion::{run_pipeline, FusionConfig, PipelineReport, Sample};
use crate::noise::{model_sources, sweep, NoiseKind};
use crate::rng::RngStream;
use crate::wavelet::FilterBank;

/// `cfg` with its first and last widths set to the given sizes.
pub fn fit_widths(cfg: &NetConfig, inputs: usize, classes: usize) -> NetConfig {
    let mut out = cfg.clone();
    if out.widths.len() < 2 {
        out.widths = vec![inputs, classes];
    }
    out.widths[0] = inputs;
    *out.widths.last_mut().expect("two or more widths") = classes;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub train_counts: Vec<usize>,
    pub metrics: Metrics,
    pub minority_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub classes: Vec<String>,
    pub minority: String,
    pub test_ids: Vec<String>,
    pub pipeline: PipelineReport,
    pub arms: Vec<ArmReport>,
    /// The rebalanced model scored on the plain held-out originals.
    pub rebalanced_on_originals: ArmReport,
}

impl CompareReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == name)
    }

    /// Rebalanced minus imbalanced minority recall.
    pub fn minority_recall_gain(&self) -> f64 {
        let get = |n| self.arm(n).map_or(f64::NAN, |a| a.minority_recall);
        get("rebalanced") - get("imbalanced")
    }
}

/// Duplicates records of each class (cycling through a shuffled order,
/// stream `oversample/<class>`) until every class matches the largest.
pub fn oversample(records: &[EcgRecord], seed: &RngStream) -> Vec<EcgRecord> {
    let mut by_class: BTreeMap<&ClassId, Vec<&EcgRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(&r.label).or_default().push(r);
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(target * by_class.len());
    for (class, mut recs) in by_class {
        out.extend(recs.iter().map(|r| (*r).clone()));
        recs.shuffle(&mut seed.substream(format!("oversample/{}", class.index)).rng());
        out.extend(recs.iter().cycle().take(target - recs.len()).map(|r| (*r).clone()));
    }
    out
}

fn arm_report(arm: &str, train: &LabeledSet, metrics: Metrics, minority: usize) -> ArmReport {
    let mut train_counts = vec![0; train.class_names.len()];
    for &l in &train.labels {
        train_counts[l] += 1;
    }
    ArmReport {
        arm: arm.to_owned(),
        train_counts,
        minority_recall: metrics.per_class[minority].recall,
        macro_f1: metrics.macro_f1,
        metrics,
    }
}

/// Runs the study on cleansed records.
pub fn compare_augmentation(
    records: &[EcgRecord],
    fusion: &FusionConfig,
    net: &NetConfig,
    fb: &FilterBank,
) -> Result<CompareReport> {
    let output = run_pipeline(records, fusion, fb)?;
    let classes: Vec<ClassId> = output.report.classes.clone();
    let mut counts: BTreeMap<&ClassId, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(&r.label).or_insert(0) += 1;
    }
    let minority_class = counts
        .iter()
        .min_by_key(|(c, n)| (**n, **c))
        .map(|(c, _)| (*c).clone())
        .ok_or_else(|| Error::data("no records"))?;
    let minority = classes
        .iter()
        .position(|c| *c == minority_class)
        .ok_or_else(|| Error::internal("minority class missing from the pipeline report"))?;

    let test_ids: BTreeSet<&str> = output
        .splits
        .values()
        .flat_map(|s| s.test.iter().map(String::as_str))
        .collect();
    let held_out: Vec<EcgRecord> = records
        .iter()
        .filter(|r| test_ids.contains(r.id.as_str()))
        .cloned()
        .collect();
    let remaining: Vec<EcgRecord> = records
        .iter()
        .filter(|r| !test_ids.contains(r.id.as_str()))
        .cloned()
        .collect();
    let oversampled = oversample(&remaining, &fusion.seed);

    let originals = LabeledSet::from_records(&held_out, &classes, fb)?;
    let fused_test = LabeledSet::from_samples(&output.dataset.test, &classes, fb)?;
    let sets = [
        LabeledSet::from_records(&remaining, &classes, fb)?,
        LabeledSet::from_records(&oversampled, &classes, fb)?,
        LabeledSet::from_samples(&output.dataset.train, &classes, fb)?,
    ];
    let cfg = fit_widths(net, originals.features.ncols(), classes.len());
    let models: Vec<Model> = sets
        .par_iter()
        .map(|s| classify::train(s, &cfg).map(|(m, _)| m))
        .collect::<Result<_>>()?;

    let names = ["imbalanced", "oversampled", "rebalanced"];
    let mut arms = Vec::with_capacity(3);
    for (i, name) in names.iter().enumerate() {
        let test = if i == 2 { &fused_test } else { &originals };
        let metrics = classify::evaluate(&models[i], test)?;
        arms.push(arm_report(name, &sets[i], metrics, minority));
    }
    let rebalanced_on_originals = arm_report(
        "rebalanced",
        &sets[2],
        classify::evaluate(&models[2], &originals)?,
        minority,
    );
    Ok(CompareReport {
        classes: classes.iter().map(|c| c.name.clone()).collect(),
        minority: minority_class.name,
        test_ids: test_ids.into_iter().map(str::to_owned).collect(),
        pipeline: output.report,
        arms,
        rebalanced_on_originals,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub source: String,
    pub snr_db: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy of `model` on noisy copies of `test` for every kind and level.
pub fn noise_robustness(
    model: &Model,
    test: &[Sample],
    classes: &[ClassId],
    kinds: &[NoiseKind],
    levels: &[f64],
    seed: &RngStream,
    fb: &FilterBank,
) -> Result<Vec<SweepPoint>> {
    let sets = sweep(test, &model_sources(kinds), levels, seed)?;
    sets.iter()
        .map(|set| {
            let labeled = LabeledSet::from_samples(&set.samples, classes, fb)?;
            let m = classify::evaluate(model, &labeled)?;
            Ok(SweepPoint {
                source: set.source.clone(),
                snr_db: set.snr_db,
                accuracy: m.accuracy,
                macro_f1: m.macro_f1,
            })
        })
        .collect()
}

/// Trains the rebalanced model on the pipeline output for `records` and
/// sweeps its test set. Returns the points and the training curve.
pub fn rebalanced_noise_study(
    records: &[EcgRecord],
    fusion: &FusionConfig,
    net: &NetConfig,
    kinds: &[NoiseKind],
    levels: &[f64],
    fb: &FilterBank,
) -> Result<(Vec<SweepPoint>, Vec<EpochStats>)> {
    let output = run_pipeline(records, fusion, fb)?;
    let classes = output.report.classes.clone();
    let train = LabeledSet::from_samples(&output.dataset.train, &classes, fb)?;
    let cfg = fit_widths(net, train.features.ncols(), classes.len());
    let (model, curve) = classify::train(&train, &cfg)?;
    let points = noise_robustness(
        &model,
        &output.dataset.test,
        &classes,
        kinds,
        levels,
        &fusion.seed.substream("noise"),
        fb,
    )?;
    Ok((points, curve))
}

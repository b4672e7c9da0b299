//! Class rebalancing by intra-class wavelet fusion.
//!
//! The pipeline, per class:
//!
//! 1. keep `n` records, where `n` is the size of the smallest class;
//! 2. pick `s = floor(n * delta)` of them and fuse every unordered pair,
//!    giving `s(s-1)/2` fused records;
//! 3. shuffle the fused records into `p` disjoint groups of
//!    `m = floor(s(s-1) / 2p)` and fuse each group into one training
//!    prototype (the remainder is discarded);
//! 4. fuse the `p` training prototypes into the single test prototype;
//! 5. split the `n` originals into `floor(0.8 n)` training and the rest
//!    test records, fuse every training original with each training
//!    prototype and every test original with the test prototype.
//!
//! Every class therefore ends up with `floor(0.8 n) * p` training and
//! `n - floor(0.8 n)` test samples. All fusion is the equal-weight wavelet
//! average of [`fuse_signals`].

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, EcgRecord};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::wavelet::{equal_weights, fuse_signals, FilterBank, FusionAccumulator};

/// Upper bound on pairs per class used by [`default_delta`].
pub const PAIR_BUDGET: usize = 50_000;

/// `floor(x)` that tolerates binary representation error, so
/// `floor(10 * 0.7)` is 7 and `floor(100 * 0.29)` is 29.
fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

pub fn pair_count(s: usize) -> usize {
    s * s.saturating_sub(1) / 2
}

/// Number of records that take part in pairwise fusion.
pub fn fused_subset_size(n: usize, delta: f64) -> usize {
    floor_count(n as f64 * delta).min(n)
}

/// 1 for `n <= 256`, otherwise the largest proportion keeping the pair count
/// of one class within [`PAIR_BUDGET`].
pub fn default_delta(n: usize) -> f64 {
    if n <= 256 {
        return 1.0;
    }
    let mut s = n;
    while pair_count(s) > PAIR_BUDGET {
        s -= 1;
    }
    (s as f64 / n as f64).min(1.0)
}

/// Number of training records per class for a selection of `n`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    floor_count(n as f64 * fraction).min(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Proportion of each class taking part in pairwise fusion; `None` picks
    /// [`default_delta`] from the threshold.
    pub delta: Option<f64>,
    /// Training feature libraries per class.
    pub p: usize,
    /// Fraction of each class's originals used for training + validation.
    pub train_fraction: f64,
    pub seed: RngStream,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            delta: None,
            p: 4,
            train_fraction: 0.8,
            seed: RngStream::root(0),
        }
    }
}

impl FusionConfig {
    pub fn resolved_delta(&self, n: usize) -> f64 {
        self.delta.unwrap_or_else(|| default_delta(n))
    }

    /// Checks the configuration against a threshold `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let delta = self.resolved_delta(n);
        check_delta(delta)?;
        if self.p == 0 {
            return Err(Error::argument("p must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::argument(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        let s = fused_subset_size(n, delta);
        if s < 2 {
            return Err(Error::argument(format!(
                "n * delta = {n} * {delta} leaves fewer than two records to fuse"
            )));
        }
        if self.p > pair_count(s) {
            return Err(Error::argument(format!(
                "p = {} exceeds the {} fused records per class",
                self.p,
                pair_count(s)
            )));
        }
        if train_count(n, self.train_fraction) == 0 {
            return Err(Error::argument(format!("n = {n} leaves no training records")));
        }
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::argument(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

/// The `n` records kept for every class.
#[derive(Debug, Clone)]
pub struct Selection {
    pub n: usize,
    pub classes: BTreeMap<ClassId, Vec<EcgRecord>>,
}

fn group_by_class(records: &[EcgRecord]) -> BTreeMap<ClassId, Vec<&EcgRecord>> {
    let mut by_class: BTreeMap<ClassId, Vec<&EcgRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.label.clone()).or_default().push(r);
    }
    by_class
}

/// Uses the smallest class size as the threshold `n` and draws a uniform
/// `n`-subset from every larger class (stream `select/<class>`). Selected
/// records keep their input order.
pub fn select_threshold(records: &[EcgRecord], seed: &RngStream) -> Result<Selection> {
    let by_class = group_by_class(records);
    if by_class.len() < 2 {
        return Err(Error::data(format!(
            "need at least two classes, found {}",
            by_class.len()
        )));
    }
    let n = by_class.values().map(Vec::len).min().expect("non-empty");
    if n < 2 {
        let (class, _) = by_class.iter().find(|(_, v)| v.len() < 2).expect("min < 2");
        return Err(Error::data(format!(
            "class {} ({}) has {n} record(s); fusion needs at least two",
            class.index, class.name
        )));
    }
    let classes = by_class
        .into_iter()
        .map(|(class, recs)| {
            let chosen: Vec<EcgRecord> = if recs.len() == n {
                recs.into_iter().cloned().collect()
            } else {
                let mut rng = seed.substream(format!("select/{}", class.index)).rng();
                let mut idx = index::sample(&mut rng, recs.len(), n).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| recs[i].clone()).collect()
            };
            (class, chosen)
        })
        .collect();
    Ok(Selection { n, classes })
}

/// All unordered pairs among `floor(n * delta)` indices drawn without
/// replacement from `0..n` (all of them when `delta = 1`). Pairs are
/// `(i, j)` with `i < j`, in lexicographic order.
pub fn enumerate_pairs(n: usize, delta: f64, seed: &RngStream) -> Result<Vec<(usize, usize)>> {
    check_delta(delta)?;
    let s = fused_subset_size(n, delta);
    if s < 2 {
        return Err(Error::argument(format!(
            "n * delta = {n} * {delta} leaves fewer than two records to fuse"
        )));
    }
    let chosen: Vec<usize> = if s == n {
        (0..n).collect()
    } else {
        let mut idx = index::sample(&mut seed.rng(), n, s).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut pairs = Vec::with_capacity(pair_count(s));
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a + 1..] {
            pairs.push((i, j));
        }
    }
    Ok(pairs)
}

fn fuse_pair(records: &[Array2<f64>], (i, j): (usize, usize), fb: &FilterBank) -> Result<Array2<f64>> {
    let (a, b) = (
        records
            .get(i)
            .ok_or_else(|| Error::argument(format!("pair index {i} out of range")))?,
        records
            .get(j)
            .ok_or_else(|| Error::argument(format!("pair index {j} out of range")))?,
    );
    fuse_signals(&[a, b], &[0.5, 0.5], fb)
}

/// Fuses every pair with weights 1/2, 1/2. Output order follows `pairs`.
pub fn intra_class_fuse(
    records: &[Array2<f64>],
    pairs: &[(usize, usize)],
    fb: &FilterBank,
) -> Result<Vec<Array2<f64>>> {
    pairs.par_iter().map(|&p| fuse_pair(records, p, fb)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LibraryRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLibrary {
    pub class: ClassId,
    pub role: LibraryRole,
    pub prototypes: Vec<Array2<f64>>,
}

/// How the fused records were grouped into libraries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    pub m: usize,
    pub leftover: usize,
}

/// Shuffles `0..count` (stream `group`) and cuts the first `p * m` into `p`
/// consecutive groups of `m`.
fn draw_groups(count: usize, p: usize, seed: &RngStream) -> Result<(Vec<Vec<usize>>, Grouping)> {
    if p == 0 {
        return Err(Error::argument("p must be at least 1"));
    }
    if p > count {
        return Err(Error::argument(format!(
            "cannot build {p} libraries from {count} fused records"
        )));
    }
    let m = count / p;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut seed.rng());
    let groups = order[..p * m].chunks(m).map(<[usize]>::to_vec).collect();
    Ok((
        groups,
        Grouping {
            m,
            leftover: count - p * m,
        },
    ))
}

/// Groups already-fused records into `p` training prototypes.
pub fn build_train_libraries(
    class: &ClassId,
    fused: &[Array2<f64>],
    p: usize,
    fb: &FilterBank,
    seed: &RngStream,
) -> Result<(FeatureLibrary, Grouping)> {
    let (groups, grouping) = draw_groups(fused.len(), p, seed)?;
    let prototypes = groups
        .par_iter()
        .map(|g| {
            let members: Vec<&Array2<f64>> = g.iter().map(|&i| &fused[i]).collect();
            fuse_signals(&members, &equal_weights(members.len()), fb)
        })
        .collect::<Result<_>>()?;
    Ok((
        FeatureLibrary {
            class: class.clone(),
            role: LibraryRole::Train,
            prototypes,
        },
        grouping,
    ))
}

/// Same result as [`intra_class_fuse`] followed by [`build_train_libraries`],
/// but each fused pair is produced only when its group consumes it, so memory
/// stays at one record per worker. Pairs that fall in the discarded
/// remainder are never computed.
pub fn build_train_libraries_from_pairs(
    class: &ClassId,
    records: &[Array2<f64>],
    pairs: &[(usize, usize)],
    p: usize,
    fb: &FilterBank,
    seed: &RngStream,
) -> Result<(FeatureLibrary, Grouping)> {
    let (groups, grouping) = draw_groups(pairs.len(), p, seed)?;
    let prototypes = groups
        .par_iter()
        .map(|g| {
            let w = equal_weights(g.len())[0];
            let mut acc = FusionAccumulator::new(fb);
            for &t in g {
                acc.add(&fuse_pair(records, pairs[t], fb)?, w)?;
            }
            acc.finish()
        })
        .collect::<Result<_>>()?;
    Ok((
        FeatureLibrary {
            class: class.clone(),
            role: LibraryRole::Train,
            prototypes,
        },
        grouping,
    ))
}

/// Fuses the training prototypes into the single test prototype.
pub fn build_test_library(train: &FeatureLibrary, fb: &FilterBank) -> Result<FeatureLibrary> {
    if train.role != LibraryRole::Train || train.prototypes.is_empty() {
        return Err(Error::argument("test library needs a non-empty training library"));
    }
    let proto = fuse_signals(&train.prototypes, &equal_weights(train.prototypes.len()), fb)?;
    Ok(FeatureLibrary {
        class: train.class.clone(),
        role: LibraryRole::Test,
        prototypes: vec![proto],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub library_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub data: Array2<f64>,
    pub class: ClassId,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RebalancedDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl RebalancedDataset {
    pub fn train_counts(&self) -> BTreeMap<ClassId, usize> {
        count_by_class(&self.train)
    }

    pub fn test_counts(&self) -> BTreeMap<ClassId, usize> {
        count_by_class(&self.test)
    }
}

pub fn count_by_class(samples: &[Sample]) -> BTreeMap<ClassId, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.class.clone()).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct ClassLibraries {
    pub train: FeatureLibrary,
    pub test: FeatureLibrary,
}

/// Which originals of a class went to training and which to testing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Splits every class of the selection (stream `split/<class>`).
pub fn split_selection(selection: &Selection, fraction: f64, seed: &RngStream) -> BTreeMap<ClassId, ClassSplit> {
    selection
        .classes
        .iter()
        .map(|(class, recs)| {
            let mut order: Vec<usize> = (0..recs.len()).collect();
            order.shuffle(&mut seed.substream(format!("split/{}", class.index)).rng());
            let k = train_count(recs.len(), fraction);
            let ids = |idx: &[usize]| idx.iter().map(|&i| recs[i].id.clone()).collect();
            (
                class.clone(),
                ClassSplit {
                    train: ids(&order[..k]),
                    test: ids(&order[k..]),
                },
            )
        })
        .collect()
}

/// Fuses each training original with every training prototype of its class
/// and each test original with the class's test prototype.
pub fn regenerate_dataset(
    selection: &Selection,
    libraries: &BTreeMap<ClassId, ClassLibraries>,
    config: &FusionConfig,
    fb: &FilterBank,
) -> Result<(RebalancedDataset, BTreeMap<ClassId, ClassSplit>)> {
    let splits = split_selection(selection, config.train_fraction, &config.seed);
    let mut out = RebalancedDataset::default();
    for (class, recs) in &selection.classes {
        let libs = libraries
            .get(class)
            .ok_or_else(|| Error::data(format!("no feature library for class {} ({})", class.index, class.name)))?;
        let test_proto = libs
            .test
            .prototypes
            .first()
            .ok_or_else(|| Error::data(format!("empty test library for class {}", class.name)))?;
        let by_id: BTreeMap<&str, &EcgRecord> = recs.iter().map(|r| (r.id.as_str(), r)).collect();
        let split = &splits[class];

        let jobs: Vec<(&EcgRecord, usize)> = split
            .train
            .iter()
            .flat_map(|id| {
                let rec = by_id[id.as_str()];
                (0..libs.train.prototypes.len()).map(move |j| (rec, j))
            })
            .collect();
        let train: Vec<Sample> = jobs
            .par_iter()
            .map(|&(rec, j)| {
                let data = fuse_signals(&[&rec.leads, &libs.train.prototypes[j]], &[0.5, 0.5], fb)?;
                Ok(Sample {
                    data,
                    class: class.clone(),
                    provenance: Provenance {
                        source_id: rec.id.clone(),
                        library_index: j,
                    },
                })
            })
            .collect::<Result<_>>()?;
        let test: Vec<Sample> = split
            .test
            .par_iter()
            .map(|id| {
                let rec = by_id[id.as_str()];
                let data = fuse_signals(&[&rec.leads, test_proto], &[0.5, 0.5], fb)?;
                Ok(Sample {
                    data,
                    class: class.clone(),
                    provenance: Provenance {
                        source_id: rec.id.clone(),
                        library_index: 0,
                    },
                })
            })
            .collect::<Result<_>>()?;
        out.train.extend(train);
        out.test.extend(test);
    }
    Ok((out, splits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub n: usize,
    pub delta: f64,
    pub p: usize,
    pub m: usize,
    pub leftover: usize,
    pub fused_per_class: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub classes: Vec<ClassId>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dataset: RebalancedDataset,
    pub report: PipelineReport,
    pub libraries: BTreeMap<ClassId, ClassLibraries>,
    pub splits: BTreeMap<ClassId, ClassSplit>,
}

/// Runs the whole rebalancing scheme on cleansed records.
pub fn run_pipeline(records: &[EcgRecord], config: &FusionConfig, fb: &FilterBank) -> Result<PipelineOutput> {
    let selection = select_threshold(records, &config.seed).map_err(|e| e.in_stage("select"))?;
    let n = selection.n;
    config.validate(n).map_err(|e| e.in_stage("configure"))?;
    let delta = config.resolved_delta(n);

    let mut libraries = BTreeMap::new();
    let mut grouping = None;
    let mut fused_per_class = 0;
    for (class, recs) in &selection.classes {
        let pairs = enumerate_pairs(n, delta, &config.seed.substream(format!("pairs/{}", class.index)))
            .map_err(|e| e.in_stage("pairs"))?;
        fused_per_class = pairs.len();
        let mats: Vec<Array2<f64>> = recs.iter().map(|r| r.leads.clone()).collect();
        let (train, g) = build_train_libraries_from_pairs(
            class,
            &mats,
            &pairs,
            config.p,
            fb,
            &config.seed.substream(format!("group/{}", class.index)),
        )
        .map_err(|e| e.in_stage("train-library"))?;
        let test = build_test_library(&train, fb).map_err(|e| e.in_stage("test-library"))?;
        grouping = Some(g);
        libraries.insert(class.clone(), ClassLibraries { train, test });
    }
    let grouping = grouping.expect("at least two classes");

    let (dataset, splits) =
        regenerate_dataset(&selection, &libraries, config, fb).map_err(|e| e.in_stage("regenerate"))?;

    let train_counts = dataset.train_counts();
    let test_counts = dataset.test_counts();
    let train_per_class = train_count(n, config.train_fraction) * config.p;
    let test_per_class = n - train_count(n, config.train_fraction);
    if train_counts.values().any(|&c| c != train_per_class) || test_counts.values().any(|&c| c != test_per_class) {
        return Err(Error::internal(format!(
            "unbalanced output: train {train_counts:?}, test {test_counts:?}"
        )));
    }

    Ok(PipelineOutput {
        report: PipelineReport {
            n,
            delta,
            p: config.p,
            m: grouping.m,
            leftover: grouping.leftover,
            fused_per_class,
            train_per_class,
            test_per_class,
            classes: selection.classes.keys().cloned().collect(),
        },
        dataset,
        libraries,
        splits,
    })
}

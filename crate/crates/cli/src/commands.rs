use std::fs;
use std::path::{Path, PathBuf};

use ecg_fusion::classify::{self, cross_validate, curve_csv, LabeledSet};
use ecg_fusion::cleanse::{cleanse_dataset, cleanse_records};
use ecg_fusion::compare::{compare_augmentation, fit_widths, median, rebalanced_noise_study, CompareReport};
use ecg_fusion::data::{load_matrix, write_json, write_records};
use ecg_fusion::fusion::{run_pipeline, Provenance, Sample};
use ecg_fusion::noise::{model_sources, sweep, NoiseSource};
use ecg_fusion::synth::synthesize_dataset;
use ecg_fusion::{ClassId, DatasetManifest, EcgRecord, Error, FilterBank, Result, RngStream};
use serde::Serialize;

use crate::config::RunConfig;

pub fn dispatch(cfg: &RunConfig) -> Result<()> {
    let out = cfg
        .paths
        .output
        .clone()
        .ok_or_else(|| Error::argument("no output directory"))?;
    match cfg.command.as_str() {
        "synth" => synth(cfg, &out),
        "clean" => clean(cfg, &out),
        "rebalance" => rebalance(cfg, &out),
        "noise" => noise(cfg, &out),
        "train-eval" => train_eval(cfg, &out),
        "compare" => compare(cfg, &out),
        other => Err(Error::argument(format!("unknown command {other:?}"))),
    }
}

fn input(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.paths.input.clone().ok_or_else(|| Error::argument("no input path"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_owned(),
        source,
    })
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Write {
        path: path.to_owned(),
        source,
    })
}

fn begin(cfg: &RunConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_json(cfg, &out.join("run_config.json"))
}

/// Loads a manifest and its records; relative paths resolve against the
/// manifest's directory.
fn load_dataset(manifest: &Path) -> Result<(DatasetManifest, Vec<EcgRecord>)> {
    let m = DatasetManifest::load(manifest)?;
    if m.entries.is_empty() {
        return Err(Error::data(format!("{} has no entries", manifest.display())));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let records = m.load_records(base)?;
    Ok((m, records))
}

/// A rebalanced split as written by `rebalance`: `<dir>/<split>/manifest.json`.
fn load_split(dataset: &Path, split: &str) -> Result<(DatasetManifest, Vec<EcgRecord>)> {
    if !dataset.is_dir() {
        return Err(Error::Read {
            path: dataset.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        });
    }
    load_dataset(&dataset.join(split).join("manifest.json"))
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    begin(cfg, out)?;
    let m = synthesize_dataset(&cfg.synth_spec(), &RngStream::root(cfg.synth.seed), out)?;
    log::info!("wrote {} records to {}", m.entries.len(), out.display());
    Ok(())
}

fn clean(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest_path = input(cfg)?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    begin(cfg, out)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (m, report) = cleanse_dataset(&manifest, base, out, &cfg.cleanse)?;
    write_json(&report, &out.join("rejections.json"))?;
    log::info!("kept {}, rejected {}", m.entries.len(), report.rejected.len());
    Ok(())
}

#[derive(Serialize)]
struct ProvenanceEntry<'a> {
    id: String,
    split: &'a str,
    class: &'a str,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

fn sample_id(s: &Sample, split: &str) -> String {
    match split {
        "train" => format!("{}_lib{}", s.provenance.source_id, s.provenance.library_index),
        _ => s.provenance.source_id.clone(),
    }
}

fn as_records(samples: &[Sample], split: &str) -> Result<Vec<EcgRecord>> {
    samples
        .iter()
        .map(|s| EcgRecord::new(sample_id(s, split), s.class.clone(), s.data.clone()))
        .collect()
}

fn rebalance(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (manifest, records) = load_dataset(&input(cfg)?)?;
    begin(cfg, out)?;
    let fb = FilterBank::bior13();
    let output = run_pipeline(&records, &cfg.fusion_config(0), &fb)?;

    let mut provenance = Vec::new();
    for (split, samples) in [("train", &output.dataset.train), ("test", &output.dataset.test)] {
        let dir = out.join(split);
        let mut m = write_records(&as_records(samples, split)?, &dir, "samples", manifest.seed)?;
        m.notes = format!("rebalanced {split} split");
        m.save(&dir.join("manifest.json"))?;
        provenance.extend(samples.iter().map(|s| ProvenanceEntry {
            id: sample_id(s, split),
            split,
            class: &s.class.name,
            provenance: &s.provenance,
        }));
    }
    write_json(&output.report, &out.join("pipeline_report.json"))?;
    write_json(&provenance, &out.join("provenance.json"))?;
    log::info!(
        "n = {}, m = {}, {} train / {} test per class",
        output.report.n,
        output.report.m,
        output.report.train_per_class,
        output.report.test_per_class
    );
    Ok(())
}

fn as_samples(records: Vec<EcgRecord>) -> Vec<Sample> {
    records
        .into_iter()
        .map(|r| Sample {
            data: r.leads,
            class: r.label,
            provenance: Provenance {
                source_id: r.id,
                library_index: 0,
            },
        })
        .collect()
}

#[derive(Serialize)]
struct NoisyIndexEntry {
    source: String,
    snr_db: f64,
    dir: String,
    samples: usize,
}

fn noise(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (manifest, records) = load_split(&input(cfg)?, "test")?;
    let sources = match &cfg.noise.noise_file {
        Some(f) => vec![("file".to_owned(), NoiseSource::External(load_matrix(f)?))],
        None => model_sources(&cfg.noise.kinds),
    };
    begin(cfg, out)?;
    let test = as_samples(records);
    let sets = sweep(&test, &sources, &cfg.noise.levels, &RngStream::root(cfg.noise.seed))?;
    let mut index = Vec::with_capacity(sets.len());
    for set in sets {
        let name = format!("{}_{}dB", set.source, set.snr_db);
        let dir = out.join(&name);
        let recs = set
            .samples
            .into_iter()
            .map(|s| EcgRecord::new(s.provenance.source_id, s.class, s.data))
            .collect::<Result<Vec<_>>>()?;
        let mut m = write_records(&recs, &dir, "", manifest.seed)?;
        m.notes = format!("{} noise at {} dB SNR", set.source, set.snr_db);
        m.save(&dir.join("manifest.json"))?;
        index.push(NoisyIndexEntry {
            source: set.source,
            snr_db: set.snr_db,
            dir: name,
            samples: recs.len(),
        });
    }
    write_json(&index, &out.join("noisy_sets.json"))
}

fn class_list(sets: &[&DatasetManifest]) -> Vec<ClassId> {
    let mut all: Vec<ClassId> = sets.iter().flat_map(|m| m.classes()).collect();
    all.sort();
    all.dedup();
    all
}

fn train_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dataset = input(cfg)?;
    let (train_m, train_r) = load_split(&dataset, "train")?;
    let (test_m, test_r) = load_split(&dataset, "test")?;
    begin(cfg, out)?;
    let fb = FilterBank::bior13();
    let classes = class_list(&[&train_m, &test_m]);
    let train = LabeledSet::from_records(&train_r, &classes, &fb)?;
    let test = LabeledSet::from_records(&test_r, &classes, &fb)?;
    let net = fit_widths(&cfg.net_config(0), train.features.ncols(), classes.len());

    let cv = cross_validate(&train, &net, cfg.folds)?;
    for f in &cv.folds {
        write_json(&f.metrics, &out.join(format!("fold{}_metrics.json", f.fold)))?;
        write_text(&curve_csv(&f.curve), &out.join(format!("fold{}_curve.csv", f.fold)))?;
    }
    #[derive(Serialize)]
    struct Aggregate<'a> {
        folds: usize,
        accuracy: &'a classify::MeanStd,
        macro_f1: &'a classify::MeanStd,
        recall: Vec<(&'a str, &'a classify::MeanStd)>,
    }
    write_json(
        &Aggregate {
            folds: cv.folds.len(),
            accuracy: &cv.accuracy,
            macro_f1: &cv.macro_f1,
            recall: train.class_names.iter().map(String::as_str).zip(&cv.recall).collect(),
        },
        &out.join("aggregate.json"),
    )?;

    let (model, curve) = classify::train(&train, &net)?;
    let metrics = classify::evaluate(&model, &test)?;
    write_json(&metrics, &out.join("test_metrics.json"))?;
    write_text(&curve_csv(&curve), &out.join("training_curve.csv"))?;
    log::info!(
        "cv accuracy {:.4} +/- {:.4}, test accuracy {:.4}",
        cv.accuracy.mean,
        cv.accuracy.std,
        metrics.accuracy
    );
    Ok(())
}

#[derive(Serialize)]
struct ArmSummary {
    arm: String,
    minority_recall: Vec<f64>,
    median_minority_recall: f64,
    mean_accuracy: f64,
}

#[derive(Serialize)]
struct CompareSummary {
    seeds: usize,
    minority: String,
    arms: Vec<ArmSummary>,
    /// Rebalanced minus imbalanced minority recall, per seed.
    minority_recall_gain: Vec<f64>,
    median_minority_recall_gain: f64,
    rebalanced_on_originals_minority_recall: Vec<f64>,
}

fn summarize(reports: &[CompareReport]) -> CompareSummary {
    let names: Vec<String> = reports[0].arms.iter().map(|a| a.arm.clone()).collect();
    let arms = names
        .into_iter()
        .map(|name| {
            let recall: Vec<f64> = reports
                .iter()
                .map(|r| r.arm(&name).map_or(f64::NAN, |a| a.minority_recall))
                .collect();
            let acc: f64 = reports
                .iter()
                .map(|r| r.arm(&name).map_or(f64::NAN, |a| a.metrics.accuracy))
                .sum::<f64>()
                / reports.len() as f64;
            ArmSummary {
                arm: name,
                median_minority_recall: median(&recall),
                minority_recall: recall,
                mean_accuracy: acc,
            }
        })
        .collect();
    let gain: Vec<f64> = reports.iter().map(CompareReport::minority_recall_gain).collect();
    CompareSummary {
        seeds: reports.len(),
        minority: reports[0].minority.clone(),
        arms,
        median_minority_recall_gain: median(&gain),
        minority_recall_gain: gain,
        rebalanced_on_originals_minority_recall: reports
            .iter()
            .map(|r| r.rebalanced_on_originals.minority_recall)
            .collect(),
    }
}

fn arm_table(s: &CompareSummary) -> String {
    let mut t = format!(
        "{:<12} {:>16} {:>14} {:>14}\n",
        "arm", "minority recall", "vs imbalanced", "mean accuracy"
    );
    let base = s
        .arms
        .iter()
        .find(|a| a.arm == "imbalanced")
        .map_or(f64::NAN, |a| a.median_minority_recall);
    for a in &s.arms {
        t.push_str(&format!(
            "{:<12} {:>16.4} {:>+14.4} {:>14.4}\n",
            a.arm,
            a.median_minority_recall,
            a.median_minority_recall - base,
            a.mean_accuracy
        ));
    }
    t.push_str(&format!(
        "median per-seed gain (rebalanced - imbalanced) over {} seeds: {:+.4}\n",
        s.seeds, s.median_minority_recall_gain
    ));
    t
}

fn compare(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (_, records) = load_dataset(&input(cfg)?)?;
    begin(cfg, out)?;
    let records = if cfg.stages.cleanse_before_compare {
        cleanse_records(&records, &cfg.cleanse)?.accepted
    } else {
        records
    };
    let fb = FilterBank::bior13();
    let mut reports = Vec::with_capacity(cfg.seeds);
    for k in 0..cfg.seeds as u64 {
        let fusion = cfg.fusion_config(k);
        let net = cfg.net_config(k);
        let report = compare_augmentation(&records, &fusion, &net, &fb)?;
        let dir = out.join(format!("seed{k}"));
        write_json(&report, &dir.join("report.json"))?;
        if cfg.stages.noise_sweep_in_compare {
            let (points, curve) =
                rebalanced_noise_study(&records, &fusion, &net, &cfg.noise.kinds, &cfg.noise.levels, &fb)?;
            write_json(&points, &dir.join("noise_sweep.json"))?;
            write_text(&curve_csv(&curve), &dir.join("noise_training_curve.csv"))?;
        }
        log::info!("seed {k}: gain {:+.4}", report.minority_recall_gain());
        reports.push(report);
    }
    if reports.is_empty() {
        return Err(Error::argument("--seeds must be at least 1"));
    }
    let summary = summarize(&reports);
    write_json(&summary, &out.join("summary.json"))?;
    let table = arm_table(&summary);
    write_text(&table, &out.join("arm_table.txt"))?;
    print!("{table}");
    Ok(())
}

//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line to
//! stderr (outside the test harness capture) and the test fails if any does.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ecg_fusion::classify::net::one_hot;
use ecg_fusion::classify::{gradient_check, Activation, Loss, NetConfig};
use ecg_fusion::cleanse::{cleanse_record, cleanse_records, CleanseConfig, Cleansed};
use ecg_fusion::compare::{compare_augmentation, median, rebalanced_noise_study};
use ecg_fusion::fusion::{run_pipeline, FusionConfig};
use ecg_fusion::noise::{generate_noise, inject, snr_db, NoiseKind, SNR_SWEEP_DB};
use ecg_fusion::synth::{synthesize_records, SynthSpec};
use ecg_fusion::wavelet::{analyze_2d, equal_weights, fuse_signals, synthesize_2d};
use ecg_fusion::{ClassId, EcgRecord, FilterBank, RngStream};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;

/// Minimum median minority-recall gain of the rebalanced arm, frozen from
/// five-seed runs of the benchmark below (observed median 0.5).
const AUGMENTATION_GAIN_BOUND: f64 = 0.25;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, o: &Outcome) {
    let line = format!(
        "criterion {id} [{}] {name}: {}\n",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn random_matrix(rows: usize, cols: usize, seed: u64, tag: &str) -> Array2<f64> {
    let mut rng = RngStream::new(seed, tag).rng();
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    Array2::from_shape_fn((rows, cols), |_| scale * rng.random_range(-1.0..1.0))
}

fn inf_norm(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn perfect_reconstruction() -> Outcome {
    let fb = FilterBank::bior13();
    let t0 = Instant::now();
    let worst = (0..1000u64)
        .into_par_iter()
        .map(|seed| {
            let x = random_matrix(12, 5000, seed, "pr");
            let y = synthesize_2d(&analyze_2d(x.view(), &fb).unwrap(), &fb).unwrap();
            inf_norm(&(&y - &x)) / (1e-9 * inf_norm(&x).max(1.0))
        })
        .reduce(|| 0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1.0 && secs <= 60.0,
        detail: format!("worst error / bound = {worst:.3e}, {secs:.1} s for 1000 12x5000 matrices"),
    }
}

fn fusion_is_the_mean() -> Outcome {
    let fb = FilterBank::bior13();
    let worst = (0..500u64)
        .into_par_iter()
        .map(|g| {
            let k = [2, 3, 5][g as usize % 3];
            let xs: Vec<Array2<f64>> = (0..k)
                .map(|i| random_matrix(12, 5000, g * 8 + i as u64, "mean"))
                .collect();
            let fused = fuse_signals(&xs, &equal_weights(k), &fb).unwrap();
            let mut mean = Array2::<f64>::zeros((12, 5000));
            for x in &xs {
                mean += x;
            }
            mean /= k as f64;
            inf_norm(&(&fused - &mean))
        })
        .reduce(|| 0.0, f64::max);
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("max |fused - mean| = {worst:.3e} over 500 groups, K in {{2, 3, 5}}"),
    }
}

/// Relative norm of the padding's component outside the span of the top `r`
/// covariance eigenvectors of the record, computed with nalgebra.
fn outside_span(record: &Array2<f64>, pad: &Array2<f64>, r: usize) -> f64 {
    let (leads, cols) = record.dim();
    let mean = record.mean_axis(Axis(1)).unwrap();
    let c = record - &mean.view().insert_axis(Axis(1));
    let cov = DMatrix::from_fn(leads, leads, |i, j| c.row(i).dot(&c.row(j)) / (cols as f64 - 1.0));
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..leads).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = Array2::from_shape_fn((leads, r), |(i, k)| eig.eigenvectors[(i, order[k])]);
    let centered = pad - &mean.view().insert_axis(Axis(1));
    let resid = &centered - &basis.dot(&basis.t().dot(&centered));
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    norm(&resid) / norm(&centered).max(f64::MIN_POSITIVE)
}

fn cleansing_conformance() -> Outcome {
    let cfg = CleanseConfig::default();
    let mut failures = Vec::new();
    let mut worst_span = 0.0f64;
    let mut branches = BTreeMap::<&str, usize>::new();
    let mut rng = RngStream::new(0, "cleanse-cases").rng();
    let cases: Vec<(usize, usize)> = (0..120)
        .map(|i| match i % 6 {
            0 => ([11, 13, 1][i % 3], rng.random_range(2501..6000)),
            1 => (12, rng.random_range(10..=2500)),
            2 => (12, 2500),
            3 => (12, rng.random_range(5000..6500)),
            4 => (12, 2501),
            _ => (12, rng.random_range(2501..5000)),
        })
        .collect();
    for (i, &(rows, cols)) in cases.iter().enumerate() {
        let x = random_matrix(rows, cols, i as u64, "cleanse");
        let rec = EcgRecord::new(format!("r{i}"), ClassId::new(0, "A"), x.clone()).unwrap();
        let should_reject = rows != 12 || cols <= 2500;
        match cleanse_record(&rec, &cfg).unwrap() {
            Cleansed::Rejected(_) => {
                *branches.entry("rejected").or_default() += 1;
                if !should_reject {
                    failures.push(format!("{rows}x{cols} rejected"));
                }
            }
            Cleansed::Accepted(out) => {
                if should_reject {
                    failures.push(format!("{rows}x{cols} accepted"));
                    continue;
                }
                if out.leads.dim() != (12, 5000) {
                    failures.push(format!("{rows}x{cols} gave {:?}", out.leads.dim()));
                    continue;
                }
                let keep = cols.min(5000);
                if out.leads.slice(s![.., ..keep]) != x.slice(s![.., ..keep]) {
                    failures.push(format!("{rows}x{cols} prefix differs"));
                }
                if cols < 5000 {
                    *branches.entry("padded").or_default() += 1;
                    let pad = out.leads.slice(s![.., cols..]).to_owned();
                    worst_span = worst_span.max(outside_span(&x, &pad, cfg.components));
                } else {
                    *branches.entry("truncated").or_default() += 1;
                }
            }
        }
    }
    if worst_span > 1e-6 {
        failures.push(format!("padding leaves the span by {worst_span:.3e}"));
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!("{branches:?}, worst relative off-span norm {worst_span:.3e}; {failures:?}"),
    }
}

fn small_records(counts: &[usize], seed: u64) -> Vec<EcgRecord> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| {
            (0..n).map(move |i| {
                EcgRecord::new(
                    format!("c{c}_{i:05}"),
                    ClassId::new(c, format!("c{c}")),
                    random_matrix(2, 4, seed ^ ((c as u64) << 32) ^ i as u64, "counts"),
                )
                .unwrap()
            })
        })
        .collect()
}

fn count_algebra() -> Outcome {
    let fb = FilterBank::bior13();
    let mut rng = RngStream::new(0, "count-cases").rng();
    let mut failures = Vec::new();
    let check = |n: usize, delta: f64, p: usize, seed: u64, extra: usize| -> Option<String> {
        let s = (n as f64 * delta + 1e-9).floor() as usize;
        let pairs = s * (s - 1) / 2;
        let train_n = (0.8 * n as f64 + 1e-9).floor() as usize;
        let recs = small_records(&[n + extra, n, n + 2 * extra], seed);
        let cfg = FusionConfig {
            delta: Some(delta),
            p,
            train_fraction: 0.8,
            seed: RngStream::root(seed),
        };
        let out = run_pipeline(&recs, &cfg, &fb).ok()?;
        let r = &out.report;
        let libs_ok = out
            .libraries
            .values()
            .all(|l| l.train.prototypes.len() == p && l.test.prototypes.len() == 1);
        let counts_ok = out.dataset.train_counts().values().all(|&c| c == train_n * p)
            && out.dataset.test_counts().values().all(|&c| c == n - train_n)
            && out.dataset.train_counts().len() == 3;
        let ok = r.n == n
            && r.fused_per_class == pairs
            && r.m == pairs / p
            && r.train_per_class == train_n * p
            && r.test_per_class == n - train_n
            && libs_ok
            && counts_ok;
        (!ok).then(|| format!("n={n} delta={delta} p={p}: {r:?}"))
    };
    for case in 0..200u64 {
        let n = rng.random_range(4..=300usize);
        let lo = 2.0 / n as f64;
        let delta = lo + (1.0 - lo) * rng.random_range(0.0..=1.0);
        let s = (n as f64 * delta + 1e-9).floor() as usize;
        let p = rng.random_range(1..=12usize).min(s * (s - 1) / 2);
        let extra = rng.random_range(0..30usize);
        if let Some(f) = check(n, delta, p, case, extra) {
            failures.push(f);
        }
    }
    // The smallest CPSC2018 class size.
    let threshold = run_pipeline(
        &small_records(&[213, 500, 900], 1),
        &FusionConfig {
            delta: Some(1.0),
            p: 4,
            train_fraction: 0.8,
            seed: RngStream::root(1),
        },
        &fb,
    )
    .unwrap();
    if threshold.report.fused_per_class != 22578 {
        failures.push(format!("n=213 gave {} fused pairs", threshold.report.fused_per_class));
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "200 random configs, n=213 -> {} pairs, m={}; failures {failures:?}",
            threshold.report.fused_per_class, threshold.report.m
        ),
    }
}

fn gradient_checks() -> Outcome {
    let arch = |w: &[usize], a: Activation, l: Loss, seed: u64| {
        let mut c = NetConfig::new(w[0], *w.last().unwrap());
        c.widths = w.to_vec();
        c.activation = a;
        c.loss = l;
        c.seed = RngStream::root(seed);
        c
    };
    let archs = [
        arch(&[6, 3], Activation::Relu, Loss::CrossEntropy, 1),
        arch(&[6, 10, 3], Activation::Relu, Loss::CrossEntropy, 2),
        arch(&[8, 12, 7, 4], Activation::Relu, Loss::CrossEntropy, 3),
        arch(&[5, 9, 2], Activation::Identity, Loss::CrossEntropy, 4),
        arch(&[5, 9, 3], Activation::Relu, Loss::SquaredError, 5),
        arch(&[144, 16, 3], Activation::Relu, Loss::CrossEntropy, 6),
        // Default classifier shapes for three and nine classes.
        arch(&[144, 64, 3], Activation::Relu, Loss::CrossEntropy, 7),
        arch(&[144, 64, 9], Activation::Relu, Loss::CrossEntropy, 8),
    ];
    let mut worst = 0.0f64;
    for c in &archs {
        let classes = c.outputs();
        let mut rng = RngStream::new(c.seed.seed, "grad-batch").rng();
        let x = Array2::from_shape_fn((10, c.inputs()), |_| rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..10).map(|i| i % classes).collect();
        let err = gradient_check(c, x.view(), &one_hot(&y, classes)).unwrap();
        worst = worst.max(err);
    }
    Outcome {
        pass: worst <= 1e-4,
        detail: format!("max relative error {worst:.3e} over {} architectures", archs.len()),
    }
}

fn snr_calibration() -> Outcome {
    let spec = SynthSpec::new(vec![25, 25], (5000, 5000));
    let records = synthesize_records(&spec, &RngStream::root(6)).unwrap();
    let worst = NoiseKind::ALL
        .par_iter()
        .map(|&kind| {
            let mut w = 0.0f64;
            for (i, r) in records.iter().enumerate() {
                let noise = generate_noise(kind, r.leads.dim(), &RngStream::new(i as u64, kind.as_str()));
                for &level in &SNR_SWEEP_DB {
                    let y = inject(&r.leads, &noise, level).unwrap();
                    w = w.max((snr_db(&r.leads, &(&y - &r.leads)) - level).abs());
                }
            }
            w
        })
        .reduce(|| 0.0, f64::max);
    Outcome {
        pass: worst <= 0.1,
        detail: format!("max |measured - requested| = {worst:.3e} dB over 20 levels x 3 kinds x 50 records"),
    }
}

fn augmentation_benefit() -> Outcome {
    let fb = FilterBank::bior13();
    let mut gains = Vec::new();
    let mut on_originals = Vec::new();
    for seed in 0..5u64 {
        let mut spec = SynthSpec::new(vec![20, 200, 200], (3000, 6000));
        spec.separation = 0.3;
        let records = synthesize_records(&spec, &RngStream::root(seed)).unwrap();
        let clean = cleanse_records(&records, &CleanseConfig::default()).unwrap();
        let fusion = FusionConfig {
            seed: RngStream::root(seed),
            ..FusionConfig::default()
        };
        let mut net = NetConfig::new(144, 3);
        net.epochs = 30;
        net.seed = RngStream::new(seed, "net");
        let r = compare_augmentation(&clean.accepted, &fusion, &net, &fb).unwrap();
        gains.push(r.minority_recall_gain());
        on_originals.push(r.rebalanced_on_originals.minority_recall - r.arm("imbalanced").unwrap().minority_recall);
    }
    let m = median(&gains);
    Outcome {
        pass: m >= AUGMENTATION_GAIN_BOUND,
        detail: format!(
            "median minority-recall gain {m:.3} (bound {AUGMENTATION_GAIN_BOUND}), per seed {gains:?}; \
             rebalanced model on unfused originals: median gain {:.3}",
            median(&on_originals)
        ),
    }
}

fn noise_monotonicity() -> Outcome {
    let fb = FilterBank::bior13();
    let seeds = 3u64;
    let mut acc = vec![0.0; SNR_SWEEP_DB.len()];
    for seed in 0..seeds {
        let records =
            synthesize_records(&SynthSpec::new(vec![60, 60, 60], (3000, 6000)), &RngStream::root(seed)).unwrap();
        let clean = cleanse_records(&records, &CleanseConfig::default()).unwrap();
        let fusion = FusionConfig {
            seed: RngStream::root(seed),
            ..FusionConfig::default()
        };
        let mut net = NetConfig::new(144, 3);
        net.epochs = 30;
        net.seed = RngStream::new(seed, "net");
        let (points, _) =
            rebalanced_noise_study(&clean.accepted, &fusion, &net, &NoiseKind::ALL, &SNR_SWEEP_DB, &fb).unwrap();
        for p in points {
            let i = SNR_SWEEP_DB.iter().position(|&l| l == p.snr_db).unwrap();
            acc[i] += p.accuracy / (NoiseKind::ALL.len() as f64 * seeds as f64);
        }
    }
    // From +12 dB down to -27 dB, no level may beat any cleaner level by
    // more than two points.
    let descending: Vec<f64> = acc.iter().rev().copied().collect();
    let mut worst_rise = f64::NEG_INFINITY;
    for j in 1..descending.len() {
        for i in 0..j {
            worst_rise = worst_rise.max(descending[j] - descending[i]);
        }
    }
    let curve: Vec<String> = SNR_SWEEP_DB
        .iter()
        .rev()
        .zip(&descending)
        .map(|(l, a)| format!("{l}:{a:.3}"))
        .collect();
    Outcome {
        pass: worst_rise <= 0.02,
        detail: format!("largest rise toward lower SNR {worst_rise:+.3}; {}", curve.join(" ")),
    }
}

fn ecgfuse(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ecgfuse"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_owned(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"net": {"epochs": 3, "steps_per_epoch": 5, "batch_size": 4}, "fusion": {"p": 2}}"#,
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut failures = Vec::new();
    let mut commands = 0;
    for run in ["a", "b"] {
        let d = root.path().join(run);
        let p = |sub: &str| d.join(sub).to_str().unwrap().to_owned();
        let steps: Vec<Vec<String>> = vec![
            vec![
                "synth".into(),
                "--counts".into(),
                "8,14,14".into(),
                "--range".into(),
                "2400,5600".into(),
                "--seed".into(),
                "4".into(),
                "--out".into(),
                p("syn"),
            ],
            vec![
                "clean".into(),
                "--manifest".into(),
                p("syn/manifest.json"),
                "--out".into(),
                p("clean"),
            ],
            vec![
                "rebalance".into(),
                "--manifest".into(),
                p("clean/manifest.json"),
                "--out".into(),
                p("rb"),
                "--seed".into(),
                "7".into(),
            ],
            vec![
                "noise".into(),
                "--dataset".into(),
                p("rb"),
                "--out".into(),
                p("noise"),
                "--seed".into(),
                "2".into(),
            ],
            vec![
                "train-eval".into(),
                "--dataset".into(),
                p("rb"),
                "--out".into(),
                p("te"),
                "--folds".into(),
                "3".into(),
            ],
            vec![
                "compare".into(),
                "--manifest".into(),
                p("syn/manifest.json"),
                "--out".into(),
                p("cmp"),
                "--seeds".into(),
                "2".into(),
            ],
        ];
        commands = steps.len();
        for step in steps {
            let mut args: Vec<&str> = vec!["--config", cfg];
            args.extend(step.iter().map(String::as_str));
            if !ecgfuse(&args) {
                failures.push(format!("run {run}: {} failed", step[0]));
            }
        }
    }
    let mut a = tree(&root.path().join("a"));
    let mut b = tree(&root.path().join("b"));
    // run_config.json records the output paths, which differ by design.
    for t in [&mut a, &mut b] {
        for (path, bytes) in t.iter_mut() {
            if path.ends_with("run_config.json") {
                let text = String::from_utf8(bytes.clone()).unwrap();
                *bytes = text.replace("/a/", "/_/").replace("/b/", "/_/").into_bytes();
            }
        }
    }
    let differing: Vec<&PathBuf> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    if a.len() != b.len() {
        failures.push(format!("{} vs {} files", a.len(), b.len()));
    }
    if !differing.is_empty() {
        failures.push(format!("differing files: {differing:?}"));
    }
    Outcome {
        pass: failures.is_empty() && !a.is_empty(),
        detail: format!(
            "{commands} commands run twice, {} files compared; {failures:?}",
            a.len()
        ),
    }
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("perfect reconstruction", perfect_reconstruction),
        ("fusion equals the pointwise mean", fusion_is_the_mean),
        ("cleansing branches and padding span", cleansing_conformance),
        ("rebalancing count algebra", count_algebra),
        ("gradient check", gradient_checks),
        ("SNR calibration", snr_calibration),
        ("augmentation benefit", augmentation_benefit),
        ("noise monotonicity", noise_monotonicity),
        ("CLI determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        report(i + 1, name, &o);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

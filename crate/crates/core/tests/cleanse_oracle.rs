use ecg_fusion::cleanse::{cleanse_dataset, cleanse_record, fit_pca, CleanseConfig, Cleansed};
use ecg_fusion::data::{write_records, ClassId, EcgRecord};
use ecg_fusion::linalg::symmetric_eigen;
use ecg_fusion::synth::{synthesize_dataset, SynthSpec};
use ecg_fusion::RngStream;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

/// Correlated leads so the spectrum is not flat.
fn mixed_record(cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = RngStream::new(seed, "cleanse-oracle").rng();
    let sources = Array2::from_shape_fn((4, cols), |_| rng.random_range(-1.0..1.0));
    let mixing = Array2::from_shape_fn((12, 4), |_| rng.random_range(-2.0..2.0));
    let noise = Array2::from_shape_fn((12, cols), |_| rng.random_range(-0.05..0.05));
    mixing.dot(&sources) + noise + 0.3
}

/// Eigenpairs of the column covariance from nalgebra, sorted descending.
fn oracle_pca(x: &Array2<f64>) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
    let (rows, cols) = x.dim();
    let mean: Vec<f64> = (0..rows).map(|i| x.row(i).sum() / cols as f64).collect();
    let mut cov = DMatrix::zeros(rows, rows);
    for i in 0..rows {
        for j in 0..rows {
            let mut acc = 0.0;
            for t in 0..cols {
                acc += (x[[i, t]] - mean[i]) * (x[[j, t]] - mean[j]);
            }
            cov[(i, j)] = acc / (cols as f64 - 1.0);
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(rows, rows, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors, mean)
}

#[test]
fn jacobi_matches_nalgebra() {
    let x = mixed_record(800, 1);
    let cov = {
        let m = x.mean_axis(Axis(1)).unwrap();
        let c = &x - &m.insert_axis(Axis(1));
        c.dot(&c.t()) / 799.0
    };
    let (vals, _) = symmetric_eigen(&cov);
    let (want, _, _) = oracle_pca(&x);
    for (a, b) in vals.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-9 * want[0], "{a} vs {b}");
    }
}

#[test]
fn explained_variance_ratio_matches_oracle() {
    let x = mixed_record(1500, 2);
    let model = fit_pca(&x, 3).unwrap();
    let (want, _, _) = oracle_pca(&x);
    let total: f64 = want.iter().sum();
    for (got, w) in model.explained_variance_ratio().iter().zip(&want) {
        assert!((got - w / total).abs() <= 1e-8);
    }
    let gram = model.components.t().dot(&model.components);
    for ((i, j), g) in gram.indexed_iter() {
        assert!((g - if i == j { 1.0 } else { 0.0 }).abs() <= 1e-8);
    }
}

#[test]
fn padding_matches_oracle_reconstruction() {
    let x = mixed_record(3000, 3);
    let record = EcgRecord::new("r", ClassId::new(0, "A"), x.clone()).unwrap();
    let out = match cleanse_record(&record, &CleanseConfig::default()).unwrap() {
        Cleansed::Accepted(r) => r,
        Cleansed::Rejected(r) => panic!("{}", r.reason),
    };
    assert_eq!(out.shape(), (12, 5000));
    assert_eq!(out.leads.slice(s![.., ..3000]), x);

    let (_, vectors, mean) = oracle_pca(&x);
    let v = vectors.columns(0, 5).into_owned();
    for j in 0..2000 {
        let centered = DMatrix::from_fn(12, 1, |i, _| x[[i, j]] - mean[i]);
        let recon = &v * (v.transpose() * centered);
        for i in 0..12 {
            let want = recon[(i, 0)] + mean[i];
            assert!((out.leads[[i, 3000 + j]] - want).abs() <= 1e-8);
        }
    }
}

#[test]
fn mixed_lengths_reject_exactly_the_short_ones() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::new(vec![15, 15], (2000, 6000));
    spec.leads = 12;
    let manifest = synthesize_dataset(&spec, &RngStream::root(4), dir.path()).unwrap();
    let records = manifest.load_records(dir.path()).unwrap();
    let out = dir.path().join("clean");
    let (cleaned, report) = cleanse_dataset(&manifest, dir.path(), &out, &CleanseConfig::default()).unwrap();
    let short: Vec<String> = records
        .iter()
        .filter(|r| r.shape().1 <= 2500)
        .map(|r| r.id.clone())
        .collect();
    assert!(!short.is_empty());
    let rejected: Vec<String> = report.rejected.iter().map(|r| r.id.clone()).collect();
    assert_eq!(rejected, short);
    assert_eq!(cleaned.entries.len(), records.len() - short.len());
    for r in cleaned.load_records(&out).unwrap() {
        assert_eq!(r.shape(), (12, 5000));
    }
}

#[test]
fn full_length_records_are_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<EcgRecord> = (0..4)
        .map(|i| {
            EcgRecord::new(
                format!("r{i}"),
                ClassId::new(i % 2, format!("c{}", i % 2)),
                mixed_record(5000, 10 + i as u64),
            )
            .unwrap()
        })
        .collect();
    let manifest = write_records(&records, dir.path(), "raw", 0).unwrap();
    let out = dir.path().join("clean");
    let (_, report) = cleanse_dataset(&manifest, dir.path(), &out, &CleanseConfig::default()).unwrap();
    assert!(report.rejected.is_empty());
}

#[test]
fn empty_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = ecg_fusion::DatasetManifest::new(0);
    assert!(cleanse_dataset(&manifest, dir.path(), dir.path(), &CleanseConfig::default()).is_err());
}

fn orthogonal_residual(pad: &Array2<f64>, components: &Array2<f64>, mean: &ndarray::Array1<f64>) -> (f64, f64) {
    let centered = pad - &mean.view().insert_axis(Axis(1));
    let projected = components.dot(&components.t().dot(&centered));
    let resid = &centered - &projected;
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm(&resid), norm(&centered))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_shape_and_branches(cols in 2400usize..6200, leads in prop::sample::select(vec![11usize, 12, 13]), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, "branch").rng();
        let x = Array2::from_shape_fn((leads, cols), |_| rng.random_range(-1.0..1.0));
        let record = EcgRecord::new("r", ClassId::new(0, "A"), x.clone()).unwrap();
        match cleanse_record(&record, &CleanseConfig::default()).unwrap() {
            Cleansed::Rejected(_) => prop_assert!(leads != 12 || cols <= 2500),
            Cleansed::Accepted(out) => {
                prop_assert!(leads == 12 && cols > 2500);
                prop_assert_eq!(out.shape(), (12, 5000));
                let keep = cols.min(5000);
                prop_assert_eq!(out.leads.slice(s![.., ..keep]), x.slice(s![.., ..keep]));
            }
        }
    }

    #[test]
    fn padding_lies_in_the_component_span(cols in 2501usize..4999, r in 1usize..=6, seed in any::<u64>()) {
        let x = mixed_record(cols, seed);
        let record = EcgRecord::new("r", ClassId::new(0, "A"), x.clone()).unwrap();
        let cfg = CleanseConfig { components: r, ..CleanseConfig::default() };
        let out = match cleanse_record(&record, &cfg).unwrap() {
            Cleansed::Accepted(o) => o,
            Cleansed::Rejected(_) => unreachable!(),
        };
        let model = fit_pca(&x, r).unwrap();
        let pad = out.leads.slice(s![.., cols..]).to_owned();
        let (resid, norm) = orthogonal_residual(&pad, &model.components, &model.mean);
        prop_assert!(resid <= 1e-6 * norm, "{} vs {}", resid, norm);
    }

    #[test]
    fn cleansing_is_deterministic(cols in 2501usize..4999, seed in any::<u64>()) {
        let record = EcgRecord::new("r", ClassId::new(0, "A"), mixed_record(cols, seed)).unwrap();
        let cfg = CleanseConfig::default();
        prop_assert_eq!(cleanse_record(&record, &cfg).unwrap(), cleanse_record(&record, &cfg).unwrap());
    }
}

use ecg_fusion::classify::net::{max_gradient_error, one_hot, softmax_rows};
use ecg_fusion::classify::{
    compute_metrics, cross_validate, evaluate, featurize, gradient_check, train, Activation, LabeledSet, Loss, Mlp,
    NetConfig,
};
use ecg_fusion::synth::{synthesize_records, SynthSpec};
use ecg_fusion::{FilterBank, RngStream};
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

fn batch(rows: usize, cols: usize, classes: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = RngStream::new(seed, "classify-batch").rng();
    let x = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0));
    let y = (0..rows).map(|i| i % classes).collect();
    (x, y)
}

fn cfg(widths: &[usize], activation: Activation, loss: Loss, seed: u64) -> NetConfig {
    let mut c = NetConfig::new(widths[0], *widths.last().unwrap());
    c.widths = widths.to_vec();
    c.activation = activation;
    c.loss = loss;
    c.seed = RngStream::root(seed);
    c
}

/// Architectures exercised by the gradient check.
fn architectures() -> Vec<NetConfig> {
    vec![
        cfg(&[6, 3], Activation::Relu, Loss::CrossEntropy, 1),
        cfg(&[6, 10, 3], Activation::Relu, Loss::CrossEntropy, 2),
        cfg(&[8, 12, 7, 4], Activation::Relu, Loss::CrossEntropy, 3),
        cfg(&[5, 9, 2], Activation::Identity, Loss::CrossEntropy, 4),
        cfg(&[5, 9, 3], Activation::Relu, Loss::SquaredError, 5),
        cfg(&[144, 16, 3], Activation::Relu, Loss::CrossEntropy, 6),
    ]
}

#[test]
fn gradient_check_matrix() {
    for c in architectures() {
        let classes = c.outputs();
        let (x, y) = batch(10, c.inputs(), classes, c.seed.seed);
        let err = gradient_check(&c, x.view(), &one_hot(&y, classes)).unwrap();
        assert!(err <= 1e-4, "{:?}: {err}", c.widths);
    }
}

#[test]
fn gradient_check_refuses_large_networks() {
    let c = cfg(&[144, 80, 3], Activation::Relu, Loss::CrossEntropy, 0);
    let (x, y) = batch(4, 144, 3, 0);
    assert!(gradient_check(&c, x.view(), &one_hot(&y, 3)).is_err());
}

/// For a single linear layer with squared error, dW = X^T (XW + b - T) / n.
#[test]
fn linear_squared_error_closed_form() {
    let c = cfg(&[4, 3], Activation::Identity, Loss::SquaredError, 7);
    let net = Mlp::new(&c).unwrap();
    let (x, y) = batch(6, 4, 3, 7);
    let t = one_hot(&y, 3);
    let (_, grads) = net.loss_and_gradients(x.view(), &t);
    let resid = x.dot(&net.weights[0]) + &net.biases[0] - &t;
    let dw = x.t().dot(&resid) / 6.0;
    let db = resid.sum_axis(Axis(0)) / 6.0;
    for (a, b) in grads.weights[0].iter().zip(dw.iter()) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (a, b) in grads.biases[0].iter().zip(db.iter()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(max_gradient_error(&net, x.view(), &t) <= 1e-7);
}

/// With a zero batch and zero biases every hidden unit is inactive, so the
/// output bias gradient is the mean softmax residual of all-zero logits.
#[test]
fn zero_input_bias_gradient() {
    let c = cfg(&[5, 8, 4], Activation::Relu, Loss::CrossEntropy, 8);
    let net = Mlp::new(&c).unwrap();
    let x = Array2::zeros((6, 5));
    let y = vec![0, 1, 2, 3, 0, 0];
    let t = one_hot(&y, 4);
    let (_, grads) = net.loss_and_gradients(x.view(), &t);
    let p = softmax_rows(&Array2::zeros((6, 4)));
    let want: Array1<f64> = ((&p - &t) / 6.0).sum_axis(Axis(0));
    assert_eq!(grads.biases[1], want);
    assert!(grads.weights[0].iter().all(|v| *v == 0.0));
}

fn blobs(n: usize, classes: usize, seed: u64) -> LabeledSet {
    let mut rng = RngStream::new(seed, "blobs").rng();
    let mut features = Array2::zeros((n, 6));
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..6 {
            features[[i, j]] = rng.random_range(-1.0..1.0) + if j == l { 1.5 } else { 0.0 };
        }
    }
    LabeledSet {
        features,
        labels,
        class_names: (0..classes).map(|c| format!("c{c}")).collect(),
    }
}

#[test]
fn cross_validation_aggregates() {
    let set = blobs(100, 3, 1);
    let mut c = cfg(&[6, 8, 3], Activation::Relu, Loss::CrossEntropy, 1);
    c.epochs = 5;
    c.steps_per_epoch = Some(20);
    let report = cross_validate(&set, &c, 5).unwrap();
    assert_eq!(report.folds.len(), 5);
    let sizes: Vec<usize> = report
        .folds
        .iter()
        .map(|f| f.metrics.confusion.iter().flatten().sum())
        .collect();
    assert_eq!(sizes, vec![20; 5]);
    let accs: Vec<f64> = report.folds.iter().map(|f| f.metrics.accuracy).collect();
    let (lo, hi) = accs.iter().fold((1.0f64, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(report.accuracy.mean >= lo - 1e-12 && report.accuracy.mean <= hi + 1e-12);
    assert_eq!(report, cross_validate(&set, &c, 5).unwrap());
    assert!(report.folds.iter().all(|f| f.curve.len() == 5));
}

#[test]
fn cross_validation_rejects_small_classes() {
    let mut set = blobs(30, 2, 2);
    set.labels[0] = 2;
    set.class_names.push("rare".into());
    let c = cfg(&[6, 3], Activation::Relu, Loss::CrossEntropy, 2);
    let err = cross_validate(&set, &c, 5).unwrap_err();
    assert!(err.to_string().contains("rare"));
}

#[test]
fn metrics_are_deterministic() {
    let set = blobs(60, 3, 3);
    let mut c = cfg(&[6, 8, 3], Activation::Relu, Loss::CrossEntropy, 3);
    c.epochs = 4;
    let (m1, _) = train(&set, &c).unwrap();
    let (m2, _) = train(&set, &c).unwrap();
    let a = serde_json::to_string(&evaluate(&m1, &set).unwrap()).unwrap();
    let b = serde_json::to_string(&evaluate(&m2, &set).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn train_checks_class_count() {
    let set = blobs(30, 3, 4);
    let c = cfg(&[6, 2], Activation::Relu, Loss::CrossEntropy, 4);
    assert!(train(&set, &c).is_err());
}

/// Nearest centroid on raw (cleansed-length) synthetic records.
#[test]
fn synthetic_classes_are_separable() {
    let spec = SynthSpec::new(vec![100, 100], (5000, 5000));
    let records = synthesize_records(&spec, &RngStream::root(11)).unwrap();
    let (train_part, test_part): (Vec<_>, Vec<_>) = records.iter().enumerate().partition(|(i, _)| i % 2 == 0);
    let mut centroids = vec![Array2::<f64>::zeros((12, 5000)); 2];
    let mut counts = [0usize; 2];
    for (_, r) in &train_part {
        centroids[r.label.index] += &r.leads;
        counts[r.label.index] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        *c /= n as f64;
    }
    let hits = test_part
        .iter()
        .filter(|(_, r)| {
            let d: Vec<f64> = centroids.iter().map(|c| (&r.leads - c).mapv(|v| v * v).sum()).collect();
            (if d[0] <= d[1] { 0 } else { 1 }) == r.label.index
        })
        .count();
    let acc = hits as f64 / test_part.len() as f64;
    assert!(acc >= 0.9, "{acc}");
}

#[test]
fn featurize_lengths() {
    let fb = FilterBank::bior13();
    let x = Array2::from_elem((12, 5000), 1.0);
    assert_eq!(featurize(x.view(), &fb).unwrap().len(), 144);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_algebra(seed in any::<u64>(), n in 1usize..80, c in 2usize..6) {
        let mut rng = RngStream::new(seed, "metrics").rng();
        let scores = Array2::from_shape_fn((n, c), |_| rng.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let names: Vec<String> = (0..c).map(|k| format!("c{k}")).collect();
        let m = compute_metrics(&scores, &labels, &names).unwrap();
        let total: usize = m.confusion.iter().flatten().sum();
        prop_assert_eq!(total, n);
        let trace: usize = (0..c).map(|k| m.confusion[k][k]).sum();
        prop_assert_eq!(m.accuracy, trace as f64 / n as f64);
        for k in 0..c {
            let row: usize = m.confusion[k].iter().sum();
            prop_assert_eq!(row, labels.iter().filter(|&&l| l == k).count());
            let col: usize = (0..c).map(|i| m.confusion[i][k]).sum();
            let pc = &m.per_class[k];
            let tp = m.confusion[k][k];
            prop_assert_eq!(pc.recall, if row == 0 { 0.0 } else { tp as f64 / row as f64 });
            prop_assert_eq!(pc.precision, if col == 0 { 0.0 } else { tp as f64 / col as f64 });
            for v in [pc.precision, pc.recall, pc.f1, pc.one_vs_rest_accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Some(a) = m.auc[k] {
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }

    #[test]
    fn random_nets_pass_gradient_check(seed in any::<u64>(), hidden in 1usize..12, classes in 2usize..5, rows in 1usize..8) {
        let c = cfg(&[5, hidden, classes], Activation::Relu, Loss::CrossEntropy, seed);
        let (x, y) = batch(rows, 5, classes, seed);
        let err = gradient_check(&c, x.view(), &one_hot(&y, classes)).unwrap();
        prop_assert!(err <= 1e-4, "{}", err);
    }
}

//! Desk-scale classifier harness: wavelet features, a small MLP, metrics and
//! cross-validation.

pub mod cv;
pub mod features;
pub mod metrics;
pub mod net;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{ClassId, EcgRecord};
use crate::error::{Error, Result};
use crate::fusion::Sample;
use crate::wavelet::FilterBank;

pub use cv::{cross_validate, stratified_folds, CvReport, FoldResult};
pub use features::{feature_len, featurize, featurize_all};
pub use metrics::{compute_metrics, rank_auc, ClassMetrics, MeanStd, Metrics};
pub use net::{gradient_check, Activation, EpochStats, Loss, Mlp, Model, NetConfig, Standardizer};

/// Feature rows with integer labels; label `k` names `class_names[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

fn position(classes: &[ClassId], c: &ClassId) -> Result<usize> {
    classes
        .iter()
        .position(|k| k == c)
        .ok_or_else(|| Error::data(format!("class {} ({}) is not in the class list", c.index, c.name)))
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn build<'a>(
        items: impl IndexedParallelIterator<Item = (&'a Array2<f64>, &'a ClassId)>,
        classes: &[ClassId],
        fb: &FilterBank,
    ) -> Result<Self> {
        let rows: Vec<(Vec<f64>, usize)> = items
            .map(|(m, c)| Ok((featurize(m.view(), fb)?, position(classes, c)?)))
            .collect::<Result<_>>()?;
        let width = rows.first().map_or(0, |r| r.0.len());
        let mut features = Array2::zeros((rows.len(), width));
        let mut labels = Vec::with_capacity(rows.len());
        for (i, (f, l)) in rows.into_iter().enumerate() {
            if f.len() != width {
                return Err(Error::data("records have different lead counts"));
            }
            features.row_mut(i).assign(&ndarray::ArrayView1::from(&f));
            labels.push(l);
        }
        Ok(Self {
            features,
            labels,
            class_names: classes.iter().map(|c| c.name.clone()).collect(),
        })
    }

    pub fn from_samples(samples: &[Sample], classes: &[ClassId], fb: &FilterBank) -> Result<Self> {
        Self::build(samples.par_iter().map(|s| (&s.data, &s.class)), classes, fb)
    }

    pub fn from_records(records: &[EcgRecord], classes: &[ClassId], fb: &FilterBank) -> Result<Self> {
        Self::build(records.par_iter().map(|r| (&r.leads, &r.label)), classes, fb)
    }
}

/// The default configuration for a feature set: `[features, 64, classes]`.
pub fn default_net(set: &LabeledSet) -> NetConfig {
    NetConfig::new(set.features.ncols(), set.class_names.len())
}

pub fn train(set: &LabeledSet, cfg: &NetConfig) -> Result<(Model, Vec<EpochStats>)> {
    if cfg.outputs() != set.class_names.len() {
        return Err(Error::argument(format!(
            "network has {} outputs for {} classes",
            cfg.outputs(),
            set.class_names.len()
        )));
    }
    net::train(&set.features, &set.labels, cfg)
}

pub fn evaluate(model: &Model, set: &LabeledSet) -> Result<Metrics> {
    compute_metrics(&model.predict_proba(&set.features), &set.labels, &set.class_names)
}

/// Training curve as CSV with header `epoch,loss,accuracy`.
pub fn curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,accuracy\n");
    for e in curve {
        out.push_str(&format!("{},{:e},{:e}\n", e.epoch, e.loss, e.accuracy));
    }
    out
}

//! Resolved run configuration. Every field has a default; a JSON file can
//! override any subset and command-line flags override the file.

use std::path::{Path, PathBuf};

use ecg_fusion::classify::{Activation, Loss, NetConfig};
use ecg_fusion::cleanse::CleanseConfig;
use ecg_fusion::data::read_json;
use ecg_fusion::fusion::FusionConfig;
use ecg_fusion::noise::{NoiseKind, SNR_SWEEP_DB};
use ecg_fusion::synth::SynthSpec;
use ecg_fusion::{Result, RngStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub classes: usize,
    pub counts: Vec<usize>,
    /// `cpsc-mini` gives the nine CPSC classes at 1/50 scale.
    pub preset: Option<String>,
    pub range: (usize, usize),
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            classes: 3,
            counts: vec![20, 200, 200],
            preset: None,
            range: (3000, 6000),
            separation: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSection {
    /// `None` applies the default rule for the threshold.
    pub delta: Option<f64>,
    pub p: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            delta: None,
            p: 4,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSection {
    /// Hidden layer widths; input and output widths follow the data.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: Loss,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for NetSection {
    fn default() -> Self {
        let n = NetConfig::new(1, 1);
        Self {
            hidden: n.widths[1..n.widths.len() - 1].to_vec(),
            activation: n.activation,
            loss: n.loss,
            learning_rate: n.learning_rate,
            batch_size: n.batch_size,
            epochs: n.epochs,
            steps_per_epoch: n.steps_per_epoch,
            beta1: n.beta1,
            beta2: n.beta2,
            epsilon: n.epsilon,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    pub kinds: Vec<NoiseKind>,
    pub levels: Vec<f64>,
    /// CSV noise record used instead of the parametric models.
    pub noise_file: Option<PathBuf>,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kinds: NoiseKind::ALL.to_vec(),
            levels: SNR_SWEEP_DB.to_vec(),
            noise_file: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stages {
    /// Cleanse the input manifest before `compare` runs the arms.
    pub cleanse_before_compare: bool,
    /// Also sweep noise levels over the rebalanced model in `compare`.
    pub noise_sweep_in_compare: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            cleanse_before_compare: true,
            noise_sweep_in_compare: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub paths: Paths,
    pub synth: SynthSection,
    pub cleanse: CleanseConfig,
    pub fusion: FusionSection,
    pub net: NetSection,
    pub noise: NoiseSection,
    pub folds: usize,
    pub seeds: usize,
    pub stages: Stages,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            paths: Paths::default(),
            synth: SynthSection::default(),
            cleanse: CleanseConfig::default(),
            fusion: FusionSection::default(),
            net: NetSection::default(),
            noise: NoiseSection::default(),
            folds: 5,
            seeds: 5,
            stages: Stages::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(Self::default()),
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let mut spec = match self.synth.preset.as_deref() {
            Some(_) => SynthSpec::cpsc_preset(50, self.synth.range),
            None => SynthSpec::new(self.synth.counts.clone(), self.synth.range),
        };
        spec.separation = self.synth.separation;
        spec
    }

    pub fn fusion_config(&self, seed_offset: u64) -> FusionConfig {
        FusionConfig {
            delta: self.fusion.delta,
            p: self.fusion.p,
            train_fraction: self.fusion.train_fraction,
            seed: RngStream::root(self.fusion.seed.wrapping_add(seed_offset)),
        }
    }

    /// Input and output widths are placeholders until the data is known.
    pub fn net_config(&self, seed_offset: u64) -> NetConfig {
        let n = &self.net;
        let mut widths = vec![1];
        widths.extend(&n.hidden);
        widths.push(1);
        NetConfig {
            widths,
            activation: n.activation,
            loss: n.loss,
            learning_rate: n.learning_rate,
            batch_size: n.batch_size,
            epochs: n.epochs,
            steps_per_epoch: n.steps_per_epoch,
            beta1: n.beta1,
            beta2: n.beta2,
            epsilon: n.epsilon,
            seed: RngStream::new(n.seed.wrapping_add(seed_offset), "net"),
        }
    }
}

//! Synthetic multi-lead recordings with controllable class imbalance.
//!
//! Each class is a periodic train of narrow Gaussian "QRS" pulses followed by
//! a wider "T" bump. Classes differ in beat period, pulse width, T-wave
//! amplitude and the per-lead gain pattern. Every record gets a random beat
//! phase, a random overall amplitude, a small period jitter, per-lead gain
//! jitter and white Gaussian noise, so classes overlap a little in feature
//! space but stay separable on average.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_records, ClassId, DatasetManifest, EcgRecord, CPSC_CLASSES, CPSC_TOTALS};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Nominal sampling rate of every generated record, in Hz.
pub const SAMPLING_RATE_HZ: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_names: Vec<String>,
    pub per_class: Vec<usize>,
    /// Inclusive range of record lengths in samples.
    pub length_range: (usize, usize),
    pub leads: usize,
    /// Standard deviation of the per-record amplitude factor.
    pub amplitude_jitter: f64,
    /// Standard deviation of the per-lead gain perturbation.
    pub gain_jitter: f64,
    /// White-noise standard deviation.
    pub noise_std: f64,
    /// How far each class's waveform parameters sit from a shared centre
    /// profile: 0 makes all classes identical, 1 is the nominal spread.
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_separation() -> f64 {
    1.0
}

impl SynthSpec {
    /// Generic classes named `class0`, `class1`, ... (the CPSC names when
    /// there are exactly nine).
    pub fn new(per_class: Vec<usize>, length_range: (usize, usize)) -> Self {
        let class_names = if per_class.len() == CPSC_CLASSES.len() {
            CPSC_CLASSES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..per_class.len()).map(|i| format!("class{i}")).collect()
        };
        Self {
            class_names,
            per_class,
            length_range,
            leads: 12,
            amplitude_jitter: 0.2,
            gain_jitter: 0.15,
            noise_std: 0.05,
            separation: 1.0,
        }
    }

    /// Nine CPSC classes with the merged-source totals divided by `scale`
    /// (rounded to nearest, at least one record per class).
    pub fn cpsc_preset(scale: usize, length_range: (usize, usize)) -> Self {
        let per_class = CPSC_TOTALS
            .iter()
            .map(|&t| ((t as f64 / scale as f64).round() as usize).max(1))
            .collect();
        Self::new(per_class, length_range)
    }

    fn validate(&self) -> Result<()> {
        if self.per_class.len() < 2 {
            return Err(Error::argument("need at least two classes"));
        }
        if self.class_names.len() != self.per_class.len() {
            return Err(Error::argument(format!(
                "{} class names for {} class counts",
                self.class_names.len(),
                self.per_class.len()
            )));
        }
        if self.per_class.contains(&0) {
            return Err(Error::argument("every class needs at least one record"));
        }
        let (lo, hi) = self.length_range;
        if lo == 0 || lo > hi {
            return Err(Error::argument(format!("invalid length range ({lo}, {hi})")));
        }
        if self.leads == 0 {
            return Err(Error::argument("need at least one lead"));
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err(Error::argument("separation must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Deterministic per-class waveform parameters.
#[derive(Debug, Clone)]
struct ClassProfile {
    period_s: f64,
    qrs_width_s: f64,
    t_amplitude: f64,
    gains: Vec<f64>,
}

impl ClassProfile {
    fn for_class(c: usize, leads: usize, separation: f64) -> Self {
        let cf = c as f64;
        let toward = |centre: f64, own: f64| centre + separation * (own - centre);
        let gains = (0..leads)
            .map(|l| {
                let lf = l as f64;
                toward(
                    0.7,
                    0.7 + 0.45 * (2.0 * PI * (lf + 1.0) * (cf + 1.0) / 13.0 + 0.7 * cf).cos(),
                )
            })
            .collect();
        Self {
            period_s: toward(0.7, 0.62 + 0.085 * cf),
            qrs_width_s: toward(0.014, 0.010 + 0.004 * (c % 3) as f64),
            t_amplitude: toward(0.26, 0.2 + 0.12 * (c % 2) as f64),
            gains,
        }
    }
}

fn gaussian_bump(t: f64, center: f64, width: f64) -> f64 {
    let z = (t - center) / width;
    (-0.5 * z * z).exp()
}

fn synthesize_one(
    spec: &SynthSpec,
    class: &ClassId,
    profile: &ClassProfile,
    stream: &RngStream,
    ordinal: usize,
) -> Result<EcgRecord> {
    let mut rng = stream.rng();
    let (lo, hi) = spec.length_range;
    let len = rng.random_range(lo..=hi);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let period = profile.period_s * (1.0 + 0.03 * unit.sample(&mut rng));
    let phase = rng.random_range(0.0..period);
    let amplitude = (1.0 + spec.amplitude_jitter * unit.sample(&mut rng)).max(0.2);
    let gains: Vec<f64> = profile
        .gains
        .iter()
        .map(|g| g + spec.gain_jitter * unit.sample(&mut rng))
        .collect();

    // One beat template evaluated on the time grid, then scaled per lead.
    let t_delay = 0.28 * period;
    let t_width = 0.045;
    let mut beat = vec![0.0; len];
    for (i, b) in beat.iter_mut().enumerate() {
        let t = i as f64 / SAMPLING_RATE_HZ + phase;
        let local = t.rem_euclid(period);
        // Consider the neighbouring beats so bumps wrap smoothly.
        let mut v = 0.0;
        for shift in [-period, 0.0, period] {
            let x = local + shift;
            v += gaussian_bump(x, 0.1 * period, profile.qrs_width_s);
            v += profile.t_amplitude * gaussian_bump(x, 0.1 * period + t_delay, t_width);
        }
        *b = amplitude * v;
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::argument(format!("noise_std: {e}")))?;
    let mut leads = Array2::zeros((spec.leads, len));
    for (l, mut row) in leads.rows_mut().into_iter().enumerate() {
        for (x, b) in row.iter_mut().zip(&beat) {
            *x = gains[l] * b + noise.sample(&mut rng);
        }
    }
    EcgRecord::new(format!("{}_{:05}", class.name, ordinal), class.clone(), leads)
}

/// Generates every record in memory, ordered by class then ordinal.
pub fn synthesize_records(spec: &SynthSpec, seed: &RngStream) -> Result<Vec<EcgRecord>> {
    spec.validate()?;
    let jobs: Vec<(ClassId, usize)> = spec
        .class_names
        .iter()
        .enumerate()
        .flat_map(|(c, name)| (0..spec.per_class[c]).map(move |i| (ClassId::new(c, name.clone()), i)))
        .collect();
    let profiles: Vec<ClassProfile> = (0..spec.per_class.len())
        .map(|c| ClassProfile::for_class(c, spec.leads, spec.separation))
        .collect();
    jobs.par_iter()
        .map(|(class, i)| {
            let stream = seed.substream(format!("synth/{}/{}", class.index, i));
            synthesize_one(spec, class, &profiles[class.index], &stream, *i)
        })
        .collect()
}

/// Generates the records, writes them under `out_dir/records/` and saves
/// `out_dir/manifest.json`.
pub fn synthesize_dataset(spec: &SynthSpec, seed: &RngStream, out_dir: &Path) -> Result<DatasetManifest> {
    let records = synthesize_records(spec, seed)?;
    let mut manifest = write_records(&records, out_dir, "records", seed.seed)?;
    manifest.notes = format!(
        "synthetic: {} classes, counts {:?}, lengths {:?}",
        spec.per_class.len(),
        spec.per_class,
        spec.length_range
    );
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

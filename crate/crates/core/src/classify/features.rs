//! Fixed-length summaries of a record's wavelet subbands.
//!
//! Each lead is split along time into four bands by two levels of the
//! bior1.3 bank (a depth-2 packet: LL, LH, HL, HH, where the first letter is
//! the first-stage band). For every band we keep the mean, the variance and
//! the energy (sum of squares), so a 12-lead record maps to 144 numbers.
//! Leads are processed independently, so permuting leads permutes the
//! feature blocks.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::wavelet::{analyze_1d, FilterBank};

pub const BANDS_PER_LEAD: usize = 4;
pub const STATS_PER_BAND: usize = 3;
pub const FEATURES_PER_LEAD: usize = BANDS_PER_LEAD * STATS_PER_BAND;

pub fn feature_len(leads: usize) -> usize {
    leads * FEATURES_PER_LEAD
}

fn stats(band: &[f64], out: &mut Vec<f64>) {
    let n = band.len() as f64;
    let mean = band.iter().sum::<f64>() / n;
    let var = band.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let energy = band.iter().map(|v| v * v).sum::<f64>();
    out.extend_from_slice(&[mean, var, energy]);
}

pub fn featurize(m: ArrayView2<f64>, fb: &FilterBank) -> Result<Vec<f64>> {
    let (leads, cols) = m.dim();
    if cols == 0 || cols % 4 != 0 {
        return Err(Error::argument(format!(
            "featurize needs a sample count divisible by 4, got {cols}"
        )));
    }
    let half = cols / 2;
    let quarter = cols / 4;
    let mut out = Vec::with_capacity(feature_len(leads));
    let (mut lo, mut hi) = (vec![0.0; half], vec![0.0; half]);
    let mut bands = vec![vec![0.0; quarter]; 4];
    let mut row = vec![0.0; cols];
    for lead in m.axis_iter(Axis(0)) {
        row.iter_mut().zip(lead.iter()).for_each(|(d, s)| *d = *s);
        analyze_1d(&row, fb, &mut lo, &mut hi);
        let (ll_lh, hl_hh) = bands.split_at_mut(2);
        let (ll, lh) = ll_lh.split_at_mut(1);
        let (hl, hh) = hl_hh.split_at_mut(1);
        analyze_1d(&lo, fb, &mut ll[0], &mut lh[0]);
        analyze_1d(&hi, fb, &mut hl[0], &mut hh[0]);
        for b in &bands {
            stats(b, &mut out);
        }
    }
    Ok(out)
}

/// Features of many matrices as rows of one matrix.
pub fn featurize_all<'a, I>(mats: I, fb: &FilterBank) -> Result<Array2<f64>>
where
    I: IntoParallelIterator<Item = &'a Array2<f64>>,
    I::Iter: IndexedParallelIterator,
{
    let rows: Vec<Vec<f64>> = mats
        .into_par_iter()
        .map(|m| featurize(m.view(), fb))
        .collect::<Result<_>>()?;
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::argument("records have different lead counts"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len().checked_div(width).unwrap_or(0);
    Array2::from_shape_vec((n, width), flat).map_err(|e| Error::internal(e.to_string()))
}

//! Single-level separable 2-D discrete wavelet transform and subband fusion.
//!
//! Matrices are `[lead, sample]`. Analysis filters along the sample axis
//! first, then along the lead axis, with periodic extension and even-phase
//! downsampling:
//!
//! ```text
//! v_L[m, n]  = sum_k x[m, 2n - k] g[k]        v_H likewise with h
//! x_LL[m, n] = sum_k v_L[2m - k, n] g[k]      x_HL: h on v_L
//! x_LH[m, n] = sum_k v_H[2m - k, n] g[k]      x_HH: h on v_H
//! ```
//!
//! Subband names give the lead-axis band first, then the sample-axis band.
//! Synthesis upsamples, filters with the reconstruction pair and removes the
//! `L - 1` sample delay of the two-channel bank, which makes analysis followed
//! by synthesis the identity for any even shape.

use std::borrow::Borrow;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest singular value of the periodic one-dimensional bior1.3 analysis
/// operator (supremum over frequency of the polyphase matrix norm). The 2-D
/// operator is separable, so its bound is the square.
pub const BIOR13_FRAME_BOUND_1D: f64 = 1.132_782_218_537_319;

pub const BIOR13_FRAME_BOUND_2D: f64 = BIOR13_FRAME_BOUND_1D * BIOR13_FRAME_BOUND_1D;

/// Tolerance on the weight sum accepted by [`fuse_signals`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub name: String,
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl FilterBank {
    /// Biorthogonal 1.3: Haar synthesis scaling function, three vanishing
    /// moments on the analysis side.
    pub fn bior13() -> Self {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let b = std::f64::consts::SQRT_2 / 16.0;
        Self {
            name: "bior1.3".into(),
            dec_lo: vec![-b, b, a, a, b, -b],
            dec_hi: vec![0.0, 0.0, -a, a, 0.0, 0.0],
            rec_lo: vec![0.0, 0.0, a, a, 0.0, 0.0],
            rec_hi: vec![-b, -b, a, -a, b, b],
        }
    }

    pub fn taps(&self) -> usize {
        self.dec_lo.len()
    }

    /// Overall delay of analysis followed by synthesis.
    fn delay(&self) -> usize {
        self.taps() - 1
    }
}

impl Default for FilterBank {
    fn default() -> Self {
        Self::bior13()
    }
}

/// The four quadrants of one decomposition level, each `rows/2 x cols/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    pub ll: Array2<f64>,
    pub lh: Array2<f64>,
    pub hl: Array2<f64>,
    pub hh: Array2<f64>,
}

impl SubbandSet {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            ll: Array2::zeros(shape),
            lh: Array2::zeros(shape),
            hl: Array2::zeros(shape),
            hh: Array2::zeros(shape),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.ll.dim()
    }

    pub fn bands(&self) -> [&Array2<f64>; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    fn bands_mut(&mut self) -> [&mut Array2<f64>; 4] {
        [&mut self.ll, &mut self.lh, &mut self.hl, &mut self.hh]
    }

    /// `self += w * other`, band by band.
    pub fn scaled_add(&mut self, w: f64, other: &SubbandSet) {
        for (dst, src) in self.bands_mut().into_iter().zip(other.bands()) {
            dst.scaled_add(w, src);
        }
    }

    pub fn scale(&mut self, w: f64) {
        for b in self.bands_mut() {
            b.mapv_inplace(|v| v * w);
        }
    }

    /// Euclidean norm over all coefficients.
    pub fn norm(&self) -> f64 {
        self.bands()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn check(&self) -> Result<()> {
        let s = self.shape();
        if self.bands().iter().any(|b| b.dim() != s) {
            return Err(Error::argument(format!(
                "subband shapes differ: ll {:?}, lh {:?}, hl {:?}, hh {:?}",
                self.ll.dim(),
                self.lh.dim(),
                self.hl.dim(),
                self.hh.dim()
            )));
        }
        Ok(())
    }
}

/// Periodic convolve-and-downsample of one sequence: `lo[n] = sum_k x[2n-k] g[k]`.
pub fn analyze_1d(x: &[f64], fb: &FilterBank, lo: &mut [f64], hi: &mut [f64]) {
    let len = x.len();
    debug_assert!(len.is_multiple_of(2) && lo.len() == len / 2 && hi.len() == len / 2);
    for n in 0..len / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for (k, (g, h)) in fb.dec_lo.iter().zip(&fb.dec_hi).enumerate() {
            let v = x[wrap(2 * n as isize - k as isize, len)];
            a += v * g;
            d += v * h;
        }
        lo[n] = a;
        hi[n] = d;
    }
}

/// Inverse of [`analyze_1d`]; `out` is overwritten.
pub fn synthesize_1d(lo: &[f64], hi: &[f64], fb: &FilterBank, out: &mut [f64]) {
    let len = out.len();
    debug_assert!(lo.len() == len / 2 && hi.len() == len / 2);
    out.fill(0.0);
    let delay = fb.delay() as isize;
    for n in 0..len / 2 {
        for (k, (f0, f1)) in fb.rec_lo.iter().zip(&fb.rec_hi).enumerate() {
            let t = wrap(2 * n as isize + k as isize - delay, len);
            out[t] += lo[n] * f0 + hi[n] * f1;
        }
    }
}

#[inline]
fn wrap(i: isize, len: usize) -> usize {
    i.rem_euclid(len as isize) as usize
}

/// Filters every row along the sample axis.
fn analyze_samples(x: ArrayView2<f64>, fb: &FilterBank) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = x.dim();
    let mut lo = Array2::zeros((rows, cols / 2));
    let mut hi = Array2::zeros((rows, cols / 2));
    let mut buf = vec![0.0; cols];
    Zip::from(x.rows())
        .and(lo.rows_mut())
        .and(hi.rows_mut())
        .for_each(|src, mut l, mut h| {
            let src = match src.as_slice() {
                Some(s) => s,
                None => {
                    buf.iter_mut().zip(src.iter()).for_each(|(b, v)| *b = *v);
                    &buf[..]
                }
            };
            analyze_1d(
                src,
                fb,
                l.as_slice_mut().expect("fresh array is contiguous"),
                h.as_slice_mut().expect("fresh array is contiguous"),
            );
        });
    (lo, hi)
}

/// Filters along the lead axis, treating whole rows as the sequence items.
fn analyze_leads(v: &Array2<f64>, fb: &FilterBank) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = v.dim();
    let mut lo = Array2::zeros((rows / 2, cols));
    let mut hi = Array2::zeros((rows / 2, cols));
    for m in 0..rows / 2 {
        for (k, (g, h)) in fb.dec_lo.iter().zip(&fb.dec_hi).enumerate() {
            let src = v.row(wrap(2 * m as isize - k as isize, rows));
            if *g != 0.0 {
                lo.row_mut(m).scaled_add(*g, &src);
            }
            if *h != 0.0 {
                hi.row_mut(m).scaled_add(*h, &src);
            }
        }
    }
    (lo, hi)
}

fn synthesize_leads(lo: &Array2<f64>, hi: &Array2<f64>, fb: &FilterBank) -> Array2<f64> {
    let (half, cols) = lo.dim();
    let rows = 2 * half;
    let mut out = Array2::zeros((rows, cols));
    let delay = fb.delay() as isize;
    for m in 0..half {
        for (k, (f0, f1)) in fb.rec_lo.iter().zip(&fb.rec_hi).enumerate() {
            let t = wrap(2 * m as isize + k as isize - delay, rows);
            let mut dst = out.row_mut(t);
            if *f0 != 0.0 {
                dst.scaled_add(*f0, &lo.row(m));
            }
            if *f1 != 0.0 {
                dst.scaled_add(*f1, &hi.row(m));
            }
        }
    }
    out
}

fn synthesize_samples(lo: &Array2<f64>, hi: &Array2<f64>, fb: &FilterBank) -> Array2<f64> {
    let (rows, half) = lo.dim();
    let mut out = Array2::zeros((rows, 2 * half));
    Zip::from(out.rows_mut())
        .and(lo.rows())
        .and(hi.rows())
        .for_each(|mut dst, l, h| {
            synthesize_1d(
                l.as_slice().expect("standard layout"),
                h.as_slice().expect("standard layout"),
                fb,
                dst.as_slice_mut().expect("fresh array is contiguous"),
            );
        });
    out
}

/// One level of 2-D analysis. Both dimensions must be even.
pub fn analyze_2d(x: ArrayView2<f64>, fb: &FilterBank) -> Result<SubbandSet> {
    let (rows, cols) = x.dim();
    if rows == 0 || cols == 0 || rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::argument(format!(
            "wavelet analysis needs even, non-zero dimensions, got {rows}x{cols}; pad the input first"
        )));
    }
    let (v_lo, v_hi) = analyze_samples(x, fb);
    let (ll, hl) = analyze_leads(&v_lo, fb);
    let (lh, hh) = analyze_leads(&v_hi, fb);
    Ok(SubbandSet { ll, lh, hl, hh })
}

/// Inverse of [`analyze_2d`].
pub fn synthesize_2d(s: &SubbandSet, fb: &FilterBank) -> Result<Array2<f64>> {
    s.check()?;
    let v_lo = synthesize_leads(&s.ll, &s.hl, fb);
    let v_hi = synthesize_leads(&s.lh, &s.hh, fb);
    Ok(synthesize_samples(&v_lo, &v_hi, fb))
}

pub fn equal_weights(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Weighted average in the wavelet domain:
/// `synthesize_2d(sum_i w_i * analyze_2d(x_i))`.
pub fn fuse_signals<S>(xs: &[S], weights: &[f64], fb: &FilterBank) -> Result<Array2<f64>>
where
    S: Borrow<Array2<f64>>,
{
    if xs.is_empty() {
        return Err(Error::argument("nothing to fuse"));
    }
    if xs.len() != weights.len() {
        return Err(Error::argument(format!(
            "{} signals but {} weights",
            xs.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::argument(format!("fusion weights sum to {sum}, expected 1")));
    }
    let shape = xs[0].borrow().dim();
    if let Some(bad) = xs.iter().find(|x| Borrow::<Array2<f64>>::borrow(*x).dim() != shape) {
        return Err(Error::argument(format!(
            "cannot fuse {:?} with {:?}",
            shape,
            bad.borrow().dim()
        )));
    }
    let mut acc = FusionAccumulator::new(fb);
    for (x, w) in xs.iter().zip(weights) {
        acc.add(x.borrow(), *w)?;
    }
    acc.finish()
}

/// Running weighted sum of subbands. Adding signals one at a time gives the
/// same result, bit for bit, as [`fuse_signals`] on the full list, without
/// keeping the inputs alive.
#[derive(Debug)]
pub struct FusionAccumulator<'a> {
    fb: &'a FilterBank,
    acc: Option<SubbandSet>,
    count: usize,
}

impl<'a> FusionAccumulator<'a> {
    pub fn new(fb: &'a FilterBank) -> Self {
        Self {
            fb,
            acc: None,
            count: 0,
        }
    }

    pub fn add(&mut self, x: &Array2<f64>, w: f64) -> Result<()> {
        let s = analyze_2d(x.view(), self.fb)?;
        match self.acc.as_mut() {
            None => {
                let mut first = s;
                first.scale(w);
                self.acc = Some(first);
            }
            Some(a) => {
                if a.shape() != s.shape() {
                    return Err(Error::argument(format!(
                        "cannot fuse subbands {:?} with {:?}",
                        a.shape(),
                        s.shape()
                    )));
                }
                a.scaled_add(w, &s)
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn finish(self) -> Result<Array2<f64>> {
        let acc = self.acc.ok_or_else(|| Error::argument("nothing to fuse"))?;
        synthesize_2d(&acc, self.fb)
    }
}

//! Channel feature pipeline: unitary DFT magnitude, log compression and a
//! scalar Lloyd-Max quantizer.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Reusable unitary DFT of a fixed length.
pub struct DftMagnitude {
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    scale: f64,
}

impl DftMagnitude {
    pub fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        Self {
            fft,
            buf: vec![Complex64::new(0.0, 0.0); len],
            scratch,
            scale: 1.0 / (len as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn apply(&mut self, h: &[Complex64], out: &mut Vec<f64>) -> Result<()> {
        if h.len() != self.buf.len() {
            return Err(Error::Dimension {
                expected: self.buf.len(),
                got: h.len(),
            });
        }
        self.buf.copy_from_slice(h);
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        out.clear();
        out.extend(self.buf.iter().map(|c| c.norm() * self.scale));
        Ok(())
    }
}

/// Magnitude of the unitary (1/sqrt(M)) DFT.
pub fn dft_magnitude(h: &[Complex64]) -> Result<Vec<f64>> {
    if h.is_empty() {
        return Err(Error::InvalidParameter("DFT input must be non-empty".into()));
    }
    let mut out = Vec::with_capacity(h.len());
    DftMagnitude::new(h.len()).apply(h, &mut out)?;
    Ok(out)
}

/// Elementwise `ln(max(v, floor))`.
pub fn log_compress(v: &[f64], floor: f64) -> Result<Vec<f64>> {
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("log floor must be > 0, got {floor}")));
    }
    Ok(v.iter().map(|x| x.max(floor).ln()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydCodebook {
    centroids: Vec<f64>,
    boundaries: Vec<f64>,
}

impl LloydCodebook {
    /// Builds a codebook from strictly increasing centroids.
    pub fn from_centroids(centroids: Vec<f64>) -> Result<Self> {
        if centroids.is_empty() || centroids.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter(
                "codebook centroids must be non-empty and strictly increasing".into(),
            ));
        }
        let boundaries = centroids.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        Ok(Self {
            centroids,
            boundaries,
        })
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn levels(&self) -> usize {
        self.centroids.len()
    }

    /// Cell index of `x`; a value on a boundary belongs to the lower cell.
    pub fn index_of(&self, x: f64) -> usize {
        self.boundaries.partition_point(|b| *b < x)
    }

    pub fn quantize_value(&self, x: f64) -> f64 {
        self.centroids[self.index_of(x)]
    }
}

pub fn quantize(cb: &LloydCodebook, v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| cb.quantize_value(*x)).collect()
}

#[derive(Debug, Clone)]
pub struct LloydOutcome {
    pub codebook: LloydCodebook,
    /// Mean squared distortion after initialisation and after every iteration.
    pub distortion: Vec<f64>,
}

/// Sorted samples plus prefix sums for O(L log n) centroid updates.
struct SortedSamples {
    xs: Vec<f64>,
    sum: Vec<f64>,
}

impl SortedSamples {
    fn new(samples: &[f64]) -> Self {
        let mut xs = samples.to_vec();
        xs.sort_by(f64::total_cmp);
        let mut sum = Vec::with_capacity(xs.len() + 1);
        let mut s = 0.0;
        sum.push(0.0);
        for x in &xs {
            s += x;
            sum.push(s);
        }
        Self { xs, sum }
    }

    /// Index ranges of the quantization cells, ties to the lower cell.
    fn cells(&self, cb: &LloydCodebook) -> Vec<(usize, usize)> {
        let mut edges = Vec::with_capacity(cb.levels() + 1);
        edges.push(0);
        for b in cb.boundaries() {
            edges.push(self.xs.partition_point(|x| *x <= *b));
        }
        edges.push(self.xs.len());
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Exact squared error of a cell around `c`, evaluated directly so that
    /// cancellation in the prefix sums cannot break monotonicity.
    fn cell_error(&self, (lo, hi): (usize, usize), c: f64) -> f64 {
        self.xs[lo..hi].iter().map(|x| (x - c) * (x - c)).sum()
    }

    fn distortion(&self, cb: &LloydCodebook) -> f64 {
        let total: f64 = self
            .cells(cb)
            .into_iter()
            .zip(cb.centroids())
            .map(|(cell, c)| self.cell_error(cell, *c))
            .sum();
        total / self.xs.len() as f64
    }

    fn cell_mean(&self, (lo, hi): (usize, usize)) -> Option<f64> {
        (hi > lo).then(|| (self.sum[hi] - self.sum[lo]) / (hi - lo) as f64)
    }
}

/// Scalar Lloyd-Max training.
///
/// Centroids start at evenly spaced quantiles of the distinct sample values.
/// A centroid whose cell empties is moved onto the sample farthest from its
/// current centroid.
pub fn lloyd_train(samples: &[f64], levels: usize, max_iters: usize, tol: f64) -> Result<LloydOutcome> {
    if levels < 2 {
        return Err(Error::InvalidParameter("Lloyd quantizer needs at least 2 levels".into()));
    }
    if samples.len() < levels {
        return Err(Error::InvalidParameter(format!(
            "need at least {levels} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("Lloyd samples must be finite".into()));
    }
    let data = SortedSamples::new(samples);
    let mut distinct = data.xs.clone();
    distinct.dedup();
    if distinct.len() < levels {
        return Err(Error::InvalidParameter(format!(
            "{} distinct values cannot support {levels} levels",
            distinct.len()
        )));
    }
    let init: Vec<f64> = (0..levels)
        .map(|i| distinct[((2 * i + 1) * distinct.len()) / (2 * levels)])
        .collect();
    let mut cb = LloydCodebook::from_centroids(init)?;
    let mut trace = vec![data.distortion(&cb)];

    for _ in 0..max_iters {
        let cells = data.cells(&cb);
        let mut next: Vec<f64> = cells
            .iter()
            .zip(cb.centroids())
            .map(|(cell, c)| data.cell_mean(*cell).unwrap_or(*c))
            .collect();
        if cells.iter().any(|(lo, hi)| hi == lo) {
            reseed_empty(&data, &cells, &mut next);
        }
        next.sort_by(f64::total_cmp);
        next.dedup();
        if next.len() < levels {
            break;
        }
        let candidate = LloydCodebook::from_centroids(next)?;
        let d = data.distortion(&candidate);
        let prev = *trace.last().expect("non-empty trace");
        if d > prev {
            // Floating-point noise at the fixed point; the previous codebook stands.
            break;
        }
        cb = candidate;
        trace.push(d);
        if prev - d < tol {
            break;
        }
    }
    Ok(LloydOutcome {
        codebook: cb,
        distortion: trace,
    })
}

fn reseed_empty(data: &SortedSamples, cells: &[(usize, usize)], centroids: &mut [f64]) {
    for k in 0..cells.len() {
        if cells[k].0 != cells[k].1 {
            continue;
        }
        // Farthest sample from the centroid of its own (non-empty) cell.
        let mut best: Option<(f64, f64)> = None;
        for (cell, c) in cells.iter().zip(centroids.iter()) {
            if cell.1 == cell.0 {
                continue;
            }
            for x in [data.xs[cell.0], data.xs[cell.1 - 1]] {
                let e = (x - c).abs();
                if best.is_none_or(|(be, _)| e > be) && !centroids.contains(&x) {
                    best = Some((e, x));
                }
            }
        }
        if let Some((_, x)) = best {
            centroids[k] = x;
        }
    }
}

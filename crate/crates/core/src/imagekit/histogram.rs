use super::image::{ensure_same_dims, Image, CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const HIST_BINS: usize = 256;

/// Per-channel intensity histogram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    bins: usize,
    counts: [Vec<u64>; CHANNELS],
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn counts(&self, channel: usize) -> &[u64] {
        &self.counts[channel]
    }

    pub fn total(&self, channel: usize) -> u64 {
        self.counts[channel].iter().sum()
    }
}

/// Bin index of a sample: clamp to `[0, 1]`, then `floor(v * bins)` with
/// the top edge folded into the last bin.
#[inline]
pub fn bin_index<T: Real>(v: T, bins: usize) -> usize {
    let v = if v.is_nan() { T::zero() } else { v.clamp01() };
    let idx = (v * T::from_usize_lossy(bins)).floor().to_usize().unwrap_or(0);
    idx.min(bins - 1)
}

pub fn histogram<T: Real>(img: &Image<T>, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("histogram needs >= 2 bins, got {bins}")));
    }
    let mut counts = [vec![0u64; bins], vec![0u64; bins], vec![0u64; bins]];
    for px in img.data().chunks_exact(CHANNELS) {
        for (c, &v) in px.iter().enumerate() {
            counts[c][bin_index(v, bins)] += 1;
        }
    }
    Ok(Histogram { bins, counts })
}

/// Pearson correlation of two bin vectors.
///
/// When either vector has zero variance the correlation is undefined; the
/// convention is 1.0 for equal vectors and 0.0 otherwise.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Per-channel histogram with linear interpolation between neighbouring
/// bin centres, normalized to unit mass. Unlike [`histogram`] it varies
/// continuously with the sample values.
pub fn soft_histogram<T: Real>(img: &Image<T>, bins: usize) -> [Vec<f64>; CHANNELS] {
    let mut out = [vec![0.0; bins], vec![0.0; bins], vec![0.0; bins]];
    let scale = bins as f64;
    for px in img.data().chunks_exact(CHANNELS) {
        for (c, &v) in px.iter().enumerate() {
            let v = v.to_f64_lossy();
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            let pos = (v * scale - 0.5).clamp(0.0, scale - 1.0);
            let lo = (pos.floor() as usize).min(bins - 1);
            let frac = pos - lo as f64;
            out[c][lo] += 1.0 - frac;
            if lo + 1 < bins {
                out[c][lo + 1] += frac;
            }
        }
    }
    let n = img.pixel_count() as f64;
    for ch in out.iter_mut() {
        ch.iter_mut().for_each(|b| *b /= n);
    }
    out
}

fn normalized(h: &Histogram, c: usize) -> Vec<f64> {
    let total = h.total(c).max(1) as f64;
    h.counts(c).iter().map(|&k| k as f64 / total).collect()
}

/// How samples are assigned to bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binning {
    /// `floor(v * bins)`, as in [`histogram`].
    Hard,
    /// Linear interpolation between bin centres, as in [`soft_histogram`].
    Soft,
}

/// Normalized 256-bin histograms of a fixed reference image.
pub struct HistogramReference {
    bins: [Vec<f64>; CHANNELS],
    dims: (usize, usize),
    binning: Binning,
}

impl HistogramReference {
    pub fn new<T: Real>(reference: &Image<T>) -> Self {
        Self::with_binning(reference, Binning::Hard)
    }

    pub fn with_binning<T: Real>(reference: &Image<T>, binning: Binning) -> Self {
        Self {
            bins: Self::bins_of(reference, binning),
            dims: reference.dims(),
            binning,
        }
    }

    fn bins_of<T: Real>(img: &Image<T>, binning: Binning) -> [Vec<f64>; CHANNELS] {
        match binning {
            Binning::Hard => {
                let h = histogram(img, HIST_BINS).expect("256 bins is valid");
                [normalized(&h, 0), normalized(&h, 1), normalized(&h, 2)]
            }
            Binning::Soft => soft_histogram(img, HIST_BINS),
        }
    }

    pub fn correlation<T: Real>(&self, img: &Image<T>) -> Result<f64> {
        if img.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                left: img.dims(),
                right: self.dims,
            });
        }
        let bins = Self::bins_of(img, self.binning);
        let mut acc = 0.0;
        for c in 0..CHANNELS {
            acc += pearson(&bins[c], &self.bins[c]);
        }
        Ok(acc / CHANNELS as f64)
    }
}

/// Channel-averaged Pearson correlation of the two images' 256-bin
/// normalized histograms.
pub fn hist_correlation<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    ensure_same_dims(a, b)?;
    Ok(T::lit(HistogramReference::new(b).correlation(a)?))
}

//! Two-parameter low-light enhancement and the brightness-anchor schedule.
//!
//! The curve is `E(v) = clamp(((1 + alpha) * v)^gamma, 0, 1)`: `alpha` is a
//! gain that brightens, `gamma` shapes the tone curve. Anchors are obtained
//! by interpolating both parameters geometrically between a starting and a
//! target parameter set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagekit::{histogram, Image, CHANNELS};
use crate::scalar::Real;

pub const ALPHA_MIN: f64 = 0.0;
pub const ALPHA_MAX: f64 = 15.0;
pub const GAMMA_MIN: f64 = 0.3;
pub const GAMMA_MAX: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EnhanceParams<T: Real> {
    pub alpha: T,
    pub gamma: T,
}

impl<T: Real> EnhanceParams<T> {
    pub fn new(alpha: T, gamma: T) -> Result<Self> {
        let p = Self { alpha, gamma };
        p.validate()?;
        Ok(p)
    }

    /// The starting point of every anchor schedule: `{0.1, 1}`.
    pub fn initial() -> Self {
        Self {
            alpha: T::lit(0.1),
            gamma: T::one(),
        }
    }

    pub fn identity() -> Self {
        Self {
            alpha: T::zero(),
            gamma: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alpha.to_f64_lossy();
        let g = self.gamma.to_f64_lossy();
        if !(ALPHA_MIN..=ALPHA_MAX).contains(&a) {
            return Err(Error::InvalidParameter(format!(
                "alpha {a} outside [{ALPHA_MIN}, {ALPHA_MAX}]"
            )));
        }
        if !(GAMMA_MIN..=GAMMA_MAX).contains(&g) {
            return Err(Error::InvalidParameter(format!(
                "gamma {g} outside [{GAMMA_MIN}, {GAMMA_MAX}]"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, v: T) -> T {
        let base = ((T::one() + self.alpha) * v).max(T::zero());
        base.powf(self.gamma).clamp01()
    }
}

pub fn enhance<T: Real>(img: &Image<T>, p: &EnhanceParams<T>) -> Result<Image<T>> {
    p.validate()?;
    Ok(img.map(|v| p.apply(v)))
}

/// Global per-channel histogram equalization, available as an optional
/// pre-step before [`enhance`].
pub fn equalize<T: Real>(img: &Image<T>) -> Image<T> {
    const BINS: usize = 256;
    let h = histogram(img, BINS).expect("256 bins is valid");
    let n = img.pixel_count() as f64;
    let mut cdf = [[0.0f64; BINS]; CHANNELS];
    for (c, table) in cdf.iter_mut().enumerate() {
        let mut acc = 0u64;
        for (b, slot) in table.iter_mut().enumerate() {
            acc += h.counts(c)[b];
            *slot = acc as f64 / n;
        }
    }
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let b = crate::imagekit::bin_index(*v, BINS);
        *v = T::lit(cdf[i % CHANNELS][b]);
    }
    out
}

/// Geometric interpolation of `(alpha, gamma)` from `p0` towards `pn`.
///
/// Entry `i - 1` holds the parameters at fraction `i / n` of the log-space
/// path, so the last entry is exactly `pn`.
pub fn log_interpolate<T: Real>(
    p0: &EnhanceParams<T>,
    pn: &EnhanceParams<T>,
    n: usize,
) -> Result<Vec<EnhanceParams<T>>> {
    if n == 0 {
        return Err(Error::InvalidParameter("anchor count must be >= 1".into()));
    }
    for p in [p0, pn] {
        if p.alpha <= T::zero() || p.gamma <= T::zero() {
            return Err(Error::InvalidParameter(format!(
                "log interpolation needs positive parameters, got alpha={} gamma={}",
                p.alpha, p.gamma
            )));
        }
    }
    let (la0, lan) = (p0.alpha.ln(), pn.alpha.ln());
    let (lg0, lgn) = (p0.gamma.ln(), pn.gamma.ln());
    let nf = T::from_usize_lossy(n);
    Ok((1..=n)
        .map(|i| {
            if i == n {
                return *pn;
            }
            let t = T::from_usize_lossy(i) / nf;
            EnhanceParams {
                alpha: (la0 + t * (lan - la0)).exp(),
                gamma: (lg0 + t * (lgn - lg0)).exp(),
            }
        })
        .collect())
}

/// Brightness anchors `H^1..H^n` of a low-light image.
pub fn make_anchors<T: Real>(
    low: &Image<T>,
    p0: &EnhanceParams<T>,
    pn: &EnhanceParams<T>,
    n: usize,
) -> Result<Vec<Image<T>>> {
    log_interpolate(p0, pn, n)?
        .iter()
        .map(|p| enhance(low, p))
        .collect()
}

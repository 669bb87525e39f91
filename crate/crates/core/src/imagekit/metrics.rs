//! Full-reference quality metrics: MSE, PSNR and SSIM.
//!
//! SSIM follows the usual Gaussian-window formulation (11x11 window,
//! sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0) evaluated over
//! "valid" window placements only, averaged over placements and then over
//! the three channels. The windowed statistics are computed with a
//! separable filter; [`ssim_with_grad`] also returns the analytic gradient
//! of the mean SSIM with respect to the first image.

use super::image::{ensure_same_dims, Image, CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// PSNR written to CSV files when the images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    ensure_same_dims(a, b)?;
    let mut acc = T::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / T::from_usize_lossy(a.data().len()))
}

/// Peak-1.0 PSNR in decibels. Identical images give `+inf`; use
/// [`psnr_capped`] when a finite number is needed.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse<T: Real>(mse: T) -> T {
    if mse <= T::zero() {
        T::infinity()
    } else {
        T::lit(10.0) * (T::one() / mse).log10()
    }
}

pub fn psnr_capped(db: f64) -> f64 {
    if db.is_finite() {
        db.min(PSNR_CAP_DB)
    } else if db > 0.0 {
        PSNR_CAP_DB
    } else {
        db
    }
}

pub fn mean_abs_error<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    ensure_same_dims(a, b)?;
    let mut acc = T::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        acc += (x - y).abs();
    }
    Ok(acc / T::from_usize_lossy(a.data().len()))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps<T: Real>() -> [T; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut raw = [0.0f64; SSIM_WINDOW];
    for (i, r) in raw.iter_mut().enumerate() {
        let d = i as f64 - half;
        *r = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = raw.iter().sum();
    let mut taps = [T::zero(); SSIM_WINDOW];
    for (t, r) in taps.iter_mut().zip(raw) {
        *t = T::lit(r / sum);
    }
    taps
}

fn check_window<T: Real>(img: &Image<T>) -> Result<()> {
    if img.width() < SSIM_WINDOW || img.height() < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

/// Separable valid-mode filtering of one plane.
struct WindowFilter<T> {
    taps: [T; SSIM_WINDOW],
    width: usize,
    height: usize,
    out_w: usize,
    out_h: usize,
}

impl<T: Real> WindowFilter<T> {
    fn new(width: usize, height: usize) -> Self {
        Self {
            taps: gaussian_taps(),
            width,
            height,
            out_w: width - SSIM_WINDOW + 1,
            out_h: height - SSIM_WINDOW + 1,
        }
    }

    fn apply(&self, plane: &[T]) -> Vec<T> {
        let mut rows = vec![T::zero(); self.out_w * self.height];
        for y in 0..self.height {
            let src = &plane[y * self.width..(y + 1) * self.width];
            for ox in 0..self.out_w {
                let mut acc = T::zero();
                for (k, &t) in self.taps.iter().enumerate() {
                    acc += t * src[ox + k];
                }
                rows[y * self.out_w + ox] = acc;
            }
        }
        let mut out = vec![T::zero(); self.out_w * self.out_h];
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let mut acc = T::zero();
                for (k, &t) in self.taps.iter().enumerate() {
                    acc += t * rows[(oy + k) * self.out_w + ox];
                }
                out[oy * self.out_w + ox] = acc;
            }
        }
        out
    }

    /// Adjoint of [`apply`]: scatters window-space values back onto pixels.
    fn adjoint(&self, win: &[T]) -> Vec<T> {
        let mut rows = vec![T::zero(); self.out_w * self.height];
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let g = win[oy * self.out_w + ox];
                for (k, &t) in self.taps.iter().enumerate() {
                    rows[(oy + k) * self.out_w + ox] += t * g;
                }
            }
        }
        let mut out = vec![T::zero(); self.width * self.height];
        for y in 0..self.height {
            for ox in 0..self.out_w {
                let g = rows[y * self.out_w + ox];
                for (k, &t) in self.taps.iter().enumerate() {
                    out[y * self.width + ox + k] += t * g;
                }
            }
        }
        out
    }
}

/// Precomputed windowed statistics of a fixed reference image, so that many
/// candidates can be scored against it cheaply.
pub struct SsimReference<T> {
    filter: WindowFilter<T>,
    planes: Vec<Vec<T>>,
    mu: Vec<Vec<T>>,
    sq: Vec<Vec<T>>,
}

impl<T: Real> SsimReference<T> {
    pub fn new(reference: &Image<T>) -> Result<Self> {
        check_window(reference)?;
        let filter = WindowFilter::new(reference.width(), reference.height());
        let mut planes = Vec::with_capacity(CHANNELS);
        let mut mu = Vec::with_capacity(CHANNELS);
        let mut sq = Vec::with_capacity(CHANNELS);
        for c in 0..CHANNELS {
            let p = reference.channel(c);
            let p2: Vec<T> = p.iter().map(|&v| v * v).collect();
            mu.push(filter.apply(&p));
            sq.push(filter.apply(&p2));
            planes.push(p);
        }
        Ok(Self {
            filter,
            planes,
            mu,
            sq,
        })
    }

    fn check(&self, img: &Image<T>) -> Result<()> {
        if img.width() != self.filter.width || img.height() != self.filter.height {
            return Err(Error::DimensionMismatch {
                left: img.dims(),
                right: (self.filter.width, self.filter.height),
            });
        }
        Ok(())
    }

    pub fn score(&self, img: &Image<T>) -> Result<T> {
        Ok(self.evaluate(img, false)?.0)
    }

    pub fn score_with_grad(&self, img: &Image<T>) -> Result<(T, Image<T>)> {
        let (s, g) = self.evaluate(img, true)?;
        Ok((s, g.expect("gradient requested")))
    }

    fn evaluate(&self, img: &Image<T>, want_grad: bool) -> Result<(T, Option<Image<T>>)> {
        self.check(img)?;
        let c1 = T::lit(SSIM_K1 * SSIM_K1);
        let c2 = T::lit(SSIM_K2 * SSIM_K2);
        let two = T::lit(2.0);
        let f = &self.filter;
        let nwin = f.out_w * f.out_h;
        let norm = T::one() / T::from_usize_lossy(nwin * CHANNELS);
        let mut total = T::zero();
        let mut grad = want_grad.then(|| Image::zeros(f.width, f.height));

        for c in 0..CHANNELS {
            let x = img.channel(c);
            let y = &self.planes[c];
            let x2: Vec<T> = x.iter().map(|&v| v * v).collect();
            let xy: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
            let mx = f.apply(&x);
            let sxx = f.apply(&x2);
            let sxy = f.apply(&xy);
            let my = &self.mu[c];
            let syy = &self.sq[c];

            let mut chan = T::zero();
            let (mut d_m, mut d_sxx, mut d_sxy) = if want_grad {
                (vec![T::zero(); nwin], vec![T::zero(); nwin], vec![T::zero(); nwin])
            } else {
                (Vec::new(), Vec::new(), Vec::new())
            };
            for w in 0..nwin {
                let m1 = mx[w];
                let m2 = my[w];
                let var_x = sxx[w] - m1 * m1;
                let var_y = syy[w] - m2 * m2;
                let cov = sxy[w] - m1 * m2;
                let a1 = two * m1 * m2 + c1;
                let a2 = two * cov + c2;
                let b1 = m1 * m1 + m2 * m2 + c1;
                let b2 = var_x + var_y + c2;
                let den = b1 * b2;
                let s = a1 * a2 / den;
                chan += s;
                if want_grad {
                    // dA1/dm1 = 2 m2, dA2/dm1 = -2 m2, dB1/dm1 = 2 m1, dB2/dm1 = -2 m1
                    let num_d = two * m2 * a2 - two * m2 * a1;
                    let dm = num_d / den - s * (two * m1 / b1 - two * m1 / b2);
                    d_m[w] = dm * norm;
                    d_sxx[w] = -s / b2 * norm;
                    d_sxy[w] = two * a1 / den * norm;
                }
            }
            total += chan;

            if let Some(g) = grad.as_mut() {
                let gm = f.adjoint(&d_m);
                let gxx = f.adjoint(&d_sxx);
                let gxy = f.adjoint(&d_sxy);
                let data = g.data_mut();
                for p in 0..f.width * f.height {
                    data[p * CHANNELS + c] = gm[p] + two * x[p] * gxx[p] + y[p] * gxy[p];
                }
            }
        }
        Ok((total * norm, grad))
    }
}

pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    ensure_same_dims(a, b)?;
    SsimReference::new(b)?.score(a)
}

/// Mean SSIM and its gradient with respect to every sample of `a`.
pub fn ssim_with_grad<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(T, Image<T>)> {
    ensure_same_dims(a, b)?;
    SsimReference::new(b)?.score_with_grad(a)
}

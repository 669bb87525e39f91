use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagekit::{Image, CHANNELS};
use crate::scalar::Real;

/// A straight-line motion blur: `length` taps along the major axis of the
/// direction `angle` (degrees, counter-clockwise from +x with +y pointing
/// down the image). Off-axis positions are split linearly between the two
/// nearest pixels, so every kernel is point-symmetric about its centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionKernel {
    pub length: usize,
    pub angle: f64,
    /// `(dx, dy, weight)` for every nonzero tap.
    taps: Vec<(isize, isize, f64)>,
}

/// How pixels beyond the image edge are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Border {
    Zero,
    /// Mirror about the edge, repeating the edge pixel.
    Reflect,
}

impl MotionKernel {
    pub fn new(length: usize, angle: f64) -> Result<Self> {
        if length == 0 || length % 2 == 0 {
            return Err(Error::InvalidParameter(format!("blur length must be odd and >= 1, got {length}")));
        }
        if !angle.is_finite() {
            return Err(Error::InvalidParameter("blur angle must be finite".into()));
        }
        let half = (length / 2) as isize;
        let (s, c) = angle.to_radians().sin_cos();
        let (dx, dy) = (c, -s);
        let mut taps: Vec<(isize, isize, f64)> = Vec::with_capacity(2 * length);
        let mut put = |x: isize, y: isize, w: f64| {
            if w <= 0.0 {
                return;
            }
            match taps.iter_mut().find(|t| t.0 == x && t.1 == y) {
                Some(t) => t.2 += w,
                None => taps.push((x, y, w)),
            }
        };
        let w = 1.0 / length as f64;
        let horizontal = dx.abs() >= dy.abs();
        let slope = if horizontal { dy / dx } else { dx / dy };
        for t in -half..=half {
            let minor = t as f64 * slope;
            // Snap round-off (e.g. tan 45° = 0.999...) onto the grid.
            let minor = if (minor - minor.round()).abs() < 1e-9 { minor.round() } else { minor };
            let lo = minor.floor();
            let frac = minor - lo;
            let lo = lo as isize;
            let (a, b) = if horizontal { ((t, lo), (t, lo + 1)) } else { ((lo, t), (lo + 1, t)) };
            put(a.0, a.1, w * (1.0 - frac));
            put(b.0, b.1, w * frac);
        }
        let mass: f64 = taps.iter().map(|t| t.2).sum();
        for t in &mut taps {
            t.2 /= mass;
        }
        taps.sort_by_key(|t| (t.1, t.0));
        Ok(Self { length, angle, taps })
    }

    pub fn delta() -> Self {
        Self::new(1, 0.0).expect("length 1 is valid")
    }

    pub fn taps(&self) -> &[(isize, isize, f64)] {
        &self.taps
    }

    pub fn mass(&self) -> f64 {
        self.taps.iter().map(|t| t.2).sum()
    }

    /// Largest tap offset along either axis.
    pub fn radius(&self) -> usize {
        self.taps.iter().map(|t| t.0.unsigned_abs().max(t.1.unsigned_abs())).max().unwrap_or(0)
    }

    /// The kernel rotated by 180°, i.e. the adjoint of [`convolve`].
    pub fn flipped(&self) -> Self {
        let mut taps: Vec<_> = self.taps.iter().map(|&(x, y, w)| (-x, -y, w)).collect();
        taps.sort_by_key(|t| (t.1, t.0));
        Self { taps, ..self.clone() }
    }
}

pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// `out(x, y) = sum_k w_k * img(x - dx_k, y - dy_k)`.
pub fn convolve<T: Real>(img: &Image<T>, kernel: &MotionKernel, border: Border) -> Image<T> {
    let (w, h) = img.dims();
    let taps: Vec<(isize, isize, T)> = kernel.taps.iter().map(|&(x, y, v)| (x, y, T::lit(v))).collect();
    let mut out = Image::zeros(w, h);
    let src = img.data();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [T::zero(); CHANNELS];
            for &(dx, dy, k) in &taps {
                let (sx, sy) = (x as isize - dx, y as isize - dy);
                let idx = if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    Some((sy as usize * w + sx as usize) * CHANNELS)
                } else {
                    match border {
                        Border::Zero => None,
                        Border::Reflect => Some((reflect_index(sy, h) * w + reflect_index(sx, w)) * CHANNELS),
                    }
                };
                if let Some(i) = idx {
                    for c in 0..CHANNELS {
                        acc[c] += k * src[i + c];
                    }
                }
            }
            let o = (y * w + x) * CHANNELS;
            dst[o..o + CHANNELS].copy_from_slice(&acc);
        }
    }
    out
}

/// Exact adjoint of [`convolve`]: every tap's contribution is scattered
/// back to the pixel it was read from, following the same border rule.
pub fn convolve_adjoint<T: Real>(img: &Image<T>, kernel: &MotionKernel, border: Border) -> Image<T> {
    let (w, h) = img.dims();
    let taps: Vec<(isize, isize, T)> = kernel.taps.iter().map(|&(x, y, v)| (x, y, T::lit(v))).collect();
    let mut out = Image::zeros(w, h);
    let src = img.data();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * CHANNELS;
            for &(dx, dy, k) in &taps {
                let (sx, sy) = (x as isize - dx, y as isize - dy);
                let idx = if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    Some((sy as usize * w + sx as usize) * CHANNELS)
                } else {
                    match border {
                        Border::Zero => None,
                        Border::Reflect => Some((reflect_index(sy, h) * w + reflect_index(sx, w)) * CHANNELS),
                    }
                };
                if let Some(i) = idx {
                    for c in 0..CHANNELS {
                        dst[i + c] += k * src[o + c];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_even_or_zero_length() {
        assert!(MotionKernel::new(0, 0.0).is_err());
        assert!(MotionKernel::new(4, 0.0).is_err());
        assert!(MotionKernel::new(3, f64::NAN).is_err());
    }

    #[test]
    fn axis_aligned_and_diagonal_taps() {
        let k = MotionKernel::new(3, 0.0).unwrap();
        assert_eq!(k.taps(), &[(-1, 0, 1.0 / 3.0), (0, 0, 1.0 / 3.0), (1, 0, 1.0 / 3.0)]);
        let v = MotionKernel::new(3, 90.0).unwrap();
        assert_eq!(v.taps().iter().map(|t| (t.0, t.1)).collect::<Vec<_>>(), vec![(0, -1), (0, 0), (0, 1)]);
        // 45° rises to the upper right, i.e. towards negative y.
        let d = MotionKernel::new(5, 45.0).unwrap();
        let pos: Vec<_> = d.taps().iter().map(|t| (t.0, t.1)).collect();
        assert_eq!(pos, vec![(2, -2), (1, -1), (0, 0), (-1, 1), (-2, 2)]);
        assert_eq!(d.radius(), 2);
    }

    #[test]
    fn kernels_are_point_symmetric() {
        for len in [1, 3, 5, 7, 9] {
            for i in 0..8 {
                let k = MotionKernel::new(len, 22.5 * i as f64).unwrap();
                let f = k.flipped();
                for (a, b) in k.taps().iter().zip(f.taps()) {
                    assert_eq!((a.0, a.1), (b.0, b.1));
                    assert!((a.2 - b.2).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn adjoint_satisfies_the_inner_product_identity() {
        let a = Image::<f64>::from_fn(7, 6, |x, y, c| ((x * 5 + y * 3 + c * 7) % 11) as f64 / 11.0);
        let b = Image::<f64>::from_fn(7, 6, |x, y, c| ((x * 2 + y * 7 + c) % 13) as f64 / 13.0 - 0.4);
        let dot = |p: &Image<f64>, q: &Image<f64>| p.data().iter().zip(q.data()).map(|(u, v)| u * v).sum::<f64>();
        for border in [Border::Zero, Border::Reflect] {
            for (len, ang) in [(5, 0.0), (9, 22.5), (7, 135.0)] {
                let k = MotionKernel::new(len, ang).unwrap();
                let lhs = dot(&convolve(&a, &k, border), &b);
                let rhs = dot(&a, &convolve_adjoint(&b, &k, border));
                assert!((lhs - rhs).abs() < 1e-12, "{border:?} {len} {ang}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<_> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect_index(-5, 1), 0);
    }
}

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::kernel::{convolve, convolve_adjoint, reflect_index, Border, MotionKernel};
use crate::error::{Error, Result};
use crate::imagekit::{ensure_same_dims, Image, CHANNELS};
use crate::scalar::Real;

const RL_FLOOR: f64 = 1e-12;

/// Richardson–Lucy iterations `u <- u * K^T(b / K u) / K^T 1` with
/// reflective borders, starting from `init` (or `blurry` itself). Negative
/// inputs are treated as zero, so every iterate stays non-negative.
pub fn richardson_lucy<T: Real>(
    blurry: &Image<T>,
    kernel: &MotionKernel,
    iterations: usize,
    init: Option<&Image<T>>,
) -> Result<Image<T>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("Richardson-Lucy needs at least one iteration".into()));
    }
    let b = blurry.map(|v| v.max(T::zero()));
    let mut u = match init {
        Some(p) => {
            ensure_same_dims(p, blurry)?;
            // A zero start pixel could never recover.
            p.map(|v| v.max(T::lit(1e-4)))
        }
        None => b.map(|v| v.max(T::lit(1e-4))),
    };
    let floor = T::lit(RL_FLOOR);
    // Near the border the reflection can read one pixel more than once, so
    // the adjoint's column sums are not all one.
    let norm = convolve_adjoint(&Image::filled(b.width(), b.height(), T::one()), kernel, Border::Reflect);
    for _ in 0..iterations {
        let est = convolve(&u, kernel, Border::Reflect);
        let ratio = b.zip_map(&est, |bv, ev| bv / ev.max(floor))?;
        let corr = convolve_adjoint(&ratio, kernel, Border::Reflect);
        for ((uv, &c), &n) in u.data_mut().iter_mut().zip(corr.data()).zip(norm.data()) {
            *uv *= c / n.max(floor);
        }
    }
    Ok(u)
}

pub(super) fn fft2(data: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// Frequency-domain Wiener deconvolution with a constant noise-to-signal
/// ratio. The FFT runs on the image's 2x mirror extension, whose circular
/// convolution equals reflective-border convolution, so the borders do not
/// wrap. The result is clamped to `[0, 1]`.
pub fn wiener<T: Real>(blurry: &Image<T>, kernel: &MotionKernel, nsr: f64) -> Result<Image<T>> {
    if !(nsr > 0.0 && nsr.is_finite()) {
        return Err(Error::InvalidParameter(format!("Wiener noise-to-signal ratio must be > 0, got {nsr}")));
    }
    let (w, h) = blurry.dims();
    let (pw, ph) = (2 * w, 2 * h);

    let mut kf = vec![Complex64::default(); pw * ph];
    for &(dx, dy, v) in kernel.taps() {
        let x = dx.rem_euclid(pw as isize) as usize;
        let y = dy.rem_euclid(ph as isize) as usize;
        kf[y * pw + x].re += v;
    }
    fft2(&mut kf, pw, ph, false);

    let mut out = Image::zeros(w, h);
    let scale = 1.0 / (pw * ph) as f64;
    for c in 0..CHANNELS {
        let mut buf: Vec<Complex64> = (0..pw * ph)
            .map(|i| {
                let sx = reflect_index((i % pw) as isize, w);
                let sy = reflect_index((i / pw) as isize, h);
                Complex64::new(blurry.get(sx, sy, c).to_f64_lossy(), 0.0)
            })
            .collect();
        fft2(&mut buf, pw, ph, false);
        for (b, k) in buf.iter_mut().zip(&kf) {
            *b = *b * k.conj() / (k.norm_sqr() + nsr);
        }
        fft2(&mut buf, pw, ph, true);
        for y in 0..h {
            for x in 0..w {
                let v = buf[y * pw + x].re * scale;
                out.set(x, y, c, T::lit(v.clamp(0.0, 1.0)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Image<f64> {
        Image::from_fn(24, 20, |x, y, c| {
            let inside = (6..16).contains(&x) && (5..13).contains(&y);
            if inside {
                0.8 - 0.2 * c as f64
            } else {
                0.1 + 0.01 * ((x + y) % 5) as f64
            }
        })
    }

    #[test]
    fn delta_kernel_is_a_fixed_point() {
        let img = scene();
        let out = richardson_lucy(&img, &MotionKernel::delta(), 5, None).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let wf = wiener(&img, &MotionKernel::delta(), 1e-9).unwrap();
        for (a, b) in wf.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rl_stays_non_negative_and_sharpens() {
        let clean = scene();
        let k = MotionKernel::new(5, 0.0).unwrap();
        let blurry = convolve(&clean, &k, Border::Reflect);
        let mut noisy = blurry.clone();
        noisy.data_mut()[7] = -0.3;
        let out = richardson_lucy(&noisy, &k, 30, None).unwrap();
        assert!(out.data().iter().all(|v| *v >= 0.0));
        let err = |a: &Image<f64>| crate::imagekit::mse(a, &clean).unwrap();
        let sharp = richardson_lucy(&blurry, &k, 30, None).unwrap();
        assert!(err(&sharp) < err(&blurry));
        assert!(richardson_lucy(&blurry, &k, 0, None).is_err());
    }

    #[test]
    fn wiener_improves_a_blurred_image() {
        let clean = scene();
        let k = MotionKernel::new(5, 90.0).unwrap();
        let blurry = convolve(&clean, &k, Border::Reflect);
        let out = wiener(&blurry, &k, 1e-3).unwrap();
        let err = |a: &Image<f64>| crate::imagekit::mse(a, &clean).unwrap();
        assert!(err(&out) < 0.5 * err(&blurry), "{} vs {}", err(&out), err(&blurry));
        assert!(wiener(&blurry, &k, 0.0).is_err());
    }
}

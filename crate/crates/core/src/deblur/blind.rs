use rustfft::num_complex::Complex64;

use super::deconv::fft2;
use super::kernel::{reflect_index, MotionKernel};
use crate::imagekit::{Image, CHANNELS};
use crate::scalar::Real;

/// Noise floor relative to the prior power at the lowest frequency.
const NOISE_FLOOR: f64 = 1e-5;
/// Per-sample cost of each extra tap of kernel length, in nats.
const LENGTH_PENALTY: f64 = 0.02;
/// Keeps the DC term of the 1/f² prior finite.
const PRIOR_EPS: f64 = 1e-4;

fn signed_freq(i: usize, n: usize) -> f64 {
    let i = i as f64;
    let n = n as f64;
    (if i > n / 2.0 { i - n } else { i }) / n
}

/// Blind kernel score: negative log-likelihood (per sample, scale
/// profiled out) of the blurry luminance spectrum under "natural image
/// with a 1/f² power spectrum, blurred by `k`, plus white noise", with a
/// small cost per unit of kernel length so that a sharp image keeps the
/// delta. Lower is better; one score per kernel.
pub(super) fn blur_scores<T: Real>(blurry: &Image<T>, grid: &[MotionKernel]) -> Vec<f64> {
    let (w, h) = blurry.dims();
    let lum: Vec<f64> = blurry
        .data()
        .chunks(CHANNELS)
        .map(|p| p.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / CHANNELS as f64)
        .collect();
    let mean = lum.iter().sum::<f64>() / lum.len() as f64;
    // Mirror extension, as in `wiener`, so the spectrum has no edge seams.
    let (pw, ph) = (2 * w, 2 * h);
    let mut spec: Vec<Complex64> = (0..pw * ph)
        .map(|i| {
            let sx = reflect_index((i % pw) as isize, w);
            let sy = reflect_index((i / pw) as isize, h);
            Complex64::new(lum[sy * w + sx] - mean, 0.0)
        })
        .collect();
    fft2(&mut spec, pw, ph, false);
    let power: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
    let prior: Vec<f64> = (0..pw * ph)
        .map(|i| {
            let (fx, fy) = (signed_freq(i % pw, pw), signed_freq(i / pw, ph));
            1.0 / (fx * fx + fy * fy + PRIOR_EPS)
        })
        .collect();
    let floor = NOISE_FLOOR * prior[1];
    let n = (pw * ph - 1) as f64;

    grid.iter()
        .map(|k| {
            let mut kf = vec![Complex64::default(); pw * ph];
            for &(dx, dy, v) in k.taps() {
                kf[dy.rem_euclid(ph as isize) as usize * pw + dx.rem_euclid(pw as isize) as usize].re += v;
            }
            fft2(&mut kf, pw, ph, false);
            let (mut ratio, mut log_model) = (0.0, 0.0);
            // Skip DC: the mean was removed.
            for i in 1..pw * ph {
                let model = kf[i].norm_sqr() * prior[i] + floor;
                ratio += power[i] / model;
                log_model += model.ln();
            }
            (ratio / n).ln() + log_model / n + LENGTH_PENALTY * (k.length as f64 - 1.0)
        })
        .collect()
}

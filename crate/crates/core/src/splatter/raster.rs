use std::cmp::Ordering;

use rayon::prelude::*;

use super::project::{splat, splat_backward, Splat, SplatGrad};
use super::{Camera, GaussianCloud, GaussianGrad, ALPHA_MAX, ALPHA_MIN};
use crate::error::{Error, Result};
use crate::imagekit::{Image, CHANNELS};
use crate::scalar::Real;

/// Side of the square pixel tiles splats are binned into.
pub const TILE: usize = 16;

struct Frame<T> {
    /// Visible splats in compositing order.
    splats: Vec<Splat<T>>,
    /// Per tile, indices into `splats`, ascending.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

fn prepare<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera<T>) -> Result<Frame<T>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cam.validate()?;
    let mut splats: Vec<Splat<T>> = cloud
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| splat(i, g, cam))
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap_or(Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    let tiles_x = cam.width.div_ceil(TILE);
    let tiles_y = cam.height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.rect;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Ok(Frame { splats, tiles, tiles_x })
}

/// Alpha of `s` at pixel `(x, y)`, and whether the ceiling clamped it.
#[inline]
fn alpha_at<T: Real>(s: &Splat<T>, x: usize, y: usize) -> Option<(T, bool)> {
    let [x0, x1, y0, y1] = s.rect;
    if x < x0 || x > x1 || y < y0 || y > y1 {
        return None;
    }
    let dx = T::from_usize_lossy(x) - s.mean[0];
    let dy = T::from_usize_lossy(y) - s.mean[1];
    let [a, b, c] = s.conic;
    let power = T::lit(0.5) * (a * dx * dx + c * dy * dy) + b * dx * dy;
    let alpha = s.opacity * (-power).exp();
    if !(alpha >= T::lit(ALPHA_MIN)) {
        return None;
    }
    let cap = T::lit(ALPHA_MAX);
    Some(if alpha > cap { (cap, true) } else { (alpha, false) })
}

/// Pixel ranges `(xs, ys)` covered by tile `(tx, ty)`.
fn tile_bounds(tx: usize, ty: usize, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    (tx * TILE..((tx + 1) * TILE).min(width), ty * TILE..((ty + 1) * TILE).min(height))
}

/// Front-to-back alpha compositing of the depth-sorted cloud.
pub fn render<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera<T>) -> Result<Image<T>> {
    let frame = prepare(cloud, cam)?;
    let (w, h) = (cam.width, cam.height);
    let mut img = Image::zeros(w, h);
    let bg = cloud.background;
    img.data_mut()
        .par_chunks_mut(w * CHANNELS * TILE)
        .enumerate()
        .for_each(|(ty, band)| {
            for tx in 0..frame.tiles_x {
                let list = &frame.tiles[ty * frame.tiles_x + tx];
                let (xs, ys) = tile_bounds(tx, ty, w, h);
                for y in ys {
                    for x in xs.clone() {
                        let mut trans = T::one();
                        let mut acc = [T::zero(); 3];
                        for &k in list {
                            let s = &frame.splats[k as usize];
                            if let Some((alpha, _)) = alpha_at(s, x, y) {
                                let wgt = trans * alpha;
                                for ch in 0..3 {
                                    acc[ch] += wgt * s.color[ch];
                                }
                                trans *= T::one() - alpha;
                            }
                        }
                        let o = ((y - ty * TILE) * w + x) * CHANNELS;
                        for ch in 0..3 {
                            band[o + ch] = acc[ch] + trans * bg[ch];
                        }
                    }
                }
            }
        });
    Ok(img)
}

struct Contribution<T> {
    local: usize,
    alpha: T,
    trans: T,
    clamped: bool,
}

/// Gradient of `sum(upstream * render(cloud, cam))` with respect to every
/// primitive parameter. Culled and skipped primitives get zero.
pub fn render_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    upstream: &Image<T>,
) -> Result<Vec<GaussianGrad<T>>> {
    let frame = prepare(cloud, cam)?;
    let (w, h) = (cam.width, cam.height);
    if upstream.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            left: upstream.dims(),
            right: (w, h),
        });
    }
    let bg = cloud.background;
    let tiles_y = h.div_ceil(TILE);
    let n_tiles = frame.tiles_x * tiles_y;

    // Per-tile partial sums, merged afterwards in tile order so the result
    // does not depend on scheduling.
    let partials: Vec<Vec<SplatGrad<T>>> = (0..n_tiles)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % frame.tiles_x, t / frame.tiles_x);
            let list = &frame.tiles[t];
            let mut local = vec![SplatGrad::zero(); list.len()];
            let mut contribs: Vec<Contribution<T>> = Vec::new();
            let (xs, ys) = tile_bounds(tx, ty, w, h);
            for y in ys {
                for x in xs.clone() {
                    let up = upstream.pixel(x, y);
                    if up.iter().all(|v| *v == T::zero()) {
                        continue;
                    }
                    contribs.clear();
                    let mut trans = T::one();
                    for (j, &k) in list.iter().enumerate() {
                        if let Some((alpha, clamped)) = alpha_at(&frame.splats[k as usize], x, y) {
                            contribs.push(Contribution {
                                local: j,
                                alpha,
                                trans,
                                clamped,
                            });
                            trans *= T::one() - alpha;
                        }
                    }
                    // `rest` is the normalized colour seen behind the current splat.
                    let mut rest = bg;
                    for c in contribs.iter().rev() {
                        let s = &frame.splats[list[c.local] as usize];
                        let g = &mut local[c.local];
                        let mut d_alpha = T::zero();
                        for ch in 0..3 {
                            g.color[ch] += up[ch] * c.alpha * c.trans;
                            d_alpha += up[ch] * c.trans * (s.color[ch] - rest[ch]);
                            rest[ch] = c.alpha * s.color[ch] + (T::one() - c.alpha) * rest[ch];
                        }
                        if !c.clamped {
                            // alpha = o * exp(-power)
                            g.opacity += d_alpha * c.alpha / s.opacity;
                            let d_power = -d_alpha * c.alpha;
                            let dx = T::from_usize_lossy(x) - s.mean[0];
                            let dy = T::from_usize_lossy(y) - s.mean[1];
                            let [a, b, cc] = s.conic;
                            let half = T::lit(0.5);
                            g.conic[0] += d_power * half * dx * dx;
                            g.conic[1] += d_power * dx * dy;
                            g.conic[2] += d_power * half * dy * dy;
                            g.mean[0] -= d_power * (a * dx + b * dy);
                            g.mean[1] -= d_power * (b * dx + cc * dy);
                        }
                    }
                }
            }
            local
        })
        .collect();

    let mut screen = vec![SplatGrad::zero(); frame.splats.len()];
    for (list, local) in frame.tiles.iter().zip(&partials) {
        for (&k, g) in list.iter().zip(local) {
            screen[k as usize].accumulate(g);
        }
    }
    let mut grads = vec![GaussianGrad::zero(); cloud.len()];
    for (s, sg) in frame.splats.iter().zip(&screen) {
        grads[s.index] = splat_backward(&cloud.gaussians[s.index], cam, sg);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::super::{logit, Gaussian};
    use super::*;

    fn cam(w: usize, h: usize) -> Camera<f64> {
        Camera {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            fx: 30.0,
            fy: 30.0,
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
            width: w,
            height: h,
        }
    }

    fn blob(z: f64, opacity: f64, color: [f64; 3]) -> Gaussian<f64> {
        Gaussian {
            position: [0.0, 0.0, z],
            log_scale: [0.3f64.ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
        }
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let cloud = GaussianCloud::<f64>::new(vec![]);
        assert!(matches!(render(&cloud, &cam(8, 8)), Err(Error::EmptyCloud)));
    }

    #[test]
    fn transparent_cloud_shows_background() {
        let mut cloud = GaussianCloud::new(vec![Gaussian { opacity_logit: -30.0, ..blob(2.0, 0.5, [1.0; 3]) }]);
        cloud.background = [0.1, 0.2, 0.3];
        let img = render(&cloud, &cam(9, 7)).unwrap();
        assert!((0..7).all(|y| (0..9).all(|x| img.pixel(x, y) == [0.1, 0.2, 0.3])));
    }

    #[test]
    fn front_to_back_two_layers() {
        // Centre pixel sits exactly on both means, so alpha == opacity.
        let cloud = GaussianCloud::new(vec![blob(3.0, 0.5, [0.0, 1.0, 0.0]), blob(2.0, 0.5, [1.0, 0.0, 0.0])]);
        let mut cloud_bg = cloud.clone();
        cloud_bg.background = [0.0, 0.0, 1.0];
        let img = render(&cloud_bg, &cam(9, 9)).unwrap();
        let centre = img.pixel(4, 4);
        for (got, want) in centre.iter().zip([0.5, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-12, "{centre:?}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cloud = GaussianCloud::new(vec![blob(2.0, 0.7, [0.2, 0.4, 0.6]), blob(2.5, 0.3, [0.9, 0.1, 0.5])]);
        let grads = render_backward(&cloud, &cam(12, 10), &Image::zeros(12, 10)).unwrap();
        assert!(grads.iter().all(|g| g.to_array().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn upstream_shape_must_match() {
        let cloud = GaussianCloud::new(vec![blob(2.0, 0.7, [0.2; 3])]);
        assert!(render_backward(&cloud, &cam(12, 10), &Image::zeros(10, 12)).is_err());
    }
}

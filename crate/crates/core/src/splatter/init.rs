use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{logit, Gaussian, GaussianCloud};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const INIT_OPACITY: f64 = 0.1;
pub const INIT_COLOR: f64 = 0.5;

/// Scale given to a lone seed point, which has no neighbour to measure.
const LONE_POINT_SCALE: f64 = 0.1;

/// Where the initial primitives go.
#[derive(Clone, Debug, PartialEq)]
pub enum CloudSeed<T> {
    Points(Vec<[T; 3]>),
    /// `count` points uniform in the box `[min, max]`.
    Random { count: usize, min: [T; 3], max: [T; 3] },
}

/// Isotropic, mid-grey, mostly transparent primitives at the seed points.
///
/// Provided points get half their mean nearest-neighbour distance as scale;
/// random points get `box diagonal / count^(1/3)`.
pub fn init_cloud<T: Real>(seed_points: &CloudSeed<T>, seed: u64) -> Result<GaussianCloud<T>> {
    let (points, scale) = match seed_points {
        CloudSeed::Points(p) => {
            if p.is_empty() {
                return Err(Error::InvalidParameter("need at least one seed point".into()));
            }
            let spacing = mean_nearest_neighbour(p).map(|d| d * 0.5).filter(|d| *d > 0.0);
            (p.clone(), T::lit(spacing.unwrap_or(LONE_POINT_SCALE)))
        }
        CloudSeed::Random { count, min, max } => {
            if *count == 0 {
                return Err(Error::InvalidParameter("need at least one primitive".into()));
            }
            if (0..3).any(|k| !(min[k] < max[k])) {
                return Err(Error::InvalidParameter("random init box must have min < max".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<[T; 3]> = (0..*count)
                .map(|_| {
                    std::array::from_fn(|k| {
                        let u: f64 = rng.gen();
                        min[k] + T::lit(u) * (max[k] - min[k])
                    })
                })
                .collect();
            let diag = (0..3)
                .map(|k| (max[k] - min[k]).to_f64_lossy().powi(2))
                .sum::<f64>()
                .sqrt();
            (pts, T::lit(diag / (*count as f64).cbrt()))
        }
    };
    let log_scale = scale.ln();
    let gaussians = points
        .into_iter()
        .map(|position| Gaussian {
            position,
            log_scale: [log_scale; 3],
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            opacity_logit: logit(T::lit(INIT_OPACITY)),
            color: [T::lit(INIT_COLOR); 3],
        })
        .collect();
    Ok(GaussianCloud::new(gaussians))
}

fn mean_nearest_neighbour<T: Real>(pts: &[[T; 3]]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let p: Vec<[f64; 3]> = pts.iter().map(|v| v.map(Real::to_f64_lossy)).collect();
    let total: f64 = p
        .iter()
        .enumerate()
        .map(|(i, a)| {
            p.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Some(total / p.len() as f64)
}

//! Differentiable 3D Gaussian splatting: pinhole projection with an EWA
//! covariance map, depth-sorted alpha compositing, and the exact adjoint of
//! both for every primitive parameter.

mod checkpoint;
mod init;
mod linalg;
mod project;
mod raster;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use checkpoint::{decode_segment, encode_segment, SEGMENT_MAGIC, SEGMENT_VERSION};
pub use init::{init_cloud, CloudSeed, INIT_COLOR, INIT_OPACITY};
pub use project::{project, Projection};
pub use raster::{render, render_backward, TILE};

/// Isotropic screen-space dilation added to every projected covariance, px².
pub const DILATION: f64 = 0.3;
/// Opacity ceiling of a single splat at a single pixel.
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions below this are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Camera-space depth below which a primitive is culled.
pub const Z_NEAR: f64 = 0.01;

/// Scalars stored per primitive, in checkpoint order.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Gaussian<T: Real> {
    pub position: [T; 3],
    /// Per-axis `ln(scale)`.
    pub log_scale: [T; 3],
    /// Quaternion `(w, x, y, z)`; normalized before use, so any nonzero
    /// length is accepted.
    pub rotation: [T; 4],
    pub opacity_logit: T,
    /// Linear RGB, clamped to `[0, 1]` when composited.
    pub color: [T; 3],
}

/// Gradients share the parameter layout.
pub type GaussianGrad<T> = Gaussian<T>;

impl<T: Real> Gaussian<T> {
    pub fn zero() -> Self {
        Self::from_array([T::zero(); PARAMS_PER_GAUSSIAN])
    }

    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn to_array(&self) -> [T; PARAMS_PER_GAUSSIAN] {
        let mut a = [T::zero(); PARAMS_PER_GAUSSIAN];
        a[0..3].copy_from_slice(&self.position);
        a[3..6].copy_from_slice(&self.log_scale);
        a[6..10].copy_from_slice(&self.rotation);
        a[10] = self.opacity_logit;
        a[11..14].copy_from_slice(&self.color);
        a
    }

    pub fn from_array(a: [T; PARAMS_PER_GAUSSIAN]) -> Self {
        Self {
            position: [a[0], a[1], a[2]],
            log_scale: [a[3], a[4], a[5]],
            rotation: [a[6], a[7], a[8], a[9]],
            opacity_logit: a[10],
            color: [a[11], a[12], a[13]],
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Pinhole camera. A world point `p` maps to camera space as
/// `rotation * p + translation`; the camera looks down `+z` with `+y`
/// pointing down the image. Pixel centres sit at integer coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Camera<T: Real> {
    pub rotation: [[T; 3]; 3],
    pub translation: [T; 3],
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Camera<T> {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("camera image must be at least 1x1".into()));
        }
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        // Exact for f64, a few ulps of slack for f32.
        let tol = 1e-6f64.max(16.0 * T::epsilon().to_f64_lossy());
        let r = self.rotation.map(|row| row.map(Real::to_f64_lossy));
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > tol {
                    return Err(Error::InvalidParameter("camera rotation is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidParameter("camera rotation must have determinant +1".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with the principal point at the
    /// image centre.
    pub fn look_at(eye: [T; 3], target: [T; 3], up: [T; 3], focal: T, width: usize, height: usize) -> Result<Self> {
        let forward = linalg::normalize(linalg::sub(target, eye))
            .ok_or_else(|| Error::InvalidParameter("eye and target coincide".into()))?;
        let right = linalg::normalize(linalg::cross(forward, up))
            .ok_or_else(|| Error::InvalidParameter("up is parallel to the view direction".into()))?;
        let down = linalg::cross(forward, right);
        let rotation = [right, down, forward];
        let t = linalg::mat_vec(&rotation, eye);
        let cam = Self {
            rotation,
            translation: [-t[0], -t[1], -t[2]],
            fx: focal,
            fy: focal,
            cx: T::from_usize_lossy(width.saturating_sub(1)) * T::lit(0.5),
            cy: T::from_usize_lossy(height.saturating_sub(1)) * T::lit(0.5),
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    #[inline]
    pub fn to_camera_space(&self, p: [T; 3]) -> [T; 3] {
        linalg::add(linalg::mat_vec(&self.rotation, p), self.translation)
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        Camera {
            rotation: self.rotation.map(|row| row.map(c)),
            translation: self.translation.map(c),
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GaussianCloud<T: Real> {
    pub gaussians: Vec<Gaussian<T>>,
    pub background: [T; 3],
}

impl<T: Real> GaussianCloud<T> {
    pub fn new(gaussians: Vec<Gaussian<T>>) -> Self {
        Self {
            gaussians,
            background: [T::zero(); 3],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        GaussianCloud {
            gaussians: self
                .gaussians
                .iter()
                .map(|g| Gaussian::from_array(g.to_array().map(c)))
                .collect(),
            background: self.background.map(c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_is_a_valid_pose() {
        let cam = Camera::<f64>::look_at([1.0, -2.0, -3.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0], 50.0, 32, 24).unwrap();
        let c = cam.to_camera_space([0.0, 0.0, 0.0]);
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
        assert!((c[2] - 14f64.sqrt()).abs() < 1e-12);
        assert_eq!((cam.cx, cam.cy), (15.5, 11.5));
    }

    #[test]
    fn rejects_improper_rotation() {
        let mut cam = Camera::<f64>::look_at([0.0, 0.0, -2.0], [0.0; 3], [0.0, -1.0, 0.0], 20.0, 8, 8).unwrap();
        cam.rotation[0] = cam.rotation[0].map(|v| -v);
        assert!(cam.validate().is_err());
        cam.rotation[0] = [2.0, 0.0, 0.0];
        assert!(cam.validate().is_err());
    }

    #[test]
    fn array_round_trip() {
        let a: [f64; 14] = std::array::from_fn(|i| i as f64 * 0.5 - 1.0);
        assert_eq!(Gaussian::from_array(a).to_array(), a);
    }
}

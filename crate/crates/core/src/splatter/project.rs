use super::linalg::{self, M3};
use super::{sigmoid, Camera, Gaussian, GaussianGrad, DILATION, Z_NEAR};
use crate::scalar::Real;

/// Screen-space footprint of one primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    /// Pixel coordinates of the projected centre.
    pub mean: [T; 2],
    /// Upper triangle `(xx, xy, yy)` of the dilated 2D covariance.
    pub cov: [T; 3],
    /// Camera-space `z`.
    pub depth: T,
}

/// Intermediate quantities shared by the forward map and its adjoint.
struct Chain<T> {
    unit_q: [T; 4],
    q_norm: T,
    rot: M3<T>,
    scale: [T; 3],
    /// `rot * diag(scale)`; the world covariance is `m mᵀ`.
    m: M3<T>,
    cov_cam: M3<T>,
    p_cam: [T; 3],
    /// Nonzero entries of the 2x3 projection Jacobian: `j00, j02, j11, j12`.
    jac: [T; 4],
    proj: Projection<T>,
}

fn forward<T: Real>(g: &Gaussian<T>, cam: &Camera<T>) -> Option<Chain<T>> {
    let p_cam = cam.to_camera_space(g.position);
    let [x, y, z] = p_cam;
    if !(z > T::lit(Z_NEAR)) {
        return None;
    }
    let q = g.rotation;
    let q_norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(q_norm > T::zero()) {
        return None;
    }
    let unit_q = q.map(|v| v / q_norm);
    let rot = linalg::quat_to_mat(unit_q);
    let scale = g.log_scale.map(|v| v.exp());
    let m: M3<T> = std::array::from_fn(|i| std::array::from_fn(|j| rot[i][j] * scale[j]));
    let cov_world = linalg::mat_mul(&m, &linalg::transpose(&m));
    let w = &cam.rotation;
    let cov_cam = linalg::mat_mul(&linalg::mat_mul(w, &cov_world), &linalg::transpose(w));

    let iz = T::one() / z;
    let jac = [cam.fx * iz, -cam.fx * x * iz * iz, cam.fy * iz, -cam.fy * y * iz * iz];
    // Rows of J: (j00, 0, j02) and (0, j11, j12).
    let r0 = [jac[0], T::zero(), jac[1]];
    let r1 = [T::zero(), jac[2], jac[3]];
    let c0 = linalg::mat_vec(&cov_cam, r0);
    let c1 = linalg::mat_vec(&cov_cam, r1);
    let dil = T::lit(DILATION);
    let cov = [linalg::dot(r0, c0) + dil, linalg::dot(r0, c1), linalg::dot(r1, c1) + dil];

    let proj = Projection {
        mean: [cam.fx * x * iz + cam.cx, cam.fy * y * iz + cam.cy],
        cov,
        depth: z,
    };
    Some(Chain {
        unit_q,
        q_norm,
        rot,
        scale,
        m,
        cov_cam,
        p_cam,
        jac,
        proj,
    })
}

/// Projects one primitive; `None` when it lies behind the near plane.
pub fn project<T: Real>(g: &Gaussian<T>, cam: &Camera<T>) -> Option<Projection<T>> {
    forward(g, cam).map(|c| c.proj)
}

/// A projected primitive ready for rasterization.
#[derive(Clone, Copy, Debug)]
pub(super) struct Splat<T> {
    pub index: usize,
    pub mean: [T; 2],
    /// Upper triangle of the inverse covariance.
    pub conic: [T; 3],
    pub opacity: T,
    pub color: [T; 3],
    pub depth: T,
    /// Inclusive pixel rectangle `(x0, x1, y0, y1)` outside of which the
    /// splat's alpha is below the skip threshold.
    pub rect: [usize; 4],
}

pub(super) fn splat<T: Real>(index: usize, g: &Gaussian<T>, cam: &Camera<T>) -> Option<Splat<T>> {
    let proj = project(g, cam)?;
    let [a, b, c] = proj.cov;
    let det = a * c - b * b;
    if !(det > T::zero()) {
        return None;
    }
    let opacity = sigmoid(g.opacity_logit);
    // alpha = o * exp(-q/2) >= 1/255  <=>  q <= 2 ln(255 o).
    let reach = T::lit(2.0) * (T::lit(255.0) * opacity).ln();
    if !(reach > T::zero()) {
        return None;
    }
    let slack = T::lit(1.0 + 1e-4);
    let ex = (reach * a).sqrt() * slack;
    let ey = (reach * c).sqrt() * slack;
    let [u, v] = proj.mean;
    let span = |centre: T, extent: T, size: usize| -> Option<(usize, usize)> {
        let lo = (centre - extent).ceil().max(T::zero());
        let hi = (centre + extent).floor().min(T::from_usize_lossy(size - 1));
        if !(lo <= hi) {
            return None;
        }
        Some((lo.to_usize()?, hi.to_usize()?))
    };
    let (x0, x1) = span(u, ex, cam.width)?;
    let (y0, y1) = span(v, ey, cam.height)?;
    Some(Splat {
        index,
        mean: proj.mean,
        conic: [c / det, -b / det, a / det],
        opacity,
        color: g.color.map(Real::clamp01),
        depth: proj.depth,
        rect: [x0, x1, y0, y1],
    })
}

/// Loss gradients with respect to one splat's screen-space quantities.
#[derive(Clone, Copy, Debug, Default)]
pub(super) struct SplatGrad<T> {
    pub mean: [T; 2],
    pub conic: [T; 3],
    pub opacity: T,
    pub color: [T; 3],
}

impl<T: Real> SplatGrad<T> {
    pub fn zero() -> Self {
        Self {
            mean: [T::zero(); 2],
            conic: [T::zero(); 3],
            opacity: T::zero(),
            color: [T::zero(); 3],
        }
    }

    pub fn accumulate(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Adjoint of [`splat`]: maps screen-space gradients back onto the
/// primitive's parameters.
pub(super) fn splat_backward<T: Real>(g: &Gaussian<T>, cam: &Camera<T>, sg: &SplatGrad<T>) -> GaussianGrad<T> {
    let mut out = GaussianGrad::zero();
    let Some(ch) = forward(g, cam) else {
        return out;
    };
    let two = T::lit(2.0);
    let half = T::lit(0.5);

    // Colour is clamped at composite time.
    for k in 0..3 {
        if g.color[k] >= T::zero() && g.color[k] <= T::one() {
            out.color[k] = sg.color[k];
        }
    }
    let o = sigmoid(g.opacity_logit);
    out.opacity_logit = sg.opacity * o * (T::one() - o);

    // conic = cov⁻¹, so d cov = -conic · d conic · conic. The off-diagonal
    // conic gradient is split evenly over the two symmetric entries.
    let [a, b, c] = ch.proj.cov;
    let det = a * c - b * b;
    let q = [[c / det, -b / det], [-b / det, a / det]];
    let gq = [[sg.conic[0], sg.conic[1] * half], [sg.conic[1] * half, sg.conic[2]]];
    let mut g2 = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = T::zero();
            for k in 0..2 {
                for l in 0..2 {
                    acc += q[i][k] * gq[k][l] * q[l][j];
                }
            }
            g2[i][j] = -acc;
        }
    }

    // cov2d = J Σc Jᵀ + dilation.
    let [j00, j02, j11, j12] = ch.jac;
    let jm = [[j00, T::zero(), j02], [T::zero(), j11, j12]];
    let mut g_cov_cam: M3<T> = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for s in 0..3 {
            let mut acc = T::zero();
            for i in 0..2 {
                for j in 0..2 {
                    acc += jm[i][r] * g2[i][j] * jm[j][s];
                }
            }
            g_cov_cam[r][s] = acc;
        }
    }
    // dL/dJ = 2 G J Σc.
    let mut g_jac = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for s in 0..3 {
            let mut acc = T::zero();
            for j in 0..2 {
                for r in 0..3 {
                    acc += g2[i][j] * jm[j][r] * ch.cov_cam[r][s];
                }
            }
            g_jac[i][s] = two * acc;
        }
    }

    let [x, y, z] = ch.p_cam;
    let iz = T::one() / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut g_p = [T::zero(); 3];
    g_p[0] += g_jac[0][2] * (-fx * iz2);
    g_p[1] += g_jac[1][2] * (-fy * iz2);
    g_p[2] += g_jac[0][0] * (-fx * iz2)
        + g_jac[0][2] * (two * fx * x * iz3)
        + g_jac[1][1] * (-fy * iz2)
        + g_jac[1][2] * (two * fy * y * iz3);
    let [gu, gv] = sg.mean;
    g_p[0] += gu * fx * iz;
    g_p[1] += gv * fy * iz;
    g_p[2] += -(gu * fx * x + gv * fy * y) * iz2;
    out.position = linalg::mat_t_vec(&cam.rotation, g_p);

    // Σc = W Σ Wᵀ, Σ = M Mᵀ, M = R(q) diag(s).
    let w = &cam.rotation;
    let g_cov = linalg::mat_mul(&linalg::mat_mul(&linalg::transpose(w), &g_cov_cam), w);
    let g_m = linalg::mat_mul(&g_cov, &ch.m).map(|row| row.map(|v| two * v));
    let mut g_rot: M3<T> = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g_rot[i][j] = g_m[i][j] * ch.scale[j];
            out.log_scale[j] += g_m[i][j] * ch.rot[i][j] * ch.scale[j];
        }
    }
    let g_unit = linalg::quat_to_mat_backward(ch.unit_q, &g_rot);
    let radial: T = (0..4).map(|k| g_unit[k] * ch.unit_q[k]).sum();
    for k in 0..4 {
        out.rotation[k] = (g_unit[k] - ch.unit_q[k] * radial) / ch.q_norm;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axial_camera(f: f64) -> Camera<f64> {
        Camera {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            fx: f,
            fy: f,
            cx: 15.5,
            cy: 11.5,
            width: 32,
            height: 24,
        }
    }

    fn iso(position: [f64; 3], s: f64) -> Gaussian<f64> {
        Gaussian {
            position,
            log_scale: [s.ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            color: [0.5; 3],
        }
    }

    #[test]
    fn axial_isotropic_footprint() {
        let (f, s, d) = (40.0, 0.2, 3.0);
        let p = project(&iso([0.0, 0.0, d], s), &axial_camera(f)).unwrap();
        assert_eq!(p.mean, [15.5, 11.5]);
        let var = (f * s / d).powi(2) + DILATION;
        assert!((p.cov[0] - var).abs() < 1e-12 && (p.cov[2] - var).abs() < 1e-12);
        assert!(p.cov[1].abs() < 1e-12);
        assert_eq!(p.depth, d);
    }

    #[test]
    fn near_plane_culls() {
        let cam = axial_camera(40.0);
        assert!(project(&iso([0.0, 0.0, Z_NEAR], 0.1), &cam).is_none());
        assert!(project(&iso([0.0, 0.0, -1.0], 0.1), &cam).is_none());
        assert!(project(&iso([0.0, 0.0, 0.02], 0.1), &cam).is_some());
    }
}

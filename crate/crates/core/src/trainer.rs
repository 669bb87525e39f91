//! Joint optimization of the splat cloud and the noise field against a set
//! of posed target views.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagekit::{ensure_same_dims, Image, SsimReference};
use crate::noisefield::{backward_image, compose, encode_view, noise_map, noise_map_encoded, NoiseMlp};
use crate::scalar::Real;
use crate::splatter::{self, decode_segment, encode_segment, render, render_backward, Camera, GaussianCloud};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-group Adam learning rates for the splat parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplatLrs {
    pub position: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for SplatLrs {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

impl SplatLrs {
    /// Rate for slot `k` of a primitive's 14-parameter layout.
    fn for_slot(&self, k: usize) -> f64 {
        match k {
            0..=2 => self.position,
            3..=5 => self.log_scale,
            6..=9 => self.rotation,
            10 => self.opacity,
            _ => self.color,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the `1 - SSIM` term; `1 - lambda` goes to L1.
    pub lambda: f64,
    pub iterations: usize,
    pub mlp_lr: f64,
    /// Multiplies the MLP rate at every epoch boundary.
    pub mlp_lr_decay: f64,
    pub splat_lrs: SplatLrs,
    /// Seeds the noise-field initialization.
    pub seed: u64,
    /// Iterations per epoch; `None` means one pass over the views.
    pub epoch_length: Option<usize>,
    /// Train the additive noise field. When off the field is never
    /// evaluated and the prediction is the render alone.
    pub noise_enabled: bool,
    /// Depth along each pixel ray at which the noise field is sampled.
    pub sample_depth: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            iterations: 2000,
            mlp_lr: 1e-4,
            mlp_lr_decay: 0.95,
            splat_lrs: SplatLrs::default(),
            seed: 0,
            epoch_length: None,
            noise_enabled: true,
            sample_depth: crate::noisefield::DEFAULT_SAMPLE_DEPTH,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        let l = &self.splat_lrs;
        for (name, lr) in [
            ("mlp", self.mlp_lr),
            ("position", l.position),
            ("log_scale", l.log_scale),
            ("rotation", l.rotation),
            ("opacity", l.opacity),
            ("color", l.color),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} learning rate must be > 0")));
            }
        }
        if !(self.mlp_lr_decay > 0.0) {
            return Err(Error::InvalidParameter("MLP learning-rate decay must be > 0".into()));
        }
        if self.epoch_length == Some(0) {
            return Err(Error::InvalidParameter("epoch length must be >= 1".into()));
        }
        if !(self.sample_depth > 0.0) {
            return Err(Error::InvalidParameter("noise sample depth must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainView<T: Real> {
    pub image: Image<T>,
    pub camera: Camera<T>,
}

impl<T: Real> TrainView<T> {
    pub fn new(image: Image<T>, camera: Camera<T>) -> Result<Self> {
        if image.dims() != (camera.width, camera.height) {
            return Err(Error::DimensionMismatch {
                left: image.dims(),
                right: (camera.width, camera.height),
            });
        }
        camera.validate()?;
        Ok(Self { image, camera })
    }
}

fn photometric<T: Real>(pred: &Image<T>, gt: &Image<T>, ssim_ref: &SsimReference<T>, lambda: T) -> Result<(T, Image<T>)> {
    ensure_same_dims(pred, gt)?;
    let (s, ds) = ssim_ref.score_with_grad(pred)?;
    let n = T::from_usize_lossy(pred.data().len());
    let mut l1 = T::zero();
    let mut grad = ds;
    let w1 = (T::one() - lambda) / n;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(gt.data()) {
        let d = p - t;
        l1 += d.abs();
        let sign = if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        *g = w1 * sign - lambda * *g;
    }
    let value = (T::one() - lambda) * l1 / n + lambda * (T::one() - s);
    Ok((value, grad))
}

/// `(1 - lambda) * mean|pred - gt| + lambda * (1 - ssim(pred, gt))` and its
/// gradient with respect to `pred`. The L1 subgradient at zero is zero.
pub fn loss<T: Real>(pred: &Image<T>, gt: &Image<T>, lambda: T) -> Result<(T, Image<T>)> {
    ensure_same_dims(pred, gt)?;
    photometric(pred, gt, &SsimReference::new(gt)?, lambda)
}

/// First and second moment estimates of one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Advances the step and returns the two bias corrections.
    fn advance(&mut self) -> (T, T) {
        self.step += 1;
        let t = self.step as i32;
        (
            T::lit(1.0 - ADAM_BETA1.powi(t)),
            T::lit(1.0 - ADAM_BETA2.powi(t)),
        )
    }

    #[inline]
    fn update(&mut self, i: usize, p: &mut T, g: T, lr: T, c1: T, c2: T) {
        let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
        self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
        self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
        let m_hat = self.m[i] / c1;
        let v_hat = self.v[i] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + T::lit(ADAM_EPS));
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: T) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::InvalidParameter(format!(
            "Adam shape mismatch: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    let (c1, c2) = state.advance();
    for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
        state.update(i, p, g, lr, c1, c2);
    }
    Ok(())
}

fn adam_cloud<T: Real>(
    cloud: &mut GaussianCloud<T>,
    grads: &[splatter::GaussianGrad<T>],
    state: &mut AdamState<T>,
    lrs: &[T; splatter::PARAMS_PER_GAUSSIAN],
) {
    let (c1, c2) = state.advance();
    for (gi, (g, d)) in cloud.gaussians.iter_mut().zip(grads).enumerate() {
        let mut p = g.to_array();
        let d = d.to_array();
        for k in 0..splatter::PARAMS_PER_GAUSSIAN {
            state.update(gi * splatter::PARAMS_PER_GAUSSIAN + k, &mut p[k], d[k], lrs[k], c1, c2);
        }
        let mut next = splatter::Gaussian::from_array(p);
        next.color = next.color.map(Real::clamp01);
        *g = next;
    }
}

fn adam_mlp<T: Real>(mlp: &mut NoiseMlp<T>, grad: &NoiseMlp<T>, state: &mut AdamState<T>, lr: T) {
    let (c1, c2) = state.advance();
    let mut offset = 0;
    for (p, g) in mlp.tensors_mut().into_iter().zip(grad.tensors()) {
        for (j, (pv, &gv)) in p.iter_mut().zip(g).enumerate() {
            state.update(offset + j, pv, gv, lr, c1, c2);
        }
        offset += g.len();
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    pub cloud: GaussianCloud<T>,
    pub mlp: NoiseMlp<T>,
    /// Loss of every iteration, before that iteration's update.
    pub history: Vec<T>,
}

/// Round-robin over `views`: render, add the noise map, score against the
/// target, and take one Adam step on both models.
pub fn train<T: Real>(
    cloud: GaussianCloud<T>,
    mlp: NoiseMlp<T>,
    views: &[TrainView<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidParameter("training needs at least one view".into()));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    mlp.validate()?;
    let mut cloud = cloud;
    let mut mlp = mlp;
    let mut history = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok(TrainOutcome { cloud, mlp, history });
    }

    let refs = views
        .iter()
        .map(|v| SsimReference::new(&v.image))
        .collect::<Result<Vec<_>>>()?;
    let t0 = T::lit(cfg.sample_depth);
    let inputs: Vec<Array2<T>> = if cfg.noise_enabled {
        views.iter().map(|v| encode_view(&v.camera, t0)).collect()
    } else {
        Vec::new()
    };
    let lambda = T::lit(cfg.lambda);
    let lrs: [T; splatter::PARAMS_PER_GAUSSIAN] = std::array::from_fn(|k| T::lit(cfg.splat_lrs.for_slot(k)));
    let mut splat_state = AdamState::new(cloud.len() * splatter::PARAMS_PER_GAUSSIAN);
    let mut mlp_state = AdamState::new(mlp.param_count());
    let mut mlp_lr = cfg.mlp_lr;
    let epoch = cfg.epoch_length.unwrap_or(views.len());

    for it in 0..cfg.iterations {
        let vi = it % views.len();
        let view = &views[vi];
        let (w, h) = (view.camera.width, view.camera.height);
        let rendered = render(&cloud, &view.camera)?;
        let (pred, acts) = if cfg.noise_enabled {
            let (noise, acts) = noise_map_encoded(&mlp, &inputs[vi], w, h);
            (compose(&noise, &rendered)?, Some(acts))
        } else {
            (rendered, None)
        };
        let (value, grad) = photometric(&pred, &view.image, &refs[vi], lambda)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        history.push(value);

        let splat_grads = render_backward(&cloud, &view.camera, &grad)?;
        adam_cloud(&mut cloud, &splat_grads, &mut splat_state, &lrs);
        if let Some(acts) = acts {
            let g = backward_image(&mlp, &acts, &grad);
            adam_mlp(&mut mlp, &g, &mut mlp_state, T::lit(mlp_lr));
        }
        if (it + 1) % epoch == 0 {
            mlp_lr *= cfg.mlp_lr_decay;
        }
    }
    Ok(TrainOutcome { cloud, mlp, history })
}

/// Renders every camera, clamped to `[0, 1]`. The noise map is added only
/// when `include_noise` is set.
pub fn render_views<T: Real>(
    cloud: &GaussianCloud<T>,
    mlp: &NoiseMlp<T>,
    cameras: &[Camera<T>],
    include_noise: bool,
    sample_depth: T,
) -> Result<Vec<Image<T>>> {
    cameras
        .iter()
        .map(|cam| {
            let r = render(cloud, cam)?;
            let out = if include_noise {
                compose(&noise_map(mlp, cam, sample_depth), &r)?
            } else {
                r
            };
            Ok(out.clamped())
        })
        .collect()
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model state on disk: header, splat segment, noise-field segment, then a
/// length-prefixed JSON metadata block.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub cloud: GaussianCloud<T>,
    pub mlp: NoiseMlp<T>,
    pub meta: serde_json::Value,
}

pub fn save_checkpoint<T: Real>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in ck.cloud.background {
        buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }
    encode_segment(&ck.cloud.gaussians, &mut buf);
    ck.mlp.encode_segment(&mut buf);
    let meta = serde_json::to_vec(&ck.meta).map_err(|e| Error::json(path, e))?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    crate::io_util::write_atomic(path, &buf)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::corrupt(path, reason);
    if bytes.len() < 20 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let background: [T; 3] = std::array::from_fn(|k| {
        let at = 8 + 4 * k;
        T::lit(f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as f64)
    });
    let mut at = 20;
    let (gaussians, used) = decode_segment::<T>(&bytes[at..]).map_err(bad)?;
    at += used;
    let (mlp, used) = NoiseMlp::<T>::decode_segment(&bytes[at..]).map_err(bad)?;
    at += used;
    let len_bytes = bytes.get(at..at + 4).ok_or_else(|| bad("missing metadata".into()))?;
    let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    at += 4;
    let raw = bytes.get(at..at + len).ok_or_else(|| bad("truncated metadata".into()))?;
    if at + len != bytes.len() {
        return Err(bad("trailing bytes after metadata".into()));
    }
    let meta = serde_json::from_slice(raw).map_err(|e| Error::json(path, e))?;
    Ok(Checkpoint {
        cloud: GaussianCloud { gaussians, background },
        mlp,
        meta,
    })
}

/// `iteration,loss` per line, iterations counted from 1.
pub fn write_loss_csv<T: Real>(path: &Path, history: &[T]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iteration,loss").expect("write to Vec");
    for (i, v) in history.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, v).expect("write to Vec");
    }
    crate::io_util::write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_have_zero_loss() {
        let img = Image::<f64>::from_fn(12, 11, |x, y, c| ((x * 3 + y * 5 + c) % 7) as f64 / 7.0);
        let (v, _) = loss(&img, &img, 0.2).unwrap();
        assert!(v.abs() <= 1e-9);
    }

    #[test]
    fn lambda_zero_is_mean_abs_error() {
        let a = Image::<f64>::from_fn(12, 12, |x, y, c| ((x + y + c) % 5) as f64 / 5.0);
        let b = Image::<f64>::from_fn(12, 12, |x, y, c| ((x * y + c) % 4) as f64 / 4.0);
        let (v, _) = loss(&a, &b, 0.0).unwrap();
        assert!((v - crate::imagekit::mean_abs_error(&a, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0f64, -2.0, 3.0];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut st, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step, 1);
        assert!(adam_step(&mut p, &[0.0; 2], &mut st, 0.1).is_err());
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = vec![0.0f64, 0.0, 0.0];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[3.0, -0.02, 1e-3], &mut st, 0.01).unwrap();
        // m_hat = g and v_hat = g^2 after one step, so the move is lr * g / (|g| + eps).
        for (got, g) in p.iter().zip([3.0f64, -0.02, 1e-3]) {
            let want = -0.01 * g / (g.abs() + ADAM_EPS);
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_follows_scalar_simulation() {
        // Independent scalar Adam on f(x) = x^2 from x = 1 with lr = 0.1.
        let (mut xs, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut x = vec![1.0f64];
        let mut st = AdamState::new(1);
        let mut crossed = false;
        for t in 1..=50 {
            let g = 2.0 * xs;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            let before = xs;
            xs -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);

            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut st, 0.1).unwrap();
            assert!((x[0] - xs).abs() < 1e-12, "step {t}: {} vs {xs}", x[0]);
            // Momentum carries the iterate past zero at step 12; until then
            // every step shrinks |x|.
            crossed |= xs.signum() != before.signum();
            if !crossed {
                assert!(xs.abs() < before.abs());
            }
        }
        assert!(crossed && x[0].abs() < 0.01);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: 1.5, ..Default::default() }.validate().is_err());
        let mut bad = TrainConfig::default();
        bad.splat_lrs.color = 0.0;
        assert!(bad.validate().is_err());
    }
}

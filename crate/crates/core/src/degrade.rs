//! Synthetic capture degradation: camera shake, under-exposure and sensor
//! noise applied to clean renders, plus the on-disk dataset layout shared
//! with the pipeline.
//!
//! A view is degraded as blur → darken → noise: the scene smears during the
//! exposure, the sensor gain maps it into the dark range, and readout noise
//! is added last.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deblur::{convolve, Border, MotionKernel};
use crate::error::{Error, Result};
use crate::imagekit::{read_image, write_image, Image};
use crate::io_util::{read_json, write_json};
use crate::scalar::Real;
use crate::splatter::{render, Camera, Gaussian, GaussianCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradeStep {
    Blur,
    Darken,
    Noise,
}

pub const DEGRADE_ORDER: [DegradeStep; 3] = [DegradeStep::Blur, DegradeStep::Darken, DegradeStep::Noise];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeConfig {
    pub darken_gain: f64,
    pub darken_gamma: f64,
    /// Signal-dependent variance per unit intensity.
    pub shot_noise_scale: f64,
    pub read_noise_sigma: f64,
    pub blur_length: usize,
    /// Degrees, counter-clockwise from the image +x axis.
    pub blur_angle: f64,
    /// Half-width (degrees) of a deterministic per-view spread of the blur
    /// angle. Zero gives every view the same kernel.
    pub angle_jitter: f64,
    pub seed: u64,
    /// Must be blur, darken, noise; present so a reordered config is
    /// rejected rather than silently ignored.
    pub order: Vec<DegradeStep>,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            darken_gain: 0.25,
            darken_gamma: 1.5,
            shot_noise_scale: 2e-4,
            read_noise_sigma: 2e-3,
            blur_length: 5,
            blur_angle: 0.0,
            angle_jitter: 0.0,
            seed: 0,
            order: DEGRADE_ORDER.to_vec(),
        }
    }
}

impl DegradeConfig {
    /// Leaves every image unchanged.
    pub fn identity() -> Self {
        Self {
            darken_gain: 1.0,
            darken_gamma: 1.0,
            shot_noise_scale: 0.0,
            read_noise_sigma: 0.0,
            blur_length: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_darken(self.darken_gain, self.darken_gamma)?;
        if !(self.shot_noise_scale >= 0.0 && self.shot_noise_scale.is_finite())
            || !(self.read_noise_sigma >= 0.0 && self.read_noise_sigma.is_finite())
        {
            return Err(Error::InvalidParameter("noise parameters must be finite and >= 0".into()));
        }
        if self.blur_length == 0 || self.blur_length % 2 == 0 {
            return Err(Error::InvalidParameter(format!("blur length must be odd and >= 1, got {}", self.blur_length)));
        }
        if !self.blur_angle.is_finite() || !(self.angle_jitter >= 0.0 && self.angle_jitter.is_finite()) {
            return Err(Error::InvalidParameter("blur angle and jitter must be finite, jitter >= 0".into()));
        }
        if self.order != DEGRADE_ORDER {
            return Err(Error::InvalidParameter(format!(
                "degradation order is fixed to blur, darken, noise; got {:?}",
                self.order
            )));
        }
        Ok(())
    }

    /// Blur kernel of view `view`. The jitter follows a fixed low-discrepancy
    /// sequence, so the seed only ever changes the noise.
    pub fn kernel_for_view(&self, view: usize) -> Result<MotionKernel> {
        let u = (view as f64 * 0.618_033_988_749_895).fract();
        MotionKernel::new(self.blur_length, self.blur_angle + self.angle_jitter * (2.0 * u - 1.0))
    }
}

fn check_darken(gain: f64, gamma: f64) -> Result<()> {
    if !(gain > 0.0 && gain <= 1.0) {
        return Err(Error::InvalidParameter(format!("darken gain {gain} outside (0, 1]")));
    }
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("darken gamma {gamma} must be >= 1")));
    }
    Ok(())
}

/// `v -> gain * v^gamma`, clamped. Undone on the unsaturated range by the
/// enhancement curve with `alpha = 1/gain - 1`, `gamma' = 1/gamma`.
pub fn darken<T: Real>(img: &Image<T>, gain: f64, gamma: f64) -> Result<Image<T>> {
    check_darken(gain, gamma)?;
    let (g, e) = (T::lit(gain), T::lit(gamma));
    Ok(img.map(|v| (g * v.max(T::zero()).powf(e)).clamp01()))
}

/// Noise stream of `view` under `seed`; views draw independently so they can
/// be generated in any order.
fn noise_rng(seed: u64, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(view as u64);
    rng
}

fn add_noise_with<T: Real>(img: &Image<T>, shot: f64, read: f64, rng: &mut ChaCha8Rng) -> Image<T> {
    if shot == 0.0 && read == 0.0 {
        return img.clone();
    }
    let mut out = img.clone();
    for v in out.data_mut() {
        let s = v.to_f64_lossy();
        let sigma = (shot * s.max(0.0) + read * read).sqrt();
        let z: f64 = StandardNormal.sample(rng);
        *v = T::lit((s + sigma * z).clamp(0.0, 1.0));
    }
    out
}

/// `v + N(0, shot * v + read^2)`, clamped, drawn from the seed's first view
/// stream.
pub fn add_noise<T: Real>(img: &Image<T>, cfg: &DegradeConfig) -> Image<T> {
    add_noise_with(img, cfg.shot_noise_scale, cfg.read_noise_sigma, &mut noise_rng(cfg.seed, 0))
}

/// Linear motion blur. Pixels beyond the border are mirrored, the same
/// model the deconvolvers assume, so blur and deblur close into a loop.
pub fn motion_blur<T: Real>(img: &Image<T>, length: usize, angle: f64) -> Result<Image<T>> {
    let k = MotionKernel::new(length, angle)?;
    Ok(convolve(img, &k, Border::Reflect))
}

/// The full degradation of view `view` applied to an image: blur
/// (mirrored borders), darken, noise.
pub fn degrade_view<T: Real>(clean: &Image<T>, cfg: &DegradeConfig, view: usize) -> Result<Image<T>> {
    cfg.validate()?;
    let blurred = convolve(clean, &cfg.kernel_for_view(view)?, Border::Reflect);
    darken_and_noise(&blurred, cfg, view)
}

fn darken_and_noise<T: Real>(blurred: &Image<T>, cfg: &DegradeConfig, view: usize) -> Result<Image<T>> {
    let dark = darken(blurred, cfg.darken_gain, cfg.darken_gamma)?;
    Ok(add_noise_with(&dark, cfg.shot_noise_scale, cfg.read_noise_sigma, &mut noise_rng(cfg.seed, view)))
}

/// Renders `cam` with `kernel`'s radius of extra scene on every side, blurs
/// and crops back, so border pixels are smeared with what the camera would
/// really have seen rather than with black.
pub fn render_blurred<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera<T>, kernel: &MotionKernel) -> Result<Image<T>> {
    let r = kernel.radius();
    let pad = T::from_usize_lossy(r);
    let wide = Camera {
        cx: cam.cx + pad,
        cy: cam.cy + pad,
        width: cam.width + 2 * r,
        height: cam.height + 2 * r,
        ..cam.clone()
    };
    let big = convolve(&render(cloud, &wide)?.clamped(), kernel, Border::Zero);
    Ok(Image::from_fn(cam.width, cam.height, |x, y, c| big.get(x + r, y + r, c)))
}

/// The degraded observation of training view `view`, as written by
/// [`make_dataset`].
pub fn render_degraded<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    cfg: &DegradeConfig,
    view: usize,
) -> Result<Image<T>> {
    cfg.validate()?;
    darken_and_noise(&render_blurred(cloud, cam, &cfg.kernel_for_view(view)?)?, cfg, view)
}

/// Camera in the JSON layout of `cameras.json`: `R` row-major, `T` such that
/// `x_cam = R x_world + T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    #[serde(rename = "T")]
    pub t: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraRecord {
    pub fn from_camera<T: Real>(cam: &Camera<T>) -> Self {
        let f = |v: T| v.to_f64_lossy();
        Self {
            r: std::array::from_fn(|i| f(cam.rotation[i / 3][i % 3])),
            t: cam.translation.map(f),
            fx: f(cam.fx),
            fy: f(cam.fy),
            cx: f(cam.cx),
            cy: f(cam.cy),
            width: cam.width,
            height: cam.height,
        }
    }

    pub fn to_camera<T: Real>(&self) -> Result<Camera<T>> {
        let cam = Camera {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| T::lit(self.r[3 * i + j]))),
            translation: self.t.map(T::lit),
            fx: T::lit(self.fx),
            fy: T::lit(self.fy),
            cx: T::lit(self.cx),
            cy: T::lit(self.cy),
            width: self.width,
            height: self.height,
        };
        cam.validate()?;
        Ok(cam)
    }
}

pub fn write_cameras<T: Real>(path: &Path, cams: &[Camera<T>]) -> Result<()> {
    let recs: Vec<_> = cams.iter().map(CameraRecord::from_camera).collect();
    write_json(path, &recs)
}

pub fn read_cameras<T: Real>(path: &Path) -> Result<Vec<Camera<T>>> {
    let recs: Vec<CameraRecord> = read_json(path)?;
    recs.iter()
        .enumerate()
        .map(|(i, r)| r.to_camera().map_err(|e| Error::corrupt(path, format!("camera {i}: {e}"))))
        .collect()
}

/// Ground-truth scene: a splat cloud, the training cameras and cameras held
/// out for novel-view evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub cloud: GaussianCloud<f64>,
    pub cameras: Vec<CameraRecord>,
    #[serde(default)]
    pub heldout: Vec<CameraRecord>,
}

impl Scene {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub const TOY_SPHERES: &str = "toy-spheres";

/// Five coloured spheres, 24 splats each, seen by 8 training cameras on a
/// ring and 4 held-out cameras between them; 64x64 pixels.
pub fn toy_spheres() -> Scene {
    const PER_SPHERE: usize = 24;
    let spheres: [([f64; 3], f64, [f64; 3]); 5] = [
        ([0.0, 0.0, 0.0], 0.45, [0.85, 0.3, 0.25]),
        ([0.75, 0.25, 0.35], 0.3, [0.3, 0.75, 0.35]),
        ([-0.7, 0.2, -0.3], 0.32, [0.3, 0.4, 0.9]),
        ([0.2, -0.55, -0.6], 0.25, [0.95, 0.85, 0.35]),
        ([-0.3, 0.55, 0.65], 0.22, [0.8, 0.8, 0.8]),
    ];
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut gaussians = Vec::new();
    for (centre, radius, color) in spheres {
        for i in 0..PER_SPHERE {
            // Fibonacci lattice on the sphere surface.
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / PER_SPHERE as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            let n = [r * th.cos(), y, r * th.sin()];
            // Slight shading so spheres are not flat discs.
            let shade = 0.8 + 0.2 * -n[1];
            gaussians.push(Gaussian {
                position: std::array::from_fn(|k| centre[k] + 0.8 * radius * n[k]),
                log_scale: [(0.38 * radius).ln(); 3],
                rotation: [1.0, 0.0, 0.0, 0.0],
                opacity_logit: 3.0,
                color: color.map(|c| (c * shade).min(1.0)),
            });
        }
    }
    let mut cloud = GaussianCloud::new(gaussians);
    cloud.background = [0.12, 0.12, 0.16];

    let ring = |azimuth_deg: f64, elevation: f64| {
        let a = azimuth_deg.to_radians();
        let eye = [3.2 * a.sin(), elevation, -3.2 * a.cos()];
        let cam = Camera::look_at(eye, [0.0; 3], [0.0, -1.0, 0.0], 64.0, 64, 64).expect("ring camera");
        CameraRecord::from_camera(&cam)
    };
    let cameras = (0..8).map(|i| ring(-70.0 + 20.0 * i as f64, if i % 2 == 0 { -0.4 } else { 0.3 })).collect();
    let heldout = (0..4).map(|i| ring(-50.0 + 40.0 * i as f64, -0.05)).collect();
    Scene { cloud, cameras, heldout }
}

/// Resolves `builtin:<name>` or a scene JSON path.
pub fn load_scene(spec: &str) -> Result<Scene> {
    match spec.strip_prefix("builtin:") {
        Some(TOY_SPHERES) => Ok(toy_spheres()),
        Some(other) => Err(Error::InvalidParameter(format!("unknown builtin scene `{other}`"))),
        None => Scene::load(Path::new(spec)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub index: usize,
    pub clean: String,
    /// Absent for held-out views, which are never degraded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config: DegradeConfig,
    pub cameras: String,
    pub views: Vec<ViewEntry>,
    pub heldout_cameras: String,
    pub heldout: Vec<ViewEntry>,
}

pub const MANIFEST_VERSION: u32 = 1;

fn view_name(dir: &str, i: usize) -> String {
    format!("{dir}/{i:04}.png")
}

/// Renders every camera of `scene`, writes the clean and degraded training
/// views and the clean held-out views under `out_dir`, and returns the
/// manifest that was written beside them.
pub fn make_dataset(scene: &Scene, cfg: &DegradeConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let cams = scene.cameras.iter().map(CameraRecord::to_camera::<f64>).collect::<Result<Vec<_>>>()?;
    let held = scene.heldout.iter().map(CameraRecord::to_camera::<f64>).collect::<Result<Vec<_>>>()?;
    if cams.is_empty() {
        return Err(Error::InvalidParameter("scene has no training cameras".into()));
    }
    for sub in ["clean", "degraded", "heldout"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(d, e))?;
    }
    let views: Vec<ViewEntry> = cams
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let clean = render(&scene.cloud, cam)?.clamped();
            let degraded = render_degraded(&scene.cloud, cam, cfg, i)?;
            let entry = ViewEntry {
                index: i,
                clean: view_name("clean", i),
                degraded: Some(view_name("degraded", i)),
            };
            write_image(out_dir.join(&entry.clean), &clean)?;
            write_image(out_dir.join(entry.degraded.as_ref().expect("set above")), &degraded)?;
            Ok(entry)
        })
        .collect::<Result<_>>()?;
    let heldout: Vec<ViewEntry> = held
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let entry = ViewEntry { index: i, clean: view_name("heldout", i), degraded: None };
            write_image(out_dir.join(&entry.clean), &render(&scene.cloud, cam)?.clamped())?;
            Ok(entry)
        })
        .collect::<Result<_>>()?;
    write_cameras(&out_dir.join("cameras.json"), &cams)?;
    write_cameras(&out_dir.join("heldout_cameras.json"), &held)?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        config: cfg.clone(),
        cameras: "cameras.json".into(),
        views,
        heldout_cameras: "heldout_cameras.json".into(),
        heldout,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A dataset directory read back into memory.
#[derive(Clone, Debug)]
pub struct Dataset<T: Real> {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub cameras: Vec<Camera<T>>,
    pub degraded: Vec<Image<T>>,
    pub clean: Vec<Image<T>>,
    pub heldout_cameras: Vec<Camera<T>>,
    pub heldout: Vec<Image<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&root.join("manifest.json"))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::corrupt(
                root.join("manifest.json"),
                format!("unsupported manifest version {}", manifest.version),
            ));
        }
        let cameras = read_cameras(&root.join(&manifest.cameras))?;
        let heldout_cameras = read_cameras(&root.join(&manifest.heldout_cameras))?;
        if cameras.len() != manifest.views.len() || heldout_cameras.len() != manifest.heldout.len() {
            return Err(Error::corrupt(root.join("manifest.json"), "camera count does not match the view list"));
        }
        let load = |rel: &str, cam: &Camera<T>| -> Result<Image<T>> {
            let img: Image<T> = read_image(root.join(rel))?;
            if img.dims() != (cam.width, cam.height) {
                return Err(Error::corrupt(root.join(rel), "image size differs from its camera"));
            }
            Ok(img)
        };
        let mut degraded = Vec::new();
        let mut clean = Vec::new();
        for (v, cam) in manifest.views.iter().zip(&cameras) {
            let d = v
                .degraded
                .as_deref()
                .ok_or_else(|| Error::corrupt(root.join("manifest.json"), format!("view {} has no degraded image", v.index)))?;
            degraded.push(load(d, cam)?);
            clean.push(load(&v.clean, cam)?);
        }
        let heldout = manifest
            .heldout
            .iter()
            .zip(&heldout_cameras)
            .map(|(v, cam)| load(&v.clean, cam))
            .collect::<Result<_>>()?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            cameras,
            degraded,
            clean,
            heldout_cameras,
            heldout,
        })
    }
}

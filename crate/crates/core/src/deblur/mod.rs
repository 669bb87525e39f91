//! Deblurring stages: blind kernel search for the first pass, prior-guided
//! kernel fitting for later passes, and a hook for an external program.

mod blind;
mod deconv;
mod external;
mod kernel;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use deconv::{richardson_lucy, wiener};
pub use external::apply_external;
pub use kernel::{convolve, convolve_adjoint, Border, MotionKernel};

use crate::error::{Error, Result};
use crate::imagekit::{ensure_same_dims, Image, CHANNELS};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Identity,
    RichardsonLucy,
    Wiener,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeblurStage {
    pub kind: StageKind,
    /// Candidate kernel lengths (odd).
    pub lengths: Vec<usize>,
    /// Candidate kernel angles in degrees.
    pub angles: Vec<f64>,
    pub rl_iterations: usize,
    pub wiener_nsr: f64,
    /// Command line with `{in}`, `{out}` and optionally `{prior}`.
    pub external_command: Option<String>,
}

impl Default for DeblurStage {
    fn default() -> Self {
        Self {
            kind: StageKind::RichardsonLucy,
            lengths: vec![1, 3, 5, 7, 9],
            angles: (0..8).map(|i| 22.5 * i as f64).collect(),
            rl_iterations: 30,
            wiener_nsr: 0.01,
            external_command: None,
        }
    }
}

impl DeblurStage {
    pub fn identity() -> Self {
        Self {
            kind: StageKind::Identity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rl_iterations == 0 {
            return Err(Error::InvalidParameter("rl_iterations must be >= 1".into()));
        }
        if self.lengths.is_empty() || self.angles.is_empty() {
            return Err(Error::InvalidParameter("kernel search grid is empty".into()));
        }
        if !(self.wiener_nsr > 0.0 && self.wiener_nsr.is_finite()) {
            return Err(Error::InvalidParameter("wiener_nsr must be > 0".into()));
        }
        if self.kind == StageKind::External && self.external_command.is_none() {
            return Err(Error::InvalidParameter("external stage needs external_command".into()));
        }
        self.kernel_grid().map(|_| ())
    }

    /// Every distinct grid kernel, shortest first and by increasing angle
    /// within a length. Length 1 is the delta whatever the angle, so it
    /// appears once.
    pub fn kernel_grid(&self) -> Result<Vec<MotionKernel>> {
        let mut lengths = self.lengths.clone();
        lengths.sort_unstable();
        lengths.dedup();
        let mut angles = self.angles.clone();
        angles.sort_by(f64::total_cmp);
        angles.dedup();
        let mut grid = Vec::new();
        for &len in &lengths {
            if len == 1 {
                grid.push(MotionKernel::delta());
                continue;
            }
            for &a in &angles {
                grid.push(MotionKernel::new(len, a)?);
            }
        }
        Ok(grid)
    }

    fn deconvolve<T: Real>(&self, img: &Image<T>, k: &MotionKernel, init: Option<&Image<T>>) -> Result<Image<T>> {
        match self.kind {
            StageKind::Wiener => wiener(img, k, self.wiener_nsr),
            _ => richardson_lucy(img, k, self.rl_iterations, init),
        }
    }
}

/// Index of the smallest score; ties go to the earlier (shorter, then
/// smaller-angle) kernel.
fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeblurOutcome<T: Real> {
    pub image: Image<T>,
    /// `None` for stages that do not pick a kernel.
    pub kernel: Option<MotionKernel>,
    /// Per grid kernel, in grid order; lower is better.
    pub scores: Vec<f64>,
}

/// Blind first-pass deblur: every grid kernel is scored by how well it
/// explains the blurry image's spectrum (see `blind::blur_scores`), and the
/// image is deconvolved with the best one.
pub fn initial_deblur<T: Real>(blurry: &Image<T>, stage: &DeblurStage) -> Result<DeblurOutcome<T>> {
    stage.validate()?;
    match stage.kind {
        StageKind::Identity => Ok(DeblurOutcome { image: blurry.clone(), kernel: None, scores: vec![] }),
        StageKind::External => Ok(DeblurOutcome {
            image: apply_external(blurry, None, stage.external_command.as_deref().expect("validated"))?,
            kernel: None,
            scores: vec![],
        }),
        _ => {
            let grid = stage.kernel_grid()?;
            let scores = blind::blur_scores(blurry, &grid);
            let kernel = grid[argmin(&scores)].clone();
            Ok(DeblurOutcome {
                image: stage.deconvolve(blurry, &kernel, None)?,
                kernel: Some(kernel),
                scores,
            })
        }
    }
}

/// Squared reblur residual `|k * prior - blurry|^2` over the pixels whose
/// kernel footprint stays inside the image, so the border model does not
/// bias the fit. Falls back to the whole image when that region is empty.
pub fn reblur_residual<T: Real>(prior: &Image<T>, blurry: &Image<T>, k: &MotionKernel, margin: usize) -> Result<f64> {
    ensure_same_dims(prior, blurry)?;
    let (w, h) = prior.dims();
    let m = if 2 * margin < w && 2 * margin < h { margin } else { 0 };
    let reblurred = convolve(prior, k, Border::Reflect);
    let mut total = 0.0;
    for y in m..h - m {
        for x in m..w - m {
            for c in 0..CHANNELS {
                let d = reblurred.get(x, y, c).to_f64_lossy() - blurry.get(x, y, c).to_f64_lossy();
                total += d * d;
            }
        }
    }
    Ok(total)
}

/// Prior-guided deblur: the grid kernel that best maps `prior` onto
/// `blurry` is taken as the blur, and `blurry` is deconvolved with it,
/// starting from `prior`.
pub fn guided_deblur<T: Real>(blurry: &Image<T>, prior: &Image<T>, stage: &DeblurStage) -> Result<DeblurOutcome<T>> {
    stage.validate()?;
    ensure_same_dims(blurry, prior)?;
    match stage.kind {
        StageKind::Identity => Ok(DeblurOutcome { image: blurry.clone(), kernel: None, scores: vec![] }),
        StageKind::External => Ok(DeblurOutcome {
            image: apply_external(blurry, Some(prior), stage.external_command.as_deref().expect("validated"))?,
            kernel: None,
            scores: vec![],
        }),
        _ => {
            let grid = stage.kernel_grid()?;
            let margin = grid.iter().map(MotionKernel::radius).max().unwrap_or(0);
            let scores = grid
                .par_iter()
                .map(|k| reblur_residual(prior, blurry, k, margin))
                .collect::<Result<Vec<_>>>()?;
            let best = argmin(&scores);
            let kernel = grid[best].clone();
            Ok(DeblurOutcome {
                image: stage.deconvolve(blurry, &kernel, Some(prior))?,
                kernel: Some(kernel),
                scores,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_one_delta_and_is_ordered() {
        let grid = DeblurStage::default().kernel_grid().unwrap();
        assert_eq!(grid.len(), 1 + 4 * 8);
        assert_eq!(grid[0], MotionKernel::delta());
        assert_eq!((grid[1].length, grid[1].angle), (3, 0.0));
        assert_eq!((grid[32].length, grid[32].angle), (9, 157.5));
    }

    #[test]
    fn argmin_prefers_earlier_on_ties() {
        assert_eq!(argmin(&[2.0, 1.0, 1.0, 3.0]), 1);
    }

    #[test]
    fn identity_stage_passes_through() {
        let img = Image::<f64>::from_fn(8, 8, |x, y, c| ((x + 2 * y + c) % 5) as f64 / 5.0);
        let st = DeblurStage::identity();
        assert_eq!(initial_deblur(&img, &st).unwrap().image, img);
        assert_eq!(guided_deblur(&img, &img.map(|v| v * 0.5), &st).unwrap().image, img);
    }

    #[test]
    fn rejects_bad_stages() {
        for bad in [
            DeblurStage { rl_iterations: 0, ..DeblurStage::default() },
            DeblurStage { lengths: vec![], ..DeblurStage::default() },
            DeblurStage { lengths: vec![4], ..DeblurStage::default() },
            DeblurStage { wiener_nsr: 0.0, ..DeblurStage::default() },
            DeblurStage { kind: StageKind::External, ..DeblurStage::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}

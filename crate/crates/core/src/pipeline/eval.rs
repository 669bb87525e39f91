use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagekit::{psnr, psnr_capped, read_image, ssim, Image};
use crate::io_util::write_atomic;
use crate::splatter::Camera;
use crate::trainer::{load_checkpoint, render_views};

use super::RunRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct ViewMetrics {
    pub name: String,
    /// Capped, so identical images report the sentinel instead of `inf`.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> Option<f64> {
        mean(self.views.iter().map(|v| v.psnr))
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean(self.views.iter().map(|v| v.ssim))
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = it.len();
    (n > 0).then(|| it.sum::<f64>() / n as f64)
}

/// Pairwise metrics; views are named by their index.
pub fn compare_images(pred: &[Image<f64>], gt: &[Image<f64>]) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidParameter(format!(
            "{} predictions for {} ground-truth views",
            pred.len(),
            gt.len()
        )));
    }
    let views = pred
        .par_iter()
        .zip(gt)
        .enumerate()
        .map(|(i, (p, g))| {
            Ok(ViewMetrics {
                name: format!("{i:04}"),
                psnr: psnr_capped(psnr(p, g)?),
                ssim: ssim(p, g)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport { views })
}

fn pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Metrics for every PNG of `pred_dir` against the same-named file in
/// `gt_dir`.
pub fn compare_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport> {
    let views = pngs(pred_dir)?
        .par_iter()
        .map(|p| {
            let name = p.file_name().expect("listed file").to_owned();
            let g = gt_dir.join(&name);
            if !g.exists() {
                return Err(Error::io(&g, std::io::Error::new(std::io::ErrorKind::NotFound, "missing ground truth")));
            }
            let (a, b): (Image<f64>, Image<f64>) = (read_image(p)?, read_image(&g)?);
            Ok(ViewMetrics {
                name: Path::new(&name).file_stem().expect("png name").to_string_lossy().into_owned(),
                psnr: psnr_capped(psnr(&a, &b)?),
                ssim: ssim(&a, &b)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport { views })
}

/// Renders `cameras` from the checkpoint (splats only, the noise field is
/// not part of the scene) and scores them against `gt`.
pub fn evaluate(checkpoint: &Path, cameras: &[Camera<f64>], gt: &[Image<f64>]) -> Result<EvalReport> {
    if cameras.len() != gt.len() {
        return Err(Error::InvalidParameter(format!(
            "{} cameras but {} ground-truth views",
            cameras.len(),
            gt.len()
        )));
    }
    let ck = load_checkpoint::<f64>(checkpoint)?;
    let pred = render_views(&ck.cloud, &ck.mlp, cameras, false, crate::noisefield::DEFAULT_SAMPLE_DEPTH)?;
    compare_images(&pred, gt)
}

/// `view,psnr,ssim` per view, then a `mean` row when there is any view.
pub fn write_metrics_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut text = String::from("view,psnr,ssim\n");
    for v in &report.views {
        writeln!(text, "{},{},{}", v.name, v.psnr, v.ssim).expect("write to String");
    }
    if let (Some(p), Some(s)) = (report.mean_psnr(), report.mean_ssim()) {
        writeln!(text, "mean,{p},{s}").expect("write to String");
    }
    write_atomic(path, text.as_bytes())
}

/// Scores a run's final model on `cameras` against `gt_dir/NNNN.png` (one
/// file per camera, in order) and writes the metrics CSV.
pub fn evaluate_run(rec: &RunRecord, gt_dir: &Path, cameras: &[Camera<f64>], csv: &Path) -> Result<EvalReport> {
    let gt = (0..cameras.len())
        .map(|v| {
            let p = gt_dir.join(format!("{v:04}.png"));
            if !p.exists() {
                return Err(Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "missing ground truth")));
            }
            read_image(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&rec.final_checkpoint(), cameras, &gt)?;
    write_metrics_csv(csv, &report)?;
    Ok(report)
}

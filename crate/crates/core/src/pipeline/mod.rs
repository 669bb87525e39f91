//! End-to-end orchestration: brightness anchors, deblurring, noise-aware
//! reconstruction and parameter recovery, round by round, with every
//! intermediate written to a run directory that can be resumed.
//!
//! Round `i` reads its inputs (the deblurred targets `D^i` and, after the
//! first round, the previous round's checkpoint) back from disk, so an
//! uninterrupted run and one resumed after any committed round execute the
//! same computation on the same bytes.

mod eval;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use eval::{compare_dirs, compare_images, evaluate, evaluate_run, write_metrics_csv, EvalReport, ViewMetrics};

use crate::deblur::{guided_deblur, initial_deblur, DeblurStage, MotionKernel};
use crate::degrade::Dataset;
use crate::devo::{search_params, DeConfig};
use crate::enhance::{enhance, log_interpolate, EnhanceParams};
use crate::error::{Error, Result};
use crate::imagekit::{read_image, write_image, Image};
use crate::io_util::{read_json, write_atomic, write_json};
use crate::noisefield::NoiseMlp;
use crate::splatter::{init_cloud, logit, sigmoid, Camera, CloudSeed, GaussianCloud, INIT_OPACITY};
use crate::trainer::{load_checkpoint, render_views, save_checkpoint, train, write_loss_csv, Checkpoint, TrainConfig, TrainView};

pub const RUN_MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "run.log";
pub const TIMINGS_FILE: &str = "timings.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.dsck";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of brightness anchors N.
    pub rounds: usize,
    pub p0: EnhanceParams<f64>,
    /// Target enhancement; the default undoes the default degradation.
    pub pn: EnhanceParams<f64>,
    pub de: DeConfig,
    pub train: TrainConfig,
    pub deblur: DeblurStage,
    /// Primitives in the first round's cloud.
    pub splat_count: usize,
    /// Half-width of the cube the first cloud is scattered in.
    pub init_extent: f64,
    pub enable_pie: bool,
    pub enable_ne: bool,
    pub seed: u64,
    /// Where `run` writes when the caller does not say otherwise.
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            p0: EnhanceParams::initial(),
            pn: EnhanceParams { alpha: 3.0, gamma: 1.0 / 1.5 },
            de: DeConfig::default(),
            train: TrainConfig::default(),
            deblur: DeblurStage::default(),
            splat_count: 200,
            init_extent: 1.0,
            enable_pie: true,
            enable_ne: true,
            seed: 0,
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be >= 1".into()));
        }
        self.pn.validate()?;
        self.p0.validate()?;
        if self.splat_count == 0 {
            return Err(Error::InvalidParameter("splat_count must be >= 1".into()));
        }
        if !(self.init_extent > 0.0 && self.init_extent.is_finite()) {
            return Err(Error::InvalidParameter("init_extent must be > 0".into()));
        }
        self.de.validate()?;
        self.train.validate()?;
        self.deblur.validate()
    }

    /// Rounds actually executed: without progressive enhancement there is a
    /// single round at the target brightness.
    pub fn effective_rounds(&self) -> usize {
        if self.enable_pie {
            self.rounds
        } else {
            1
        }
    }

    /// Enhancement parameters of anchors `H^1..H^N`.
    pub fn anchor_params(&self) -> Result<Vec<EnhanceParams<f64>>> {
        log_interpolate(&self.p0, &self.pn, self.effective_rounds())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeblurKind {
    Initial,
    Guided,
}

/// What one round consumed and produced, as recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub anchor: EnhanceParams<f64>,
    /// How this round's training targets were deblurred.
    pub deblur: DeblurKind,
    /// Kernel picked per view for this round's targets, when the stage
    /// picks one.
    pub kernels: Vec<Option<MotionKernel>>,
    pub final_loss: Option<f64>,
    /// Per-view recovered parameters and their average, absent at i = N.
    pub per_view_params: Vec<EnhanceParams<f64>>,
    pub p_r: Option<EnhanceParams<f64>>,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub config: PipelineConfig,
    pub data_dir: PathBuf,
    pub views: usize,
    pub rounds: Vec<RoundRecord>,
    /// Steps 1 and 2 are done and their artifacts are on disk.
    pub prepared: bool,
    pub finished: bool,
    /// Every committed step line of `run.log`, in order.
    pub steps: Vec<String>,
}

impl RunManifest {
    pub fn completed_rounds(&self) -> usize {
        self.rounds.iter().take_while(|r| r.completed).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub step: String,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Wall-clock time per executed step; kept out of the manifest so that
    /// the manifest is reproducible.
    pub timings: Vec<Timing>,
}

impl RunRecord {
    pub fn round_dir(&self, round: usize) -> PathBuf {
        round_dir(&self.dir, round)
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.round_dir(self.manifest.rounds.len()).join(CHECKPOINT_FILE)
    }
}

pub fn round_dir(run_dir: &Path, round: usize) -> PathBuf {
    run_dir.join(format!("round_{round:02}"))
}

fn view_file(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("{view:04}.png"))
}

/// splitmix64 over the run seed and a small tuple of indices, so every
/// random stream of a run derives from the one seed.
fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_views(dir: &Path, images: &[Image<f64>]) -> Result<()> {
    mkdir(dir)?;
    images.par_iter().enumerate().try_for_each(|(v, img)| write_image(view_file(dir, v), img))
}

fn read_views(dir: &Path, count: usize) -> Result<Vec<Image<f64>>> {
    (0..count).into_par_iter().map(|v| read_image(view_file(dir, v))).collect()
}

/// Mean colour of the outermost pixel ring over all views: the backdrop the
/// splats are composited on.
fn border_color(images: &[Image<f64>]) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for img in images {
        let (w, h) = img.dims();
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                    for (c, s) in sum.iter_mut().enumerate() {
                        *s += img.get(x, y, c);
                    }
                    n += 1;
                }
            }
        }
    }
    sum.map(|s| if n > 0 { s / n as f64 } else { 0.0 })
}

/// Next round's starting cloud: geometry and colour carry over; scale and
/// opacity move halfway back to their initial values so primitives can
/// re-settle under the new brightness.
fn warm_start(prev: &GaussianCloud<f64>, init_log_scale: f64) -> GaussianCloud<f64> {
    let mut cloud = prev.clone();
    for g in &mut cloud.gaussians {
        for s in &mut g.log_scale {
            *s = 0.5 * (*s + init_log_scale);
        }
        let p = 0.5 * (sigmoid(g.opacity_logit) + INIT_OPACITY);
        g.opacity_logit = logit(p);
    }
    cloud
}

struct Run<'a> {
    dir: PathBuf,
    cfg: PipelineConfig,
    manifest: RunManifest,
    timings: Vec<Timing>,
    data: &'a Dataset<f64>,
    /// `anchors[i - 1][view]` is `H^i` of that view.
    anchors: Vec<Vec<Image<f64>>>,
}

impl Run<'_> {
    fn n(&self) -> usize {
        self.manifest.rounds.len()
    }

    fn views(&self) -> usize {
        self.data.cameras.len()
    }

    fn save_manifest(&self) -> Result<()> {
        write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)?;
        write_json(&self.dir.join(TIMINGS_FILE), &self.timings)
    }

    /// Appends a line to the live log; it becomes permanent when the
    /// surrounding round commits.
    fn log_line(&self, pending: &mut Vec<String>, line: String) -> Result<()> {
        log::info!("{line}");
        pending.push(line);
        self.rewrite_log(pending)
    }

    fn rewrite_log(&self, pending: &[String]) -> Result<()> {
        let mut text = String::new();
        for l in self.manifest.steps.iter().chain(pending) {
            writeln!(text, "{l}").expect("write to String");
        }
        write_atomic(&self.dir.join(LOG_FILE), text.as_bytes())
    }

    fn timed<R>(&mut self, step: String, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        let start = Instant::now();
        let out = f(self)?;
        self.timings.push(Timing { step, seconds: start.elapsed().as_secs_f64() });
        Ok(out)
    }

    fn commit(&mut self, pending: Vec<String>) -> Result<()> {
        self.manifest.steps.extend(pending);
        self.save_manifest()?;
        self.rewrite_log(&[])
    }

    /// Step 1 (anchors of every round) and step 2 (initial deblur of `H^1`).
    fn prepare(&mut self) -> Result<()> {
        let mut pending = Vec::new();
        self.log_line(&mut pending, format!("step 1 anchors n={}", self.n()))?;
        for i in 1..=self.n() {
            write_views(&round_dir(&self.dir, i).join("anchors"), &self.anchors[i - 1])
                .map_err(|e| e.at_step(i, 1))?;
        }
        self.log_line(&mut pending, "step 2 initial_deblur".into())?;
        let stage = self.cfg.deblur.clone();
        let outcomes = self.timed("step 2".into(), |run| {
            run.anchors[0]
                .par_iter()
                .map(|h| initial_deblur(h, &stage))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_step(1, 2))
        })?;
        let images: Vec<Image<f64>> = outcomes.iter().map(|o| o.image.clone()).collect();
        write_views(&round_dir(&self.dir, 1).join("deblurred"), &images).map_err(|e| e.at_step(1, 2))?;
        self.manifest.rounds[0].kernels = outcomes.into_iter().map(|o| o.kernel).collect();
        self.manifest.prepared = true;
        self.commit(pending)
    }

    /// Step 3: train on `D^i`, checkpoint `V^i`, render `R^i`.
    fn reconstruct(&mut self, i: usize, pending: &mut Vec<String>) -> Result<(Checkpoint<f64>, Vec<Image<f64>>)> {
        let rd = round_dir(&self.dir, i);
        self.log_line(pending, format!("round {i} step 3 reconstruct"))?;
        let targets = read_views(&rd.join("deblurred"), self.views())?;
        let init = init_cloud(
            &CloudSeed::Random {
                count: self.cfg.splat_count,
                min: [-self.cfg.init_extent; 3],
                max: [self.cfg.init_extent; 3],
            },
            derive_seed(self.cfg.seed, 1, 0),
        )?;
        let mut cloud = if i == 1 {
            init.clone()
        } else {
            let prev = load_checkpoint::<f64>(&round_dir(&self.dir, i - 1).join(CHECKPOINT_FILE))?;
            warm_start(&prev.cloud, init.gaussians[0].log_scale[0])
        };
        cloud.background = border_color(&targets);
        let mut tcfg = self.cfg.train.clone();
        tcfg.noise_enabled = self.cfg.enable_ne;
        tcfg.seed = derive_seed(self.cfg.seed, 2, i as u64);
        let mlp = if self.cfg.enable_ne {
            NoiseMlp::init(tcfg.seed)
        } else {
            NoiseMlp::init(tcfg.seed).zeros_like()
        };
        let views = targets
            .into_iter()
            .zip(&self.data.cameras)
            .map(|(img, cam)| TrainView::new(img, cam.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = train(cloud, mlp, &views, &tcfg)?;
        write_loss_csv(&rd.join(LOSS_FILE), &out.history)?;
        let ck_path = rd.join(CHECKPOINT_FILE);
        save_checkpoint(
            &ck_path,
            &Checkpoint {
                cloud: out.cloud,
                mlp: out.mlp,
                meta: serde_json::json!({
                    "round": i,
                    "iterations": tcfg.iterations,
                    "final_loss": out.history.last(),
                    "noise_enabled": tcfg.noise_enabled,
                }),
            },
        )?;
        self.manifest.rounds[i - 1].final_loss = out.history.last().copied();
        // Continue from the stored model so nothing depends on precision
        // that a resumed run would not have.
        let ck = load_checkpoint::<f64>(&ck_path)?;
        let renders = render_views(&ck.cloud, &ck.mlp, &self.data.cameras, false, self.cfg.train.sample_depth)?;
        write_views(&rd.join("renders"), &renders)?;
        Ok((ck, renders))
    }

    /// Step 4: recover `P_R` from `R^i` against `H^{i+1}` and re-enhance.
    fn recover(&mut self, i: usize, renders: &[Image<f64>], pending: &mut Vec<String>) -> Result<Vec<Image<f64>>> {
        self.log_line(pending, format!("round {i} step 4 search_params"))?;
        let targets = &self.anchors[i];
        let de = &self.cfg.de;
        let seed = self.cfg.seed;
        let found = renders
            .par_iter()
            .zip(targets)
            .enumerate()
            .map(|(v, (r, h))| {
                let cfg = DeConfig { seed: derive_seed(seed, 3, (i * 1_000_003 + v) as u64), ..de.clone() };
                search_params(r, h, &cfg).map(|o| o.params)
            })
            .collect::<Result<Vec<_>>>()?;
        // Fixed view order, so the average is reproducible.
        let k = found.len() as f64;
        let p_r = EnhanceParams {
            alpha: found.iter().map(|p| p.alpha).sum::<f64>() / k,
            gamma: found.iter().map(|p| p.gamma).sum::<f64>() / k,
        };
        p_r.validate()?;
        let rec = &mut self.manifest.rounds[i - 1];
        rec.per_view_params = found;
        rec.p_r = Some(p_r);
        let hr = renders.iter().map(|r| enhance(r, &p_r)).collect::<Result<Vec<_>>>()?;
        write_views(&round_dir(&self.dir, i).join("reenhanced"), &hr)?;
        Ok(hr)
    }

    /// Step 5: `D^{i+1}` from `H^{i+1}` guided by `HR^{i+1}`.
    fn guided(&mut self, i: usize, hr: &[Image<f64>], pending: &mut Vec<String>) -> Result<()> {
        self.log_line(pending, format!("round {i} step 5 guided_deblur"))?;
        let stage = &self.cfg.deblur;
        let outcomes = self.anchors[i]
            .par_iter()
            .zip(hr)
            .map(|(h, prior)| guided_deblur(h, prior, stage))
            .collect::<Result<Vec<_>>>()?;
        let images: Vec<Image<f64>> = outcomes.iter().map(|o| o.image.clone()).collect();
        write_views(&round_dir(&self.dir, i + 1).join("deblurred"), &images)?;
        self.manifest.rounds[i].kernels = outcomes.into_iter().map(|o| o.kernel).collect();
        Ok(())
    }

    fn round(&mut self, i: usize) -> Result<()> {
        let mut pending = Vec::new();
        let n = self.n();
        let (_, renders) = self.timed(format!("round {i} step 3"), |run| {
            run.reconstruct(i, &mut pending).map_err(|e| e.at_step(i, 3))
        })?;
        if i < n {
            let hr = self.timed(format!("round {i} step 4"), |run| {
                run.recover(i, &renders, &mut pending).map_err(|e| e.at_step(i, 4))
            })?;
            self.timed(format!("round {i} step 5"), |run| {
                run.guided(i, &hr, &mut pending).map_err(|e| e.at_step(i, 5))
            })?;
        } else {
            // H^{N+1} does not exist and HR^{N+1} would feed only the
            // skipped deblur, so both steps are skipped at the last round.
            self.log_line(&mut pending, format!("round {i} step 4 skipped"))?;
            self.log_line(&mut pending, format!("round {i} step 5 skipped"))?;
        }
        self.manifest.rounds[i - 1].completed = true;
        self.commit(pending)
    }

    /// Step 6: final renders of the training and held-out cameras, held-out
    /// metrics and the combined loss log.
    fn finish(&mut self) -> Result<()> {
        let n = self.n();
        let mut pending = Vec::new();
        self.log_line(&mut pending, "step 6 final_render".into())?;
        let ck = load_checkpoint::<f64>(&round_dir(&self.dir, n).join(CHECKPOINT_FILE))?;
        let depth = self.cfg.train.sample_depth;
        let fin = self.dir.join("final");
        write_views(&fin.join("renders"), &render_views(&ck.cloud, &ck.mlp, &self.data.cameras, false, depth)?)?;
        let held = render_views(&ck.cloud, &ck.mlp, &self.data.heldout_cameras, false, depth)?;
        write_views(&fin.join("heldout"), &held)?;
        let report = compare_images(&held, &self.data.heldout)?;
        write_metrics_csv(&self.dir.join(METRICS_FILE), &report)?;

        let mut loss = String::from("round,iteration,loss\n");
        for r in 1..=n {
            let path = round_dir(&self.dir, r).join(LOSS_FILE);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for line in text.lines().skip(1) {
                writeln!(loss, "{r},{line}").expect("write to String");
            }
        }
        write_atomic(&self.dir.join(LOSS_FILE), loss.as_bytes())?;
        self.manifest.finished = true;
        self.commit(pending)
    }

    fn drive(&mut self, stop_after: usize) -> Result<()> {
        if !self.manifest.prepared {
            self.prepare()?;
        }
        for i in self.manifest.completed_rounds() + 1..=self.n().min(stop_after) {
            self.round(i)?;
        }
        if stop_after >= self.n() && !self.manifest.finished {
            self.timed("step 6".into(), |run| run.finish().map_err(|e| e.at_step(run.n(), 6)))?;
        }
        Ok(())
    }
}

fn anchors_for(cfg: &PipelineConfig, data: &Dataset<f64>) -> Result<Vec<Vec<Image<f64>>>> {
    cfg.anchor_params()?
        .iter()
        .map(|p| data.degraded.iter().map(|l| enhance(l, p)).collect())
        .collect::<Result<_>>()
        .map_err(|e: Error| e.at_step(1, 1))
}

fn execute(
    dir: PathBuf,
    manifest: RunManifest,
    timings: Vec<Timing>,
    data: &Dataset<f64>,
    stop_after: usize,
) -> Result<RunRecord> {
    let cfg = manifest.config.clone();
    let anchors = anchors_for(&cfg, data)?;
    let mut run = Run { dir, cfg, manifest, timings, data, anchors };
    run.rewrite_log(&[])?;
    run.drive(stop_after)?;
    Ok(RunRecord { dir: run.dir, manifest: run.manifest, timings: run.timings })
}

/// Runs the whole algorithm on the dataset at `data_dir`, writing into
/// `out_dir` (which should be empty or absent).
pub fn run(data_dir: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<RunRecord> {
    run_partial(data_dir, cfg, out_dir, usize::MAX)
}

/// Like [`run`], but stops once round `stop_after` is committed, leaving a
/// run directory that [`resume`] continues.
pub fn run_partial(data_dir: &Path, cfg: &PipelineConfig, out_dir: &Path, stop_after: usize) -> Result<RunRecord> {
    cfg.validate()?;
    let data = Dataset::<f64>::load(data_dir)?;
    if data.cameras.is_empty() {
        return Err(Error::InvalidParameter("dataset has no training views".into()));
    }
    mkdir(out_dir)?;
    let data_dir = data_dir.canonicalize().map_err(|e| Error::io(data_dir, e))?;
    let params = cfg.anchor_params()?;
    let rounds = params
        .iter()
        .enumerate()
        .map(|(k, p)| RoundRecord {
            round: k + 1,
            anchor: *p,
            deblur: if k == 0 { DeblurKind::Initial } else { DeblurKind::Guided },
            kernels: Vec::new(),
            final_loss: None,
            per_view_params: Vec::new(),
            p_r: None,
            completed: false,
        })
        .collect();
    let manifest = RunManifest {
        version: RUN_MANIFEST_VERSION,
        config: cfg.clone(),
        data_dir,
        views: data.cameras.len(),
        rounds,
        prepared: false,
        finished: false,
        steps: Vec::new(),
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    execute(out_dir.to_path_buf(), manifest, Vec::new(), &data, stop_after)
}

/// Reads a run directory's manifest, checking that it is one.
pub fn load_run(run_dir: &Path) -> Result<RunRecord> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::corrupt(path, "no run manifest (not a run directory?)"));
    }
    let manifest: RunManifest = read_json(&path)?;
    if manifest.version != RUN_MANIFEST_VERSION {
        return Err(Error::corrupt(path, format!("unsupported run manifest version {}", manifest.version)));
    }
    if manifest.rounds.len() != manifest.config.effective_rounds() {
        return Err(Error::corrupt(path, "round list does not match the configuration"));
    }
    let timings = match std::fs::read(run_dir.join(TIMINGS_FILE)) {
        Ok(_) => read_json(&run_dir.join(TIMINGS_FILE))?,
        Err(_) => Vec::new(),
    };
    Ok(RunRecord { dir: run_dir.to_path_buf(), manifest, timings })
}

/// Continues a run from its first uncommitted step. A finished run is
/// returned unchanged.
pub fn resume(run_dir: &Path) -> Result<RunRecord> {
    let rec = load_run(run_dir)?;
    if rec.manifest.finished {
        return Ok(rec);
    }
    rec.manifest.config.validate()?;
    for r in 1..=rec.manifest.completed_rounds() {
        let ck = round_dir(run_dir, r).join(CHECKPOINT_FILE);
        load_checkpoint::<f64>(&ck)?;
    }
    let data = Dataset::<f64>::load(&rec.manifest.data_dir)?;
    if data.cameras.len() != rec.manifest.views {
        return Err(Error::corrupt(run_dir.join(MANIFEST_FILE), "dataset view count changed since the run started"));
    }
    execute(rec.dir, rec.manifest, rec.timings, &data, usize::MAX)
}

/// Cameras of a run's dataset, for rendering or evaluation.
pub fn run_cameras(rec: &RunRecord) -> Result<(Vec<Camera<f64>>, Vec<Camera<f64>>)> {
    let data = Dataset::<f64>::load(&rec.manifest.data_dir)?;
    Ok((data.cameras, data.heldout_cameras))
}

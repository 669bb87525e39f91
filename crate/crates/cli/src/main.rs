use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use darksplat::degrade::{load_scene, make_dataset, read_cameras, DegradeConfig};
use darksplat::devo::{search_params, DeConfig};
use darksplat::imagekit::{read_image, write_image, Image};
use darksplat::pipeline::{self, compare_dirs, write_metrics_csv, PipelineConfig};
use darksplat::trainer::{load_checkpoint, render_views};

#[derive(Parser)]
#[command(name = "darksplat", version, about = "Low-light, blurry multi-view reconstruction with Gaussian splats")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene and write a clean/degraded dataset.
    Degrade {
        /// Scene JSON, or `builtin:toy-spheres`.
        #[arg(long)]
        scene: String,
        /// Degradation config JSON; defaults when omitted.
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full enhancement / deblur / reconstruction loop.
    Pipeline {
        #[arg(long)]
        data: PathBuf,
        /// Pipeline config JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Disable progressive enhancement (single round at the target).
        #[arg(long)]
        no_pie: bool,
        /// Disable the noise field.
        #[arg(long)]
        no_ne: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Continue an interrupted pipeline run.
    Resume {
        #[arg(long)]
        run: PathBuf,
    },
    /// Render a checkpoint from the cameras of a `cameras.json`.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM of every PNG in `--pred` against the same name in `--gt`.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Recover the enhancement that maps `--render` onto `--target`.
    SearchParams {
        #[arg(long)]
        render: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Degrade { scene, cfg, out, seed } => {
            let mut cfg: DegradeConfig = match cfg {
                Some(p) => read_json(&p)?,
                None => DegradeConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let scene = load_scene(&scene)?;
            let manifest = make_dataset(&scene, &cfg, &out)?;
            println!("wrote {} views ({} held out) to {}", manifest.views.len(), manifest.heldout.len(), out.display());
        }
        Command::Pipeline { data, config, out, rounds, no_pie, no_ne, seed } => {
            let mut cfg: PipelineConfig = match config {
                Some(p) => read_json(&p)?,
                None => PipelineConfig::default(),
            };
            if let Some(n) = rounds {
                cfg.rounds = n;
            }
            if no_pie {
                cfg.enable_pie = false;
            }
            if no_ne {
                cfg.enable_ne = false;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .context("no output directory: pass --out or set output_dir in the config")?;
            let rec = pipeline::run(&data, &cfg, &out)?;
            report_run(&rec);
        }
        Command::Resume { run } => {
            let rec = pipeline::resume(&run)?;
            report_run(&rec);
        }
        Command::Render { checkpoint, cameras, out } => {
            let ck = load_checkpoint::<f64>(&checkpoint)?;
            let cams = read_cameras::<f64>(&cameras)?;
            let depth = darksplat::noisefield::DEFAULT_SAMPLE_DEPTH;
            let images = render_views(&ck.cloud, &ck.mlp, &cams, false, depth)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (i, img) in images.iter().enumerate() {
                write_image(out.join(format!("{i:04}.png")), img)?;
            }
            println!("rendered {} views to {}", images.len(), out.display());
        }
        Command::Metrics { pred, gt, csv } => {
            let report = compare_dirs(&pred, &gt)?;
            write_metrics_csv(&csv, &report)?;
            match (report.mean_psnr(), report.mean_ssim()) {
                (Some(p), Some(s)) => println!("{} views: mean PSNR {p:.3} dB, mean SSIM {s:.4}", report.views.len()),
                _ => println!("no views"),
            }
        }
        Command::SearchParams { render, target, seed } => {
            let r: Image<f64> = read_image(&render)?;
            let t: Image<f64> = read_image(&target)?;
            let cfg = DeConfig { seed: seed.unwrap_or(0), ..DeConfig::default() };
            let out = search_params(&r, &t, &cfg)?;
            println!("{},{},{},{}", out.params.alpha, out.params.gamma, out.loss, out.iterations);
        }
    }
    Ok(())
}

fn report_run(rec: &pipeline::RunRecord) {
    println!(
        "run in {}: {}/{} rounds complete",
        rec.dir.display(),
        rec.manifest.completed_rounds(),
        rec.manifest.rounds.len()
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

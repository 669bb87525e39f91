use std::path::Path;
use std::process::{Command, Output};

use darksplat::degrade::darken;
use darksplat::imagekit::{read_image, write_image, Image};

fn darksplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darksplat")).args(args).output().expect("spawn darksplat")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&darksplat(&[])), 1);
    assert_eq!(code(&darksplat(&["frobnicate"])), 1);
    assert_eq!(code(&darksplat(&["metrics", "--pred", "a"])), 1);
    assert_eq!(code(&darksplat(&["degrade", "--scene", "x", "--out", "y", "--seed", "minus-one"])), 1);
    assert_eq!(code(&darksplat(&["--help"])), 0);
    assert_eq!(code(&darksplat(&["pipeline", "--help"])), 0);
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = darksplat(&["degrade", "--scene", "builtin:teapot", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("teapot"));
    let missing = dir.path().join("nope");
    assert_eq!(code(&darksplat(&["metrics", "--pred", s(&missing), "--gt", s(&missing), "--csv", "x.csv"])), 2);
    assert_eq!(code(&darksplat(&["resume", "--run", s(dir.path())])), 2);
}

#[test]
fn degrade_then_metrics_on_identical_views() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = darksplat(&["degrade", "--scene", "builtin:toy-spheres", "--out", s(&data), "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);

    let csv = dir.path().join("m.csv");
    let clean = data.join("clean");
    assert_eq!(code(&darksplat(&["metrics", "--pred", s(&clean), "--gt", s(&clean), "--csv", s(&csv)])), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "view,psnr,ssim");
    assert_eq!(lines.len(), 1 + 8 + 1);
    assert_eq!(*lines.last().unwrap(), "mean,99,1");
}

#[test]
fn search_params_prints_one_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let clean = Image::<f64>::from_fn(24, 24, |x, y, c| (0.15 + 0.03 * x as f64 + 0.01 * y as f64 + 0.1 * c as f64).min(0.95));
    let dark = darken(&clean, 0.4, 1.3).unwrap();
    let (r, t) = (dir.path().join("r.png"), dir.path().join("t.png"));
    write_image(&r, &dark).unwrap();
    write_image(&t, &clean).unwrap();
    let args = ["search-params", "--render", s(&r), "--target", s(&t), "--seed", "7"];
    let out = darksplat(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let row = stdout(&out);
    let fields: Vec<f64> = row.trim().split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields.len(), 4);
    assert!(fields[0] > 0.0 && fields[1] < 1.0, "{row}");
    assert!(fields[2].is_finite() && fields[3] >= 1.0);
    assert_eq!(stdout(&darksplat(&args)), row);
}

#[test]
fn pipeline_render_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&darksplat(&["degrade", "--scene", "builtin:toy-spheres", "--out", s(&data)])), 0);
    let cfg = dir.path().join("pipeline.json");
    std::fs::write(&cfg, r#"{"train": {"iterations": 4}, "de": {"max_iterations": 2}, "splat_count": 20}"#).unwrap();
    let run = dir.path().join("run");
    let out = darksplat(&["pipeline", "--data", s(&data), "--config", s(&cfg), "--out", s(&run), "--no-pie", "--no-ne"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("1/1 rounds"));
    let ck = run.join("round_01").join("checkpoint.dsck");
    assert!(ck.exists());

    let renders = dir.path().join("renders");
    let cams = data.join("heldout_cameras.json");
    let out = darksplat(&["render", "--checkpoint", s(&ck), "--cameras", s(&cams), "--out", s(&renders)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let first: Image<f64> = read_image(renders.join("0000.png")).unwrap();
    assert_eq!((first.width(), first.height()), (64, 64));
    assert_eq!(std::fs::read_dir(&renders).unwrap().count(), 4);

    let before = std::fs::read(run.join("manifest.json")).unwrap();
    assert_eq!(code(&darksplat(&["resume", "--run", s(&run)])), 0);
    assert_eq!(std::fs::read(run.join("manifest.json")).unwrap(), before);
}

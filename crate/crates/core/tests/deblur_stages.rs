use darksplat::deblur::{
    apply_external, guided_deblur, initial_deblur, reblur_residual, richardson_lucy, DeblurStage, MotionKernel, StageKind,
};
use darksplat::degrade::{motion_blur, render_blurred, toy_spheres};
use darksplat::imagekit::{psnr, quantize, write_image, Image};
use darksplat::splatter::render;
use darksplat::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random anti-aliased discs and triangles over a flat background.
fn shapes(seed: u64, n: usize) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.6));
    let mut img = Image::from_fn(n, n, |_, _, c| bg[c]);
    let nf = n as f64;
    for _ in 0..10 {
        let col: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let tri = rng.gen_bool(0.5);
        let (cx, cy) = (rng.gen_range(0.0..nf), rng.gen_range(0.0..nf));
        let r = rng.gen_range(nf * 0.06..nf * 0.25);
        let pts: Vec<(f64, f64)> =
            (0..3).map(|_| (rng.gen_range(-nf * 0.1..nf * 1.1), rng.gen_range(-nf * 0.1..nf * 1.1))).collect();
        let inside = |x: f64, y: f64| {
            if !tri {
                return (x - cx).powi(2) + (y - cy).powi(2) < r * r;
            }
            let s = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
            let d = [s(pts[0], pts[1]), s(pts[1], pts[2]), s(pts[2], pts[0])];
            d.iter().all(|v| *v >= 0.0) || d.iter().all(|v| *v <= 0.0)
        };
        for y in 0..n {
            for x in 0..n {
                let mut cov = 0.0;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let (px, py) = (x as f64 + (sx as f64 + 0.5) / 4.0 - 0.5, y as f64 + (sy as f64 + 0.5) / 4.0 - 0.5);
                        if inside(px, py) {
                            cov += 1.0 / 16.0;
                        }
                    }
                }
                for c in 0..3 {
                    let v = img.get(x, y, c);
                    img.set(x, y, c, v * (1.0 - cov) + col[c] * cov);
                }
            }
        }
    }
    img
}

fn crop(img: &Image<f64>, margin: usize) -> Image<f64> {
    Image::from_fn(img.width() - 2 * margin, img.height() - 2 * margin, |x, y, c| img.get(x + margin, y + margin, c))
}

/// A sharp 48x48 view and the same view shaken by `(length, angle)`, with
/// real scene content smeared in across the border.
fn shaken(seed: u64, length: usize, angle: f64) -> (Image<f64>, Image<f64>) {
    let big = shapes(seed, 64);
    (crop(&big, 8), crop(&motion_blur(&big, length, angle).unwrap(), 8))
}

/// Reblur residual written out longhand: mirrored reads, interior pixels
/// only.
fn naive_residual(prior: &Image<f64>, blurry: &Image<f64>, k: &MotionKernel, margin: usize) -> f64 {
    let (w, h) = prior.dims();
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let m = i.rem_euclid(2 * n);
        (if m < n { m } else { 2 * n - 1 - m }) as usize
    };
    let mut total = 0.0;
    for y in margin..h - margin {
        for x in margin..w - margin {
            for c in 0..3 {
                let mut v = 0.0;
                for &(dx, dy, wt) in k.taps() {
                    v += wt * prior.get(mirror(x as isize - dx, w), mirror(y as isize - dy, h), c);
                }
                total += (v - blurry.get(x, y, c)).powi(2);
            }
        }
    }
    total
}

fn db(a: &Image<f64>, b: &Image<f64>) -> f64 {
    psnr(a, b).unwrap()
}

#[test]
fn identity_stage_returns_the_input() {
    let (_, blurry) = shaken(1, 5, 0.0);
    let st = DeblurStage::identity();
    assert_eq!(initial_deblur(&blurry, &st).unwrap().image, blurry);
    assert_eq!(guided_deblur(&blurry, &shapes(2, 48), &st).unwrap().image, blurry);
}

#[test]
fn initial_deblur_finds_a_horizontal_shake() {
    let st = DeblurStage::default();
    for seed in 100..106 {
        let (clean, blurry) = shaken(seed, 5, 0.0);
        let out = initial_deblur(&blurry, &st).unwrap();
        let k = out.kernel.unwrap();
        assert_eq!((k.length, k.angle), (5, 0.0), "seed {seed}");
        assert!(db(&out.image, &clean) > db(&blurry, &clean), "seed {seed}");
    }
    let scene = toy_spheres();
    let cam = scene.cameras[0].to_camera::<f64>().unwrap();
    let clean = render(&scene.cloud, &cam).unwrap().clamped();
    let blurry = render_blurred(&scene.cloud, &cam, &MotionKernel::new(5, 0.0).unwrap()).unwrap();
    let out = initial_deblur(&blurry, &st).unwrap();
    let k = out.kernel.unwrap();
    assert_eq!((k.length, k.angle), (5, 0.0));
    assert!(db(&out.image, &clean) > db(&blurry, &clean));
}

#[test]
fn initial_deblur_leaves_sharp_crops_alone() {
    let st = DeblurStage::default();
    let kept = (200..220)
        .filter(|&seed| initial_deblur(&crop(&shapes(seed, 64), 8), &st).unwrap().kernel.unwrap().length == 1)
        .count();
    assert!(kept >= 18, "{kept}/20 sharp crops kept the delta");
}

#[test]
fn initial_deblur_is_deterministic() {
    let (_, blurry) = shaken(7, 7, 90.0);
    for st in [DeblurStage::default(), DeblurStage { kind: StageKind::Wiener, ..DeblurStage::default() }] {
        let a = initial_deblur(&blurry, &st).unwrap();
        let b = initial_deblur(&blurry, &st).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn guided_with_the_blurry_image_as_prior_picks_the_delta() {
    let (_, blurry) = shaken(3, 7, 45.0);
    let out = guided_deblur(&blurry, &blurry, &DeblurStage::default()).unwrap();
    assert_eq!(out.kernel.unwrap(), MotionKernel::delta());
    for (a, b) in out.image.data().iter().zip(blurry.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn guided_identifies_a_diagonal_blur() {
    let st = DeblurStage::default();
    let scene = toy_spheres();
    let cam = scene.cameras[2].to_camera::<f64>().unwrap();
    for clean in [shapes(5, 48), render(&scene.cloud, &cam).unwrap().clamped()] {
        let blurry = motion_blur(&clean, 5, 45.0).unwrap();
        let out = guided_deblur(&blurry, &clean, &st).unwrap();
        let k = out.kernel.unwrap();
        assert_eq!((k.length, k.angle), (5, 45.0));
        let gain = db(&out.image, &clean) - db(&blurry, &clean);
        assert!(gain >= 1.0, "gain {gain:.2} dB");
    }
}

#[test]
fn guided_rejects_mismatched_dims() {
    let r = guided_deblur(&shapes(1, 16), &shapes(1, 17), &DeblurStage::default());
    assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernels_have_unit_mass(half in 0usize..8, angle in -360.0f64..360.0) {
        let k = MotionKernel::new(2 * half + 1, angle).unwrap();
        prop_assert!((k.mass() - 1.0).abs() < 1e-9);
        prop_assert!(k.taps().iter().all(|t| t.2 > 0.0));
    }

    #[test]
    fn richardson_lucy_stays_non_negative(seed in 0u64..1000, len in 0usize..5, angle in 0.0f64..180.0, it in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::<f64>::from_fn(12, 10, |_, _, _| rng.gen_range(-0.2..1.2));
        let out = richardson_lucy(&img, &MotionKernel::new(2 * len + 1, angle).unwrap(), it, None).unwrap();
        prop_assert!(out.data().iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn guided_selection_is_the_exhaustive_argmin(seed in 0u64..1000, n_len in 1usize..4, n_ang in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = Image::<f64>::from_fn(20, 20, |_, _, _| rng.gen_range(0.0..1.0));
        let blurry = Image::<f64>::from_fn(20, 20, |_, _, _| rng.gen_range(0.0..1.0));
        let st = DeblurStage {
            lengths: [1, 3, 5][..n_len].to_vec(),
            angles: (0..n_ang).map(|i| 45.0 * i as f64).collect(),
            rl_iterations: 2,
            ..DeblurStage::default()
        };
        let grid = st.kernel_grid().unwrap();
        let margin = grid.iter().map(MotionKernel::radius).max().unwrap();
        let naive: Vec<f64> = grid.iter().map(|k| naive_residual(&prior, &blurry, k, margin)).collect();
        let out = guided_deblur(&blurry, &prior, &st).unwrap();
        for ((a, b), k) in out.scores.iter().zip(&naive).zip(&grid) {
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
            prop_assert_eq!(*a, reblur_residual(&prior, &blurry, k, margin).unwrap());
        }
        let chosen = grid.iter().position(|k| *k == out.kernel.clone().unwrap()).unwrap();
        let low = out.scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let first_min = out.scores.iter().position(|s| *s == low).unwrap();
        prop_assert_eq!(chosen, first_min);
    }
}

mod external {
    use super::*;

    fn sample() -> Image<f64> {
        quantize(&shapes(9, 16))
    }

    #[test]
    fn copy_passes_the_image_through() {
        let img = sample();
        assert_eq!(apply_external(&img, None, "cp {in} {out}").unwrap(), img);
        let prior = quantize(&shapes(10, 16));
        assert_eq!(apply_external(&img, Some(&prior), "sh -c 'cp \"$0\" \"$1\"' {prior} {out} {in}").unwrap(), prior);
    }

    #[test]
    fn no_op_script_round_trips_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("noop.sh");
        std::fs::write(&script, "#!/bin/sh\ncat \"$1\" > \"$2\"\n").unwrap();
        let img = sample();
        let cmd = format!("sh '{}' {{in}} {{out}}", script.display());
        let out = apply_external(&img, None, &cmd).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn failures_are_distinct() {
        let img = sample();
        let r = apply_external(&img, None, "no-such-deblurrer-binary {in} {out}");
        assert!(matches!(r, Err(Error::ExternalLaunch { .. })), "{r:?}");
        let r = apply_external(&img, None, "sh -c 'exit 3' {in} {out}");
        assert!(matches!(r, Err(Error::ExternalStatus { status: Some(3) })), "{r:?}");
        let r = apply_external(&img, None, "true {in} {out}");
        assert!(matches!(r, Err(Error::ExternalMissingOutput(_))), "{r:?}");

        let dir = tempfile::tempdir().unwrap();
        let small = dir.path().join("small.png");
        write_image(&small, &Image::<f64>::zeros(4, 4)).unwrap();
        let r = apply_external(&img, None, &format!("sh -c 'cp \"$0\" \"$1\"' '{}' {{out}} {{in}}", small.display()));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })), "{r:?}");
    }

    #[test]
    fn templates_need_placeholders() {
        let img = sample();
        assert!(matches!(apply_external(&img, None, "cp {in} x"), Err(Error::InvalidParameter(_))));
        assert!(matches!(apply_external(&img, None, "cp {prior} {out} {in}"), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn stages_route_through_the_hook() {
        let img = sample();
        let st = DeblurStage {
            kind: StageKind::External,
            external_command: Some("cp {in} {out}".into()),
            ..DeblurStage::default()
        };
        let out = initial_deblur(&img, &st).unwrap();
        assert_eq!(out.image, img);
        assert!(out.kernel.is_none());
        let st = DeblurStage { external_command: Some("sh -c 'exit 4' {in} {out}".into()), ..st };
        assert!(matches!(guided_deblur(&img, &img, &st), Err(Error::ExternalStatus { status: Some(4) })));
    }
}

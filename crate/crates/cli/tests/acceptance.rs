//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the console.
//! The end-to-end criteria drive the `splatscene` binary.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatscene_core::io::load_scene;
use splatscene_core::losses::{dice_onehot, LossWeights};
use splatscene_core::metrics::{depth_metrics, DELTA_THRESHOLDS};
use splatscene_core::mpm::{mpm_step, simulate, simulate_with, MpmGrid, Particle, ParticleSystem, SimConfig};
use splatscene_core::object_loss::{distance_variance_loss, object_aware_loss, object_aware_terms, DEFAULT_LEVELS};
use splatscene_core::optim::Adam;
use splatscene_core::raster::{render, render_backward};
use splatscene_core::train::{color_target, onehot_with_background, total_loss};
use splatscene_core::{Aabb, CameraView, Gaussian2D, Image, SceneSnapshot, TrainingView};
use support::*;

/// Held-out aggregate MAE (m) of the two-object scene from the committed
/// oracle run: 2000 iterations, 3000 initial points, seed 7.
const REGRESSION_ORACLE_MAE: f64 = 0.0130;
/// Criterion-6 bound; criterion 7 allows twice this.
const REGRESSION_BOUND: f64 = 0.015;

const REGRESSION_CONFIG: &str = "iterations = 2000\ninit_points = 3000\n";
const REGRESSION_SEED: &str = "7";

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_splatscene"))
        .args(args)
        .output()
        .expect("run splatscene");
    if !out.status.success() {
        panic!(
            "splatscene {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).expect("read json")).expect("parse json")
}

fn aggregate_mae(report: &Path) -> f64 {
    json(report)["aggregate"]["MAE"].as_f64().expect("MAE")
}

fn gaussian_count(scene: &Path) -> u64 {
    let mut name = scene.as_os_str().to_owned();
    name.push(".efficiency.json");
    json(&PathBuf::from(name))["gaussians"].as_u64().expect("count")
}

fn object_centroid_z(scene: &SceneSnapshot, object: usize) -> f64 {
    let m = scene.members(object);
    m.iter().map(|&i| scene.gaussians[i].mean.z).sum::<f64>() / m.len() as f64
}

fn gradient_suite(_: &Path) -> Verdict {
    let start = Instant::now();
    let cam = small_camera(16);
    let (mut checked, mut straddled, mut failures) = (0, 0, 0);
    let mut first_bad = String::new();
    for seed in 0..20 {
        let scene = random_scene(1000 + seed, 10, 2);
        let dir = random_direction(seed, 16, 16, 3);
        let grads = render_backward(&scene, &cam, &dir).unwrap();
        let report = piecewise_finite_difference_check(
            &scene,
            &grads.gaussians,
            |s| contract(&render(s, &cam).unwrap(), &dir),
            |s| support_signature(s, &cam),
            1e-6,
            1e-3,
            1e-6,
        );
        checked += report.checked;
        straddled += report.straddled;
        failures += report.bad.len();
        if let (Some(b), true) = (report.bad.first(), first_bad.is_empty()) {
            first_bad = format!("; seed {seed} {}[{}] {:e} vs {:e}", b.param, b.gaussian, b.analytic, b.numeric);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failures == 0 && secs < 60.0 && checked > 0,
        format!(
            "{checked} gradients checked, {failures} outside 1e-3, {straddled} stencils cross the 3σ support edge, {secs:.1} s{first_bad}"
        ),
    )
}

fn compositing_oracle(_: &Path) -> Verdict {
    let cam = small_camera(32);
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let scene = random_scene(2000 + seed, 5 + (seed as usize % 8), 2);
        let diff = max_channel_diff(&render(&scene, &cam).unwrap(), &brute_force_render(&scene, &cam));
        worst = worst.max(diff);
    }
    let fronto = CameraView::new(100.0, 100.0, 32.0, 32.0, Matrix3::identity(), Vector3::zeros(), 64, 64).unwrap();
    let (c1, c2) = (Vector3::new(0.9, 0.2, 0.1), Vector3::new(0.1, 0.6, 0.8));
    let mut scene = SceneSnapshot::new(1, palette(1), Aabb::new(Vector3::repeat(-1.0), Vector3::repeat(2.0)));
    for (depth, color) in [(1.0, c1), (1.2, c2)] {
        let mut g = Gaussian2D::new(Vector3::new(0.0, 0.0, depth), 2);
        g.log_scale = Vector2::repeat(0.05f64.ln());
        g.opacity_raw = 0.0;
        g.color = color;
        scene.gaussians.push(g);
    }
    let out = render(&scene, &fronto).unwrap();
    let expect = c1 * 0.5 + c2 * 0.25;
    let closed = (Vector3::from_column_slice(out.rgb.pixel(32, 32)) - expect).amax();
    let alpha = (out.alpha.get(32, 32, 0) - 0.75).abs();
    verdict(
        worst <= 1e-5 && closed <= 1e-6 && alpha <= 1e-6,
        format!("50 scenes max diff {worst:.2e}; two-splat error {closed:.2e}, alpha error {alpha:.2e}"),
    )
}

fn cloud(seed: u64, n: usize) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vector3::new(rng.random_range(0.0..0.1), rng.random_range(0.0..0.08), rng.random_range(0.0..0.05)))
        .collect()
}

fn object_scene(points: &[Vector3<f64>]) -> SceneSnapshot {
    let mut scene = SceneSnapshot::new(1, palette(1), Aabb::new(Vector3::repeat(-1.0), Vector3::repeat(1.0)));
    for p in points {
        let mut g = Gaussian2D::new(*p, 2);
        g.object_logits[0] = 4.0;
        scene.gaussians.push(g);
    }
    scene
}

fn object_loss_oracle(_: &Path) -> Verdict {
    let w = LossWeights::default();
    let levels: Vec<(usize, usize)> = DEFAULT_LEVELS.iter().map(|l| (l.groups, l.neighbors)).collect();
    let pts = cloud(200, 200);
    let fast = object_aware_loss(&object_scene(&pts), &w, &DEFAULT_LEVELS);
    let slow = reference_object_loss(std::slice::from_ref(&pts), &levels, w.a_s, w.a_d);
    let rel = ((fast - slow) / slow).abs();

    let s = 1.0 / 2f64.sqrt();
    let tetra = [
        Vector3::new(1.0, 1.0, 1.0),
        Vector3::new(1.0, -1.0, -1.0),
        Vector3::new(-1.0, 1.0, -1.0),
        Vector3::new(-1.0, -1.0, 1.0),
    ];
    let octa = [Vector3::x() * s, -Vector3::x() * s, Vector3::y() * s, -Vector3::y() * s, Vector3::z() * s, -Vector3::z() * s];
    let cube: Vec<Vector3<f64>> = (0..8)
        .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let polytope = [&tetra[..], &octa[..], &cube[..]]
        .iter()
        .map(|shape| distance_variance_loss(shape))
        .fold(0.0, f64::max);

    let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, -0.5)), 1.1);
    let moved: Vec<Vector3<f64>> = pts.iter().map(|p| r * p + Vector3::new(0.3, -0.2, 0.7)).collect();
    let rigid = (object_aware_loss(&object_scene(&moved), &w, &DEFAULT_LEVELS) - fast).abs() / fast.max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let anchors = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.08, 0.0, 0.01), Vector3::new(0.02, 0.07, 0.0)];
    let clustered: Vec<Vector3<f64>> = (0..200)
        .map(|i| anchors[i % 3] + Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01)))
        .collect();
    let mut scene = object_scene(&clustered);
    let before = object_aware_loss(&scene, &w, &DEFAULT_LEVELS);
    let adam = Adam::default();
    let n = scene.len() * 3;
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    for step in 1..=200 {
        let mut grads = vec![Vector3::zeros(); scene.len()];
        object_aware_terms(&scene, &w, &DEFAULT_LEVELS, Some(&mut grads));
        let mut params: Vec<f64> = scene.gaussians.iter().flat_map(|g| g.mean.iter().copied()).collect();
        let flat: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();
        adam.update(&mut params, &flat, &mut m, &mut v, 5e-4, step);
        for (g, p) in scene.gaussians.iter_mut().zip(params.chunks(3)) {
            g.mean = Vector3::new(p[0], p[1], p[2]);
        }
    }
    let after = object_aware_loss(&scene, &w, &DEFAULT_LEVELS);
    let reduction = 1.0 - after / before;
    verdict(
        rel <= 1e-6 && polytope == 0.0 && rigid <= 1e-9 && reduction >= 0.5,
        format!(
            "reference rel err {rel:.1e}; polytope L_d {polytope:.1e}; rigid change {rigid:.1e}; 200 steps reduce {:.0}%",
            100.0 * reduction
        ),
    )
}

fn hand_view(target: &SceneSnapshot, cam: &CameraView) -> TrainingView {
    let truth = render(target, cam).unwrap();
    let onehot = onehot_with_background(&truth);
    let mut labels = Image::new(cam.width, cam.height, target.channels());
    for y in 0..cam.height {
        for x in 0..cam.width {
            labels.set(x, y, splatscene_core::gaussian::argmax(onehot.pixel(x, y)), 1.0);
        }
    }
    TrainingView {
        name: "fixture".into(),
        rgb: truth.rgb.map(|v| v.min(1.0)),
        mask_rgb: truth.mask,
        onehot_labels: labels,
        camera: cam.clone(),
    }
}

fn reference_l1_dssim(a: &Image, b: &Image, lambda: f64) -> f64 {
    let l1 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64;
    (1.0 - lambda) * l1 + lambda * (1.0 - reference_ssim(a, b)) / 2.0
}

fn loss_wiring(_: &Path) -> Verdict {
    let w = LossWeights::default();
    let published = (w.a_color, w.a_mask, w.a_one_hot, w.a_s, w.a_d) == (0.5, 0.5, 1.0, 10000.0 / 3.0, 1.0 / 3.0);
    let mut scene = random_scene(31, 80, 2);
    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        g.object_logits = vec![0.0; 3];
        g.object_logits[i % 2] = 2.0;
        g.log_scale.add_scalar_mut(-0.5);
    }
    let cam = small_camera(24);
    let view = hand_view(&random_scene(32, 30, 2), &cam);
    let out = render(&scene, &cam).unwrap();
    let color = reference_l1_dssim(&out.rgb, &color_target(&view), 0.2);
    let mask = reference_l1_dssim(&out.mask, &view.mask_rgb, 0.2);
    let dice = dice_onehot(&onehot_with_background(&out), &view.onehot_labels).unwrap();
    let objects: Vec<Vec<Vector3<f64>>> = (0..2)
        .map(|o| scene.members(o).iter().map(|&i| scene.gaussians[i].mean).collect())
        .collect();
    let levels: Vec<(usize, usize)> = DEFAULT_LEVELS.iter().map(|l| (l.groups, l.neighbors)).collect();
    let object = reference_object_loss(&objects, &levels, 10000.0 / 3.0, 1.0 / 3.0);
    let hand = 0.5 * color + 0.5 * mask + 1.0 * dice + object;
    let total = total_loss(&scene, &view, &w, true).unwrap().total;
    let err = (total - hand).abs();
    verdict(
        published && err <= 1e-9 && object > 0.0,
        format!("total {total:.9} vs hand {hand:.9}, |diff| {err:.1e}"),
    )
}

const SPACING: f64 = 0.005;

fn shell_block(center: Vector3<f64>, half: Vector3<f64>) -> Vec<Particle> {
    let n = (half * 2.0 / SPACING).map(|v| v.round() as i64);
    let mass = 1000.0 * SPACING.powi(3);
    let mut out = Vec::new();
    for i in 0..=n.x {
        for j in 0..=n.y {
            for k in 0..=n.z {
                if i == 0 || j == 0 || k == 0 || i == n.x || j == n.y || k == n.z {
                    let p = center - half + Vector3::new(i as f64, j as f64, k as f64) * SPACING;
                    out.push(Particle::at_rest(p, mass, 0));
                }
            }
        }
    }
    out
}

fn mpm_physics(_: &Path) -> Verdict {
    let settle = SimConfig {
        step_duration: Some(0.005),
        ..SimConfig::default()
    };
    let single = ParticleSystem {
        particles: vec![Particle::at_rest(Vector3::new(0.0, 0.0, 2.0), 1.25e-4, 0)],
        spacing: SPACING,
    };
    let fall = simulate(&single, &SimConfig { steps: 40, ..settle.clone() }).unwrap();
    let t = fall.duration();
    let expected = 0.5 * 9.81 * t * t;
    let fall_err = ((fall.start[0].z - fall.end[0].z) - expected).abs() / expected;

    let mut particles = shell_block(Vector3::new(0.0, 0.0, 0.5), Vector3::repeat(0.02));
    for (i, p) in particles.iter_mut().enumerate() {
        let s = i as f64;
        p.velocity = Vector3::new((0.7 * s).sin(), (1.3 * s).cos(), 0.1 * (s * 0.1).sin());
    }
    let free = SimConfig {
        gravity: [0.0; 3],
        ..SimConfig::default()
    };
    let mut grid = MpmGrid::new(free.dx(), 0.0);
    grid.fit(&particles).unwrap();
    grid.p2g(&particles, free.dt(), &free.material);
    let mass: f64 = particles.iter().map(|p| p.mass).sum();
    let mass_err = (grid.total_mass() - mass).abs() / mass;
    let before: Vector3<f64> = particles.iter().map(|p| p.velocity * p.mass).sum();
    let mut grid = MpmGrid::new(free.dx(), 0.0);
    mpm_step(&mut particles, &mut grid, free.dt(), &Vector3::zeros(), &free, 0).unwrap();
    let after: Vector3<f64> = particles.iter().map(|p| p.velocity * p.mass).sum();
    let momentum_err = (after - before).norm() / before.norm();

    let dropped = ParticleSystem {
        particles: shell_block(Vector3::new(0.0, 0.0, 0.075), Vector3::repeat(0.025)),
        spacing: SPACING,
    };
    let settled = simulate(&dropped, &settle).unwrap();
    let min_z = settled.end.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);

    let n = 27;
    let solid: Vec<Particle> = (0..n * n * n)
        .map(|i| {
            let (x, y, z) = (i % n, (i / n) % n, i / (n * n));
            Particle::at_rest(
                Vector3::new(x as f64, y as f64, z as f64) * SPACING + Vector3::new(0.0, 0.0, 0.02),
                1000.0 * SPACING.powi(3),
                0,
            )
        })
        .collect();
    let count = solid.len();
    let big = ParticleSystem {
        particles: solid,
        spacing: SPACING,
    };
    let start = Instant::now();
    let mut steps = 0;
    simulate_with(&big, &SimConfig::default(), |s, _| {
        steps = s;
        Ok(())
    })
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        fall_err <= 0.02 && mass_err <= 1e-9 && momentum_err <= 1e-6 && min_z.abs() <= SPACING && steps == 100 && secs < 30.0,
        format!(
            "free fall err {:.2}%; mass err {mass_err:.1e}; momentum err {momentum_err:.1e}; settled min z {:.4} m; {steps} steps of {count} particles in {secs:.1} s",
            100.0 * fall_err,
            min_z
        ),
    )
}

fn row(values: &[f64]) -> Image {
    Image::from_vec(values.len(), 1, 1, values.to_vec()).unwrap()
}

fn metrics_fixtures(_: &Path) -> Verdict {
    let gt = row(&[0.4, 0.5, 0.6]);
    let perfect = depth_metrics(&gt, &gt, &[true; 3]).unwrap();
    let ok_perfect = perfect.mae == 0.0 && perfect.rmse == 0.0 && perfect.delta == [100.0; 6];

    let gt4 = row(&[0.4, 0.5, 0.6, 0.7]);
    let offset = depth_metrics(&row(&[0.43, 0.53, 0.63, 0.73]), &gt4, &[true; 4]).unwrap();
    let i25 = DELTA_THRESHOLDS.iter().position(|t| *t == 0.025).unwrap();
    let i5 = DELTA_THRESHOLDS.iter().position(|t| *t == 0.05).unwrap();
    let ok_offset = (offset.mae - 0.03).abs() < 1e-12
        && (offset.rmse - 0.03).abs() < 1e-12
        && offset.delta[i25] == 0.0
        && offset.delta[i5] == 100.0;

    let three = depth_metrics(&row(&[1.0, 1.02, 1.08]), &row(&[1.0, 1.0, 1.0]), &[true; 3]).unwrap();
    let ok_three = (three.mae - 0.1 / 3.0).abs() < 1e-12
        && (three.rmse - (0.0068f64 / 3.0).sqrt()).abs() < 1e-12
        && (three.delta[i25] - 200.0 / 3.0).abs() < 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut violations = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let gt: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g + rng.random_range(-0.3..0.3)).collect();
        let valid: Vec<bool> = (0..n).map(|i| i == 0 || rng.random_bool(0.8)).collect();
        let m = depth_metrics(&row(&pred), &row(&gt), &valid).unwrap();
        if m.rmse < m.mae || !m.delta.windows(2).all(|w| w[0] <= w[1]) {
            violations += 1;
        }
    }
    verdict(
        ok_perfect && ok_offset && ok_three && violations == 0,
        format!("fixtures perfect={ok_perfect} offset={ok_offset} three={ok_three}; {violations} ordering violations in 100 random inputs"),
    )
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("{REGRESSION_CONFIG}{extra}")).unwrap();
    path
}

fn end_to_end(work: &Path) -> Verdict {
    let data = work.join("two");
    cli(&["synth", "--scene", "two-objects", "--out", p(&data)]);
    let manifest = data.join("train/manifest.toml");
    let with = work.join("two_obj.scene");
    let without = work.join("two_plain.scene");
    let cfg = write_config(work, "with.toml", "");
    let plain = write_config(work, "without.toml", "use_object_loss = false\n");
    cli(&["train", "--dataset", p(&manifest), "--out", p(&with), "--config", p(&cfg), "--seed", REGRESSION_SEED]);
    cli(&["train", "--dataset", p(&manifest), "--out", p(&without), "--config", p(&plain), "--seed", REGRESSION_SEED]);
    let report = work.join("two_eval.json");
    cli(&[
        "eval",
        "--scene",
        p(&with),
        "--dataset",
        p(&data.join("heldout/manifest.toml")),
        "--gt-depth",
        p(&data.join("heldout/depth")),
        "--out",
        p(&report),
    ]);
    let mae = aggregate_mae(&report);
    let (n_with, n_without) = (gaussian_count(&with), gaussian_count(&without));
    verdict(
        mae < REGRESSION_BOUND && n_with < n_without,
        format!(
            "held-out MAE {:.2} cm (bound {:.2} cm, oracle run {:.2} cm); gaussians {n_with} with object loss vs {n_without} without",
            100.0 * mae,
            100.0 * REGRESSION_BOUND,
            100.0 * REGRESSION_ORACLE_MAE
        ),
    )
}

fn post_mae(work: &Path, data: &Path, scene: &Path, tag: &str) -> f64 {
    let report = work.join(format!("{tag}_eval.json"));
    cli(&[
        "eval",
        "--scene",
        p(scene),
        "--dataset",
        p(&data.join("post_heldout/manifest.toml")),
        "--gt-depth",
        p(&data.join("post_heldout/depth")),
        "--out",
        p(&report),
    ]);
    aggregate_mae(&report)
}

fn scene_update(work: &Path) -> Verdict {
    let data = work.join("stacked");
    cli(&["synth", "--scene", "stacked-pair", "--out", p(&data), "--remove", "0"]);
    let trained = work.join("stacked.scene");
    let cfg = write_config(work, "stacked.toml", "");
    cli(&[
        "train",
        "--dataset",
        p(&data.join("train/manifest.toml")),
        "--out",
        p(&trained),
        "--config",
        p(&cfg),
        "--seed",
        REGRESSION_SEED,
    ]);
    let post = data.join("post/manifest.toml");
    let updated = work.join("stacked_updated.scene");
    let frozen = work.join("stacked_frozen.scene");
    let common = ["--scene", p(&trained), "--remove", "0", "--post-view", "post", "--dataset", p(&post)];
    cli(&[&["update"][..], &common, &["--out", p(&updated)]].concat());
    cli(&[&["update"][..], &common, &["--out", p(&frozen), "--no-simulate"]].concat());

    let oracle = json(&data.join("oracle.json"));
    let expected = oracle["centroids"][1][2].as_f64().unwrap() - oracle["post_centroids"][1][2].as_f64().unwrap();
    let before = load_scene(&trained).unwrap().scene;
    let after = load_scene(&updated).unwrap().scene;
    let drop = object_centroid_z(&before, 1) - object_centroid_z(&after, 1);
    let drop_err = (drop - expected).abs() / expected;
    let mae = post_mae(work, &data, &updated, "updated");
    let frozen_mae = post_mae(work, &data, &frozen, "frozen");
    let limit = 2.0 * REGRESSION_BOUND;
    verdict(
        drop_err <= 0.2 && mae <= limit && frozen_mae > mae,
        format!(
            "drop {:.2} cm vs oracle {:.2} cm ({:.1}%); post MAE {:.2} cm (limit {:.2} cm); without simulation {:.2} cm",
            100.0 * drop,
            100.0 * expected,
            100.0 * drop_err,
            100.0 * mae,
            100.0 * limit,
            100.0 * frozen_mae
        ),
    )
}

fn determinism(work: &Path) -> Verdict {
    let data = work.join("det");
    cli(&["synth", "--scene", "stacked-pair", "--out", p(&data), "--remove", "0"]);
    let manifest = data.join("train/manifest.toml");
    let cfg = work.join("det.toml");
    fs::write(&cfg, "iterations = 700\ninit_points = 1500\n").unwrap();
    let a = work.join("det_a.scene");
    let b = work.join("det_b.scene");
    for out in [&a, &b] {
        cli(&["train", "--dataset", p(&manifest), "--out", p(out), "--config", p(&cfg), "--seed", "11"]);
    }
    let train_same = fs::read(&a).unwrap() == fs::read(&b).unwrap();

    let ua = work.join("det_ua.scene");
    let ub = work.join("det_ub.scene");
    for out in [&ua, &ub] {
        cli(&[
            "update",
            "--scene",
            p(&a),
            "--remove",
            "0",
            "--post-view",
            "post",
            "--dataset",
            p(&data.join("post/manifest.toml")),
            "--out",
            p(out),
        ]);
    }
    let update_same = fs::read(&ua).unwrap() == fs::read(&ub).unwrap();

    let sys = ParticleSystem {
        particles: shell_block(Vector3::new(0.0, 0.0, 0.06), Vector3::repeat(0.015)),
        spacing: SPACING,
    };
    let config = SimConfig {
        steps: 60,
        step_duration: Some(0.005),
        ..SimConfig::default()
    };
    let (s1, s2) = (simulate(&sys, &config).unwrap(), simulate(&sys, &config).unwrap());
    let bits = |t: &splatscene_core::mpm::Trajectory| -> Vec<u64> {
        t.final_state
            .iter()
            .flat_map(|p| p.position.iter().chain(p.velocity.iter()).chain(p.deformation_gradient.iter()).map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    let sim_same = bits(&s1) == bits(&s2);
    verdict(
        train_same && update_same && sim_same,
        format!("train --seed files identical: {train_same}; update files identical: {update_same}; simulate bit-identical: {sim_same}"),
    )
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let checks: [(&str, fn(&Path) -> Verdict); 9] = [
        ("rasterizer gradients", gradient_suite),
        ("compositing oracle", compositing_oracle),
        ("object-aware loss", object_loss_oracle),
        ("loss weight wiring", loss_wiring),
        ("MPM physics", mpm_physics),
        ("end-to-end regression", end_to_end),
        ("scene update regression", scene_update),
        ("metrics", metrics_fixtures),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.ends_with(&format!(" {f}")) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = panic::catch_unwind(AssertUnwindSafe(|| check(work.path()))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{id} {name}: {} | {} | {:.1} s",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

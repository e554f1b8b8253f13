use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use splatscene_core::io::{
    load_dataset, load_scene, read_depth_png, save_scene, write_atomic, write_dataset, write_depth_png, write_json,
    write_ply, write_png, NamedCamera, SceneFile,
};
use splatscene_core::metrics::{efficiency_report, object_depth_errors, DepthMetrics, EvalOptions, MetricsReport};
use splatscene_core::mpm::ObjectMotion;
use splatscene_core::synthetic::{RigConfig, SyntheticScene};
use splatscene_core::train::{init_random, train as run_training, TrainConfig};
use splatscene_core::update::{apply_update, ObjectTransform, UpdateConfig, UpdateRequest, UpdateTimings};
use splatscene_core::{render as render_scene, Error, Image, Result};

/// Margin added around the objects for the synthetic datasets' initialization volume.
const SYNTH_BOUNDS_MARGIN: f64 = 0.15;

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn train(dataset: &Path, out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let start = Instant::now();
    let dataset = load_dataset(dataset)?;
    let mut config: TrainConfig = read_toml(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let bounds = dataset.bounds()?;
    let init = init_random(&bounds, config.init_points, &dataset.palette, config.seed)?;
    let preprocess_s = start.elapsed().as_secs_f64();
    let outcome = run_training(&dataset.views, init, &config, |r| {
        if r.iteration % 500 == 0 {
            eprintln!(
                "iter {:>6}  loss {:.5}  gaussians {}",
                r.iteration, r.total, r.gaussians
            );
        }
    })?;
    let file = SceneFile {
        scene: outcome.scene,
        cameras: dataset.named_cameras(),
    };
    save_scene(out, &file)?;
    let mut progress = String::new();
    for r in &outcome.log {
        progress.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
        progress.push('\n');
    }
    write_atomic(&sidecar(out, ".progress.jsonl"), progress.as_bytes())?;
    let report = efficiency_report(preprocess_s, &outcome.log, file.scene.len());
    write_json(&sidecar(out, ".efficiency.json"), &report)?;
    write_ply(&sidecar(out, ".ply"), &file.scene)?;
    eprintln!(
        "trained {} gaussians in {:.1} s",
        file.scene.len(),
        report.total_s
    );
    Ok(())
}

pub fn render(scene: &Path, camera: &str, out: &Path) -> Result<()> {
    let file = load_scene(scene)?;
    let cam = file.camera(camera)?;
    let frame = render_scene(&file.scene, cam)?;
    ensure_dir(out)?;
    write_png(&out.join("rgb.png"), &frame.rgb)?;
    write_png(&out.join("mask.png"), &frame.mask)?;
    write_png(&out.join("alpha.png"), &frame.alpha)?;
    let threshold = EvalOptions::default().alpha_threshold;
    write_depth_png(&out.join("depth.png"), &frame.depth, |x, y| frame.alpha.get(x, y, 0) >= threshold)
}

pub struct UpdateArgs<'a> {
    pub scene: &'a Path,
    pub remove: &'a [usize],
    pub post_view: &'a str,
    pub dataset: &'a Path,
    pub out: &'a Path,
    pub config: Option<&'a Path>,
    pub simulate: bool,
}

#[derive(Serialize)]
struct UpdateSummary<'a> {
    removed: &'a [usize],
    simulated: bool,
    gaussians: usize,
    particles: usize,
    transforms: &'a [ObjectTransform],
    motion: &'a [ObjectMotion],
    timings: &'a UpdateTimings,
}

pub fn update(args: &UpdateArgs<'_>) -> Result<()> {
    let file = load_scene(args.scene)?;
    let dataset = load_dataset(args.dataset)?;
    let mut config: UpdateConfig = read_toml(args.config)?;
    config.simulate &= args.simulate;
    let req = UpdateRequest {
        scene: file.scene,
        removed: args.remove.to_vec(),
        post_view: dataset.view(args.post_view)?.clone(),
        config,
    };
    let outcome = apply_update(&req)?;
    let mut cameras = file.cameras;
    if !cameras.iter().any(|c| c.name == req.post_view.name) {
        cameras.push(NamedCamera {
            name: req.post_view.name.clone(),
            camera: req.post_view.camera.clone(),
        });
    }
    let updated = SceneFile {
        scene: outcome.scene,
        cameras,
    };
    save_scene(args.out, &updated)?;
    let summary = UpdateSummary {
        removed: &req.removed,
        simulated: req.config.simulate,
        gaussians: updated.scene.len(),
        particles: outcome.particles,
        transforms: &outcome.transforms,
        motion: &outcome.motion,
        timings: &outcome.timings,
    };
    write_json(&sidecar(args.out, ".summary.json"), &summary)?;
    for t in &outcome.transforms {
        eprintln!(
            "object {}: translation [{:.4}, {:.4}, {:.4}] m, rotation {:.4} rad",
            t.object, t.translation[0], t.translation[1], t.translation[2], t.angle_rad
        );
    }
    Ok(())
}

/// Rendered depth rounded to the millimeter grid of the depth files.
fn quantized(depth: &Image) -> Image {
    let data = depth
        .data()
        .iter()
        .map(|d| splatscene_core::io::depth_to_mm(*d) as f64 / 1000.0)
        .collect();
    Image::from_vec(depth.width(), depth.height(), 1, data).expect("same shape")
}

pub fn eval(scene: &Path, dataset: &Path, gt_depth: &Path, out: &Path) -> Result<()> {
    let file = load_scene(scene)?;
    let dataset = load_dataset(dataset)?;
    let opts = EvalOptions::default();
    let mut per_view = Vec::new();
    let mut pooled = Vec::new();
    for view in &dataset.views {
        let frame = render_scene(&file.scene, &view.camera)?;
        let gt = read_depth_png(&gt_depth.join(format!("{}.png", view.name)))?;
        let errors = object_depth_errors(&quantized(&frame.depth), &frame.alpha, &gt, &opts)?;
        if errors.is_empty() {
            continue;
        }
        per_view.push((view.name.clone(), DepthMetrics::from_errors(&errors)?));
        pooled.extend(errors);
    }
    let aggregate = DepthMetrics::from_errors(&pooled)?;
    write_json(out, &MetricsReport::new(&per_view, &aggregate))?;
    println!("MAE {:.5} m  RMSE {:.5} m  over {} pixels", aggregate.mae, aggregate.rmse, aggregate.pixels);
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub enum SynthPreset {
    TwoObjects,
    StackedPair,
}

#[derive(Serialize)]
struct SynthOracle {
    centroids: Vec<[f64; 3]>,
    post_centroids: Vec<Option<[f64; 3]>>,
}

fn write_views(dir: &Path, truth: &SyntheticScene, cams: &[(String, splatscene_core::CameraView)], bounds: Option<&splatscene_core::Aabb>, depth: bool) -> Result<()> {
    ensure_dir(dir)?;
    let views: Vec<_> = cams.iter().map(|(n, c)| truth.render_view(n, c)).collect();
    write_dataset(dir, &views, &truth.palette, bounds)?;
    if depth {
        ensure_dir(&dir.join("depth"))?;
        for (name, cam) in cams {
            let d = truth.depth_map(cam);
            write_depth_png(&dir.join("depth").join(format!("{name}.png")), &d, |x, y| d.get(x, y, 0) > 0.0)?;
        }
    }
    Ok(())
}

fn named(prefix: &str, cams: Vec<splatscene_core::CameraView>) -> Vec<(String, splatscene_core::CameraView)> {
    cams.into_iter().enumerate().map(|(i, c)| (format!("{prefix}{i}"), c)).collect()
}

pub fn synth(preset: SynthPreset, out: &Path, remove: &[usize]) -> Result<()> {
    let truth = match preset {
        SynthPreset::TwoObjects => SyntheticScene::two_objects(),
        SynthPreset::StackedPair => SyntheticScene::stacked_pair(),
    };
    if let Some(&bad) = remove.iter().find(|&&id| id >= truth.object_count()) {
        return Err(Error::UnknownObject(bad));
    }
    let rig = RigConfig::default();
    let bounds = truth.object_bounds().ok_or(Error::Empty("boxes"))?.expanded(SYNTH_BOUNDS_MARGIN);
    write_views(&out.join("train"), &truth, &named("view", rig.training()?), Some(&bounds), false)?;
    write_views(&out.join("heldout"), &truth, &named("held", rig.held_out()?), None, true)?;
    let mut oracle = SynthOracle {
        centroids: (0..truth.object_count())
            .map(|o| truth.centroid(o).map_or([f64::NAN; 3], Into::into))
            .collect(),
        post_centroids: Vec::new(),
    };
    if !remove.is_empty() {
        let after = truth.without(remove).settled();
        write_views(&out.join("post"), &after, &[("post".to_string(), rig.top()?)], None, false)?;
        write_views(&out.join("post_heldout"), &after, &named("held", rig.held_out()?), None, true)?;
        oracle.post_centroids = (0..truth.object_count()).map(|o| after.centroid(o).map(Into::into)).collect();
    }
    write_json(&out.join("oracle.json"), &oracle)
}

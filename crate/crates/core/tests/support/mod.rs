//! Independent reference implementations shared by the integration and
//! acceptance suites. Nothing here calls into the code paths it checks
//! beyond public data types and the function under test itself.
#![allow(dead_code)]

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatscene_core::raster::{RenderGrads, RenderOutput};
use splatscene_core::{Aabb, CameraView, Gaussian2D, Image, Palette, SceneSnapshot};

pub fn palette(n: usize) -> Palette {
    let colors = [[230, 40, 40], [40, 200, 60], [60, 80, 240], [240, 200, 40]];
    Palette::new(colors[..n].to_vec()).unwrap()
}

/// Camera on the -z side of the origin looking at it.
pub fn small_camera(size: usize) -> CameraView {
    CameraView::look_at(
        Vector3::new(0.15, -0.1, -1.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        size as f64 * 1.2,
        size,
        size,
    )
    .unwrap()
}

/// Random scene of `count` splats around the origin, sized to cover a few pixels
/// of a `size`×`size` image from [`small_camera`].
pub fn random_scene(seed: u64, count: usize, objects: usize) -> SceneSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = SceneSnapshot::new(
        objects,
        palette(objects),
        Aabb::new(Vector3::repeat(-0.5), Vector3::repeat(0.5)),
    );
    for _ in 0..count {
        let mean = Vector3::new(
            rng.random_range(-0.25..0.25),
            rng.random_range(-0.25..0.25),
            rng.random_range(-0.2..0.2),
        );
        let mut g = Gaussian2D::new(mean, objects + 1);
        g.rotation = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        g.log_scale = Vector2::new(rng.random_range(-3.2..-1.8), rng.random_range(-3.2..-1.8));
        g.opacity_raw = rng.random_range(-1.5..2.0);
        g.color = Vector3::new(rng.random(), rng.random(), rng.random());
        g.mask_color = Vector3::new(rng.random(), rng.random(), rng.random());
        g.object_logits = (0..=objects).map(|_| rng.random_range(-1.0..1.0)).collect();
        scene.gaussians.push(g);
    }
    scene
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(l: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = l.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-pixel compositor over every Gaussian: world-space ray-plane
/// intersection, no tiling, no bounding boxes, no early termination.
pub fn brute_force_render(scene: &SceneSnapshot, cam: &CameraView) -> RenderOutput {
    let channels = scene.object_count + 1;
    let (w, h) = (cam.width, cam.height);
    let mut out = RenderOutput {
        rgb: Image::new(w, h, 3),
        mask: Image::new(w, h, 3),
        onehot: Image::new(w, h, channels),
        depth: Image::new(w, h, 1),
        alpha: Image::new(w, h, 1),
    };
    let origin = cam.center();
    let forward = cam.forward();
    let r_t: Matrix3<f64> = cam.rotation.transpose();

    struct Splat {
        index: usize,
        depth: f64,
        axes: Matrix3<f64>,
        scale: Vector2<f64>,
        mean: Vector3<f64>,
        alpha: f64,
        g: Gaussian2D,
        weights: Vec<f64>,
    }
    let mut splats: Vec<Splat> = scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(index, g)| {
            let rot = UnitQuaternion::from_quaternion(g.rotation).to_rotation_matrix();
            Splat {
                index,
                depth: (g.mean - origin).dot(&forward),
                axes: *rot.matrix(),
                scale: g.log_scale.map(f64::exp),
                mean: g.mean,
                alpha: sigmoid(g.opacity_raw),
                weights: softmax(&g.object_logits),
                g: g.clone(),
            }
        })
        .filter(|s| s.depth > 1e-4)
        .collect();
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));

    for y in 0..h {
        for x in 0..w {
            let dir_cam = Vector3::new((x as f64 - cam.cx) / cam.fx, (y as f64 - cam.cy) / cam.fy, 1.0);
            let dir = r_t * dir_cam;
            let mut t_acc = 1.0;
            let mut rgb = Vector3::zeros();
            let mut mask = Vector3::zeros();
            let mut onehot = vec![0.0; channels];
            let mut dsum = 0.0;
            let mut asum = 0.0;
            for s in &splats {
                let tu: Vector3<f64> = s.axes.column(0).into();
                let tv: Vector3<f64> = s.axes.column(1).into();
                let n: Vector3<f64> = s.axes.column(2).into();
                let denom = n.dot(&dir);
                let mut plane = 0.0;
                let mut hit_depth = None;
                if denom.abs() > 1e-8 * dir.norm() {
                    let t = n.dot(&(s.mean - origin)) / denom;
                    if t > 0.0 {
                        let p = origin + dir * t;
                        let u = (p - s.mean).dot(&tu) / s.scale.x;
                        let v = (p - s.mean).dot(&tv) / s.scale.y;
                        if u * u + v * v <= 9.0 {
                            plane = (-(u * u + v * v) / 2.0).exp();
                            hit_depth = Some((p - origin).dot(&forward));
                        }
                    }
                }
                let c = cam.to_camera(&s.mean);
                let px = cam.fx * c.x / c.z + cam.cx;
                let py = cam.fy * c.y / c.z + cam.cy;
                let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                let lowpass = if d2 <= 1.5 * 1.5 { (-d2 / 0.5).exp() } else { 0.0 };
                let k = plane.max(lowpass);
                if k <= 0.0 {
                    continue;
                }
                let a = s.alpha * k;
                let wgt = a * t_acc;
                rgb += s.g.color * wgt;
                mask += s.g.mask_color * wgt;
                for c in 0..channels {
                    onehot[c] += s.weights[c] * wgt;
                }
                let layer_depth = hit_depth.unwrap_or(s.depth);
                dsum += layer_depth * wgt;
                asum += wgt;
                t_acc *= 1.0 - a;
            }
            out.rgb.pixel_mut(x, y).copy_from_slice(rgb.as_slice());
            out.mask.pixel_mut(x, y).copy_from_slice(mask.as_slice());
            out.onehot.pixel_mut(x, y).copy_from_slice(&onehot);
            out.depth.set(x, y, 0, dsum / asum.max(1e-8));
            out.alpha.set(x, y, 0, asum);
        }
    }
    out
}

pub fn max_channel_diff(a: &RenderOutput, b: &RenderOutput) -> f64 {
    [
        a.rgb.max_abs_diff(&b.rgb),
        a.mask.max_abs_diff(&b.mask),
        a.onehot.max_abs_diff(&b.onehot),
        a.depth.max_abs_diff(&b.depth),
        a.alpha.max_abs_diff(&b.alpha),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Random upstream gradients for every output buffer.
pub fn random_direction(seed: u64, w: usize, h: usize, channels: usize) -> RenderGrads {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = |c: usize| {
        Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    RenderGrads {
        rgb: img(3),
        mask: img(3),
        onehot: img(channels),
        depth: img(1),
        alpha: img(1),
    }
}

pub fn contract(out: &RenderOutput, dir: &RenderGrads) -> f64 {
    let dot = |a: &Image, b: &Image| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    dot(&out.rgb, &dir.rgb)
        + dot(&out.mask, &dir.mask)
        + dot(&out.onehot, &dir.onehot)
        + dot(&out.depth, &dir.depth)
        + dot(&out.alpha, &dir.alpha)
}

/// Flat view of every raw parameter of a Gaussian, with names for diagnostics.
pub fn param_slots(channels: usize) -> Vec<(&'static str, usize)> {
    let mut v = vec![
        ("mean", 3),
        ("rotation", 4),
        ("log_scale", 2),
        ("opacity_raw", 1),
        ("color", 3),
        ("mask_color", 3),
    ];
    v.push(("object_logits", channels));
    v
}

pub fn param_mut<'a>(g: &'a mut Gaussian2D, group: &str, k: usize) -> &'a mut f64 {
    match group {
        "mean" => &mut g.mean[k],
        "rotation" => &mut g.rotation.coords[k],
        "log_scale" => &mut g.log_scale[k],
        "opacity_raw" => &mut g.opacity_raw,
        "color" => &mut g.color[k],
        "mask_color" => &mut g.mask_color[k],
        "object_logits" => &mut g.object_logits[k],
        _ => unreachable!(),
    }
}

pub fn grad_value(g: &splatscene_core::GaussianGrad, group: &str, k: usize) -> f64 {
    match group {
        "mean" => g.mean[k],
        "rotation" => g.rotation.coords[k],
        "log_scale" => g.log_scale[k],
        "opacity_raw" => g.opacity_raw,
        "color" => g.color[k],
        "mask_color" => g.mask_color[k],
        "object_logits" => g.object_logits[k],
        _ => unreachable!(),
    }
}

#[derive(Debug)]
pub struct GradMismatch {
    pub gaussian: usize,
    pub param: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central finite differences of `loss(scene)` for every raw parameter,
/// compared with `analytic` at relative tolerance `rel_tol` wherever either
/// value exceeds `floor` in magnitude.
pub fn finite_difference_check(
    scene: &SceneSnapshot,
    analytic: &[splatscene_core::GaussianGrad],
    loss: impl Fn(&SceneSnapshot) -> f64,
    step: f64,
    rel_tol: f64,
    floor: f64,
) -> (usize, Vec<GradMismatch>) {
    let check = piecewise_finite_difference_check(scene, analytic, loss, |_| (), step, rel_tol, floor);
    (check.checked, check.bad)
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Stencils whose two ends have different `piece` values.
    pub straddled: usize,
    pub bad: Vec<GradMismatch>,
}

/// [`finite_difference_check`] for a piecewise-smooth loss. `piece` names the
/// smooth piece a scene lies on; a stencil whose ends lie on different pieces
/// crosses a jump, has no finite-difference derivative and is only counted.
pub fn piecewise_finite_difference_check<P: PartialEq>(
    scene: &SceneSnapshot,
    analytic: &[splatscene_core::GaussianGrad],
    loss: impl Fn(&SceneSnapshot) -> f64,
    piece: impl Fn(&SceneSnapshot) -> P,
    step: f64,
    rel_tol: f64,
    floor: f64,
) -> FdReport {
    let mut report = FdReport::default();
    let channels = scene.object_count + 1;
    for i in 0..scene.gaussians.len() {
        for (group, dim) in param_slots(channels) {
            for k in 0..dim {
                let mut plus = scene.clone();
                let mut minus = scene.clone();
                *param_mut(&mut plus.gaussians[i], group, k) += step;
                *param_mut(&mut minus.gaussians[i], group, k) -= step;
                if piece(&plus) != piece(&minus) {
                    report.straddled += 1;
                    continue;
                }
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
                let a = grad_value(&analytic[i], group, k);
                if a.abs() <= floor && numeric.abs() <= floor {
                    continue;
                }
                report.checked += 1;
                if (a - numeric).abs() > rel_tol * a.abs().max(numeric.abs()) {
                    report.bad.push(GradMismatch {
                        gaussian: i,
                        param: format!("{group}[{k}]"),
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
    }
    report
}

/// Depth order of the splats plus, per pixel and splat, whether the plane
/// term and the low-pass term lie inside their 3σ truncation. The rendered
/// image is smooth in the parameters while this stays fixed.
pub fn support_signature(scene: &SceneSnapshot, cam: &CameraView) -> (Vec<usize>, Vec<bool>) {
    let origin = cam.center();
    let forward = cam.forward();
    let r_t: Matrix3<f64> = cam.rotation.transpose();
    let mut order: Vec<(f64, usize)> = scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| ((g.mean - origin).dot(&forward), i))
        .filter(|(d, _)| *d > 1e-4)
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut inside = Vec::new();
    for y in 0..cam.height {
        for x in 0..cam.width {
            let dir = r_t * Vector3::new((x as f64 - cam.cx) / cam.fx, (y as f64 - cam.cy) / cam.fy, 1.0);
            for &(_, i) in &order {
                let g = &scene.gaussians[i];
                let rot = UnitQuaternion::from_quaternion(g.rotation).to_rotation_matrix();
                let axes = rot.matrix();
                let n: Vector3<f64> = axes.column(2).into();
                let denom = n.dot(&dir);
                let mut plane = false;
                if denom.abs() > 1e-8 * dir.norm() {
                    let t = n.dot(&(g.mean - origin)) / denom;
                    if t > 0.0 {
                        let q = origin + dir * t - g.mean;
                        let u = q.dot(&axes.column(0)) / g.log_scale.x.exp();
                        let v = q.dot(&axes.column(1)) / g.log_scale.y.exp();
                        plane = u * u + v * v <= 9.0;
                    }
                }
                let c = cam.to_camera(&g.mean);
                let d2 = (x as f64 - (cam.fx * c.x / c.z + cam.cx)).powi(2) + (y as f64 - (cam.fy * c.y / c.z + cam.cy)).powi(2);
                inside.push(plane);
                inside.push(d2 <= 1.5 * 1.5);
            }
        }
    }
    (order.into_iter().map(|(_, i)| i).collect(), inside)
}

/// Mean SSIM with an explicit 11×11 Gaussian window (σ = 1.5) evaluated pixel
/// by pixel; samples outside the image count as zero.
pub fn reference_ssim(a: &Image, b: &Image) -> f64 {
    let (w, h, c) = (a.width() as isize, a.height() as isize, a.channels());
    let mut window = [[0.0; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in window.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in window.iter().enumerate() {
                    for (j, wt) in row.iter().enumerate() {
                        let (sx, sy) = (x + j as isize - 5, y + i as isize - 5);
                        if sx < 0 || sy < 0 || sx >= w || sy >= h {
                            continue;
                        }
                        let wt = wt / norm;
                        let p = a.get(sx as usize, sy as usize, ch);
                        let q = b.get(sx as usize, sy as usize, ch);
                        mx += wt * p;
                        my += wt * q;
                        sxx += wt * p * p;
                        syy += wt * q * q;
                        sxy += wt * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    total / (w * h) as f64 / c as f64
}

/// Farthest point sampling by exhaustive search over the chosen set.
pub fn reference_fps(points: &[Vector3<f64>], count: usize) -> Vec<usize> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut first = 0;
    for i in 1..points.len() {
        if (points[i] - centroid).norm() > (points[first] - centroid).norm() {
            first = i;
        }
    }
    let mut chosen = vec![first];
    while chosen.len() < count {
        let mut best = 0;
        let mut best_d = -1.0;
        for i in 0..points.len() {
            let d = chosen.iter().map(|&c| (points[i] - points[c]).norm()).fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        chosen.push(best);
    }
    chosen
}

fn population_variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
}

/// Center-distance variance: each center's distance to its closest other center.
pub fn reference_distance_variance(centers: &[Vector3<f64>]) -> f64 {
    let d: Vec<f64> = (0..centers.len())
        .map(|i| {
            (0..centers.len())
                .filter(|&j| j != i)
                .map(|j| (centers[i] - centers[j]).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    population_variance(&d)
}

/// Object-aware loss of per-object point sets at the given `(n_g, n_n)` levels.
pub fn reference_object_loss(objects: &[Vec<Vector3<f64>>], levels: &[(usize, usize)], a_s: f64, a_d: f64) -> f64 {
    let mut total = 0.0;
    for &(groups, neighbors) in levels {
        for points in objects {
            if points.len() < groups + neighbors {
                continue;
            }
            let centers = reference_fps(points, groups);
            let mut sums = Vec::new();
            for &c in &centers {
                let mut others: Vec<(f64, usize)> = (0..points.len())
                    .filter(|&i| i != c)
                    .map(|i| ((points[i] - points[c]).norm(), i))
                    .collect();
                others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                sums.push(others[..neighbors].iter().map(|(d, _)| d).sum::<f64>());
            }
            let cpts: Vec<Vector3<f64>> = centers.iter().map(|&c| points[c]).collect();
            total += a_s * population_variance(&sums) + a_d * reference_distance_variance(&cpts);
        }
    }
    total
}

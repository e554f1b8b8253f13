//! Scene update after object removal: remove, back-project the remaining
//! objects into particles, simulate, carry each object's rigid motion onto its
//! Gaussians and refine against a single post-change view.

use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{top_camera, CameraView};
use crate::error::{Error, Result};
use crate::mpm::{
    backproject_confident, check_surface_density, merge_surfaces, particles_from_surfaces, simulate_with, ObjectMotion,
    Particle, SimConfig, SurfacePoints, Trajectory,
};
use crate::raster::render;
use crate::scene::{Aabb, SceneSnapshot, TrainingView};
use crate::train::{refine_with, TrainConfig};

/// Drops every Gaussian whose argmax object is in `ids`. Logit channels are kept.
pub fn remove_object(scene: &SceneSnapshot, ids: &[usize]) -> Result<SceneSnapshot> {
    if let Some(&bad) = ids.iter().find(|&&id| id >= scene.object_count) {
        return Err(Error::UnknownObject(bad));
    }
    let mut out = scene.clone();
    out.gaussians.retain(|g| !ids.contains(&g.object_id()));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub residual_rms: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
            residual_rms: 0.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn angle(&self) -> f64 {
        UnitQuaternion::from_rotation_matrix(&self.rotation).angle()
    }
}

/// Least-squares rigid fit mapping `start[i]` onto `end[i]`.
pub fn fit_rigid(start: &[Vector3<f64>], end: &[Vector3<f64>]) -> Result<RigidTransform> {
    if start.len() != end.len() {
        return Err(Error::ShapeMismatch(format!("{} start vs {} end points", start.len(), end.len())));
    }
    if start.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: start.len(),
        });
    }
    let n = start.len() as f64;
    let cs = start.iter().sum::<Vector3<f64>>() / n;
    let ce = end.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, e) in start.iter().zip(end) {
        let (a, b) = (s - cs, e - ce);
        h += a * b.transpose();
        spread += a * a.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut ev = [sv[0], sv[1], sv[2]];
    ev.sort_by(f64::total_cmp);
    if !(ev[1] > 1e-12 * ev[2].max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("rigid fit needs non-collinear points".into()));
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD of the cross-covariance failed".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = Rotation3::from_matrix_unchecked(r);
    let translation = ce - rotation * cs;
    let sq: f64 = start
        .iter()
        .zip(end)
        .map(|(s, e)| (rotation * s + translation - e).norm_squared())
        .sum();
    Ok(RigidTransform {
        rotation,
        translation,
        residual_rms: (sq / n).sqrt(),
    })
}

/// Cameras that observe the remaining objects to build their surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceViewConfig {
    /// Image size of the virtual views in pixels.
    pub resolution: usize,
    /// Number of oblique views on a ring, in addition to the top view.
    pub ring_views: usize,
    /// Elevation of the ring views in degrees.
    pub ring_elevation_deg: f64,
    /// Camera distance as a multiple of the object bounding radius.
    pub distance_factor: f64,
    /// Share of a pixel's alpha its object channel must hold to be used.
    pub min_label_confidence: f64,
    /// Surface points deeper than this inside a removed object's hull are dropped.
    pub support_margin: f64,
    /// Adds lattice particles inside each object's support polytope.
    pub fill_interior: bool,
}

impl Default for SurfaceViewConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            ring_views: 4,
            ring_elevation_deg: 35.0,
            distance_factor: 3.0,
            min_label_confidence: 0.9,
            support_margin: 0.003,
            fill_interior: true,
        }
    }
}

impl SurfaceViewConfig {
    /// Top view followed by the ring views, framing `bounds`.
    pub fn cameras(&self, bounds: &Aabb) -> Result<Vec<CameraView>> {
        if self.resolution == 0 || !(self.distance_factor > 1.0) {
            return Err(Error::Config(format!("invalid surface view config {self:?}")));
        }
        let center = bounds.center();
        let radius = (bounds.extent().norm() / 2.0).max(1e-3);
        let distance = radius * self.distance_factor;
        let half = (radius / distance).asin();
        let focal = self.resolution as f64 / 2.0 / half.tan();
        let size = self.resolution;
        let mut cams = vec![top_camera(center, distance, focal, size, size)?];
        let elevation = self.ring_elevation_deg.to_radians();
        for i in 0..self.ring_views {
            let phi = std::f64::consts::TAU * i as f64 / self.ring_views as f64 + 0.25 * std::f64::consts::PI;
            let dir = Vector3::new(elevation.cos() * phi.cos(), elevation.cos() * phi.sin(), elevation.sin());
            cams.push(CameraView::look_at(center + dir * distance, center, Vector3::z(), focal, size, size)?);
        }
        Ok(cams)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateConfig {
    /// Fields left out of a partial table keep the update defaults below.
    #[serde(deserialize_with = "simulation_over_defaults")]
    pub simulation: SimConfig,
    pub views: SurfaceViewConfig,
    pub refine_iterations: usize,
    /// Refinement settings; `iterations` is overridden by `refine_iterations`.
    pub refine: TrainConfig,
    /// When false, surviving objects keep their pose.
    pub simulate: bool,
}

fn update_simulation() -> SimConfig {
    SimConfig {
        step_duration: Some(0.005),
        ..SimConfig::default()
    }
}

fn merge_json(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn simulation_over_defaults<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<SimConfig, D::Error> {
    use serde::de::Error as _;
    let over = serde_json::Value::deserialize(d)?;
    let mut base = serde_json::to_value(update_simulation()).map_err(D::Error::custom)?;
    merge_json(&mut base, over);
    serde_json::from_value(base).map_err(D::Error::custom)
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            simulation: update_simulation(),
            views: SurfaceViewConfig::default(),
            refine_iterations: 100,
            refine: TrainConfig::refinement(100),
            simulate: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct UpdateRequest {
    pub scene: SceneSnapshot,
    pub removed: Vec<usize>,
    pub post_view: TrainingView,
    pub config: UpdateConfig,
}

impl UpdateRequest {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if let Some(&bad) = self.removed.iter().find(|&&id| id >= self.scene.object_count) {
            return Err(Error::UnknownObject(bad));
        }
        self.post_view.validate(self.scene.object_count)?;
        self.config.simulation.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTransform {
    pub object: usize,
    pub gaussians: usize,
    pub particles: usize,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub angle_rad: f64,
    pub residual_rms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateTimings {
    pub surface_s: f64,
    pub simulate_s: f64,
    pub refine_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    /// Scene after removal and motion transfer, before refinement.
    pub moved: SceneSnapshot,
    /// Final scene after refinement.
    pub scene: SceneSnapshot,
    pub transforms: Vec<ObjectTransform>,
    pub motion: Vec<ObjectMotion>,
    pub particles: usize,
    pub timings: UpdateTimings,
}

/// Per-object surface points of `scene` seen from `cameras`.
pub fn scene_surfaces(scene: &SceneSnapshot, cameras: &[CameraView], min_confidence: f64) -> Result<Vec<SurfacePoints>> {
    let mut sets = Vec::new();
    for cam in cameras {
        let out = render(scene, cam)?;
        sets.extend(backproject_confident(&out.depth, &out.onehot, &out.alpha, cam, min_confidence)?);
    }
    Ok(merge_surfaces(sets))
}

const SUPPORT_QUANTILE: f64 = 0.98;

/// Outer bound of a point set's convex hull from its support along fixed
/// directions: the 26 lattice directions and a 48-point spherical spiral.
/// The support along each direction is a high quantile of the projections,
/// so a few stray points do not inflate it.
#[derive(Clone, Debug)]
pub struct SupportPolytope {
    planes: Vec<(Vector3<f64>, f64)>,
}

impl SupportPolytope {
    pub fn from_points(points: &[Vector3<f64>], quantile: f64) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut dirs = Vec::new();
        for i in -1i32..=1 {
            for j in -1i32..=1 {
                for k in -1i32..=1 {
                    if (i, j, k) != (0, 0, 0) {
                        dirs.push(Vector3::new(i as f64, j as f64, k as f64).normalize());
                    }
                }
            }
        }
        let n = 48;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            dirs.push(Vector3::new(r * phi.cos(), r * phi.sin(), z));
        }
        let planes = dirs
            .into_iter()
            .map(|d| {
                let mut proj: Vec<f64> = points.iter().map(|p| d.dot(p)).collect();
                let k = ((proj.len() - 1) as f64 * quantile.clamp(0.0, 1.0)).round() as usize;
                let (_, support, _) = proj.select_nth_unstable_by(k, f64::total_cmp);
                (d, *support)
            })
            .collect();
        Some(Self { planes })
    }

    /// Lattice points at `spacing` strictly inside the polytope.
    pub fn fill(&self, spacing: f64) -> Vec<Vector3<f64>> {
        let axis = |d: Vector3<f64>| {
            self.planes
                .iter()
                .find(|(n, _)| (n - d).norm() < 1e-12)
                .map_or(f64::NAN, |(_, s)| *s)
        };
        let hi = Vector3::new(axis(Vector3::x()), axis(Vector3::y()), axis(Vector3::z()));
        let lo = -Vector3::new(axis(-Vector3::x()), axis(-Vector3::y()), axis(-Vector3::z()));
        if !(spacing > 0.0) || !(hi - lo).iter().all(|e| e.is_finite() && *e > 0.0) {
            return Vec::new();
        }
        let n = (hi - lo).map(|e| (e / spacing).floor() as usize + 1);
        let mut out = Vec::new();
        for i in 0..n.x {
            for j in 0..n.y {
                for k in 0..n.z {
                    let p = lo + Vector3::new(i as f64, j as f64, k as f64) * spacing;
                    if self.depth(&p) > 0.0 {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    /// Distance to the nearest face, positive inside.
    pub fn depth(&self, p: &Vector3<f64>) -> f64 {
        self.planes
            .iter()
            .map(|(d, s)| s - d.dot(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Object ids that own at least one Gaussian.
pub fn present_objects(scene: &SceneSnapshot) -> Vec<usize> {
    let mut ids: Vec<usize> = scene
        .gaussians
        .iter()
        .map(|g| g.object_id())
        .filter(|&id| id < scene.object_count)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Applies a rigid transform to every Gaussian of `object`.
pub fn transform_object(scene: &mut SceneSnapshot, object: usize, t: &RigidTransform) {
    let q = UnitQuaternion::from_rotation_matrix(&t.rotation);
    for g in scene.gaussians.iter_mut().filter(|g| g.object_id() == object) {
        g.mean = t.apply(&g.mean);
        g.rotation = q.quaternion() * g.rotation;
    }
}

/// Surface extraction, particle sampling and simulation of `objects`.
/// Surfaces are read from renders of `observed`, the scene as it was before
/// removal, so Gaussians that were hidden behind a removed object do not enter
/// the particle set. Returns the trajectory, per-object transforms and the
/// surface extraction time.
pub fn simulate_objects(
    observed: &SceneSnapshot,
    removed: &[usize],
    objects: &[usize],
    config: &UpdateConfig,
    observer: impl FnMut(usize, &[Particle]) -> Result<()>,
) -> Result<(Trajectory, Vec<(usize, RigidTransform)>, f64)> {
    let t0 = Instant::now();
    let member_means: Vec<Vector3<f64>> = observed
        .gaussians
        .iter()
        .filter(|g| objects.contains(&g.object_id()))
        .map(|g| g.mean)
        .collect();
    let bounds = Aabb::from_points(&member_means).ok_or(Error::Empty("object gaussians"))?;
    let cameras = config.views.cameras(&bounds)?;
    let mut sets = scene_surfaces(observed, &cameras, config.views.min_label_confidence)?;
    sets.retain(|s| objects.contains(&s.object));
    for id in removed {
        let hull: Vec<Vector3<f64>> = observed.members(*id).iter().map(|&i| observed.gaussians[i].mean).collect();
        if let Some(hull) = SupportPolytope::from_points(&hull, SUPPORT_QUANTILE) {
            for set in sets.iter_mut() {
                let keep: Vec<bool> = set.points.iter().map(|p| hull.depth(p) <= config.views.support_margin).collect();
                let mut k = keep.iter();
                set.points.retain(|_| *k.next().unwrap());
                let mut k = keep.iter();
                set.normals.retain(|_| *k.next().unwrap());
            }
        }
    }
    for &object in objects {
        if !sets.iter().any(|s| s.object == object) {
            sets.push(SurfacePoints {
                object,
                points: Vec::new(),
                normals: Vec::new(),
            });
        }
    }
    sets.sort_by_key(|s| s.object);
    check_surface_density(&sets)?;
    if config.views.fill_interior {
        for set in sets.iter_mut() {
            if let Some(hull) = SupportPolytope::from_points(&set.points, SUPPORT_QUANTILE) {
                let inner = hull.fill(config.simulation.spacing);
                set.normals.extend(std::iter::repeat_n(Vector3::zeros(), inner.len()));
                set.points.extend(inner);
            }
        }
    }
    let system = particles_from_surfaces(&sets, config.simulation.spacing, &config.simulation.material)?;
    let surface_s = t0.elapsed().as_secs_f64();
    let trajectory = simulate_with(&system, &config.simulation, observer)?;
    let mut fits = Vec::new();
    for &object in objects {
        let (start, end) = trajectory.object_pairs(object);
        fits.push((object, fit_rigid(&start, &end)?));
    }
    Ok((trajectory, fits, surface_s))
}

/// Removal, simulation, motion transfer and refinement. The request is only
/// read, so a failure at any stage leaves the input scene untouched.
pub fn apply_update(req: &UpdateRequest) -> Result<UpdateOutcome> {
    apply_update_with(req, |_, _| Ok(()))
}

/// [`apply_update`] with an observer of the particle state after every step.
pub fn apply_update_with(
    req: &UpdateRequest,
    observer: impl FnMut(usize, &[Particle]) -> Result<()>,
) -> Result<UpdateOutcome> {
    req.validate()?;
    let start = Instant::now();
    let mut moved = remove_object(&req.scene, &req.removed)?;
    let mut timings = UpdateTimings::default();
    let mut transforms = Vec::new();
    let mut motion = Vec::new();
    let mut particles = 0;

    let survivors = present_objects(&moved);
    if req.config.simulate && !survivors.is_empty() {
        let t_sim = Instant::now();
        let (trajectory, fits, surface_s) = simulate_objects(&req.scene, &req.removed, &survivors, &req.config, observer)?;
        timings.surface_s = surface_s;
        timings.simulate_s = t_sim.elapsed().as_secs_f64() - surface_s;
        particles = trajectory.end.len();
        motion = trajectory.summary();
        for (object, fit) in fits {
            let gaussians = moved.members(object).len();
            transform_object(&mut moved, object, &fit);
            let r = fit.rotation.matrix();
            transforms.push(ObjectTransform {
                object,
                gaussians,
                particles: motion.iter().find(|m| m.object == object).map_or(0, |m| m.particles),
                rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
                translation: fit.translation.into(),
                angle_rad: fit.angle(),
                residual_rms: fit.residual_rms,
            });
        }
    }

    let t_refine = Instant::now();
    let refine_config = TrainConfig {
        iterations: req.config.refine_iterations,
        ..req.config.refine.clone()
    };
    let scene = if moved.is_empty() || refine_config.iterations == 0 {
        moved.clone()
    } else {
        refine_with(moved.clone(), &req.post_view, &refine_config)?.scene
    };
    timings.refine_s = t_refine.elapsed().as_secs_f64();
    timings.total_s = start.elapsed().as_secs_f64();
    Ok(UpdateOutcome {
        moved,
        scene,
        transforms,
        motion,
        particles,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tetra() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(0.0, 0.2, 0.0),
            Vector3::new(0.0, 0.0, 0.3),
            Vector3::new(0.05, 0.07, 0.02),
        ]
    }

    #[test]
    fn identity_fit() {
        let p = tetra();
        let fit = fit_rigid(&p, &p).unwrap();
        assert!((fit.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
        assert!(fit.translation.norm() < 1e-12);
    }

    #[test]
    fn translation_fit() {
        let p = tetra();
        let q: Vec<_> = p.iter().map(|v| v + Vector3::new(0.0, 0.0, -0.05)).collect();
        let fit = fit_rigid(&p, &q).unwrap();
        assert!((fit.rotation.matrix() - Matrix3::identity()).norm() < 1e-9);
        assert_relative_eq!(fit.translation, Vector3::new(0.0, 0.0, -0.05), epsilon = 1e-9);
        assert!(fit.residual_rms < 1e-12);
    }

    #[test]
    fn reflection_is_not_returned() {
        let p = tetra();
        let q: Vec<_> = p.iter().map(|v| Vector3::new(v.x, v.y, -v.z)).collect();
        let fit = fit_rigid(&p, &q).unwrap();
        assert_relative_eq!(fit.rotation.matrix().determinant(), 1.0, epsilon = 1e-12);
        assert!(fit.residual_rms > 0.0);
    }

    #[test]
    fn degenerate_fits() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(fit_rigid(&line, &line), Err(Error::Degenerate(_))));
        assert!(matches!(fit_rigid(&line[..2], &line[..2]), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn surface_cameras_see_the_bounds_center() {
        let bounds = Aabb::new(Vector3::new(-0.1, -0.1, 0.0), Vector3::new(0.1, 0.1, 0.1));
        let cams = SurfaceViewConfig::default().cameras(&bounds).unwrap();
        assert_eq!(cams.len(), 5);
        for cam in &cams {
            let p = cam.project(&cam.to_camera(&bounds.center()));
            assert!((p.x - 64.0).abs() < 1e-9 && (p.y - 64.0).abs() < 1e-9);
        }
    }
}

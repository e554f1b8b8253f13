//! Analytic box scenes, ray-cast into training views and ground-truth depth.
//! Objects rest on the ground plane z = 0, which itself is not rendered.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::camera::{ring_cameras, top_camera, CameraView};
use crate::error::{Error, Result};
use crate::gaussian::{logit, Gaussian2D};
use crate::image::Image;
use crate::scene::{Aabb, Palette, SceneSnapshot, TrainingView};

/// Supersampling factor per axis for the color image.
const SUPERSAMPLE: usize = 3;
/// Edge length of the checker texture on box faces (m).
const CHECKER: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct BoxObject {
    pub object: usize,
    pub center: Vector3<f64>,
    pub half: Vector3<f64>,
    /// Rotation about the world z axis (radians).
    pub yaw: f64,
    /// Base colors of the -x, +x, -y, +y, -z, +z faces.
    pub face_colors: [Vector3<f64>; 6],
}

impl BoxObject {
    pub fn new(object: usize, center: Vector3<f64>, half: Vector3<f64>, yaw: f64, base: Vector3<f64>) -> Self {
        let shade = [0.55, 0.8, 0.65, 0.9, 0.4, 1.0];
        let face_colors = shade.map(|s| (base * s).map(|c| c.clamp(0.0, 1.0)));
        Self {
            object,
            center,
            half,
            yaw,
            face_colors,
        }
    }

    fn rotation(&self) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw).matrix()
    }

    /// Nearest intersection along `origin + t * dir` with t > 0: (t, face, local hit).
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, Vector3<f64>)> {
        let r = self.rotation();
        let o = r.transpose() * (origin - self.center);
        let d = r.transpose() * dir;
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut face = 0;
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if o[k].abs() > self.half[k] {
                    return None;
                }
                continue;
            }
            let t1 = (-self.half[k] - o[k]) / d[k];
            let t2 = (self.half[k] - o[k]) / d[k];
            let (lo, hi, f) = if t1 < t2 { (t1, t2, 2 * k) } else { (t2, t1, 2 * k + 1) };
            if lo > t_near {
                t_near = lo;
                face = f;
            }
            t_far = t_far.min(hi);
        }
        if t_near > t_far || t_near <= 0.0 {
            return None;
        }
        Some((t_near, face, o + d * t_near))
    }

    fn shade(&self, face: usize, local: &Vector3<f64>) -> Vector3<f64> {
        let axis = face / 2;
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let cell = ((local[a] + self.half[a]) / CHECKER).floor() as i64 + ((local[b] + self.half[b]) / CHECKER).floor() as i64;
        let k = if cell.rem_euclid(2) == 0 { 1.0 } else { 0.7 };
        self.face_colors[face] * k
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let r = self.rotation();
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = self.center + r * self.half.component_mul(&s);
        }
        out
    }

    pub fn bottom(&self) -> f64 {
        self.center.z - self.half.z
    }

    /// Splats tiling every face on a grid of roughly `spacing`, facing outward.
    pub fn surfels(&self, spacing: f64, channels: usize, mask_color: Vector3<f64>) -> Vec<Gaussian2D> {
        let r = self.rotation();
        let mut out = Vec::new();
        for face in 0..6 {
            let axis = face / 2;
            let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            let na = ((2.0 * self.half[a] / spacing).round() as usize).max(1);
            let nb = ((2.0 * self.half[b] / spacing).round() as usize).max(1);
            let (ea, eb) = (Vector3::ith(a, 1.0), Vector3::ith(b, 1.0));
            let normal = Vector3::ith(axis, sign);
            let tb = if sign > 0.0 { eb } else { -eb };
            let frame = Matrix3::from_columns(&[r * ea, r * tb, r * normal]);
            let rotation = *UnitQuaternion::from_matrix(&frame).quaternion();
            let (da, db) = (2.0 * self.half[a] / na as f64, 2.0 * self.half[b] / nb as f64);
            for i in 0..na {
                for j in 0..nb {
                    let mut local = normal * self.half[axis];
                    local[a] = -self.half[a] + (i as f64 + 0.5) * da;
                    local[b] = -self.half[b] + (j as f64 + 0.5) * db;
                    let mut g = Gaussian2D::new(self.center + r * local, channels);
                    g.rotation = rotation;
                    g.log_scale = Vector2::new(0.6 * da, 0.6 * db).map(f64::ln);
                    g.opacity_raw = logit(0.95);
                    g.color = self.shade(face, &local);
                    g.mask_color = mask_color;
                    g.object_logits[self.object] = 8.0;
                    out.push(g);
                }
            }
        }
        out
    }
}

/// Surface hit seen through one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    /// Camera-frame depth (m).
    pub depth: f64,
    pub object: usize,
    pub color: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub boxes: Vec<BoxObject>,
    pub palette: Palette,
}

impl SyntheticScene {
    /// Two separated boxes on the ground.
    pub fn two_objects() -> Self {
        Self {
            boxes: vec![
                BoxObject::new(
                    0,
                    Vector3::new(-0.045, -0.01, 0.04),
                    Vector3::new(0.03, 0.03, 0.04),
                    0.0,
                    Vector3::new(0.9, 0.55, 0.2),
                ),
                BoxObject::new(
                    1,
                    Vector3::new(0.05, 0.025, 0.03),
                    Vector3::new(0.025, 0.035, 0.03),
                    0.4,
                    Vector3::new(0.25, 0.6, 0.95),
                ),
            ],
            palette: Palette::new(vec![[230, 60, 60], [60, 200, 90]]).expect("valid palette"),
        }
    }

    /// A 10×10×8 cm block carrying a 6×6×5 cm block; object 0 is the support.
    pub fn stacked_pair() -> Self {
        Self {
            boxes: vec![
                BoxObject::new(
                    0,
                    Vector3::new(0.0, 0.0, 0.04),
                    Vector3::new(0.05, 0.05, 0.04),
                    0.0,
                    Vector3::new(0.9, 0.55, 0.2),
                ),
                BoxObject::new(
                    1,
                    Vector3::new(0.0, 0.0, 0.105),
                    Vector3::new(0.03, 0.03, 0.025),
                    0.0,
                    Vector3::new(0.25, 0.6, 0.95),
                ),
            ],
            palette: Palette::new(vec![[230, 60, 60], [60, 200, 90]]).expect("valid palette"),
        }
    }

    pub fn object_count(&self) -> usize {
        self.palette.len()
    }

    /// Scene with the listed objects taken out (nothing else moves).
    pub fn without(&self, objects: &[usize]) -> Self {
        Self {
            boxes: self.boxes.iter().filter(|b| !objects.contains(&b.object)).cloned().collect(),
            palette: self.palette.clone(),
        }
    }

    /// Scene with `object` moved by `offset`.
    pub fn translated(&self, object: usize, offset: Vector3<f64>) -> Self {
        let mut out = self.clone();
        for b in out.boxes.iter_mut().filter(|b| b.object == object) {
            b.center += offset;
        }
        out
    }

    /// Every box dropped straight down until it rests on the ground or on a
    /// box whose footprint overlaps its own. Boxes are yaw-only, so the drop
    /// is a vertical translation.
    pub fn settled(&self) -> Self {
        let footprint = |b: &BoxObject| {
            let c = b.corners();
            let (mut lo, mut hi) = (c[0].xy(), c[0].xy());
            for p in &c {
                lo = lo.inf(&p.xy());
                hi = hi.sup(&p.xy());
            }
            (lo, hi)
        };
        let mut order: Vec<usize> = (0..self.boxes.len()).collect();
        order.sort_by(|&a, &b| self.boxes[a].bottom().total_cmp(&self.boxes[b].bottom()));
        let mut out = self.clone();
        let mut placed: Vec<usize> = Vec::new();
        for i in order {
            let (lo, hi) = footprint(&out.boxes[i]);
            let rest = placed
                .iter()
                .map(|&j| &out.boxes[j])
                .filter(|o| {
                    let (olo, ohi) = footprint(o);
                    lo.x < ohi.x && olo.x < hi.x && lo.y < ohi.y && olo.y < hi.y
                })
                .map(|o| o.center.z + o.half.z)
                .fold(0.0, f64::max);
            let drop = out.boxes[i].bottom() - rest;
            out.boxes[i].center.z -= drop.max(0.0);
            placed.push(i);
        }
        out
    }

    /// Tight box around all objects.
    pub fn object_bounds(&self) -> Option<Aabb> {
        let corners: Vec<Vector3<f64>> = self.boxes.iter().flat_map(|b| b.corners()).collect();
        Aabb::from_points(&corners)
    }

    /// Gaussian scene of face-tiling splats, a stand-in for a converged reconstruction.
    pub fn splats(&self, spacing: f64) -> Result<SceneSnapshot> {
        let bounds = self.object_bounds().ok_or(Error::Empty("boxes"))?.expanded(0.2);
        let mut scene = SceneSnapshot::new(self.object_count(), self.palette.clone(), bounds);
        for b in &self.boxes {
            let mask = self.palette.color_f64(b.object).ok_or(Error::UnknownObject(b.object))?;
            scene.gaussians.extend(b.surfels(spacing, scene.channels(), mask));
        }
        Ok(scene)
    }

    pub fn centroid(&self, object: usize) -> Option<Vector3<f64>> {
        self.boxes.iter().find(|b| b.object == object).map(|b| b.center)
    }

    pub fn raycast(&self, cam: &CameraView, x: f64, y: f64) -> Option<Hit> {
        let origin = cam.center();
        let ray_cam = cam.ray(x, y);
        let dir = cam.rotation.transpose() * ray_cam;
        let mut best: Option<Hit> = None;
        for b in &self.boxes {
            if let Some((t, face, local)) = b.intersect(&origin, &dir) {
                // `dir` has unit camera-frame z, so the ray parameter is the depth.
                if best.is_none_or(|h| t < h.depth) {
                    best = Some(Hit {
                        depth: t,
                        object: b.object,
                        color: b.shade(face, &local),
                    });
                }
            }
        }
        best
    }

    /// Ground-truth depth (0 where no object is hit).
    pub fn depth_map(&self, cam: &CameraView) -> Image {
        let mut depth = Image::new(cam.width, cam.height, 1);
        for y in 0..cam.height {
            for x in 0..cam.width {
                if let Some(h) = self.raycast(cam, x as f64, y as f64) {
                    depth.set(x, y, 0, h.depth);
                }
            }
        }
        depth
    }

    /// Color, segmentation and labels as seen from `cam`. Color is
    /// supersampled; mask and labels use the pixel center.
    pub fn render_view(&self, name: &str, cam: &CameraView) -> TrainingView {
        let n = self.object_count();
        let (w, h) = (cam.width, cam.height);
        let mut rgb = Image::new(w, h, 3);
        let mut mask = Image::new(w, h, 3);
        let mut labels = Image::new(w, h, n + 1);
        let ss = SUPERSAMPLE as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = Vector3::zeros();
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / ss - 0.5;
                        let py = y as f64 + (sy as f64 + 0.5) / ss - 0.5;
                        if let Some(hit) = self.raycast(cam, px, py) {
                            acc += hit.color;
                        }
                    }
                }
                acc /= ss * ss;
                rgb.pixel_mut(x, y).copy_from_slice(acc.as_slice());
                match self.raycast(cam, x as f64, y as f64) {
                    Some(hit) => {
                        let c = self.palette.color_f64(hit.object).expect("object in palette");
                        mask.pixel_mut(x, y).copy_from_slice(c.as_slice());
                        labels.set(x, y, hit.object, 1.0);
                    }
                    None => labels.set(x, y, n, 1.0),
                }
            }
        }
        TrainingView {
            name: name.to_string(),
            rgb,
            mask_rgb: mask,
            onehot_labels: labels,
            camera: cam.clone(),
        }
    }
}

/// Camera layout of the regression scenes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigConfig {
    pub target: Vector3<f64>,
    pub radius: f64,
    pub height: f64,
    pub focal: f64,
    pub size: usize,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            target: Vector3::new(0.0, 0.0, 0.04),
            radius: 0.35,
            height: 0.25,
            focal: 110.0,
            size: 64,
        }
    }
}

impl RigConfig {
    /// Six training cameras at 60° intervals.
    pub fn training(&self) -> Result<Vec<CameraView>> {
        ring_cameras(6, self.target, self.radius, self.height, 0.0, self.focal, self.size, self.size)
    }

    /// Held-out cameras halfway between the training azimuths.
    pub fn held_out(&self) -> Result<Vec<CameraView>> {
        ring_cameras(
            3,
            self.target,
            self.radius,
            self.height,
            std::f64::consts::PI / 6.0,
            self.focal,
            self.size,
            self.size,
        )
    }

    /// Bird's-eye view used after a scene change.
    pub fn top(&self) -> Result<CameraView> {
        let distance = (self.radius * self.radius + self.height * self.height).sqrt();
        top_camera(self.target, distance, self.focal, self.size, self.size)
    }
}

//! Splat projection and the ray-splat intersection kernel.

use nalgebra::{Point2, Vector2, Vector3};

use super::{CUTOFF_SIGMAS, LOWPASS_SIGMA, NEAR_PLANE, PARALLEL_EPS};
use crate::camera::CameraView;
use crate::gaussian::ActivatedGaussian;

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// A Gaussian prepared for rasterization in one camera. All vectors are in the camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatPrimitive {
    pub index: usize,
    /// Camera-space z of the mean.
    pub depth: f64,
    pub bbox: PixelRect,
    pub center: Vector3<f64>,
    pub tangent_u: Vector3<f64>,
    pub tangent_v: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub scale: Vector2<f64>,
    /// Projected mean in pixel coordinates.
    pub screen: Point2<f64>,
    /// Tangents divided by their scales.
    pub axis_u: Vector3<f64>,
    pub axis_v: Vector3<f64>,
    /// `normal · center`, `axis_u · center`, `axis_v · center`.
    pub plane_offset: f64,
    pub center_u: f64,
    pub center_v: f64,
}

/// Ray-plane intersection in splat-local units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneHit {
    pub u: f64,
    pub v: f64,
    /// Ray parameter; equals the camera-space depth of the hit since rays have z = 1.
    pub t: f64,
}

/// Truncated kernel evaluation used while compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSample {
    pub weight: f64,
    /// Whether `weight` comes from the plane term (otherwise from the low-pass term).
    pub from_plane: bool,
    /// Plane intersection, present when it lies inside the 3σ support.
    pub hit: Option<PlaneHit>,
    /// Depth contributed to the depth channel: the hit depth when present, else the mean depth.
    pub depth: f64,
}

/// Projects an activated Gaussian into `cam`, or `None` when culled.
pub fn project(index: usize, g: &ActivatedGaussian, cam: &CameraView) -> Option<SplatPrimitive> {
    let center = cam.to_camera(&g.mean);
    if center.z <= NEAR_PLANE {
        return None;
    }
    let axes = cam.rotation * g.axes;
    let tangent_u: Vector3<f64> = axes.column(0).into();
    let tangent_v: Vector3<f64> = axes.column(1).into();
    let normal: Vector3<f64> = axes.column(2).into();
    let screen = cam.project(&center);

    let (w, h) = (cam.width as f64, cam.height as f64);
    let lp = CUTOFF_SIGMAS * LOWPASS_SIGMA;
    let (mut lo, mut hi) = (
        Vector2::new(screen.x - lp, screen.y - lp),
        Vector2::new(screen.x + lp, screen.y + lp),
    );
    match support_extent(&center, &tangent_u, &tangent_v, &g.scale, cam) {
        Some((c, half)) => {
            let half = half.add_scalar(1e-7);
            lo = lo.inf(&(c - half));
            hi = hi.sup(&(c + half));
        }
        None => {
            lo = Vector2::new(0.0, 0.0);
            hi = Vector2::new(w - 1.0, h - 1.0);
        }
    }
    let x0 = lo.x.max(0.0).ceil();
    let y0 = lo.y.max(0.0).ceil();
    let x1 = hi.x.min(w - 1.0).floor();
    let y1 = hi.y.min(h - 1.0).floor();
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    let axis_u = tangent_u / g.scale.x;
    let axis_v = tangent_v / g.scale.y;
    Some(SplatPrimitive {
        index,
        depth: center.z,
        bbox: PixelRect {
            x0: x0 as usize,
            y0: y0 as usize,
            x1: x1 as usize,
            y1: y1 as usize,
        },
        center,
        tangent_u,
        tangent_v,
        normal,
        scale: g.scale,
        screen,
        axis_u,
        axis_v,
        plane_offset: normal.dot(&center),
        center_u: axis_u.dot(&center),
        center_v: axis_v.dot(&center),
    })
}

/// Center and half extent of the image-space bounding box of the 3σ disk,
/// from the dual conic of its projection. `None` when the disk reaches the
/// camera plane and the projection is unbounded.
fn support_extent(
    center: &Vector3<f64>,
    tangent_u: &Vector3<f64>,
    tangent_v: &Vector3<f64>,
    scale: &Vector2<f64>,
    cam: &CameraView,
) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let a = tangent_u * (CUTOFF_SIGMAS * scale.x);
    let b = tangent_v * (CUTOFF_SIGMAS * scale.y);
    let row = |f: f64, c: f64, k: usize| Vector3::new(f * a[k] + c * a.z, f * b[k] + c * b.z, f * center[k] + c * center.z);
    let t0 = row(cam.fx, cam.cx, 0);
    let t1 = row(cam.fy, cam.cy, 1);
    let t2 = Vector3::new(a.z, b.z, center.z);
    let dual = |p: &Vector3<f64>, q: &Vector3<f64>| p.x * q.x + p.y * q.y - p.z * q.z;
    let c22 = dual(&t2, &t2);
    if c22 >= -1e-12 * center.z * center.z {
        return None;
    }
    let mid = Vector2::new(dual(&t0, &t2) / c22, dual(&t1, &t2) / c22);
    let half = Vector2::new(
        (mid.x * mid.x - dual(&t0, &t0) / c22).max(0.0).sqrt(),
        (mid.y * mid.y - dual(&t1, &t1) / c22).max(0.0).sqrt(),
    );
    Some((mid, half))
}

#[inline]
fn intersect(prim: &SplatPrimitive, ray: &Vector3<f64>, ray_norm: f64) -> Option<PlaneHit> {
    let b = prim.normal.dot(ray);
    if b.abs() <= PARALLEL_EPS * ray_norm {
        return None;
    }
    let t = prim.plane_offset / b;
    if t <= 0.0 {
        return None;
    }
    Some(PlaneHit {
        u: t * prim.axis_u.dot(ray) - prim.center_u,
        v: t * prim.axis_v.dot(ray) - prim.center_v,
        t,
    })
}

#[inline]
fn lowpass_d2(prim: &SplatPrimitive, x: f64, y: f64) -> f64 {
    let dx = x - prim.screen.x;
    let dy = y - prim.screen.y;
    dx * dx + dy * dy
}

/// Untruncated kernel value: the larger of the plane Gaussian at the ray-splat
/// intersection and a 0.5 px screen-space Gaussian around the projected mean.
/// A degenerate (parallel or behind-camera) intersection contributes 0 to the plane term.
pub fn kernel_weight(prim: &SplatPrimitive, x: f64, y: f64, cam: &CameraView) -> f64 {
    let ray = cam.ray(x, y);
    let plane = intersect(prim, &ray, ray.norm()).map_or(0.0, |h| (-(h.u * h.u + h.v * h.v) / 2.0).exp());
    let lowpass = (-lowpass_d2(prim, x, y) / (2.0 * LOWPASS_SIGMA * LOWPASS_SIGMA)).exp();
    plane.max(lowpass)
}

/// Kernel with both terms truncated at their 3σ support; `None` outside both.
#[inline]
pub fn sample(prim: &SplatPrimitive, x: f64, y: f64, cam: &CameraView) -> Option<KernelSample> {
    let ray = cam.ray(x, y);
    sample_ray(prim, &ray, ray.norm(), x, y)
}

/// [`sample`] with the pixel ray (and its norm) supplied by the caller.
#[inline]
pub fn sample_ray(prim: &SplatPrimitive, ray: &Vector3<f64>, ray_norm: f64, x: f64, y: f64) -> Option<KernelSample> {
    const CUT2: f64 = CUTOFF_SIGMAS * CUTOFF_SIGMAS;
    let hit = intersect(prim, ray, ray_norm).filter(|h| h.u * h.u + h.v * h.v <= CUT2);
    let q_plane = hit.map_or(f64::INFINITY, |h| (h.u * h.u + h.v * h.v) / 2.0);
    let d2 = lowpass_d2(prim, x, y);
    let q_low = if d2 <= CUT2 * LOWPASS_SIGMA * LOWPASS_SIGMA {
        d2 / (2.0 * LOWPASS_SIGMA * LOWPASS_SIGMA)
    } else {
        f64::INFINITY
    };
    if q_plane.is_infinite() && q_low.is_infinite() {
        return None;
    }
    let from_plane = q_plane <= q_low;
    Some(KernelSample {
        weight: (-q_plane.min(q_low)).exp(),
        from_plane,
        hit,
        depth: hit.map_or(prim.depth, |h| h.t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{activate, Gaussian2D};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn camera() -> CameraView {
        CameraView::new(100.0, 100.0, 32.0, 32.0, Matrix3::identity(), Vector3::zeros(), 64, 64).unwrap()
    }

    fn splat(mean: Vector3<f64>, log_scale: f64) -> ActivatedGaussian {
        let mut g = Gaussian2D::new(mean, 2);
        g.log_scale = Vector2::repeat(log_scale);
        activate(&g).unwrap()
    }

    #[test]
    fn culls_behind_near_plane() {
        assert!(project(0, &splat(Vector3::new(0.0, 0.0, -1e-4), -3.0), &camera()).is_none());
        assert!(project(0, &splat(Vector3::new(0.0, 0.0, 5e-5), -3.0), &camera()).is_none());
    }

    #[test]
    fn culls_footprint_outside_image() {
        assert!(project(0, &splat(Vector3::new(5.0, 0.0, 1.0), -3.0), &camera()).is_none());
    }

    #[test]
    fn projects_pinhole_center() {
        let p = project(0, &splat(Vector3::new(0.0, 0.0, 1.0), -3.0), &camera()).unwrap();
        assert_relative_eq!(p.screen, Point2::new(32.0, 32.0));
        assert_eq!(p.depth, 1.0);
        let q = project(0, &splat(Vector3::new(0.1, 0.0, 1.0), -3.0), &camera()).unwrap();
        assert_relative_eq!(q.screen.x, 42.0, epsilon = 1e-12);
    }

    #[test]
    fn plane_kernel_values() {
        let cam = camera();
        // scale 0.1 m at 1 m depth: one scale unit is 10 px.
        let p = project(0, &splat(Vector3::new(0.0, 0.0, 1.0), 0.1f64.ln()), &cam).unwrap();
        assert_relative_eq!(kernel_weight(&p, 32.0, 32.0, &cam), 1.0);
        assert_relative_eq!(kernel_weight(&p, 42.0, 32.0, &cam), (-0.5f64).exp(), epsilon = 1e-12);
        let s = sample(&p, 42.0, 32.0, &cam).unwrap();
        assert!(s.from_plane);
        assert_relative_eq!(s.hit.unwrap().u, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lowpass_dominates_tiny_splats() {
        let cam = camera();
        let p = project(0, &splat(Vector3::new(0.0, 0.0, 1.0), 1e-4f64.ln()), &cam).unwrap();
        let expected = (-9.0f64 / (2.0 * 0.25)).exp();
        assert_relative_eq!(kernel_weight(&p, 35.0, 32.0, &cam), expected, max_relative = 1e-12);
        // Outside the 1.5 px low-pass support the truncated kernel vanishes.
        assert!(sample(&p, 35.0, 32.0, &cam).is_none());
        assert!(sample(&p, 33.0, 32.0, &cam).is_some());
    }

    #[test]
    fn bbox_covers_support() {
        let cam = camera();
        let mut g = Gaussian2D::new(Vector3::new(0.05, -0.02, 0.8), 2);
        g.rotation = nalgebra::Quaternion::new(0.9, 0.3, -0.2, 0.1);
        g.log_scale = Vector2::new(0.03f64.ln(), 0.01f64.ln());
        let a = activate(&g).unwrap();
        let p = project(0, &a, &cam).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if sample(&p, x as f64, y as f64, &cam).is_some() {
                    assert!(p.bbox.contains(x, y), "pixel ({x},{y}) outside {:?}", p.bbox);
                }
            }
        }
    }
}

//! Reverse-mode gradients of [`super::render`]. The per-pixel compositing chain
//! is recomputed from the sorted tile lists rather than stored.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{sample_ray, KernelSample, Prepared, TileFrame, SplatPrimitive, DEPTH_EPS, LOWPASS_SIGMA, MIN_TRANSMITTANCE};
use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::{rotation_backward, softmax_backward, GaussianGrad};
use crate::image::Image;
use crate::scene::SceneSnapshot;

/// Upstream gradients, shaped like [`super::RenderOutput`].
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGrads {
    pub rgb: Image,
    pub mask: Image,
    pub onehot: Image,
    pub depth: Image,
    pub alpha: Image,
}

impl RenderGrads {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            rgb: Image::new(width, height, 3),
            mask: Image::new(width, height, 3),
            onehot: Image::new(width, height, channels),
            depth: Image::new(width, height, 1),
            alpha: Image::new(width, height, 1),
        }
    }

    fn check(&self, cam: &CameraView, channels: usize) -> Result<()> {
        let (w, h) = (cam.width, cam.height);
        for (img, c) in [
            (&self.rgb, 3),
            (&self.mask, 3),
            (&self.onehot, channels),
            (&self.depth, 1),
            (&self.alpha, 1),
        ] {
            if img.width() != w || img.height() != h || img.channels() != c {
                return Err(Error::ShapeMismatch(format!(
                    "output gradient is {}x{}x{}, expected {w}x{h}x{c}",
                    img.width(),
                    img.height(),
                    img.channels()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BackwardOutput {
    /// One entry per Gaussian of the scene (zero for culled ones).
    pub gaussians: Vec<GaussianGrad>,
    /// Norm of the loss gradient with respect to each mean's projected
    /// position in normalized device coordinates (0 when culled).
    pub screen_grad: Vec<f64>,
    pub visible: Vec<bool>,
}

/// Camera-frame gradient for one primitive.
#[derive(Clone, Copy, Debug, Default)]
struct PrimAccum {
    center: Vector3<f64>,
    tangent_u: Vector3<f64>,
    tangent_v: Vector3<f64>,
    normal: Vector3<f64>,
    scale: Vector2<f64>,
    opacity: f64,
    color: Vector3<f64>,
    mask: Vector3<f64>,
}

impl PrimAccum {
    fn add(&mut self, o: &PrimAccum) {
        self.center += o.center;
        self.tangent_u += o.tangent_u;
        self.tangent_v += o.tangent_v;
        self.normal += o.normal;
        self.scale += o.scale;
        self.opacity += o.opacity;
        self.color += o.color;
        self.mask += o.mask;
    }
}

struct LayerRecord {
    slot: u32,
    local: u32,
    sample: KernelSample,
    a: f64,
    transmittance: f64,
}

/// Backpropagates through the plane intersection: `g_gauss` is the gradient on
/// the plane Gaussian value, `g_depth` on the hit depth.
#[inline]
fn plane_backward(
    p: &SplatPrimitive,
    ray: &Vector3<f64>,
    hit: &super::PlaneHit,
    gauss: f64,
    g_gauss: f64,
    g_depth: f64,
    acc: &mut PrimAccum,
) {
    let w = ray * hit.t - p.center;
    let g_r2 = -0.5 * gauss * g_gauss;
    let g_u = 2.0 * hit.u * g_r2;
    let g_v = 2.0 * hit.v * g_r2;
    acc.scale.x -= g_u * hit.u / p.scale.x;
    acc.scale.y -= g_v * hit.v / p.scale.y;
    let g_uu = g_u / p.scale.x;
    let g_vv = g_v / p.scale.y;
    let g_w = p.tangent_u * g_uu + p.tangent_v * g_vv;
    acc.tangent_u += w * g_uu;
    acc.tangent_v += w * g_vv;
    // p = t·ray, w = p - center
    let g_t = g_w.dot(ray) + g_depth;
    acc.center -= g_w;
    // t = (n·center) / (n·ray)
    let b = p.normal.dot(ray);
    let g_a = g_t / b;
    let g_b = -g_t * hit.t / b;
    acc.normal += p.center * g_a + ray * g_b;
    acc.center += p.normal * g_a;
}

#[inline]
fn lowpass_backward(p: &SplatPrimitive, cam: &CameraView, x: f64, y: f64, value: f64, g: f64, acc: &mut PrimAccum) {
    let s2 = LOWPASS_SIGMA * LOWPASS_SIGMA;
    let g_px = g * value * (x - p.screen.x) / s2;
    let g_py = g * value * (y - p.screen.y) / s2;
    let c = &p.center;
    acc.center.x += g_px * cam.fx / c.z;
    acc.center.y += g_py * cam.fy / c.z;
    acc.center.z -= (g_px * cam.fx * c.x + g_py * cam.fy * c.y) / (c.z * c.z);
}

/// Gradients of a scalar loss with respect to every raw Gaussian field, given the
/// loss gradients on each rendered buffer.
pub fn render_backward(scene: &SceneSnapshot, cam: &CameraView, grads: &RenderGrads) -> Result<BackwardOutput> {
    let channels = scene.channels();
    grads.check(cam, channels)?;
    let prep = Prepared::new(scene, cam)?;

    let per_tile: Vec<(Vec<PrimAccum>, Vec<f64>)> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| backward_tile(&prep, tile, cam, grads, channels))
        .collect();

    // Fixed tile order keeps the reduction bit-reproducible.
    let mut accum = vec![PrimAccum::default(); prep.prims.len()];
    let mut accum_obj = vec![0.0; prep.prims.len() * channels];
    for (tile, (acc, obj)) in per_tile.iter().enumerate() {
        for (local, &k) in prep.tiles[tile].iter().enumerate() {
            let k = k as usize;
            accum[k].add(&acc[local]);
            for c in 0..channels {
                accum_obj[k * channels + c] += obj[local * channels + c];
            }
        }
    }

    let n = scene.gaussians.len();
    let mut out = BackwardOutput {
        gaussians: vec![GaussianGrad::zeros(channels); n],
        screen_grad: vec![0.0; n],
        visible: vec![false; n],
    };
    let rt = cam.rotation.transpose();
    for (k, p) in prep.prims.iter().enumerate() {
        let a = &accum[k];
        let g = &prep.activated[p.index];
        let raw = &scene.gaussians[p.index];
        let dst = &mut out.gaussians[p.index];
        dst.mean = rt * a.center;
        let d_axes = Matrix3::from_columns(&[rt * a.tangent_u, rt * a.tangent_v, rt * a.normal]);
        dst.rotation = rotation_backward(&raw.rotation, &d_axes);
        dst.log_scale = a.scale.component_mul(&g.scale);
        dst.opacity_raw = a.opacity * g.opacity * (1.0 - g.opacity);
        dst.color = a.color;
        dst.mask_color = a.mask;
        softmax_backward(
            &g.object_weights,
            &accum_obj[k * channels..(k + 1) * channels],
            &mut dst.object_logits,
        );
        let gx = a.center.x * p.center.z / cam.fx * cam.width as f64 / 2.0;
        let gy = a.center.y * p.center.z / cam.fy * cam.height as f64 / 2.0;
        out.screen_grad[p.index] = (gx * gx + gy * gy).sqrt();
        out.visible[p.index] = true;
    }
    Ok(out)
}

fn backward_tile(
    prep: &Prepared,
    tile: usize,
    cam: &CameraView,
    grads: &RenderGrads,
    channels: usize,
) -> (Vec<PrimAccum>, Vec<f64>) {
    let list = &prep.tiles[tile];
    let mut acc = vec![PrimAccum::default(); list.len()];
    let mut acc_obj = vec![0.0; list.len() * channels];
    if list.is_empty() {
        return (acc, acc_obj);
    }
    let frame = TileFrame::new(prep, tile, cam);
    let n = frame.len();
    let mut records: Vec<LayerRecord> = Vec::new();
    let mut counts = vec![0u32; n + 1];
    let mut transmittance = vec![1.0; n];
    let mut alpha = vec![0.0; n];
    let mut depth_sum = vec![0.0; n];
    let mut open = n;
    for (local, &k) in list.iter().enumerate() {
        let p = &prep.prims[k as usize];
        let opacity = prep.activated[p.index].opacity;
        let (xr, yr) = frame.clip(&p.bbox);
        for y in yr {
            for x in xr.clone() {
                let slot = frame.slot(x, y);
                let t = transmittance[slot];
                if t < MIN_TRANSMITTANCE {
                    continue;
                }
                let (ray, norm) = &frame.rays[slot];
                let Some(s) = sample_ray(p, ray, *norm, x as f64, y as f64) else {
                    continue;
                };
                let a = opacity * s.weight;
                let w = a * t;
                alpha[slot] += w;
                depth_sum[slot] += s.depth * w;
                counts[slot + 1] += 1;
                records.push(LayerRecord {
                    slot: slot as u32,
                    local: local as u32,
                    sample: s,
                    a,
                    transmittance: t,
                });
                transmittance[slot] = t * (1.0 - a);
                if transmittance[slot] < MIN_TRANSMITTANCE {
                    open -= 1;
                }
            }
        }
        if open == 0 {
            break;
        }
    }

    // Stable counting sort groups each pixel's layers, front to back.
    for i in 0..n {
        counts[i + 1] += counts[i];
    }
    let mut order = vec![0u32; records.len()];
    let mut next = counts.clone();
    for (i, r) in records.iter().enumerate() {
        let c = &mut next[r.slot as usize];
        order[*c as usize] = i as u32;
        *c += 1;
    }

    for y in frame.ys.clone() {
        for x in frame.xs.clone() {
            let slot = frame.slot(x, y);
            let range = counts[slot] as usize..counts[slot + 1] as usize;
            if range.is_empty() {
                continue;
            }
            let (xf, yf) = (x as f64, y as f64);
            let ray = frame.rays[slot].0;
            let g_rgb = Vector3::from_column_slice(grads.rgb.pixel(x, y));
            let g_mask = Vector3::from_column_slice(grads.mask.pixel(x, y));
            let g_onehot = grads.onehot.pixel(x, y);
            let g_depth = grads.depth.get(x, y, 0);
            let (alpha, depth_sum) = (alpha[slot], depth_sum[slot]);
            let denom = alpha.max(DEPTH_EPS);
            let g_depth_sum = g_depth / denom;
            let mut g_alpha = grads.alpha.get(x, y, 0);
            if alpha > DEPTH_EPS {
                g_alpha -= g_depth * depth_sum / (alpha * alpha);
            }

            let mut behind = 0.0;
            for &ri in order[range].iter().rev() {
                let rec = &records[ri as usize];
                let local = rec.local as usize;
                let p = &prep.prims[list[local] as usize];
                let g = &prep.activated[p.index];
                let w = rec.a * rec.transmittance;
                let onehot_dot: f64 = g_onehot.iter().zip(&g.object_weights).map(|(a, b)| a * b).sum();
                let value = g_rgb.dot(&g.color)
                    + g_mask.dot(&g.mask_color)
                    + onehot_dot
                    + g_alpha
                    + g_depth_sum * rec.sample.depth;

                let dst = &mut acc[local];
                dst.color += g_rgb * w;
                dst.mask += g_mask * w;
                let obj = &mut acc_obj[local * channels..(local + 1) * channels];
                for (o, gv) in obj.iter_mut().zip(g_onehot) {
                    *o += gv * w;
                }

                let g_a = rec.transmittance * (value - behind);
                behind = value * rec.a + (1.0 - rec.a) * behind;

                let s = &rec.sample;
                dst.opacity += g_a * s.weight;
                let g_kernel = g_a * g.opacity;
                let g_hit_depth = g_depth_sum * w;
                match (s.from_plane, s.hit) {
                    (true, Some(hit)) => plane_backward(p, &ray, &hit, s.weight, g_kernel, g_hit_depth, dst),
                    (_, hit) => {
                        lowpass_backward(p, cam, xf, yf, s.weight, g_kernel, dst);
                        match hit {
                            Some(hit) => plane_backward(p, &ray, &hit, 0.0, 0.0, g_hit_depth, dst),
                            None => dst.center.z += g_hit_depth,
                        }
                    }
                }
            }
        }
    }
    (acc, acc_obj)
}

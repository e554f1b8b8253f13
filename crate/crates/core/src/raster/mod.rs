//! Tile-based forward rendering of RGB, mask, one-hot, depth and alpha channels
//! with front-to-back alpha compositing, plus the analytic backward pass.

mod backward;
mod kernel;

use nalgebra::Vector3;
use rayon::prelude::*;

pub use backward::{render_backward, BackwardOutput, RenderGrads};
pub use kernel::{kernel_weight, project, sample, sample_ray, KernelSample, PixelRect, PlaneHit, SplatPrimitive};

use crate::camera::CameraView;
use crate::error::Result;
use crate::gaussian::{activate, ActivatedGaussian};
use crate::image::Image;
use crate::scene::SceneSnapshot;

pub const TILE_SIZE: usize = 16;
pub const NEAR_PLANE: f64 = 1e-4;
/// Standard deviation of the screen-space low-pass term, pixels.
pub const LOWPASS_SIGMA: f64 = 0.5;
/// Kernel support and culling radius in standard deviations.
pub const CUTOFF_SIGMAS: f64 = 3.0;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const DEPTH_EPS: f64 = 1e-8;
pub const PARALLEL_EPS: f64 = 1e-8;

/// Composited per-pixel buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    pub mask: Image,
    /// Raw (pre-softmax) one-hot accumulation, `N + 1` channels.
    pub onehot: Image,
    /// Alpha-normalized expected depth, meters.
    pub depth: Image,
    pub alpha: Image,
}

impl RenderOutput {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            rgb: Image::new(width, height, 3),
            mask: Image::new(width, height, 3),
            onehot: Image::new(width, height, channels),
            depth: Image::new(width, height, 1),
            alpha: Image::new(width, height, 1),
        }
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn channels(&self) -> usize {
        self.onehot.channels()
    }
}

/// One layer seen by a pixel.
#[derive(Clone, Copy, Debug)]
pub struct Layer<'a> {
    pub opacity: f64,
    pub kernel: f64,
    pub color: Vector3<f64>,
    pub mask: Vector3<f64>,
    pub onehot: &'a [f64],
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelValue {
    pub rgb: Vector3<f64>,
    pub mask: Vector3<f64>,
    pub onehot: Vec<f64>,
    pub depth: f64,
    pub alpha: f64,
}

/// Running front-to-back accumulation for one pixel; the one-hot sums live
/// in a caller-provided slice.
#[derive(Clone, Copy)]
struct Accumulator {
    transmittance: f64,
    rgb: Vector3<f64>,
    mask: Vector3<f64>,
    depth_sum: f64,
    alpha: f64,
    any: bool,
    done: bool,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            transmittance: 1.0,
            rgb: Vector3::zeros(),
            mask: Vector3::zeros(),
            depth_sum: 0.0,
            alpha: 0.0,
            any: false,
            done: false,
        }
    }

    /// Adds a layer; marks the pixel done once compositing should stop.
    #[inline]
    fn push(&mut self, onehot_sum: &mut [f64], a: f64, color: &Vector3<f64>, mask: &Vector3<f64>, onehot: &[f64], depth: f64) {
        let w = a * self.transmittance;
        self.rgb += color * w;
        self.mask += mask * w;
        for (o, v) in onehot_sum.iter_mut().zip(onehot) {
            *o += v * w;
        }
        self.depth_sum += depth * w;
        self.alpha += w;
        self.transmittance *= 1.0 - a;
        self.any = true;
        self.done = self.transmittance < MIN_TRANSMITTANCE;
    }

    fn depth(&self) -> f64 {
        self.depth_sum / self.alpha.max(DEPTH_EPS)
    }
}

/// Composites layers already sorted front to back.
pub fn composite(layers: &[Layer<'_>], channels: usize) -> PixelValue {
    let mut onehot = vec![0.0; channels];
    let mut acc = Accumulator::new();
    for l in layers {
        acc.push(&mut onehot, l.opacity * l.kernel, &l.color, &l.mask, l.onehot, l.depth);
        if acc.done {
            break;
        }
    }
    let (rgb, mask, depth, alpha) = (acc.rgb, acc.mask, acc.depth(), acc.alpha);
    PixelValue {
        rgb,
        mask,
        onehot,
        depth,
        alpha,
    }
}

/// Per-camera preparation shared by the forward and backward passes.
pub(crate) struct Prepared {
    pub activated: Vec<ActivatedGaussian>,
    pub prims: Vec<SplatPrimitive>,
    /// Per tile: indices into `prims`, sorted by (depth, gaussian index).
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
}

impl Prepared {
    pub fn new(scene: &SceneSnapshot, cam: &CameraView) -> Result<Self> {
        let activated = scene
            .gaussians
            .iter()
            .map(activate)
            .collect::<Result<Vec<_>>>()?;
        let prims: Vec<SplatPrimitive> = activated
            .iter()
            .enumerate()
            .filter_map(|(i, g)| project(i, g, cam))
            .collect();
        let tiles_x = cam.width.div_ceil(TILE_SIZE);
        let tiles_y = cam.height.div_ceil(TILE_SIZE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (k, p) in prims.iter().enumerate() {
            for ty in p.bbox.y0 / TILE_SIZE..=p.bbox.y1 / TILE_SIZE {
                for tx in p.bbox.x0 / TILE_SIZE..=p.bbox.x1 / TILE_SIZE {
                    tiles[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        for list in &mut tiles {
            list.sort_by(|&a, &b| {
                let (pa, pb) = (&prims[a as usize], &prims[b as usize]);
                pa.depth.total_cmp(&pb.depth).then(pa.index.cmp(&pb.index))
            });
        }
        Ok(Self {
            activated,
            prims,
            tiles,
            tiles_x,
        })
    }

    pub fn tile_pixels(&self, tile: usize, cam: &CameraView) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(cam.width);
        let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(cam.height);
        (xs, ys)
    }
}

/// Pixel block of one tile with per-pixel camera rays.
pub(crate) struct TileFrame {
    pub xs: std::ops::Range<usize>,
    pub ys: std::ops::Range<usize>,
    pub rays: Vec<(Vector3<f64>, f64)>,
}

impl TileFrame {
    pub fn new(prep: &Prepared, tile: usize, cam: &CameraView) -> Self {
        let (xs, ys) = prep.tile_pixels(tile, cam);
        let mut rays = Vec::with_capacity(xs.len() * ys.len());
        for y in ys.clone() {
            for x in xs.clone() {
                let r = cam.ray(x as f64, y as f64);
                rays.push((r, r.norm()));
            }
        }
        Self { xs, ys, rays }
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    #[inline]
    pub fn slot(&self, x: usize, y: usize) -> usize {
        (y - self.ys.start) * self.xs.len() + (x - self.xs.start)
    }

    /// Pixels of `rect` inside the tile, as (x range, y range); empty ranges when disjoint.
    #[inline]
    pub fn clip(&self, rect: &PixelRect) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let x0 = rect.x0.max(self.xs.start);
        let x1 = (rect.x1 + 1).min(self.xs.end);
        let y0 = rect.y0.max(self.ys.start);
        let y1 = (rect.y1 + 1).min(self.ys.end);
        (x0..x1.max(x0), y0..y1.max(y0))
    }
}

/// Renders every channel of `scene` as seen from `cam`.
pub fn render(scene: &SceneSnapshot, cam: &CameraView) -> Result<RenderOutput> {
    let prep = Prepared::new(scene, cam)?;
    let channels = scene.channels();
    let mut out = RenderOutput::zeros(cam.width, cam.height, channels);

    let tile_results: Vec<Option<(TileFrame, Vec<Accumulator>, Vec<f64>)>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &prep.tiles[tile];
            if list.is_empty() {
                return None;
            }
            let frame = TileFrame::new(&prep, tile, cam);
            let mut acc = vec![Accumulator::new(); frame.len()];
            let mut onehot = vec![0.0; frame.len() * channels];
            let mut open = frame.len();
            // Each pixel still sees the splats in list order, so this matches
            // a per-pixel front-to-back loop.
            for &k in list {
                let p = &prep.prims[k as usize];
                let g = &prep.activated[p.index];
                let (xr, yr) = frame.clip(&p.bbox);
                for y in yr {
                    for x in xr.clone() {
                        let slot = frame.slot(x, y);
                        let a = &mut acc[slot];
                        if a.done {
                            continue;
                        }
                        let (ray, norm) = &frame.rays[slot];
                        let Some(s) = sample_ray(p, ray, *norm, x as f64, y as f64) else {
                            continue;
                        };
                        a.push(
                            &mut onehot[slot * channels..(slot + 1) * channels],
                            g.opacity * s.weight,
                            &g.color,
                            &g.mask_color,
                            &g.object_weights,
                            s.depth,
                        );
                        if a.done {
                            open -= 1;
                        }
                    }
                }
                if open == 0 {
                    break;
                }
            }
            Some((frame, acc, onehot))
        })
        .collect();

    for (frame, acc, onehot) in tile_results.into_iter().flatten() {
        for y in frame.ys.clone() {
            for x in frame.xs.clone() {
                let slot = frame.slot(x, y);
                let a = &acc[slot];
                if !a.any {
                    continue;
                }
                out.rgb.pixel_mut(x, y).copy_from_slice(a.rgb.as_slice());
                out.mask.pixel_mut(x, y).copy_from_slice(a.mask.as_slice());
                out.onehot
                    .pixel_mut(x, y)
                    .copy_from_slice(&onehot[slot * channels..(slot + 1) * channels]);
                out.depth.set(x, y, 0, a.depth());
                out.alpha.set(x, y, 0, a.alpha);
            }
        }
    }
    Ok(out)
}

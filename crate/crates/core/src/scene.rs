use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian2D;
use crate::image::Image;

/// Minimum L∞ separation between palette colors (and from the background color).
pub const PALETTE_MIN_SEPARATION: u8 = 32;

pub const BACKGROUND_COLOR: [u8; 3] = [0, 0, 0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb::new(first, first);
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) / 2.0
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x.max(0.0) * e.y.max(0.0) * e.z.max(0.0)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Grows every side by `fraction` of the box diagonal, so flat boxes gain volume.
    pub fn expanded(&self, fraction: f64) -> Self {
        let pad = Vector3::repeat(self.extent().norm() * fraction);
        Aabb::new(self.min - pad, self.max + pad)
    }

    /// Default initialization volume: the box around all camera centers, grown by 20%.
    pub fn around_cameras(cameras: &[CameraView]) -> Option<Self> {
        let centers: Vec<_> = cameras.iter().map(|c| c.center()).collect();
        Aabb::from_points(&centers).map(|b| b.expanded(0.2))
    }
}

/// Object id → mask color; ids are `0..len()`.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>) -> Result<Self> {
        let p = Self { colors };
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, id: usize) -> Option<[u8; 3]> {
        self.colors.get(id).copied()
    }

    /// Color as floating point in `[0, 1]`.
    pub fn color_f64(&self, id: usize) -> Option<Vector3<f64>> {
        self.color(id).map(|c| rgb_to_f64(c))
    }

    pub fn lookup(&self, rgb: [u8; 3]) -> Option<usize> {
        self.colors.iter().position(|c| *c == rgb)
    }

    pub fn validate(&self) -> Result<()> {
        let all: Vec<[u8; 3]> = std::iter::once(BACKGROUND_COLOR)
            .chain(self.colors.iter().copied())
            .collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let sep = (0..3)
                    .map(|k| all[i][k].abs_diff(all[j][k]))
                    .max()
                    .unwrap_or(0);
                if sep < PALETTE_MIN_SEPARATION {
                    return Err(Error::Dataset(format!(
                        "palette colors {:?} and {:?} are closer than {} (L∞)",
                        all[i], all[j], PALETTE_MIN_SEPARATION
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn rgb_to_f64(c: [u8; 3]) -> Vector3<f64> {
    Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) / 255.0
}

/// A reconstructed scene. Channel `object_count` of every logit vector is background.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSnapshot {
    pub gaussians: Vec<Gaussian2D>,
    pub object_count: usize,
    pub palette: Palette,
    pub bounds: Aabb,
}

impl SceneSnapshot {
    pub fn new(object_count: usize, palette: Palette, bounds: Aabb) -> Self {
        Self {
            gaussians: Vec::new(),
            object_count,
            palette,
            bounds,
        }
    }

    /// Number of one-hot channels (objects plus background).
    pub fn channels(&self) -> usize {
        self.object_count + 1
    }

    pub fn background_id(&self) -> usize {
        self.object_count
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Indices of the Gaussians assigned to `object`.
    pub fn members(&self, object: usize) -> Vec<usize> {
        self.gaussians
            .iter()
            .enumerate()
            .filter(|(_, g)| g.object_id() == object)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy holding only the Gaussians assigned to real objects (background dropped).
    pub fn objects_only(&self) -> SceneSnapshot {
        let bg = self.background_id();
        SceneSnapshot {
            gaussians: self
                .gaussians
                .iter()
                .filter(|g| g.object_id() != bg)
                .cloned()
                .collect(),
            object_count: self.object_count,
            palette: self.palette.clone(),
            bounds: self.bounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.object_logits.len() != self.channels() {
                return Err(Error::InvalidGaussian(format!(
                    "gaussian {i} has {} logits, scene expects {}",
                    g.object_logits.len(),
                    self.channels()
                )));
            }
            if !g.is_finite() {
                return Err(Error::InvalidGaussian(format!("gaussian {i} is not finite")));
            }
        }
        self.palette.validate()
    }
}

/// One supervised input view.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingView {
    pub name: String,
    pub rgb: Image,
    /// Colorized segmentation (background black).
    pub mask_rgb: Image,
    /// `N + 1` channels, exactly one set per pixel; channel `N` is background.
    pub onehot_labels: Image,
    pub camera: CameraView,
}

impl TrainingView {
    pub fn validate(&self, object_count: usize) -> Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        for (name, img, ch) in [
            ("rgb", &self.rgb, 3),
            ("mask", &self.mask_rgb, 3),
            ("one-hot", &self.onehot_labels, object_count + 1),
        ] {
            if img.width() != w || img.height() != h || img.channels() != ch {
                return Err(Error::ShapeMismatch(format!(
                    "view {}: {name} is {}x{}x{}, expected {w}x{h}x{ch}",
                    self.name,
                    img.width(),
                    img.height(),
                    img.channels()
                )));
            }
        }
        for y in 0..h {
            for x in 0..w {
                let px = self.onehot_labels.pixel(x, y);
                let ones = px.iter().filter(|v| **v == 1.0).count();
                let zeros = px.iter().filter(|v| **v == 0.0).count();
                if ones != 1 || ones + zeros != px.len() {
                    return Err(Error::Dataset(format!(
                        "view {}: pixel ({x}, {y}) is not one-hot",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-pixel object id from the one-hot labels.
    pub fn label(&self, x: usize, y: usize) -> usize {
        crate::gaussian::argmax(self.onehot_labels.pixel(x, y))
    }

    /// Builds one-hot labels from a colorized mask by exact palette match;
    /// unmatched colors become background.
    pub fn labels_from_mask(mask_rgb: &Image, palette: &Palette) -> Image {
        let n = palette.len();
        let mut labels = Image::new(mask_rgb.width(), mask_rgb.height(), n + 1);
        for y in 0..mask_rgb.height() {
            for x in 0..mask_rgb.width() {
                let px = mask_rgb.pixel(x, y);
                let rgb = [to_u8(px[0]), to_u8(px[1]), to_u8(px[2])];
                let id = palette.lookup(rgb).unwrap_or(n);
                labels.set(x, y, id, 1.0);
            }
        }
        labels
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

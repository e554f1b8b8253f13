//! Dataset manifests, PNG codecs, the binary scene format and PLY export.
//!
//! Manifest layout (TOML, meters, camera x right / y down / z forward,
//! `world_to_camera` maps world points into the camera frame):
//!
//! ```toml
//! units = "meters"
//! object_count = 2
//! palette = [[230, 60, 60], [60, 200, 90]]
//!
//! [bounds]
//! min = [-0.2, -0.2, 0.0]
//! max = [0.2, 0.2, 0.2]
//!
//! [cameras.cam0]
//! width = 64
//! height = 64
//! fx = 110.0
//! fy = 110.0
//! cx = 32.0
//! cy = 32.0
//! world_to_camera = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.5]]
//!
//! [[views]]
//! name = "view0"
//! camera = "cam0"
//! rgb = "rgb/view0.png"
//! mask = "mask/view0.png"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Quaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian2D;
use crate::image::Image;
use crate::scene::{to_u8, Aabb, Palette, SceneSnapshot, TrainingView, BACKGROUND_COLOR};

pub const SCENE_MAGIC: [u8; 8] = *b"SPLSCENE";
pub const SCENE_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: [[f64; 4]; 3],
}

impl CameraEntry {
    pub fn from_camera(cam: &CameraView) -> Self {
        let r = cam.rotation;
        let t = cam.translation;
        Self {
            width: cam.width,
            height: cam.height,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            world_to_camera: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]]),
        }
    }

    pub fn to_camera(&self) -> Result<CameraView> {
        let m = &self.world_to_camera;
        let rotation = Matrix3::from_fn(|i, j| m[i][j]);
        let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
        CameraView::new(self.fx, self.fy, self.cx, self.cy, rotation, translation, self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsEntry {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    pub camera: String,
    pub rgb: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub units: String,
    pub object_count: usize,
    pub palette: Vec<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsEntry>,
    pub cameras: BTreeMap<String, CameraEntry>,
    pub views: Vec<ViewEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Dataset(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.units != "meters" {
            return Err(Error::Dataset(format!("units must be \"meters\", got {:?}", self.units)));
        }
        if self.palette.len() != self.object_count {
            return Err(Error::Dataset(format!(
                "palette has {} colors for {} objects",
                self.palette.len(),
                self.object_count
            )));
        }
        Palette::new(self.palette.clone()).map_err(|e| Error::Dataset(format!("palette: {e}")))?;
        for (id, c) in &self.cameras {
            c.to_camera().map_err(|e| Error::Dataset(format!("camera {id}: {e}")))?;
        }
        for v in &self.views {
            if !self.cameras.contains_key(&v.camera) {
                return Err(Error::Dataset(format!("view {} references unknown camera {}", v.name, v.camera)));
            }
        }
        if self.views.is_empty() {
            return Err(Error::Dataset("manifest lists no views".into()));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.bounds
            .as_ref()
            .map(|b| Aabb::new(Vector3::from(b.min), Vector3::from(b.max)))
    }

    pub fn camera(&self, id: &str) -> Result<CameraView> {
        self.cameras
            .get(id)
            .ok_or_else(|| Error::Dataset(format!("unknown camera {id}")))?
            .to_camera()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub palette: Palette,
    pub object_count: usize,
    pub views: Vec<TrainingView>,
}

impl Dataset {
    /// Cameras of the views, for camera lookup by view name.
    pub fn named_cameras(&self) -> Vec<NamedCamera> {
        self.views
            .iter()
            .map(|v| NamedCamera {
                name: v.name.clone(),
                camera: v.camera.clone(),
            })
            .collect()
    }

    pub fn view(&self, name: &str) -> Result<&TrainingView> {
        self.views
            .iter()
            .find(|v| v.name == name)
            .ok_or_else(|| Error::Dataset(format!("dataset has no view named {name}")))
    }

    /// Initialization volume: manifest bounds when given, else the box around the cameras.
    pub fn bounds(&self) -> Result<Aabb> {
        self.manifest
            .bounds()
            .or_else(|| Aabb::around_cameras(&self.views.iter().map(|v| v.camera.clone()).collect::<Vec<_>>()))
            .ok_or(Error::DegenerateBounds)
    }
}

fn existing(root: &Path, rel: &str, what: &str) -> Result<PathBuf> {
    let p = root.join(rel);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Dataset(format!("missing {what} file {}", p.display())))
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Dataset(format!("cannot read manifest {}: {e}", manifest_path.display())))?;
    let manifest = DatasetManifest::parse(&text)?;
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let palette = Palette::new(manifest.palette.clone())?;
    let mut views = Vec::with_capacity(manifest.views.len());
    for v in &manifest.views {
        let camera = manifest.camera(&v.camera)?;
        let rgb = read_rgb_png(&existing(&root, &v.rgb, "rgb")?)?;
        let mask_path = existing(&root, &v.mask, "mask")?;
        let mask = read_rgb_png(&mask_path)?;
        for (what, img) in [("rgb", &rgb), ("mask", &mask)] {
            if img.width() != camera.width || img.height() != camera.height {
                return Err(Error::Dataset(format!(
                    "view {}: {what} image is {}x{}, camera {} is {}x{}",
                    v.name,
                    img.width(),
                    img.height(),
                    v.camera,
                    camera.width,
                    camera.height
                )));
            }
        }
        let onehot_labels = mask_to_labels(&mask, &palette).map_err(|e| match e {
            Error::Dataset(msg) => Error::Dataset(format!("view {} ({}): {msg}", v.name, mask_path.display())),
            other => other,
        })?;
        views.push(TrainingView {
            name: v.name.clone(),
            rgb,
            mask_rgb: mask,
            onehot_labels,
            camera,
        });
    }
    Ok(Dataset {
        root,
        object_count: manifest.object_count,
        manifest,
        palette,
        views,
    })
}

/// One-hot labels from a mask: palette colors map to their ids, the
/// background color to channel N; any other color is an error.
pub fn mask_to_labels(mask: &Image, palette: &Palette) -> Result<Image> {
    let mut unmatched = 0usize;
    let mut example = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let px = mask.pixel(x, y);
            let rgb = [to_u8(px[0]), to_u8(px[1]), to_u8(px[2])];
            if rgb != BACKGROUND_COLOR && palette.lookup(rgb).is_none() {
                unmatched += 1;
                example.get_or_insert(rgb);
            }
        }
    }
    if let Some(c) = example {
        return Err(Error::Dataset(format!(
            "{unmatched} mask pixels have colors outside the palette (e.g. {c:?})"
        )));
    }
    Ok(TrainingView::labels_from_mask(mask, palette))
}

pub fn read_rgb_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Dataset(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Image::from_vec(w as usize, h as usize, 3, data)
}

fn png_bytes<P: image::PixelWithColorType>(buf: &ImageBuffer<P, Vec<P::Subpixel>>) -> Result<Vec<u8>>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// 8-bit PNG of a 1- or 3-channel image in [0, 1].
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = match img.channels() {
        3 => png_bytes(&ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, img.data().iter().map(|v| to_u8(*v)).collect()).expect("size"))?,
        1 => png_bytes(&ImageBuffer::<Luma<u8>, _>::from_raw(w, h, img.data().iter().map(|v| to_u8(*v)).collect()).expect("size"))?,
        c => return Err(Error::ShapeMismatch(format!("cannot write a {c}-channel PNG"))),
    };
    write_atomic(path, &bytes)
}

/// Millimeter code of a depth in meters; 0 marks invalid.
pub fn depth_to_mm(depth: f64) -> u16 {
    if depth.is_finite() && depth > 0.0 {
        (depth * 1000.0).round().clamp(1.0, 65535.0) as u16
    } else {
        0
    }
}

/// 16-bit millimeter depth PNG. Pixels with `valid` false are written as 0.
pub fn write_depth_png(path: &Path, depth: &Image, valid: impl Fn(usize, usize) -> bool) -> Result<()> {
    let (w, h) = (depth.width(), depth.height());
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(if valid(x, y) { depth_to_mm(depth.get(x, y, 0)) } else { 0 });
        }
    }
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, data).expect("size");
    write_atomic(path, &png_bytes(&buf)?)
}

/// Depth in meters from a 16-bit millimeter PNG; 0 stays 0 (invalid).
pub fn read_depth_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Dataset(format!("cannot decode depth {}: {e}", path.display())))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(Error::Dataset(format!(
                "depth {} must be 16-bit grayscale, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 1000.0).collect();
    Image::from_vec(w as usize, h as usize, 1, data)
}

/// Writes a dataset directory: PNGs under `rgb/` and `mask/` plus `manifest.toml`.
/// Returns the manifest path.
pub fn write_dataset(dir: &Path, views: &[TrainingView], palette: &Palette, bounds: Option<&Aabb>) -> Result<PathBuf> {
    let mut cameras = BTreeMap::new();
    let mut entries = Vec::new();
    for v in views {
        let rgb = format!("rgb/{}.png", v.name);
        let mask = format!("mask/{}.png", v.name);
        write_png(&dir.join(&rgb), &v.rgb)?;
        write_png(&dir.join(&mask), &v.mask_rgb)?;
        cameras.insert(v.name.clone(), CameraEntry::from_camera(&v.camera));
        entries.push(ViewEntry {
            name: v.name.clone(),
            camera: v.name.clone(),
            rgb,
            mask,
        });
    }
    let manifest = DatasetManifest {
        units: "meters".into(),
        object_count: palette.len(),
        palette: palette.colors.clone(),
        bounds: bounds.map(|b| BoundsEntry {
            min: b.min.into(),
            max: b.max.into(),
        }),
        cameras,
        views: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join("manifest.toml");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedCamera {
    pub name: String,
    pub camera: CameraView,
}

/// Contents of a scene file: the Gaussians plus the cameras they were trained from.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFile {
    pub scene: SceneSnapshot,
    pub cameras: Vec<NamedCamera>,
}

impl SceneFile {
    pub fn camera(&self, name: &str) -> Result<&CameraView> {
        self.cameras
            .iter()
            .find(|c| c.name == name)
            .map(|c| &c.camera)
            .ok_or_else(|| {
                let known: Vec<&str> = self.cameras.iter().map(|c| c.name.as_str()).collect();
                Error::Dataset(format!("scene has no camera {name} (known: {})", known.join(", ")))
            })
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated scene file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn vec3(&mut self) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(item_bytes) > self.bytes.len() - self.pos {
            return Err(Error::Format(format!("count {n} exceeds the file size")));
        }
        Ok(n)
    }
}

/// Little-endian binary encoding: magic, version, scene header, Gaussians, cameras.
pub fn encode_scene(file: &SceneFile) -> Vec<u8> {
    let s = &file.scene;
    let channels = s.channels();
    let mut w = Writer(Vec::with_capacity(64 + s.len() * (16 + channels) * 8));
    w.0.extend_from_slice(&SCENE_MAGIC);
    w.u32(SCENE_VERSION);
    w.u32(s.object_count as u32);
    w.u32(s.palette.len() as u32);
    for c in &s.palette.colors {
        w.0.extend_from_slice(c);
    }
    w.f64s(s.bounds.min.iter().chain(s.bounds.max.iter()));
    w.u64(s.len() as u64);
    for g in &s.gaussians {
        w.f64s(g.mean.iter());
        w.f64s(g.rotation.coords.iter());
        w.f64s(g.log_scale.iter());
        w.f64(g.opacity_raw);
        w.f64s(g.color.iter());
        w.f64s(g.mask_color.iter());
        w.f64s(g.object_logits.iter());
    }
    w.u64(file.cameras.len() as u64);
    for c in &file.cameras {
        w.u64(c.name.len() as u64);
        w.0.extend_from_slice(c.name.as_bytes());
        let cam = &c.camera;
        w.u32(cam.width as u32);
        w.u32(cam.height as u32);
        w.f64s([cam.fx, cam.fy, cam.cx, cam.cy].iter());
        w.f64s(cam.rotation.iter());
        w.f64s(cam.translation.iter());
    }
    w.0
}

pub fn decode_scene(bytes: &[u8]) -> Result<SceneFile> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != SCENE_MAGIC {
        return Err(Error::Format("not a scene file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != SCENE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: SCENE_VERSION,
        });
    }
    let object_count = r.u32()? as usize;
    let palette_len = r.u32()? as usize;
    let colors = (0..palette_len)
        .map(|_| r.take(3).map(|c| [c[0], c[1], c[2]]))
        .collect::<Result<Vec<_>>>()?;
    let palette = Palette { colors };
    let bounds = Aabb::new(r.vec3()?, r.vec3()?);
    let channels = object_count + 1;
    let n = r.count((15 + channels) * 8)?;
    let mut scene = SceneSnapshot::new(object_count, palette, bounds);
    scene.gaussians.reserve(n);
    for _ in 0..n {
        let mean = r.vec3()?;
        let (i, j, k, w) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let log_scale = Vector2::new(r.f64()?, r.f64()?);
        let opacity_raw = r.f64()?;
        let color = r.vec3()?;
        let mask_color = r.vec3()?;
        let object_logits = (0..channels).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        scene.gaussians.push(Gaussian2D {
            mean,
            rotation: Quaternion::new(w, i, j, k),
            log_scale,
            opacity_raw,
            color,
            mask_color,
            object_logits,
        });
    }
    let cams = r.count(8)?;
    let mut cameras = Vec::with_capacity(cams);
    for _ in 0..cams {
        let len = r.count(1)?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("camera name is not UTF-8".into()))?;
        let (width, height) = (r.u32()? as usize, r.u32()? as usize);
        let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let rot: Vec<f64> = (0..9).map(|_| r.f64()).collect::<Result<_>>()?;
        let translation = r.vec3()?;
        cameras.push(NamedCamera {
            name,
            camera: CameraView {
                fx,
                fy,
                cx,
                cy,
                rotation: Matrix3::from_column_slice(&rot),
                translation,
                width,
                height,
            },
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(SceneFile { scene, cameras })
}

pub fn save_scene(path: &Path, file: &SceneFile) -> Result<()> {
    write_atomic(path, &encode_scene(file))
}

pub fn load_scene(path: &Path) -> Result<SceneFile> {
    let bytes = fs::read(path).map_err(|e| Error::Dataset(format!("cannot read scene {}: {e}", path.display())))?;
    decode_scene(&bytes)
}

/// ASCII PLY of the Gaussian means colored by object (background in gray).
pub fn ply_string(scene: &SceneSnapshot) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar object\nend_header\n",
        scene.len()
    );
    for g in &scene.gaussians {
        let id = g.object_id();
        let c = scene.palette.color(id).unwrap_or([128, 128, 128]);
        s.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            g.mean.x as f32, g.mean.y as f32, g.mean.z as f32, c[0], c[1], c[2], id.min(255)
        ));
    }
    s
}

pub fn write_ply(path: &Path, scene: &SceneSnapshot) -> Result<()> {
    write_atomic(path, ply_string(scene).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_codes() {
        assert_eq!(depth_to_mm(0.0), 0);
        assert_eq!(depth_to_mm(f64::NAN), 0);
        assert_eq!(depth_to_mm(0.0004), 1);
        assert_eq!(depth_to_mm(1.2344), 1234);
        assert_eq!(depth_to_mm(100.0), 65535);
    }

    #[test]
    fn manifest_rejects_bad_units_and_cameras() {
        let text = r#"
units = "millimeters"
object_count = 0
palette = []
cameras = {}
views = []
"#;
        assert!(matches!(DatasetManifest::parse(text), Err(Error::Dataset(_))));
        let mut entry = CameraEntry::from_camera(
            &CameraView::look_at(Vector3::new(0.0, -1.0, 0.5), Vector3::zeros(), Vector3::z(), 50.0, 8, 8).unwrap(),
        );
        assert!(entry.to_camera().is_ok());
        entry.world_to_camera[0][0] = 3.0;
        assert!(entry.to_camera().is_err());
    }

    #[test]
    fn truncated_scene_is_rejected() {
        let file = SceneFile {
            scene: SceneSnapshot::new(0, Palette::default(), Aabb::new(Vector3::zeros(), Vector3::repeat(1.0))),
            cameras: Vec::new(),
        };
        let bytes = encode_scene(&file);
        assert!(matches!(decode_scene(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bumped = bytes.clone();
        bumped[8] = 9;
        assert!(matches!(decode_scene(&bumped), Err(Error::VersionMismatch { found: 9, .. })));
    }
}

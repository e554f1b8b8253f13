//! Pinhole cameras. Convention: camera x points right, y down, z forward;
//! `rotation`/`translation` map world points into the camera frame.
//! Pixel `(x, y)` samples the ray through image coordinate `(x, y)`, so
//! integer coordinates are pixel centers.

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraView {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` is a world-space hint for image up.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up hint parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::InvalidCamera("image must be at least 1x1".into()));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite intrinsics or translation".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidCamera(format!(
                "rotation is not a proper orthonormal matrix (|RᵀR - I| = {err:e})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    #[inline]
    pub fn to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (cam - self.translation)
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space direction of the optical axis.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Camera-frame ray through pixel coordinate `(x, y)`, scaled so that z = 1.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn project(&self, cam: &Vector3<f64>) -> Point2<f64> {
        Point2::new(
            self.fx * cam.x / cam.z + self.cx,
            self.fy * cam.y / cam.z + self.cy,
        )
    }

    /// World point seen at pixel `(x, y)` with camera-space depth `depth`.
    pub fn backproject(&self, x: f64, y: f64, depth: f64) -> Vector3<f64> {
        self.to_world(&(self.ray(x, y) * depth))
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// `count` cameras on a horizontal ring around `target`, evenly spaced in azimuth
/// starting at `start_azimuth` (radians), all looking at `target`.
#[allow(clippy::too_many_arguments)]
pub fn ring_cameras(
    count: usize,
    target: Vector3<f64>,
    radius: f64,
    height: f64,
    start_azimuth: f64,
    focal: f64,
    width: usize,
    height_px: usize,
) -> Result<Vec<CameraView>> {
    (0..count)
        .map(|i| {
            let phi = start_azimuth + std::f64::consts::TAU * i as f64 / count as f64;
            let eye = target + Vector3::new(radius * phi.cos(), radius * phi.sin(), height);
            CameraView::look_at(eye, target, Vector3::z(), focal, width, height_px)
        })
        .collect()
}

/// Bird's-eye camera straight above `target`.
pub fn top_camera(
    target: Vector3<f64>,
    distance: f64,
    focal: f64,
    width: usize,
    height: usize,
) -> Result<CameraView> {
    CameraView::look_at(
        target + Vector3::new(0.0, 0.0, distance),
        target,
        Vector3::y(),
        focal,
        width,
        height,
    )
}

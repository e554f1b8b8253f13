//! Planar Gaussian primitives, their raw (optimized) parameterization and the
//! activation that maps raw fields to renderable quantities.

use nalgebra::{Matrix3, Quaternion, Vector2, Vector3};

use crate::error::{Error, Result};

/// One oriented planar splat in raw parameter space.
///
/// `rotation` is stored unnormalized; its normalized rotation matrix has the
/// tangent axes `t_u`, `t_v` as its first two columns and the splat normal as
/// the third.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian2D {
    pub mean: Vector3<f64>,
    pub rotation: Quaternion<f64>,
    pub log_scale: Vector2<f64>,
    pub opacity_raw: f64,
    pub color: Vector3<f64>,
    pub mask_color: Vector3<f64>,
    pub object_logits: Vec<f64>,
}

/// Renderable form of a [`Gaussian2D`].
#[derive(Clone, Debug, PartialEq)]
pub struct ActivatedGaussian {
    pub mean: Vector3<f64>,
    /// Columns: `t_u`, `t_v`, normal.
    pub axes: Matrix3<f64>,
    pub scale: Vector2<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub mask_color: Vector3<f64>,
    pub object_weights: Vec<f64>,
}

/// Gradient with the same layout as [`Gaussian2D`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrad {
    pub mean: Vector3<f64>,
    pub rotation: Quaternion<f64>,
    pub log_scale: Vector2<f64>,
    pub opacity_raw: f64,
    pub color: Vector3<f64>,
    pub mask_color: Vector3<f64>,
    pub object_logits: Vec<f64>,
}

impl GaussianGrad {
    pub fn zeros(channels: usize) -> Self {
        Self {
            mean: Vector3::zeros(),
            rotation: Quaternion::new(0.0, 0.0, 0.0, 0.0),
            log_scale: Vector2::zeros(),
            opacity_raw: 0.0,
            color: Vector3::zeros(),
            mask_color: Vector3::zeros(),
            object_logits: vec![0.0; channels],
        }
    }

    pub fn add_assign(&mut self, other: &GaussianGrad) {
        self.mean += other.mean;
        self.rotation += other.rotation;
        self.log_scale += other.log_scale;
        self.opacity_raw += other.opacity_raw;
        self.color += other.color;
        self.mask_color += other.mask_color;
        for (a, b) in self.object_logits.iter_mut().zip(&other.object_logits) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.mean *= s;
        self.rotation *= s;
        self.log_scale *= s;
        self.opacity_raw *= s;
        self.color *= s;
        self.mask_color *= s;
        self.object_logits.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = self.opacity_raw.abs();
        for v in self
            .mean
            .iter()
            .chain(self.rotation.coords.iter())
            .chain(self.log_scale.iter())
            .chain(self.color.iter())
            .chain(self.mask_color.iter())
            .chain(self.object_logits.iter())
        {
            m = m.max(v.abs());
        }
        m
    }
}

impl Gaussian2D {
    /// A splat whose tangent plane is spanned by world x and y.
    pub fn new(mean: Vector3<f64>, channels: usize) -> Self {
        Self {
            mean,
            rotation: Quaternion::identity(),
            log_scale: Vector2::zeros(),
            opacity_raw: 0.0,
            color: Vector3::zeros(),
            mask_color: Vector3::zeros(),
            object_logits: vec![0.0; channels],
        }
    }

    /// Index of the largest object logit (lowest index on ties).
    pub fn object_id(&self) -> usize {
        argmax(&self.object_logits)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    pub fn scale(&self) -> Vector2<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn axes(&self) -> Matrix3<f64> {
        rotation_matrix(&self.rotation.normalize())
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_raw.is_finite()
            && self.color.iter().all(|v| v.is_finite())
            && self.mask_color.iter().all(|v| v.is_finite())
            && self.object_logits.iter().all(|v| v.is_finite())
    }

    /// Inverse of [`activate`]; logits are recovered up to an additive constant
    /// (the returned logits have zero mean).
    pub fn from_activated(a: &ActivatedGaussian) -> Self {
        let rotation = *nalgebra::UnitQuaternion::from_matrix(&a.axes).quaternion();
        let logs: Vec<f64> = a.object_weights.iter().map(|w| w.ln()).collect();
        let mean_log = logs.iter().sum::<f64>() / logs.len().max(1) as f64;
        Self {
            mean: a.mean,
            rotation,
            log_scale: a.scale.map(f64::ln),
            opacity_raw: logit(a.opacity),
            color: a.color,
            mask_color: a.mask_color,
            object_logits: logs.into_iter().map(|l| l - mean_log).collect(),
        }
    }
}

pub fn activate(g: &Gaussian2D) -> Result<ActivatedGaussian> {
    if !g.is_finite() {
        return Err(Error::InvalidGaussian("non-finite field".into()));
    }
    let norm = g.rotation.norm();
    if norm < 1e-12 {
        return Err(Error::InvalidGaussian("zero rotation quaternion".into()));
    }
    let scale = g.scale();
    if !scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidGaussian(format!("scale {scale:?} out of range")));
    }
    Ok(ActivatedGaussian {
        mean: g.mean,
        axes: rotation_matrix(&(g.rotation / norm)),
        scale,
        opacity: sigmoid(g.opacity_raw),
        color: g.color,
        mask_color: g.mask_color,
        object_weights: softmax(&g.object_logits),
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Pulls a gradient on softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64], out: &mut [f64]) {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    for ((o, p), g) in out.iter_mut().zip(probs).zip(grad_probs) {
        *o = p * (g - dot);
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient of a loss with respect to the raw (unnormalized) quaternion `q`,
/// given its gradient `dr` with respect to `rotation_matrix(q / |q|)`.
pub fn rotation_backward(q: &Quaternion<f64>, dr: &Matrix3<f64>) -> Quaternion<f64> {
    let norm = q.norm();
    let u = q / norm;
    let (w, x, y, z) = (u.w, u.i, u.j, u.k);
    let g = |r: usize, c: usize| dr[(r, c)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let du = Quaternion::new(dw, dx, dy, dz);
    // d(q/|q|)/dq = (I - u uᵀ) / |q|
    let along = du.coords.dot(&u.coords);
    Quaternion::from(du.coords - u.coords * along) / norm
}

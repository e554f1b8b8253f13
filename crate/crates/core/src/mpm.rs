//! Elastic MLS-MPM with APIC transfers, quadratic B-spline weights and a
//! fixed-corotated constitutive model, plus the depth-map front end that turns
//! rendered objects into particles.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::argmax;
use crate::image::Image;
use crate::spatial::HashGrid;

/// Minimum number of back-projected points per object.
pub const MIN_SURFACE_POINTS: usize = 50;
/// Accumulated alpha above which a rendered pixel counts as surface.
pub const SURFACE_ALPHA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialParams {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    /// Kelvin-Voigt viscosity in Pa·s acting on the symmetric velocity gradient.
    pub viscosity: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            youngs_modulus: 5e4,
            poisson_ratio: 0.4,
            density: 1000.0,
            viscosity: 50.0,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        if self.youngs_modulus > 0.0 && (0.0..0.5).contains(&self.poisson_ratio) && self.density > 0.0 && self.viscosity >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid material {self:?}")))
        }
    }

    pub fn mu(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    pub fn lambda(&self) -> f64 {
        let nu = self.poisson_ratio;
        self.youngs_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    }

    /// Largest stable time step for grid spacing `dx`.
    pub fn cfl_bound(&self, dx: f64) -> f64 {
        0.3 * dx / (self.youngs_modulus / self.density).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub mass: f64,
    pub deformation_gradient: Matrix3<f64>,
    pub affine_c: Matrix3<f64>,
    pub object: usize,
}

impl Particle {
    pub fn at_rest(position: Vector3<f64>, mass: f64, object: usize) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            mass,
            deformation_gradient: Matrix3::identity(),
            affine_c: Matrix3::zeros(),
            object,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem {
    pub particles: Vec<Particle>,
    pub spacing: f64,
}

impl ParticleSystem {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.particles.iter().map(|p| p.position).collect()
    }

    pub fn objects(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.particles.iter().map(|p| p.object).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.particles.iter().enumerate() {
            if !(p.mass > 0.0) || !(p.deformation_gradient.determinant() > 0.0) {
                return Err(Error::Config(format!("particle {i} has non-positive mass or det(F)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub steps: usize,
    /// Physical time per step; each step is subdivided into CFL-limited
    /// substeps. When unset, a step is a single substep.
    pub step_duration: Option<f64>,
    pub spacing: f64,
    /// Grid spacing; `4 * spacing` when unset.
    pub dx: Option<f64>,
    pub gravity: [f64; 3],
    pub ground_height: f64,
    pub friction: f64,
    pub material: MaterialParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            step_duration: None,
            spacing: 0.005,
            dx: None,
            gravity: [0.0, 0.0, -9.81],
            ground_height: 0.0,
            friction: 0.4,
            material: MaterialParams::default(),
        }
    }
}

impl SimConfig {
    pub fn dx(&self) -> f64 {
        self.dx.unwrap_or(4.0 * self.spacing)
    }

    /// Half the CFL bound, further limited by explicit viscous stability.
    pub fn dt(&self) -> f64 {
        let dx = self.dx();
        let elastic = self.material.cfl_bound(dx) * 0.5;
        if self.material.viscosity > 0.0 {
            elastic.min(self.material.density * dx * dx / (12.0 * self.material.viscosity))
        } else {
            elastic
        }
    }

    /// Substeps per step and their length.
    pub fn substeps(&self) -> (usize, f64) {
        let dt = self.dt();
        match self.step_duration {
            Some(d) if d > 0.0 => {
                let n = (d / dt).ceil().max(1.0) as usize;
                (n, d / n as f64)
            }
            _ => (1, dt),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        if !(self.spacing > 0.0) || !(self.dx() > 0.0) || self.friction < 0.0 {
            return Err(Error::Config(format!("invalid simulation config {self:?}")));
        }
        if let Some(d) = self.step_duration {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("step_duration must be positive, got {d}")));
            }
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }
}

/// Dense background grid covering the particles, node `k` at
/// `origin + k * dx` with the ground height on a node plane.
#[derive(Clone, Debug, PartialEq)]
pub struct MpmGrid {
    pub dx: f64,
    pub ground_height: f64,
    /// Global integer index of local node (0, 0, 0).
    pub base: [i64; 3],
    pub dims: [usize; 3],
    pub mass: Vec<f64>,
    /// Momentum after P2G, velocity after the grid update.
    pub momentum: Vec<Vector3<f64>>,
}

#[inline]
fn bspline(fx: f64) -> [f64; 3] {
    [
        0.5 * (1.5 - fx).powi(2),
        0.75 - (fx - 1.0).powi(2),
        0.5 * (fx - 0.5).powi(2),
    ]
}

impl MpmGrid {
    pub fn new(dx: f64, ground_height: f64) -> Self {
        Self {
            dx,
            ground_height,
            base: [0; 3],
            dims: [0; 3],
            mass: Vec::new(),
            momentum: Vec::new(),
        }
    }

    fn origin(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.ground_height)
    }

    /// Position of global node `k`.
    pub fn node_position(&self, k: [i64; 3]) -> Vector3<f64> {
        self.origin() + Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64) * self.dx
    }

    /// Lowest stencil node and fractional offset of a particle.
    #[inline]
    fn stencil(&self, x: &Vector3<f64>) -> ([i64; 3], Vector3<f64>) {
        let g = (x - self.origin()) / self.dx;
        let base = [
            (g.x - 0.5).floor() as i64,
            (g.y - 0.5).floor() as i64,
            (g.z - 0.5).floor() as i64,
        ];
        let fx = Vector3::new(g.x - base[0] as f64, g.y - base[1] as f64, g.z - base[2] as f64);
        (base, fx)
    }

    #[inline]
    fn local(&self, k: [i64; 3]) -> usize {
        let i = (k[0] - self.base[0]) as usize;
        let j = (k[1] - self.base[1]) as usize;
        let l = (k[2] - self.base[2]) as usize;
        (i * self.dims[1] + j) * self.dims[2] + l
    }

    /// Resizes the grid to cover every particle stencil and clears it.
    pub fn fit(&mut self, particles: &[Particle]) -> Result<()> {
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for p in particles {
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Degenerate("non-finite particle position".into()));
            }
            let (b, _) = self.stencil(&p.position);
            for k in 0..3 {
                lo[k] = lo[k].min(b[k]);
                hi[k] = hi[k].max(b[k] + 2);
            }
        }
        if particles.is_empty() {
            lo = [0; 3];
            hi = [0; 3];
        }
        let dims = [0, 1, 2].map(|k| (hi[k] - lo[k] + 1) as usize);
        let total = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&n| n <= 64_000_000)
            .ok_or_else(|| Error::Degenerate(format!("simulation domain of {dims:?} nodes is too large")))?;
        self.base = lo;
        self.dims = dims;
        self.mass.clear();
        self.mass.resize(total, 0.0);
        self.momentum.clear();
        self.momentum.resize(total, Vector3::zeros());
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.momentum.iter().sum()
    }

    /// Particle-to-grid transfer of mass, APIC momentum and elastic force.
    pub fn p2g(&mut self, particles: &[Particle], dt: f64, material: &MaterialParams) {
        let (mu, lambda) = (material.mu(), material.lambda());
        let inv_dx2 = 1.0 / (self.dx * self.dx);
        for p in particles {
            let volume = p.mass / material.density;
            let f = p.deformation_gradient;
            let j = f.determinant();
            let r = polar_rotation(&f);
            let pf = (f - r) * f.transpose() * (2.0 * mu)
                + Matrix3::identity() * (lambda * (j - 1.0) * j)
                + (p.affine_c + p.affine_c.transpose()) * (material.viscosity * j);
            let stress = pf * (-dt * volume * 4.0 * inv_dx2);
            let affine = stress + p.affine_c * p.mass;
            let mv = p.velocity * p.mass;
            let (base, fx) = self.stencil(&p.position);
            let w = [bspline(fx.x), bspline(fx.y), bspline(fx.z)];
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        let weight = w[0][a] * w[1][b] * w[2][c];
                        let dpos = (Vector3::new(a as f64, b as f64, c as f64) - fx) * self.dx;
                        let idx = self.local([base[0] + a as i64, base[1] + b as i64, base[2] + c as i64]);
                        self.mass[idx] += weight * p.mass;
                        self.momentum[idx] += (mv + affine * dpos) * weight;
                    }
                }
            }
        }
    }

    /// Converts momentum to velocity, applies gravity and the ground contact.
    /// The contact acts on the node layer one cell below the ground plane, so
    /// that resting particles sit on the plane rather than a cell above it.
    pub fn update(&mut self, dt: f64, gravity: &Vector3<f64>, friction: f64) {
        for l in 0..self.dims[2] {
            let ground = self.base[2] + l as i64 <= -1;
            for i in 0..self.dims[0] {
                for j in 0..self.dims[1] {
                    let idx = (i * self.dims[1] + j) * self.dims[2] + l;
                    let m = self.mass[idx];
                    if m <= 0.0 {
                        self.momentum[idx] = Vector3::zeros();
                        continue;
                    }
                    let mut v = self.momentum[idx] / m + gravity * dt;
                    if ground && v.z < 0.0 {
                        let normal_speed = -v.z;
                        v.z = 0.0;
                        let tangential = (v.x * v.x + v.y * v.y).sqrt();
                        let keep = if tangential > 0.0 {
                            (1.0 - friction * normal_speed / tangential).max(0.0)
                        } else {
                            0.0
                        };
                        v.x *= keep;
                        v.y *= keep;
                    }
                    self.momentum[idx] = v;
                }
            }
        }
    }

    /// Grid-to-particle transfer of velocity and affine field, then advection
    /// and deformation update.
    pub fn g2p(&self, particles: &mut [Particle], dt: f64) {
        let inv_dx2 = 1.0 / (self.dx * self.dx);
        for p in particles.iter_mut() {
            let (base, fx) = self.stencil(&p.position);
            let w = [bspline(fx.x), bspline(fx.y), bspline(fx.z)];
            let mut v = Vector3::zeros();
            let mut c = Matrix3::zeros();
            for a in 0..3 {
                for b in 0..3 {
                    for cc in 0..3 {
                        let weight = w[0][a] * w[1][b] * w[2][cc];
                        let dpos = (Vector3::new(a as f64, b as f64, cc as f64) - fx) * self.dx;
                        let vi = self.momentum[self.local([base[0] + a as i64, base[1] + b as i64, base[2] + cc as i64])];
                        v += vi * weight;
                        c += vi * dpos.transpose() * (4.0 * inv_dx2 * weight);
                    }
                }
            }
            p.velocity = v;
            p.affine_c = c;
            p.position += v * dt;
            p.deformation_gradient = (Matrix3::identity() + c * dt) * p.deformation_gradient;
        }
    }
}

/// Rotation factor of the polar decomposition `F = R S`.
pub fn polar_rotation(f: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = f.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Matrix3::identity();
    };
    if (u * v_t).determinant() < 0.0 {
        let (mut k, mut smallest) = (0, f64::INFINITY);
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s < smallest {
                smallest = *s;
                k = i;
            }
        }
        u.column_mut(k).neg_mut();
    }
    u * v_t
}

/// One MLS-MPM step: rebuild the grid, P2G, grid update, G2P.
pub fn mpm_step(
    particles: &mut [Particle],
    grid: &mut MpmGrid,
    dt: f64,
    gravity: &Vector3<f64>,
    config: &SimConfig,
    step: usize,
) -> Result<()> {
    let bound = config.material.cfl_bound(grid.dx);
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, bound });
    }
    grid.fit(particles).map_err(|_| Error::SimulationDiverged { step })?;
    grid.p2g(particles, dt, &config.material);
    grid.update(dt, gravity, config.friction);
    grid.g2p(particles, dt);
    let finite = particles.iter().all(|p| {
        p.position.iter().all(|v| v.is_finite())
            && p.velocity.iter().all(|v| v.is_finite())
            && p.deformation_gradient.iter().all(|v| v.is_finite())
    });
    if !finite {
        return Err(Error::SimulationDiverged { step });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotion {
    pub object: usize,
    pub particles: usize,
    pub start_centroid: [f64; 3],
    pub end_centroid: [f64; 3],
    pub displacement: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub start: Vec<Vector3<f64>>,
    pub end: Vec<Vector3<f64>>,
    pub objects: Vec<usize>,
    pub steps: usize,
    pub substeps: usize,
    pub dt: f64,
    pub final_state: Vec<Particle>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.substeps as f64 * self.dt
    }

    /// Per-object start and end centroids.
    pub fn summary(&self) -> Vec<ObjectMotion> {
        let mut ids = self.objects.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .map(|object| {
                let (mut s, mut e, mut n) = (Vector3::zeros(), Vector3::zeros(), 0usize);
                for i in (0..self.objects.len()).filter(|&i| self.objects[i] == object) {
                    s += self.start[i];
                    e += self.end[i];
                    n += 1;
                }
                let (s, e) = (s / n as f64, e / n as f64);
                ObjectMotion {
                    object,
                    particles: n,
                    start_centroid: s.into(),
                    end_centroid: e.into(),
                    displacement: (e - s).into(),
                }
            })
            .collect()
    }

    /// Start and end positions of the particles of `object`.
    pub fn object_pairs(&self, object: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        (0..self.objects.len())
            .filter(|&i| self.objects[i] == object)
            .map(|i| (self.start[i], self.end[i]))
            .unzip()
    }
}

/// Runs `config.steps` steps; `observer` sees the particles after every step.
pub fn simulate_with(
    system: &ParticleSystem,
    config: &SimConfig,
    mut observer: impl FnMut(usize, &[Particle]) -> Result<()>,
) -> Result<Trajectory> {
    config.validate()?;
    system.validate()?;
    let (substeps, dt) = config.substeps();
    let gravity = config.gravity();
    let mut particles = system.particles.clone();
    let mut grid = MpmGrid::new(config.dx(), config.ground_height);
    observer(0, &particles)?;
    for step in 0..config.steps {
        for _ in 0..substeps {
            mpm_step(&mut particles, &mut grid, dt, &gravity, config, step)?;
        }
        observer(step + 1, &particles)?;
    }
    Ok(Trajectory {
        start: system.positions(),
        end: particles.iter().map(|p| p.position).collect(),
        objects: particles.iter().map(|p| p.object).collect(),
        steps: config.steps,
        substeps,
        dt,
        final_state: particles,
    })
}

pub fn simulate(system: &ParticleSystem, config: &SimConfig) -> Result<Trajectory> {
    simulate_with(system, config, |_, _| Ok(()))
}

/// Appends one record per particle: step (u32), particle id (u32), x, y, z (f32), little endian.
pub fn write_trajectory_records(out: &mut impl Write, step: usize, particles: &[Particle]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(particles.len() * 20);
    for (i, p) in particles.iter().enumerate() {
        buf.extend_from_slice(&(step as u32).to_le_bytes());
        buf.extend_from_slice(&(i as u32).to_le_bytes());
        for k in 0..3 {
            buf.extend_from_slice(&(p.position[k] as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePoints {
    pub object: usize,
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

/// Back-projects every covered pixel (alpha above [`SURFACE_ALPHA`], argmax of
/// the one-hot not background) to a world point, grouped by object. Normals
/// come from neighboring depth samples and face the camera.
pub fn backproject_objects(depth: &Image, onehot: &Image, alpha: &Image, cam: &CameraView) -> Result<Vec<SurfacePoints>> {
    backproject_confident(depth, onehot, alpha, cam, 0.0)
}

/// [`backproject_objects`] keeping only pixels whose winning one-hot channel
/// holds at least `min_confidence` of the accumulated alpha.
pub fn backproject_confident(
    depth: &Image,
    onehot: &Image,
    alpha: &Image,
    cam: &CameraView,
    min_confidence: f64,
) -> Result<Vec<SurfacePoints>> {
    backproject_filtered(depth, onehot, alpha, cam, min_confidence, |_, _| true)
}

/// [`backproject_confident`] with an extra per-pixel predicate.
pub fn backproject_filtered(
    depth: &Image,
    onehot: &Image,
    alpha: &Image,
    cam: &CameraView,
    min_confidence: f64,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<Vec<SurfacePoints>> {
    depth.check_same_shape(alpha)?;
    if depth.width() != cam.width || depth.height() != cam.height || onehot.width() != cam.width || onehot.height() != cam.height
    {
        return Err(Error::ShapeMismatch("depth/one-hot/camera sizes differ".into()));
    }
    let background = onehot.channels() - 1;
    let (w, h) = (cam.width, cam.height);
    let valid = |x: usize, y: usize| alpha.get(x, y, 0) > SURFACE_ALPHA && depth.get(x, y, 0) > 0.0 && keep(x, y);
    let point = |x: usize, y: usize| cam.backproject(x as f64, y as f64, depth.get(x, y, 0));
    let mut sets: Vec<SurfacePoints> = (0..background)
        .map(|object| SurfacePoints {
            object,
            points: Vec::new(),
            normals: Vec::new(),
        })
        .collect();
    let center = cam.center();
    for y in 0..h {
        for x in 0..w {
            if !valid(x, y) {
                continue;
            }
            let id = argmax(onehot.pixel(x, y));
            if id == background || onehot.get(x, y, id) < min_confidence * alpha.get(x, y, 0) {
                continue;
            }
            let p = point(x, y);
            let diff = |a: Option<(usize, usize)>, b: Option<(usize, usize)>| -> Option<Vector3<f64>> {
                let pa = a.filter(|&(x, y)| valid(x, y)).map(|(x, y)| point(x, y));
                let pb = b.filter(|&(x, y)| valid(x, y)).map(|(x, y)| point(x, y));
                match (pa, pb) {
                    (Some(a), Some(b)) => Some(b - a),
                    (Some(a), None) => Some(p - a),
                    (None, Some(b)) => Some(b - p),
                    (None, None) => None,
                }
            };
            let left = (x > 0).then(|| (x - 1, y));
            let right = (x + 1 < w).then(|| (x + 1, y));
            let up = (y > 0).then(|| (x, y - 1));
            let down = (y + 1 < h).then(|| (x, y + 1));
            let to_cam = (center - p).normalize();
            let normal = match (diff(left, right), diff(up, down)) {
                (Some(du), Some(dv)) => du.cross(&dv).try_normalize(1e-12).unwrap_or(to_cam),
                _ => to_cam,
            };
            let normal = if normal.dot(&to_cam) < 0.0 { -normal } else { normal };
            sets[id].points.push(p);
            sets[id].normals.push(normal);
        }
    }
    Ok(sets.into_iter().filter(|s| !s.points.is_empty()).collect())
}

/// [`backproject_objects`], failing when a visible object has fewer than
/// [`MIN_SURFACE_POINTS`] points.
pub fn depth_to_surface(depth: &Image, onehot: &Image, alpha: &Image, cam: &CameraView) -> Result<Vec<SurfacePoints>> {
    let sets = backproject_objects(depth, onehot, alpha, cam)?;
    check_surface_density(&sets)?;
    Ok(sets)
}

pub fn check_surface_density(sets: &[SurfacePoints]) -> Result<()> {
    for s in sets {
        if s.points.len() < MIN_SURFACE_POINTS {
            return Err(Error::ObjectTooSparse {
                object: s.object,
                points: s.points.len(),
                min: MIN_SURFACE_POINTS,
            });
        }
    }
    Ok(())
}

/// Concatenates point sets of the same object (in input order).
pub fn merge_surfaces(sets: impl IntoIterator<Item = SurfacePoints>) -> Vec<SurfacePoints> {
    let mut out: Vec<SurfacePoints> = Vec::new();
    for s in sets {
        match out.iter_mut().find(|o| o.object == s.object) {
            Some(o) => {
                o.points.extend(s.points);
                o.normals.extend(s.normals);
            }
            None => out.push(s),
        }
    }
    out.sort_by_key(|s| s.object);
    out
}

/// Greedy thinning in input order: a point is kept unless a kept point lies
/// closer than `spacing`.
pub fn thin_points(points: &[Vector3<f64>], spacing: f64) -> Vec<usize> {
    let mut grid = HashGrid::new(spacing);
    let mut kept = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !grid.any_within(points, p, spacing) {
            grid.insert(i, p);
            kept.push(i);
        }
    }
    kept
}

/// Particles at roughly `spacing` over one object's surface points.
pub fn sample_particles(
    points: &[Vector3<f64>],
    spacing: f64,
    object: usize,
    material: &MaterialParams,
) -> Result<ParticleSystem> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Config(format!("particle spacing must be positive, got {spacing}")));
    }
    if points.is_empty() {
        return Err(Error::Empty("surface points"));
    }
    let mass = material.density * spacing.powi(3);
    Ok(ParticleSystem {
        particles: thin_points(points, spacing)
            .into_iter()
            .map(|i| Particle::at_rest(points[i], mass, object))
            .collect(),
        spacing,
    })
}

/// Particles for every surface set, objects in ascending order.
pub fn particles_from_surfaces(sets: &[SurfacePoints], spacing: f64, material: &MaterialParams) -> Result<ParticleSystem> {
    let mut particles = Vec::new();
    for s in sets {
        particles.extend(sample_particles(&s.points, spacing, s.object, material)?.particles);
    }
    if particles.is_empty() {
        return Err(Error::Empty("surface points"));
    }
    Ok(ParticleSystem { particles, spacing })
}

//! Optimization loop: random initialization, total loss, per-group Adam,
//! densification/pruning and single-view refinement.

use std::time::Instant;

use nalgebra::{Quaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::{logit, Gaussian2D, GaussianGrad};
use crate::image::Image;
use crate::losses::{dice_onehot_with_grad, l1_dssim_with_grad, LossWeights};
use crate::object_loss::{object_aware_terms, GroupLevelConfig, DEFAULT_LEVELS};
use crate::optim::{exponential_lr, Adam};
use crate::raster::{render, render_backward, RenderGrads, RenderOutput};
use crate::scene::{Aabb, Palette, SceneSnapshot, TrainingView};
use crate::spatial::mean_nearest_distance;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub mean_init: f64,
    pub mean_final: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub mask_color: f64,
    pub logits_init: f64,
    pub logits_final: f64,
    pub logits_decay_iterations: usize,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean_init: 1.6e-4,
            mean_final: 1.6e-6,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            mask_color: 2.5e-3,
            logits_init: 0.1,
            logits_final: 2.5e-3,
            logits_decay_iterations: 1000,
        }
    }
}

impl LearningRates {
    fn validate(&self) -> Result<()> {
        let all = [
            self.mean_init,
            self.mean_final,
            self.rotation,
            self.log_scale,
            self.opacity,
            self.color,
            self.mask_color,
            self.logits_init,
            self.logits_final,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("learning rates must be positive: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub init_points: usize,
    pub lr: LearningRates,
    /// Multiplier of the mean learning rate; derived from the camera spread when unset.
    pub spatial_lr_scale: Option<f64>,
    pub densify_interval: usize,
    pub densify_from: usize,
    /// Last densification iteration; `0.6 * iterations` when unset.
    pub densify_until: Option<usize>,
    pub densify_grad_threshold: f64,
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub opacity_reset_interval: usize,
    pub weights: LossWeights,
    pub use_object_loss: bool,
    pub levels: Vec<GroupLevelConfig>,
    /// Single-view refinement: no densification, no object loss.
    pub refinement: bool,
    pub adam: Adam,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 7000,
            seed: 0,
            init_points: 10_000,
            lr: LearningRates::default(),
            spatial_lr_scale: None,
            densify_interval: 100,
            densify_from: 500,
            densify_until: None,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 5e-3,
            opacity_reset_interval: 3000,
            weights: LossWeights::default(),
            use_object_loss: true,
            levels: DEFAULT_LEVELS.to_vec(),
            refinement: false,
            adam: Adam::default(),
        }
    }
}

impl TrainConfig {
    /// Settings of the post-update refinement pass. Mean and logit rates
    /// stay at the end of their training schedules.
    pub fn refinement(iterations: usize) -> Self {
        let mut lr = LearningRates::default();
        lr.mean_init = lr.mean_final;
        lr.logits_init = lr.logits_final;
        Self {
            iterations,
            use_object_loss: false,
            refinement: true,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        self.weights.validate()?;
        if self.densify_interval == 0 || self.opacity_reset_interval == 0 {
            return Err(Error::Config("intervals must be >= 1".into()));
        }
        if self.init_points == 0 {
            return Err(Error::Config("init_points must be >= 1".into()));
        }
        for level in &self.levels {
            level.validate()?;
        }
        if let Some(s) = self.spatial_lr_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("spatial_lr_scale must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn densify_until(&self) -> usize {
        self.densify_until
            .unwrap_or((self.iterations as f64 * 0.6).round() as usize)
    }
}

/// Gaussians at uniform random positions inside `bounds`.
pub fn init_random(bounds: &Aabb, count: usize, palette: &Palette, seed: u64) -> Result<SceneSnapshot> {
    let extent = bounds.extent();
    if !(extent.x > 0.0 && extent.y > 0.0 && extent.z > 0.0) || !bounds.volume().is_finite() {
        return Err(Error::DegenerateBounds);
    }
    if count == 0 {
        return Err(Error::Config("init count must be >= 1".into()));
    }
    let n = palette.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vector3<f64>> = (0..count)
        .map(|_| {
            Vector3::new(
                bounds.min.x + rng.random::<f64>() * extent.x,
                bounds.min.y + rng.random::<f64>() * extent.y,
                bounds.min.z + rng.random::<f64>() * extent.z,
            )
        })
        .collect();
    let cell = (bounds.volume() / count as f64).cbrt();
    let spacing = mean_nearest_distance(&means, cell).unwrap_or_else(|| extent.min() * 0.5);
    let log_scale = spacing.max(1e-7).ln();
    let mut scene = SceneSnapshot::new(n, palette.clone(), *bounds);
    scene.gaussians = means
        .into_iter()
        .map(|mean| {
            let mut g = Gaussian2D::new(mean, n + 1);
            g.rotation = random_rotation(&mut rng);
            g.log_scale = Vector2::repeat(log_scale);
            g.opacity_raw = logit(0.1);
            g.color = Vector3::new(rng.random(), rng.random(), rng.random());
            g.mask_color = Vector3::new(rng.random(), rng.random(), rng.random());
            g
        })
        .collect();
    Ok(scene)
}

/// Uniformly distributed unit quaternion.
fn random_rotation(rng: &mut impl Rng) -> Quaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Quaternion::new(b * (tau * u3).cos(), a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin())
}

/// Per-term values of one loss evaluation (each already weighted).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub color: f64,
    pub mask: f64,
    pub one_hot: f64,
    pub object: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.color + self.mask + self.one_hot + self.object
    }
}

#[derive(Clone, Debug)]
pub struct LossEvaluation {
    pub total: f64,
    pub terms: LossTerms,
    pub grads: Vec<GaussianGrad>,
    pub screen_grad: Vec<f64>,
    pub visible: Vec<bool>,
}

/// Color target: the view's image with background-labeled pixels set to black.
pub fn color_target(view: &TrainingView) -> Image {
    let bg = view.onehot_labels.channels() - 1;
    let mut out = view.rgb.clone();
    for y in 0..out.height() {
        for x in 0..out.width() {
            if view.onehot_labels.get(x, y, bg) == 1.0 {
                out.pixel_mut(x, y).fill(0.0);
            }
        }
    }
    out
}

/// One-hot render with the background channel composited behind the splats,
/// i.e. channel `N` gains the residual transmittance `1 - alpha`.
pub fn onehot_with_background(out: &RenderOutput) -> Image {
    let mut onehot = out.onehot.clone();
    let bg = onehot.channels() - 1;
    for y in 0..onehot.height() {
        for x in 0..onehot.width() {
            let a = out.alpha.get(x, y, 0);
            let v = onehot.get(x, y, bg);
            onehot.set(x, y, bg, v + 1.0 - a);
        }
    }
    onehot
}

/// Weighted color, mask and one-hot losses of the rendered view, plus the
/// object-aware term when enabled, with gradients for every Gaussian.
pub fn total_loss(
    scene: &SceneSnapshot,
    view: &TrainingView,
    weights: &LossWeights,
    use_object_loss: bool,
) -> Result<LossEvaluation> {
    let levels: &[GroupLevelConfig] = if use_object_loss { &DEFAULT_LEVELS } else { &[] };
    total_loss_with_levels(scene, view, weights, levels, &color_target(view))
}

fn total_loss_with_levels(
    scene: &SceneSnapshot,
    view: &TrainingView,
    weights: &LossWeights,
    levels: &[GroupLevelConfig],
    rgb_target: &Image,
) -> Result<LossEvaluation> {
    let cam = &view.camera;
    let out = render(scene, cam)?;
    let (lc, gc) = l1_dssim_with_grad(&out.rgb, rgb_target, weights.lambda_dssim)?;
    let (lm, gm) = l1_dssim_with_grad(&out.mask, &view.mask_rgb, weights.lambda_dssim)?;
    let onehot = onehot_with_background(&out);
    let (lo, go) = dice_onehot_with_grad(&onehot, &view.onehot_labels)?;

    let mut grads = RenderGrads::zeros(cam.width, cam.height, scene.channels());
    grads.rgb = gc.map(|g| g * weights.a_color);
    grads.mask = gm.map(|g| g * weights.a_mask);
    grads.onehot = go.map(|g| g * weights.a_one_hot);
    let bg = scene.background_id();
    for y in 0..cam.height {
        for x in 0..cam.width {
            grads.alpha.set(x, y, 0, -grads.onehot.get(x, y, bg));
        }
    }
    let back = render_backward(scene, cam, &grads)?;
    let mut gaussian_grads = back.gaussians;

    let mut object = 0.0;
    if !levels.is_empty() {
        let mut mean_grads = vec![Vector3::zeros(); scene.len()];
        let t = object_aware_terms(scene, weights, levels, Some(&mut mean_grads));
        object = t.weighted(weights);
        for (g, m) in gaussian_grads.iter_mut().zip(&mean_grads) {
            g.mean += m;
        }
    }
    let terms = LossTerms {
        color: weights.a_color * lc,
        mask: weights.a_mask * lm,
        one_hot: weights.a_one_hot * lo,
        object,
    };
    Ok(LossEvaluation {
        total: terms.total(),
        terms,
        grads: gaussian_grads,
        screen_grad: back.screen_grad,
        visible: back.visible,
    })
}

/// One line of the training progress log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub iteration: usize,
    pub total: f64,
    pub color: f64,
    pub mask: f64,
    pub one_hot: f64,
    pub object: f64,
    pub gaussians: usize,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub scene: SceneSnapshot,
    pub log: Vec<ProgressRecord>,
    pub optimize_seconds: f64,
}

impl TrainOutcome {
    /// Mean total loss over log records `[from, to)`.
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let slice = &self.log[from.min(self.log.len())..to.min(self.log.len())];
        slice.iter().map(|r| r.total).sum::<f64>() / slice.len().max(1) as f64
    }
}

/// Adam moments of one Gaussian, laid out like its gradient.
#[derive(Clone, Debug)]
struct Moments {
    m: GaussianGrad,
    v: GaussianGrad,
}

impl Moments {
    fn zeros(channels: usize) -> Self {
        Self {
            m: GaussianGrad::zeros(channels),
            v: GaussianGrad::zeros(channels),
        }
    }
}

#[derive(Clone, Copy)]
struct GroupRates {
    mean: f64,
    rotation: f64,
    log_scale: f64,
    opacity: f64,
    color: f64,
    mask_color: f64,
    logits: f64,
}

fn adam_gaussian(adam: &Adam, g: &mut Gaussian2D, grad: &GaussianGrad, st: &mut Moments, lr: &GroupRates, step: u64) {
    let Moments { m, v } = st;
    adam.update(g.mean.as_mut_slice(), grad.mean.as_slice(), m.mean.as_mut_slice(), v.mean.as_mut_slice(), lr.mean, step);
    adam.update(
        g.rotation.coords.as_mut_slice(),
        grad.rotation.coords.as_slice(),
        m.rotation.coords.as_mut_slice(),
        v.rotation.coords.as_mut_slice(),
        lr.rotation,
        step,
    );
    adam.update(
        g.log_scale.as_mut_slice(),
        grad.log_scale.as_slice(),
        m.log_scale.as_mut_slice(),
        v.log_scale.as_mut_slice(),
        lr.log_scale,
        step,
    );
    adam.update(
        std::slice::from_mut(&mut g.opacity_raw),
        std::slice::from_ref(&grad.opacity_raw),
        std::slice::from_mut(&mut m.opacity_raw),
        std::slice::from_mut(&mut v.opacity_raw),
        lr.opacity,
        step,
    );
    adam.update(g.color.as_mut_slice(), grad.color.as_slice(), m.color.as_mut_slice(), v.color.as_mut_slice(), lr.color, step);
    adam.update(
        g.mask_color.as_mut_slice(),
        grad.mask_color.as_slice(),
        m.mask_color.as_mut_slice(),
        v.mask_color.as_mut_slice(),
        lr.mask_color,
        step,
    );
    adam.update(&mut g.object_logits, &grad.object_logits, &mut m.object_logits, &mut v.object_logits, lr.logits, step);
}

/// Radius of the camera centers around their mean, padded by 10%; falls back
/// to half the bounds diagonal for a single camera.
pub fn scene_extent(cameras: &[CameraView], bounds: &Aabb) -> f64 {
    let centers: Vec<Vector3<f64>> = cameras.iter().map(|c| c.center()).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len().max(1) as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) * 1.1;
    if radius > 1e-6 {
        radius
    } else {
        bounds.extent().norm() * 0.5
    }
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    scene: SceneSnapshot,
    moments: Vec<Moments>,
    grad_accum: Vec<f64>,
    grad_count: Vec<u32>,
    extent: f64,
    rng: ChaCha8Rng,
}

impl Trainer<'_> {
    fn rates(&self, iteration: usize) -> GroupRates {
        let lr = &self.config.lr;
        let scale = self.config.spatial_lr_scale.unwrap_or(self.extent);
        GroupRates {
            mean: exponential_lr(lr.mean_init, lr.mean_final, iteration, self.config.iterations) * scale,
            rotation: lr.rotation,
            log_scale: lr.log_scale,
            opacity: lr.opacity,
            color: lr.color,
            mask_color: lr.mask_color,
            logits: exponential_lr(lr.logits_init, lr.logits_final, iteration, lr.logits_decay_iterations),
        }
    }

    fn reset_stats(&mut self) {
        self.grad_accum = vec![0.0; self.scene.len()];
        self.grad_count = vec![0; self.scene.len()];
    }

    /// Clones small and splits large Gaussians whose mean screen-space
    /// gradient exceeds the threshold, then prunes near-transparent ones.
    fn densify_and_prune(&mut self, iteration: usize) -> Result<()> {
        let channels = self.scene.channels();
        let threshold = self.config.densify_grad_threshold;
        let size_limit = self.config.percent_dense * self.extent;
        let old = std::mem::take(&mut self.scene.gaussians);
        let old_moments = std::mem::take(&mut self.moments);
        let mut kept = Vec::with_capacity(old.len());
        let mut kept_moments = Vec::with_capacity(old.len());
        let mut clones = Vec::new();
        let mut children = Vec::new();
        for (i, (g, st)) in old.into_iter().zip(old_moments).enumerate() {
            let count = self.grad_count[i];
            let avg = if count > 0 { self.grad_accum[i] / count as f64 } else { 0.0 };
            if avg < threshold {
                kept.push(g);
                kept_moments.push(st);
                continue;
            }
            let scale = g.scale();
            if scale.max() <= size_limit {
                clones.push(g.clone());
                kept.push(g);
                kept_moments.push(st);
            } else {
                let axes = g.axes();
                for _ in 0..2 {
                    let mut u: f64 = self.rng.sample(StandardNormal);
                    let mut v: f64 = self.rng.sample(StandardNormal);
                    let r = (u * u + v * v).sqrt();
                    if r > 2.0 {
                        u *= 2.0 / r;
                        v *= 2.0 / r;
                    }
                    let mut child = g.clone();
                    child.mean += axes.column(0) * (u * scale.x) + axes.column(1) * (v * scale.y);
                    child.log_scale = (scale / 1.6).map(f64::ln);
                    children.push(child);
                }
            }
        }
        let added = clones.len() + children.len();
        kept.extend(clones);
        kept.extend(children);
        kept_moments.extend((0..added).map(|_| Moments::zeros(channels)));

        self.scene.gaussians = kept;
        self.moments = kept_moments;
        self.prune(iteration)
    }

    /// Drops Gaussians whose opacity fell below the prune threshold.
    fn prune(&mut self, iteration: usize) -> Result<()> {
        let min_opacity = self.config.prune_opacity;
        let gaussians = std::mem::take(&mut self.scene.gaussians);
        let moments = std::mem::take(&mut self.moments);
        let (gaussians, moments): (Vec<_>, Vec<_>) = gaussians
            .into_iter()
            .zip(moments)
            .filter(|(g, _)| g.opacity() >= min_opacity)
            .unzip();
        if gaussians.is_empty() {
            return Err(Error::AllPruned {
                iteration,
                diagnostic: format!(
                    "every gaussian fell below opacity {min_opacity}; check that masks and images agree"
                ),
            });
        }
        self.scene.gaussians = gaussians;
        self.moments = moments;
        self.reset_stats();
        Ok(())
    }

    fn reset_opacity(&mut self) {
        let cap = logit(0.01);
        for (g, st) in self.scene.gaussians.iter_mut().zip(&mut self.moments) {
            g.opacity_raw = g.opacity_raw.min(cap);
            st.m.opacity_raw = 0.0;
            st.v.opacity_raw = 0.0;
        }
    }
}

/// Optimizes `init` against `views` for `config.iterations` steps. Views are
/// visited round-robin; `sink` receives every progress record.
pub fn train(
    views: &[TrainingView],
    init: SceneSnapshot,
    config: &TrainConfig,
    mut sink: impl FnMut(&ProgressRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::Empty("training views"));
    }
    init.validate()?;
    for v in views {
        v.validate(init.object_count)?;
    }
    let start = Instant::now();
    let cameras: Vec<CameraView> = views.iter().map(|v| v.camera.clone()).collect();
    let extent = scene_extent(&cameras, &init.bounds);
    let targets: Vec<Image> = views.iter().map(color_target).collect();
    let channels = init.channels();
    let mut t = Trainer {
        config,
        moments: (0..init.len()).map(|_| Moments::zeros(channels)).collect(),
        grad_accum: vec![0.0; init.len()],
        grad_count: vec![0; init.len()],
        scene: init,
        extent,
        rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_d3a5),
    };
    let levels: &[GroupLevelConfig] = if config.use_object_loss && !config.refinement {
        &config.levels
    } else {
        &[]
    };
    let densify = !config.refinement;
    let densify_until = config.densify_until();
    let mut log = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let step = it + 1;
        let vi = it % views.len();
        let eval = total_loss_with_levels(&t.scene, &views[vi], &config.weights, levels, &targets[vi])?;
        if !eval.total.is_finite() {
            return Err(Error::InvalidGaussian(format!("non-finite loss at iteration {step}")));
        }
        let rates = t.rates(it);
        for ((g, grad), st) in t.scene.gaussians.iter_mut().zip(&eval.grads).zip(&mut t.moments) {
            adam_gaussian(&config.adam, g, grad, st, &rates, step as u64);
        }
        if densify && step < densify_until {
            for (i, vis) in eval.visible.iter().enumerate() {
                if *vis {
                    t.grad_accum[i] += eval.screen_grad[i];
                    t.grad_count[i] += 1;
                }
            }
            if step > config.densify_from && step % config.densify_interval == 0 {
                t.densify_and_prune(step)?;
            }
            if step % config.opacity_reset_interval == 0 {
                t.reset_opacity();
            }
        } else if densify && step > config.densify_from && step % config.densify_interval == 0 {
            t.prune(step)?;
        }
        let record = ProgressRecord {
            iteration: step,
            total: eval.total,
            color: eval.terms.color,
            mask: eval.terms.mask,
            one_hot: eval.terms.one_hot,
            object: eval.terms.object,
            gaussians: t.scene.len(),
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        sink(&record);
        log.push(record);
    }
    if let Some(i) = t.scene.gaussians.iter().position(|g| !g.is_finite()) {
        return Err(Error::InvalidGaussian(format!("gaussian {i} became non-finite during training")));
    }
    Ok(TrainOutcome {
        scene: t.scene,
        log,
        optimize_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Single-view refinement without densification or the object-aware loss.
pub fn refine(scene: SceneSnapshot, view: &TrainingView, iterations: usize) -> Result<TrainOutcome> {
    refine_with(scene, view, &TrainConfig::refinement(iterations))
}

pub fn refine_with(scene: SceneSnapshot, view: &TrainingView, config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig {
        refinement: true,
        use_object_loss: false,
        ..config.clone()
    };
    train(std::slice::from_ref(view), scene, &config, |_| {})
}

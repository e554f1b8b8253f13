//! Image-space losses: L1 mixed with structural dissimilarity for RGB and mask
//! images, and a dice loss on softmax-normalized one-hot renders.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gaussian::{softmax_backward, softmax_into};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DICE_EPS: f64 = 1e-6;

/// Weights of the total training objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub a_color: f64,
    pub a_mask: f64,
    pub a_one_hot: f64,
    /// Weight of the neighbor-sum variance term.
    pub a_s: f64,
    /// Weight of the center-distance variance term.
    pub a_d: f64,
    /// Mixing weight of the D-SSIM term against L1.
    pub lambda_dssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            a_color: 0.5,
            a_mask: 0.5,
            a_one_hot: 1.0,
            a_s: 10000.0 / 3.0,
            a_d: 1.0 / 3.0,
            lambda_dssim: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_color, self.a_mask, self.a_one_hot, self.a_s, self.a_d, self.lambda_dssim];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) && self.lambda_dssim <= 1.0 {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("loss weights must be non-negative: {self:?}")))
        }
    }
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian blur of an interleaved buffer with zero padding.
/// The kernel is symmetric, so this is also its own adjoint.
fn blur(data: &[f64], width: usize, height: usize, channels: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            for (k, t) in taps.iter().enumerate() {
                let sx = x as isize + k as isize - half;
                if sx < 0 || sx >= width as isize {
                    continue;
                }
                let src = (y * width + sx as usize) * channels;
                let dst = (y * width + x) * channels;
                for c in 0..channels {
                    tmp[dst + c] += t * data[src + c];
                }
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (k, t) in taps.iter().enumerate() {
            let sy = y as isize + k as isize - half;
            if sy < 0 || sy >= height as isize {
                continue;
            }
            let src_row = sy as usize * width * channels;
            let dst_row = y * width * channels;
            for i in 0..width * channels {
                out[dst_row + i] += t * tmp[src_row + i];
            }
        }
    }
    out
}

/// Mean SSIM over all pixels and channels, and its gradient with respect to `pred`.
pub fn ssim_with_grad(pred: &Image, gt: &Image) -> Result<(f64, Image)> {
    pred.check_same_shape(gt)?;
    let (w, h, c) = (pred.width(), pred.height(), pred.channels());
    let taps = gaussian_taps();
    let x = pred.data();
    let y = gt.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = blur(x, w, h, c, &taps);
    let mu_y = blur(y, w, h, c, &taps);
    let s_xx = blur(&xx, w, h, c, &taps);
    let s_yy = blur(&yy, w, h, c, &taps);
    let s_xy = blur(&xy, w, h, c, &taps);

    let n = x.len() as f64;
    let mut total = 0.0;
    let mut d_mu = vec![0.0; x.len()];
    let mut d_sxx = vec![0.0; x.len()];
    let mut d_sxy = vec![0.0; x.len()];
    for i in 0..x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = s_xx[i] - mx * mx;
        let var_y = s_yy[i] - my * my;
        let cov = s_xy[i] - mx * my;
        let n1 = 2.0 * mx * my + SSIM_C1;
        let n2 = 2.0 * cov + SSIM_C2;
        let d1 = mx * mx + my * my + SSIM_C1;
        let d2 = var_x + var_y + SSIM_C2;
        let s = n1 * n2 / (d1 * d2);
        total += s;
        d_mu[i] = ((2.0 * my * n2 - 2.0 * my * n1) / (d1 * d2) - s * (2.0 * mx / d1 - 2.0 * mx / d2)) / n;
        d_sxx[i] = -s / d2 / n;
        d_sxy[i] = 2.0 * n1 / (d1 * d2) / n;
    }
    let a = blur(&d_mu, w, h, c, &taps);
    let b = blur(&d_sxx, w, h, c, &taps);
    let cc = blur(&d_sxy, w, h, c, &taps);
    let grad: Vec<f64> = (0..x.len()).map(|i| a[i] + 2.0 * x[i] * b[i] + y[i] * cc[i]).collect();
    Ok((total / n, Image::from_vec(w, h, c, grad)?))
}

pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    ssim_with_grad(pred, gt).map(|(s, _)| s)
}

/// `(1 − λ)·mean|pred − gt| + λ·(1 − SSIM)/2` and its gradient with respect to `pred`.
pub fn l1_dssim_with_grad(pred: &Image, gt: &Image, lambda: f64) -> Result<(f64, Image)> {
    pred.check_same_shape(gt)?;
    let n = pred.data().len() as f64;
    let mut l1 = 0.0;
    let mut grad = Image::new(pred.width(), pred.height(), pred.channels());
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(gt.data()) {
        let d = p - t;
        l1 += d.abs();
        *g = if d == 0.0 { 0.0 } else { (1.0 - lambda) * d.signum() / n };
    }
    l1 /= n;
    if lambda == 0.0 {
        return Ok(((1.0 - lambda) * l1, grad));
    }
    let (s, ds) = ssim_with_grad(pred, gt)?;
    for (g, d) in grad.data_mut().iter_mut().zip(ds.data()) {
        *g -= lambda * d / 2.0;
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - s) / 2.0, grad))
}

pub fn l1_dssim(pred: &Image, gt: &Image, lambda: f64) -> Result<f64> {
    l1_dssim_with_grad(pred, gt, lambda).map(|(l, _)| l)
}

/// Dice loss between per-pixel softmax of the raw one-hot accumulation and
/// binary labels, averaged over all channels (background included).
pub fn dice_onehot_with_grad(pred: &Image, labels: &Image) -> Result<(f64, Image)> {
    pred.check_same_shape(labels)?;
    let c = pred.channels();
    let pixels = pred.pixel_count();
    let mut probs = vec![0.0; pred.data().len()];
    for (src, dst) in pred.data().chunks(c).zip(probs.chunks_mut(c)) {
        softmax_into(src, dst);
    }
    let mut inter = vec![0.0; c];
    let mut psum = vec![0.0; c];
    let mut ysum = vec![0.0; c];
    for (p, y) in probs.chunks(c).zip(labels.data().chunks(c)) {
        for k in 0..c {
            inter[k] += p[k] * y[k];
            psum[k] += p[k];
            ysum[k] += y[k];
        }
    }
    let mut score = 0.0;
    let mut d_prob = vec![0.0; c];
    for k in 0..c {
        let den = psum[k] + ysum[k] + DICE_EPS;
        score += (2.0 * inter[k] + DICE_EPS) / den;
    }
    let loss = 1.0 - score / c as f64;

    let mut grad = Image::new(pred.width(), pred.height(), c);
    for i in 0..pixels {
        let p = &probs[i * c..(i + 1) * c];
        let y = &labels.data()[i * c..(i + 1) * c];
        for k in 0..c {
            let den = psum[k] + ysum[k] + DICE_EPS;
            d_prob[k] = -(2.0 * y[k] / den - (2.0 * inter[k] + DICE_EPS) / (den * den)) / c as f64;
        }
        softmax_backward(p, &d_prob, &mut grad.data_mut()[i * c..(i + 1) * c]);
    }
    Ok((loss, grad))
}

pub fn dice_onehot(pred: &Image, labels: &Image) -> Result<f64> {
    dice_onehot_with_grad(pred, labels).map(|(l, _)| l)
}

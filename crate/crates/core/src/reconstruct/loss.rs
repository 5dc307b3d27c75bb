use crate::camera::{Frame, Raster, RgbImage};
use crate::render::RenderOutput;

use super::OptimConfig;

/// `r^2 / 2` inside `[-delta, delta]`, linear with matching slope outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// `color + eta * depth`, averaged over unmasked pixels.
    pub total: f64,
    /// Mean masked L1 color term.
    pub color: f64,
    /// Mean (unweighted) Huber depth term.
    pub depth: f64,
    pub grad_color: RgbImage,
    pub grad_depth: Raster<f64>,
}

/// Masked L1 color plus `eta`-weighted Huber depth loss, averaged over the
/// frame's unmasked pixels, with per-pixel gradients for the renderer.
pub fn loss(render: &RenderOutput, frame: &Frame, cfg: &OptimConfig) -> LossOutput {
    let (w, h) = (frame.camera.width, frame.camera.height);
    assert_eq!((render.color.width, render.color.height), (w, h), "render/frame resolution mismatch");
    let visible = frame.unmasked_count();
    let mut grad_color = Raster::filled(w, h, [0.0; 3]);
    let mut grad_depth = Raster::filled(w, h, 0.0);
    if visible == 0 {
        return LossOutput { total: 0.0, color: 0.0, depth: 0.0, grad_color, grad_depth };
    }
    let inv_n = 1.0 / visible as f64;
    let mut color_sum = 0.0;
    let mut depth_sum = 0.0;
    for i in 0..w * h {
        let tool = frame.mask.data[i];
        let c = render.color.data[i];
        let target = frame.image.data[i];
        if !tool {
            let mut g = [0.0; 3];
            for ch in 0..3 {
                let d = c[ch] - target[ch];
                color_sum += d.abs();
                g[ch] = if d > 0.0 {
                    inv_n
                } else if d < 0.0 {
                    -inv_n
                } else {
                    0.0
                };
            }
            grad_color.data[i] = g;
        }
        if !tool || !cfg.mask_depth {
            let r = frame.depth.data[i] - render.depth.data[i];
            if r.is_finite() {
                depth_sum += huber(r, cfg.huber_delta);
                grad_depth.data[i] = -cfg.eta * huber_grad(r, cfg.huber_delta) * inv_n;
            }
        }
    }
    let color = color_sum * inv_n;
    let depth = depth_sum * inv_n;
    LossOutput { total: color + cfg.eta * depth, color, depth, grad_color, grad_depth }
}

/// PSNR in dB over unmasked pixels (peak 1).
pub fn psnr(image: &RgbImage, frame: &Frame) -> f64 {
    let mut se = 0.0;
    let mut n = 0usize;
    for ((c, t), &m) in image.data.iter().zip(&frame.image.data).zip(&frame.mask.data) {
        if m {
            continue;
        }
        for ch in 0..3 {
            let d = c[ch].clamp(0.0, 1.0) - t[ch];
            se += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return f64::INFINITY;
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean |D_frame - D_rendered| over unmasked pixels.
pub fn mean_depth_error(depth: &Raster<f64>, frame: &Frame) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((d, t), &m) in depth.data.iter().zip(&frame.depth.data).zip(&frame.mask.data) {
        if !m {
            sum += (d - t).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

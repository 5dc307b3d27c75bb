//! Fitting a Gaussian scene to posed RGB-D frames.
//!
//! Pipeline: depth-reprojection initialization, Adam on the masked L1 color +
//! Huber depth objective, and periodic maintenance (clone/split densification,
//! low-opacity pruning, anisotropy pruning).

mod loss;
mod optim;

pub use loss::{huber, huber_grad, loss, mean_depth_error, psnr, LossOutput};
pub use optim::{Adam, ParamGroup, RawParams, PARAMS_PER_GAUSSIAN};

use std::io::Write;
use std::time::Instant;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Frame;
use crate::render::{rasterize_backward, rasterize_gaussians, RenderSettings};
use crate::scene::{Gaussian, MaterialParams, Scene};
use crate::spatial::PointGrid;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("no visible tissue: every pixel of every frame is masked")]
    NoVisibleTissue,
    #[error("no frames supplied")]
    NoFrames,
    #[error("loss diverged (non-finite) at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("invalid optimizer config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub iterations: usize,
    /// Weight of the Huber depth term.
    pub eta: f64,
    pub huber_delta: f64,
    /// Anisotropy prune threshold on max(scale) / min(scale).
    pub gamma: f64,
    /// Apply the tool mask to the depth term as well as the color term.
    pub mask_depth: bool,
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    /// Multiplies the position learning rate; defaults to the half-diagonal
    /// of the initial scene bounds.
    pub position_lr_scale: Option<f64>,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_every: usize,
    /// Mean NDC-space position gradient norm that triggers clone/split.
    pub densify_grad_threshold: f64,
    /// Gaussians smaller than this fraction of the scene extent are cloned,
    /// larger ones split.
    pub percent_dense: f64,
    pub min_opacity: f64,
    pub max_gaussians: usize,
    /// Image pixels per initial Gaussian (a fractional sampling stride of
    /// `sqrt` of this); 512x640 / 50k by default.
    pub init_pixels_per_point: f64,
    /// A later frame seeds Gaussians only if it adds at least this fraction of
    /// new unmasked coverage.
    pub init_coverage_gain: f64,
    pub psnr_every: usize,
    pub seed: u64,
    pub render: RenderSettings,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 7000,
            eta: 0.3,
            huber_delta: 0.2,
            gamma: 10.0,
            mask_depth: true,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_color: 2.5e-3,
            lr_opacity: 5e-2,
            position_lr_scale: None,
            densify_from: 500,
            densify_until: 5000,
            densify_every: 100,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            min_opacity: 0.005,
            max_gaussians: 200_000,
            init_pixels_per_point: 512.0 * 640.0 / 50_000.0,
            init_coverage_gain: 0.2,
            psnr_every: 100,
            seed: 0,
            render: RenderSettings::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::Config(m.to_string()));
        if !(self.eta >= 0.0) {
            return bad("eta must be >= 0");
        }
        if !(self.gamma > 1.0) {
            return bad("gamma must be > 1");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta must be > 0");
        }
        if !(self.init_pixels_per_point >= 1.0) {
            return bad("init_pixels_per_point must be >= 1");
        }
        if self.densify_every == 0 {
            return bad("densify_every must be >= 1");
        }
        Ok(())
    }
}

/// Back-projects unmasked depth pixels into one isotropic Gaussian each.
///
/// The first frame always seeds; a later frame seeds from its newly
/// uncovered pixels only when they add at least `init_coverage_gain` of the
/// coverage accumulated so far.
pub fn initialize_from_depth(frames: &[Frame], cfg: &OptimConfig) -> Result<Scene, FitError> {
    let first = frames.first().ok_or(FitError::NoFrames)?;
    let (w, h) = (first.camera.width, first.camera.height);
    let stride = cfg.init_pixels_per_point.max(1.0).sqrt();
    let lattice = |n: usize| -> Vec<usize> {
        (0..)
            .map(|k| (k as f64 * stride).floor() as usize)
            .take_while(|&v| v < n)
            .collect()
    };
    let (xs, ys) = (lattice(w), lattice(h));

    let mut covered = vec![false; w * h];
    let mut covered_count = 0usize;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut spacing_hint = Vec::new();
    for (fi, frame) in frames.iter().enumerate() {
        let same_res = frame.camera.width == w && frame.camera.height == h;
        let fresh: Vec<bool> = if same_res {
            frame.mask.data.iter().zip(&covered).map(|(&m, &c)| !m && !c).collect()
        } else {
            frame.mask.data.iter().map(|&m| !m).collect()
        };
        let fresh_count = fresh.iter().filter(|f| **f).count();
        let selected = fi == 0 || (fresh_count > 0 && fresh_count as f64 >= cfg.init_coverage_gain * covered_count as f64);
        if !selected {
            continue;
        }
        let fw = frame.camera.width;
        for &y in &ys {
            for &x in &xs {
                if x >= fw || y >= frame.camera.height {
                    continue;
                }
                let i = y * fw + x;
                if !fresh[i] {
                    continue;
                }
                let d = frame.depth.data[i];
                points.push(frame.camera.back_project(x as f64, y as f64, d));
                colors.push(Vector3::from(frame.image.data[i]));
                spacing_hint.push(d * stride / frame.camera.fx.min(frame.camera.fy));
            }
        }
        if same_res {
            for (c, f) in covered.iter_mut().zip(&fresh) {
                if *f {
                    *c = true;
                    covered_count += 1;
                }
            }
        }
    }
    if points.is_empty() {
        return Err(FitError::NoVisibleTissue);
    }

    let mut hints = spacing_hint.clone();
    hints.sort_by(f64::total_cmp);
    let cell = hints[hints.len() / 2];
    let grid = PointGrid::new(&points, cell);
    let gaussians = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = grid.k_nearest(p, 3, Some(i));
            let mut s = if nn.is_empty() {
                spacing_hint[i]
            } else {
                nn.iter().map(|(d, _)| d).sum::<f64>() / nn.len() as f64
            };
            if !(s > 0.0) {
                s = spacing_hint[i].max(1e-6);
            }
            Gaussian {
                position: *p,
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                log_scale: Vector3::repeat(s.ln()),
                color: colors[i],
                opacity_logit: 0.0,
                padded: false,
            }
        })
        .collect();
    Ok(Scene::new(gaussians, MaterialParams::default()))
}

/// Removes every Gaussian whose max/min scale ratio exceeds `gamma`.
pub fn prune_anisotropic(scene: &Scene, gamma: f64) -> Scene {
    let limit = gamma.ln();
    let kept = scene.gaussians.iter().filter(|g| g.log_anisotropy() <= limit).cloned().collect();
    Scene { gaussians: kept, material: scene.material, bounds: scene.bounds }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub loss: f64,
    pub color_loss: f64,
    pub depth_loss: f64,
    /// Mean training-view PSNR, reported every `psnr_every` iterations.
    pub psnr: Option<f64>,
    pub gaussian_count: usize,
    pub wall_ms: f64,
}

pub fn write_metrics_csv(trace: &[IterationMetrics], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "iteration,loss,color_loss,depth_loss,psnr,gaussian_count,wall_ms")?;
    for m in trace {
        let psnr = m.psnr.map(|p| format!("{p:.4}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:.8},{:.8},{:.8},{},{},{:.3}",
            m.iteration, m.loss, m.color_loss, m.depth_loss, psnr, m.gaussian_count, m.wall_ms
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub scene: Scene,
    pub trace: Vec<IterationMetrics>,
}

/// Optimizer state over one scene. Owns the scene exclusively while fitting.
pub struct Trainer<'a> {
    frames: &'a [Frame],
    cfg: OptimConfig,
    params: Vec<RawParams>,
    padded: Vec<bool>,
    adam: Adam,
    material: MaterialParams,
    extent: f64,
    position_lr_scale: f64,
    grad_accum: Vec<f64>,
    grad_count: Vec<u32>,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(scene: Scene, frames: &'a [Frame], cfg: OptimConfig) -> Self {
        let extent = 0.5 * scene.bounds.extent().norm();
        let extent = if extent > 0.0 { extent } else { 1.0 };
        let n = scene.gaussians.len();
        let params: Vec<RawParams> = scene.gaussians.iter().map(RawParams::from_gaussian).collect();
        let padded = scene.gaussians.iter().map(|g| g.padded).collect();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self {
            frames,
            position_lr_scale: cfg.position_lr_scale.unwrap_or(extent),
            adam: Adam::new(n),
            params,
            padded,
            material: scene.material,
            extent,
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            rng,
            iteration: 0,
            cfg,
        }
    }

    pub fn gaussians(&self) -> Vec<Gaussian> {
        self.params.iter().zip(&self.padded).map(|(p, &padded)| p.to_gaussian(padded)).collect()
    }

    pub fn scene(&self) -> Scene {
        Scene::new(self.gaussians(), self.material)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn position_lr(&self) -> f64 {
        let t = if self.cfg.iterations > 1 {
            (self.iteration as f64 / self.cfg.iterations as f64).min(1.0)
        } else {
            0.0
        };
        let (a, b) = (self.cfg.lr_position_init.ln(), self.cfg.lr_position_final.ln());
        (a + (b - a) * t).exp() * self.position_lr_scale
    }

    fn group_lrs(&self) -> [f64; 5] {
        [self.position_lr(), self.cfg.lr_rotation, self.cfg.lr_scale, self.cfg.lr_color, self.cfg.lr_opacity]
    }

    /// Adam update with per-Gaussian raw-parameter gradients. Gaussians whose
    /// gradient is entirely zero (not visible this step) are left untouched.
    pub fn apply_gradients(&mut self, grads: &[[f64; PARAMS_PER_GAUSSIAN]]) {
        let lrs = self.group_lrs();
        self.adam.step(&mut self.params, grads, &lrs);
    }

    /// One optimization step on frame `frame_index`.
    pub fn step(&mut self, frame_index: usize) -> Result<LossOutput, FitError> {
        let frame = &self.frames[frame_index];
        let gaussians = self.gaussians();
        let settings = self.cfg.render;
        let out = rasterize_gaussians(&gaussians, &frame.camera, &settings);
        let l = loss(&out, frame, &self.cfg);
        if !l.total.is_finite() {
            return Err(FitError::Diverged { iteration: self.iteration });
        }
        let grads = rasterize_backward(&gaussians, &frame.camera, &settings, &out, &l.grad_color, &l.grad_depth);
        let (hw, hh) = (0.5 * frame.camera.width as f64, 0.5 * frame.camera.height as f64);
        let raw: Vec<[f64; PARAMS_PER_GAUSSIAN]> = grads
            .iter()
            .zip(&self.params)
            .zip(&gaussians)
            .map(|((g, p), gauss)| p.chain_gradient(g, gauss))
            .collect();
        for (i, g) in grads.iter().enumerate() {
            if g.pixel_center != nalgebra::Vector2::zeros() {
                let ndc = (g.pixel_center.x * hw).hypot(g.pixel_center.y * hh);
                self.grad_accum[i] += ndc;
                self.grad_count[i] += 1;
            }
        }
        if raw.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FitError::Diverged { iteration: self.iteration });
        }
        self.apply_gradients(&raw);
        self.iteration += 1;
        Ok(l)
    }

    /// Clone/split high-gradient Gaussians, then drop transparent and
    /// over-anisotropic ones.
    pub fn densify_and_prune(&mut self) {
        let n = self.params.len();
        let mut keep = vec![true; n];
        let mut added: Vec<(RawParams, bool)> = Vec::new();
        let budget = self.cfg.max_gaussians.saturating_sub(n);
        for i in 0..n {
            if added.len() >= budget {
                break;
            }
            if self.padded[i] || self.grad_count[i] == 0 {
                continue;
            }
            let mean = self.grad_accum[i] / self.grad_count[i] as f64;
            if mean <= self.cfg.densify_grad_threshold {
                continue;
            }
            let p = self.params[i];
            let max_scale = p.log_scale().max().exp();
            if max_scale <= self.cfg.percent_dense * self.extent {
                added.push((p, false));
            } else {
                let g = p.to_gaussian(false);
                let r = g.rotation_matrix();
                let s = g.scale();
                for _ in 0..2 {
                    let n3 = Vector3::new(
                        self.rng.sample::<f64, _>(StandardNormal),
                        self.rng.sample::<f64, _>(StandardNormal),
                        self.rng.sample::<f64, _>(StandardNormal),
                    );
                    let mut child = p;
                    child.set_position(g.position + r * s.component_mul(&n3));
                    child.set_log_scale((s / 1.6).map(f64::ln));
                    added.push((child, false));
                }
                keep[i] = false;
            }
        }
        let limit = self.cfg.gamma.ln();
        for (i, k) in keep.iter_mut().enumerate() {
            let p = &self.params[i];
            let opacity = crate::math::sigmoid(p.opacity_logit());
            if !self.padded[i] && (opacity < self.cfg.min_opacity || p.log_anisotropy() > limit) {
                *k = false;
            }
        }
        let added: Vec<(RawParams, bool)> =
            added.into_iter().filter(|(p, _)| p.log_anisotropy() <= limit).collect();
        self.retain(&keep);
        for (p, padded) in added {
            self.params.push(p);
            self.padded.push(padded);
            self.adam.push();
        }
        self.grad_accum = vec![0.0; self.params.len()];
        self.grad_count = vec![0; self.params.len()];
    }

    /// Anisotropy pruning alone.
    pub fn prune_anisotropic(&mut self) {
        let limit = self.cfg.gamma.ln();
        let keep: Vec<bool> = self.params.iter().map(|p| p.log_anisotropy() <= limit).collect();
        self.retain(&keep);
    }

    fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.params.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.padded.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.grad_accum.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.grad_count.retain(|_| *it.next().unwrap());
        self.adam.retain(keep);
    }

    fn mean_psnr(&self) -> f64 {
        let gaussians = self.gaussians();
        let total: f64 = self
            .frames
            .iter()
            .map(|f| psnr(&rasterize_gaussians(&gaussians, &f.camera, &self.cfg.render).color, f))
            .sum();
        total / self.frames.len() as f64
    }
}

/// Initializes from depth and runs `cfg.iterations` optimization steps.
pub fn fit(
    frames: &[Frame],
    cfg: &OptimConfig,
    progress: &mut dyn FnMut(&IterationMetrics),
) -> Result<FitResult, FitError> {
    cfg.validate()?;
    let init = initialize_from_depth(frames, cfg)?;
    if cfg.iterations == 0 {
        return Ok(FitResult { scene: init, trace: Vec::new() });
    }
    let mut trainer = Trainer::new(init, frames, cfg.clone());
    let mut frame_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f4a3);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let start = Instant::now();
        let k = frame_rng.random_range(0..frames.len());
        let l = trainer.step(k)?;
        let maintenance =
            it < cfg.iterations && it >= cfg.densify_from && it <= cfg.densify_until && it % cfg.densify_every == 0;
        if maintenance {
            trainer.densify_and_prune();
        }
        if it == cfg.iterations {
            trainer.prune_anisotropic();
        }
        let psnr = (cfg.psnr_every > 0 && (it % cfg.psnr_every == 0) || it == cfg.iterations)
            .then(|| trainer.mean_psnr());
        let m = IterationMetrics {
            iteration: it,
            loss: l.total,
            color_loss: l.color,
            depth_loss: l.depth,
            psnr,
            gaussian_count: trainer.len(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        progress(&m);
        trace.push(m);
    }
    Ok(FitResult { scene: trainer.scene(), trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Camera, Raster};

    fn flat_frame(w: usize, h: usize, mask: Vec<bool>) -> Frame {
        let mut cam = Camera::centered(w, h, 1.0);
        cam.cx = 1.0;
        cam.cy = 1.0;
        Frame {
            image: Raster::filled(w, h, [0.25, 0.5, 0.75]),
            depth: Raster::filled(w, h, 1.0),
            mask: Raster { width: w, height: h, data: mask },
            camera: cam,
        }
    }

    fn dense() -> OptimConfig {
        OptimConfig { init_pixels_per_point: 1.0, ..Default::default() }
    }

    #[test]
    fn init_back_projects_every_pixel() {
        let f = flat_frame(2, 2, vec![false; 4]);
        let scene = initialize_from_depth(&[f], &dense()).unwrap();
        let pos: Vec<[f64; 3]> = scene.gaussians.iter().map(|g| g.position.into()).collect();
        assert_eq!(pos, vec![[-1.0, -1.0, 1.0], [0.0, -1.0, 1.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 1.0]]);
        for g in &scene.gaussians {
            assert_eq!(g.opacity(), 0.5);
            assert_eq!(g.rotation, Vector4::new(1.0, 0.0, 0.0, 0.0));
            // Mean distance to the three other lattice points: (1 + 1 + sqrt 2) / 3.
            assert!((g.scale().x - (2.0 + 2f64.sqrt()) / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_frame_is_an_error() {
        let f = flat_frame(2, 2, vec![true; 4]);
        assert!(matches!(initialize_from_depth(&[f], &dense()), Err(FitError::NoVisibleTissue)));
    }

    #[test]
    fn masked_pixel_is_excluded() {
        let f = flat_frame(2, 2, vec![false, true, false, false]);
        assert_eq!(initialize_from_depth(&[f], &dense()).unwrap().len(), 3);
    }

    #[test]
    fn later_frame_fills_only_new_coverage() {
        let a = flat_frame(2, 2, vec![false, true, true, true]);
        let b = flat_frame(2, 2, vec![true, false, false, true]);
        let scene = initialize_from_depth(&[a.clone(), b], &dense()).unwrap();
        assert_eq!(scene.len(), 3);
        let c = flat_frame(2, 2, vec![false, true, true, true]);
        assert_eq!(initialize_from_depth(&[a, c], &dense()).unwrap().len(), 1);
    }

    #[test]
    fn default_stride_targets_fifty_thousand_points() {
        let cfg = OptimConfig::default();
        let stride = cfg.init_pixels_per_point.sqrt();
        let n = (512.0 / stride).ceil() * (640.0 / stride).ceil();
        assert!((n - 50_000.0).abs() < 1_000.0, "{n}");
    }

    fn with_scale(s: [f64; 3]) -> Gaussian {
        Gaussian::new(Vector3::zeros(), Vector4::new(1.0, 0.0, 0.0, 0.0), s.into(), Vector3::zeros(), 0.5)
    }

    #[test]
    fn anisotropy_pruning_boundary() {
        let scene = Scene::new(
            vec![with_scale([1.0, 1.0, 20.0]), with_scale([1.0, 1.0, 10.0]), with_scale([0.1, 0.1, 0.1])],
            MaterialParams::default(),
        );
        let out = prune_anisotropic(&scene, 10.0);
        assert_eq!(out.len(), 2);
        assert_eq!(out.gaussians[0], scene.gaussians[1]);
        assert_eq!(prune_anisotropic(&out, 10.0), out);
    }

    #[test]
    fn zero_gradient_step_is_a_no_op() {
        let f = flat_frame(3, 3, vec![false; 9]);
        let frames = [f];
        let scene = initialize_from_depth(&frames, &dense()).unwrap();
        let mut t = Trainer::new(scene.clone(), &frames, dense());
        t.apply_gradients(&vec![[0.0; PARAMS_PER_GAUSSIAN]; scene.len()]);
        assert_eq!(t.gaussians(), scene.gaussians);
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let f = flat_frame(2, 2, vec![false; 4]);
        let cfg = OptimConfig { iterations: 0, ..dense() };
        let r = fit(std::slice::from_ref(&f), &cfg, &mut |_| {}).unwrap();
        assert_eq!(r.scene, initialize_from_depth(&[f], &cfg).unwrap());
        assert!(r.trace.is_empty());
    }

    #[test]
    fn metrics_csv_header() {
        let mut out = Vec::new();
        write_metrics_csv(&[], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "iteration,loss,color_loss,depth_loss,psnr,gaussian_count,wall_ms\n");
    }
}

use std::path::Path;
use std::time::Instant;

use base64::Engine;
use nalgebra::Vector3;
use splatsim::camera::{Camera, CameraRecord, RgbImage};
use splatsim::config::PipelineConfig;
use splatsim::frames::encode_png_rgb;
use splatsim::mpm::{ActiveWindow, ForceEvent, SimError, Simulation};
use splatsim::ply::load_scene;
use splatsim::render::{rasterize_splats, RenderSettings, Splat};
use splatsim::scene::{MaterialParams, Scene};

use crate::protocol::{FrameMessage, FramePayload, MaterialReport, Phase, Request, Response};

/// Consistent post-step state handed to the frame encoder.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: u64,
    pub splats: Vec<Splat>,
    pub camera: Camera,
    pub ms: f64,
}

impl Snapshot {
    pub fn render(&self) -> RgbImage {
        let out = rasterize_splats(&self.splats, &self.camera, &RenderSettings::default());
        RgbImage {
            width: out.color.width,
            height: out.color.height,
            data: out.color.data.iter().map(|c| c.map(|v| v.clamp(0.0, 1.0))).collect(),
        }
    }

    pub fn encode(&self) -> FrameMessage {
        let png = encode_png_rgb(&self.render());
        FrameMessage {
            frame: FramePayload {
                step: self.step,
                image_b64: base64::engine::general_purpose::STANDARD.encode(png),
                ms: self.ms,
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingForce {
    center: [f64; 3],
    radius: f64,
    force: [f64; 3],
    duration_steps: u64,
}

struct Loaded {
    phase: Phase,
    sim: Simulation,
    camera: Camera,
    pending: Vec<PendingForce>,
    steps_per_sec: f64,
    last_step: Option<Instant>,
}

/// State machine behind one connection. Only [`Session::advance`] mutates
/// the simulation; commands take effect at step boundaries.
pub struct Session {
    config: PipelineConfig,
    loaded: Option<Loaded>,
}

impl Session {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config, loaded: None }
    }

    pub fn with_scene(config: PipelineConfig, scene: Scene) -> Result<Self, SimError> {
        let mut s = Self::new(config);
        s.install(scene)?;
        Ok(s)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn phase(&self) -> Option<Phase> {
        self.loaded.as_ref().map(|l| l.phase)
    }

    pub fn step(&self) -> u64 {
        self.loaded.as_ref().map_or(0, |l| l.sim.step_count())
    }

    pub fn is_running(&self) -> bool {
        self.phase() == Some(Phase::Running)
    }

    pub fn simulation(&self) -> Option<&Simulation> {
        self.loaded.as_ref().map(|l| &l.sim)
    }

    fn install(&mut self, mut scene: Scene) -> Result<(), SimError> {
        scene.material = self.config.material;
        let sim = Simulation::new(&scene, self.config.sim.clone())?;
        let svc = &self.config.service;
        let camera = Camera::framing(&scene.bounds, svc.render_width, svc.render_height);
        self.loaded =
            Some(Loaded { phase: Phase::Loaded, sim, camera, pending: Vec::new(), steps_per_sec: 0.0, last_step: None });
        Ok(())
    }

    /// Parses and handles one message; malformed input leaves the session untouched.
    pub fn handle_text(&mut self, text: &[u8]) -> Response {
        match serde_json::from_slice::<Request>(text) {
            Ok(req) => self.handle(req),
            Err(e) => {
                let mut r = Response::error(None, format!("malformed request: {e}"));
                self.annotate(&mut r);
                r
            }
        }
    }

    pub fn handle(&mut self, req: Request) -> Response {
        let name = req.name();
        let mut resp = match self.dispatch(req) {
            Ok(r) => r,
            Err(msg) => Response::error(Some(name), msg),
        };
        resp.cmd = Some(name.to_owned());
        self.annotate(&mut resp);
        resp
    }

    fn annotate(&self, r: &mut Response) {
        if let Some(l) = &self.loaded {
            r.phase = Some(l.phase);
            r.step = Some(l.sim.step_count());
        }
    }

    fn dispatch(&mut self, req: Request) -> Result<Response, String> {
        let ok = Response { ok: true, ..Default::default() };
        if let Request::Load { scene_path } = &req {
            if self.is_running() {
                return Err(wrong_phase("load", Phase::Running));
            }
            let scene = load_scene(Path::new(scene_path)).map_err(|e| e.to_string())?;
            self.install(scene).map_err(|e| e.to_string())?;
            return Ok(ok);
        }
        if matches!(req, Request::GetState {}) && self.loaded.is_none() {
            return Ok(ok);
        }
        let Some(l) = self.loaded.as_mut() else {
            return Err(format!("no scene loaded; {} needs one", req.name()));
        };
        match req {
            Request::Load { .. } => unreachable!(),
            Request::Start {} => match l.phase {
                Phase::Running => return Err(wrong_phase("start", l.phase)),
                _ => {
                    l.phase = Phase::Running;
                    l.last_step = None;
                }
            },
            Request::Pause {} => match l.phase {
                Phase::Running => {
                    l.phase = Phase::Paused;
                    l.steps_per_sec = 0.0;
                }
                p => return Err(wrong_phase("pause", p)),
            },
            Request::Reset {} => {
                l.sim.reset();
                l.pending.clear();
                l.phase = Phase::Loaded;
                l.steps_per_sec = 0.0;
                l.last_step = None;
            }
            Request::SetMaterial { youngs_modulus, nu } => {
                let m = MaterialParams { youngs_modulus, poisson_ratio: nu, density: l.sim.material.density };
                l.sim.set_material(m).map_err(|e| e.to_string())?;
            }
            Request::ApplyForce { center, radius, force, duration_steps } => {
                let probe = ForceEvent { center, radius, force, active_window: ActiveWindow { start: 0, end: 0 } };
                probe.validate().map_err(|e| e.to_string())?;
                if !l.sim.force_region_has_mass(&Vector3::from(center), radius) {
                    return Ok(Response {
                        ok: true,
                        warning: Some("force region contains no particles; ignored".into()),
                        ..Default::default()
                    });
                }
                l.pending.push(PendingForce { center, radius, force, duration_steps });
            }
            Request::SetCamera { camera, width, height } => {
                let mut cam = match camera {
                    Some(rec) => Camera::try_from(&rec).map_err(|e| e.to_string())?,
                    None => l.camera.clone(),
                };
                if width.is_some() || height.is_some() {
                    let (w, h) = (width.unwrap_or(cam.width), height.unwrap_or(cam.height));
                    if w == 0 || h == 0 {
                        return Err("render size must be non-zero".into());
                    }
                    cam = cam.resized(w, h);
                }
                l.camera = cam;
            }
            Request::GetState {} => {
                let snap = Snapshot { step: 0, splats: l.sim.splats(), camera: l.camera.clone(), ms: 0.0 };
                let settings = RenderSettings { normalize_depth: true, ..Default::default() };
                let out = rasterize_splats(&snap.splats, &snap.camera, &settings);
                let d = *out.depth.get(snap.camera.width / 2, snap.camera.height / 2);
                return Ok(Response {
                    ok: true,
                    gaussian_count: Some(l.sim.len()),
                    steps_per_sec: Some(l.steps_per_sec),
                    pending_forces: Some(l.pending.len() + l.sim.forces.len()),
                    material: Some(MaterialReport {
                        youngs_modulus: l.sim.material.youngs_modulus,
                        nu: l.sim.material.poisson_ratio,
                        density: l.sim.material.density,
                    }),
                    camera: Some(CameraRecord::from(&l.camera)),
                    center_depth: (d > 0.0).then_some(d),
                    ..Default::default()
                });
            }
        }
        Ok(ok)
    }

    /// Current state, for rendering.
    pub fn snapshot(&self) -> Option<Snapshot> {
        self.loaded
            .as_ref()
            .map(|l| Snapshot { step: l.sim.step_count(), splats: l.sim.splats(), camera: l.camera.clone(), ms: 0.0 })
    }

    /// Runs one full step if running. Queued forces start with this step.
    /// A simulation failure pauses the session.
    pub fn advance(&mut self) -> Result<Option<Snapshot>, SimError> {
        let Some(l) = self.loaded.as_mut() else {
            return Ok(None);
        };
        if l.phase != Phase::Running {
            return Ok(None);
        }
        let start = l.sim.substep_count();
        let per_step = l.sim.cfg.substeps as u64;
        for f in l.pending.drain(..) {
            l.sim.add_force(ForceEvent {
                center: f.center,
                radius: f.radius,
                force: f.force,
                active_window: ActiveWindow { start, end: start + f.duration_steps * per_step },
            })?;
        }
        let t = Instant::now();
        if let Err(e) = l.sim.step() {
            l.phase = Phase::Paused;
            return Err(e);
        }
        let ms = t.elapsed().as_secs_f64() * 1e3;
        let now = Instant::now();
        if let Some(prev) = l.last_step {
            let rate = 1.0 / now.duration_since(prev).as_secs_f64().max(1e-9);
            l.steps_per_sec = if l.steps_per_sec > 0.0 { 0.8 * l.steps_per_sec + 0.2 * rate } else { rate };
        }
        l.last_step = Some(now);
        Ok(Some(Snapshot { step: l.sim.step_count(), splats: l.sim.splats(), camera: l.camera.clone(), ms }))
    }
}

fn wrong_phase(cmd: &str, phase: Phase) -> String {
    let p = serde_json::to_value(phase).expect("phase serializes");
    format!("{cmd} not allowed while {}", p.as_str().unwrap_or("?"))
}

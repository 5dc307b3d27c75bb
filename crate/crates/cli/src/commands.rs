use std::fs;
use std::io::BufWriter;
use std::net::TcpListener;
use std::path::Path;
use std::time::Instant;

use splatsim::camera::Camera;
use splatsim::config::PipelineConfig;
use splatsim::frames::{load_cameras, load_frames, save_frames, write_cameras, write_pfm, write_png_rgb};
use splatsim::mpm::{ForceEvent, Simulation};
use splatsim::padding::{compute_opacity_field, pad_interior};
use splatsim::ply::{load_scene, save_scene};
use splatsim::reconstruct::{fit, write_metrics_csv};
use splatsim::render::{rasterize_gaussians, rasterize_splats, RenderOutput, RenderSettings};
use splatsim::{bench, fixtures, Scene};
use splatsim_service::Session;

use crate::{invalid, resolve_config, runtime, Cli, CliError, Command, CommonArgs, FixtureKind};

pub(crate) fn execute(cli: &Cli) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Fixtures { out, kind, gaussians, width, height, views } => {
            write_fixture(out, *kind, *gaussians, *width, *height, *views, seed)
        }
        Command::Reconstruct { frames, out, metrics, common } => {
            let cfg = config(common, cli.seed)?;
            let frames = load_frames(frames).map_err(invalid)?;
            log::info!("loaded {} frames; fitting for {} iterations", frames.len(), cfg.optim.iterations);
            let result = fit(&frames, &cfg.optim, &mut |m| {
                if let Some(p) = m.psnr {
                    log::info!("iteration {}: loss {:.5}, psnr {:.2}, {} gaussians", m.iteration, m.loss, p, m.gaussian_count);
                }
            })
            .map_err(runtime)?;
            save_scene(&result.scene, out).map_err(runtime)?;
            if let Some(path) = metrics {
                let f = fs::File::create(path).map_err(runtime)?;
                write_metrics_csv(&result.trace, BufWriter::new(f)).map_err(runtime)?;
            }
            log::info!("wrote {} gaussians to {}", result.scene.len(), out.display());
            Ok(())
        }
        Command::Pad { scene, camera, camera_index, out, common } => {
            let cfg = config(common, cli.seed)?;
            let scene = load_scene(scene).map_err(invalid)?;
            let cam = pick_camera(camera, *camera_index)?;
            let field = compute_opacity_field(&scene, cfg.padding.grid);
            let padded = pad_interior(&scene, &field, &cam, cfg.padding.tau);
            log::info!("added {} padded gaussians", padded.len() - scene.len());
            save_scene(&padded, out).map_err(runtime)
        }
        Command::Simulate { scene, forces, steps, out_dir, camera, camera_index, bench, common } => {
            let cfg = config(common, cli.seed)?;
            let mut scene = load_scene(scene).map_err(invalid)?;
            scene.material = cfg.material;
            let events: Vec<ForceEvent> = match forces {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(invalid)?;
                    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
                }
                None => Vec::new(),
            };
            let cam = camera.as_ref().map(|c| pick_camera(c, *camera_index)).transpose()?;
            simulate(&scene, &cfg, events, *steps, out_dir.as_deref(), cam.as_ref(), *bench)
        }
        Command::Render { scene, camera, camera_index, out, depth_out } => {
            let scene = load_scene(scene).map_err(invalid)?;
            let cam = pick_camera(camera, *camera_index)?;
            let settings = RenderSettings { normalize_depth: true, ..Default::default() };
            let img = rasterize_gaussians(&scene.gaussians, &cam, &settings);
            write_render(&img, out, depth_out.as_deref())
        }
        Command::Serve { port, host, scene, common } => {
            let cfg = config(common, cli.seed)?;
            let scene = scene.as_ref().map(|p| load_scene(p).map_err(invalid)).transpose()?;
            if let Some(s) = &scene {
                // Surface scene/config problems before accepting clients.
                Session::with_scene(cfg.clone(), s.clone()).map_err(invalid)?;
            }
            let listener = TcpListener::bind((host.as_str(), *port)).map_err(runtime)?;
            log::info!("listening on {}", listener.local_addr().map_err(runtime)?);
            splatsim_service::serve(listener, move || match &scene {
                Some(s) => Session::with_scene(cfg.clone(), s.clone()).expect("validated at startup"),
                None => Session::new(cfg.clone()),
            })
            .map_err(runtime)
        }
        Command::Bench { particles, large_particles, grid, steps, render_gaussians, render_frames } => {
            let mut mpm = Vec::new();
            for &n in [*particles, *large_particles].iter().filter(|n| **n > 0) {
                log::info!("mpm: {n} particles on {grid}^3");
                mpm.push(bench::mpm_throughput(n, *grid, *steps).map_err(runtime)?);
            }
            let render = bench::render_throughput(*render_gaussians, 640, 512, *render_frames);
            let report = serde_json::json!({
                "threads": rayon::current_num_threads(),
                "mpm": mpm,
                "render": render,
            });
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
    }
}

fn config(common: &CommonArgs, seed: Option<u64>) -> Result<PipelineConfig, CliError> {
    resolve_config(common.config.as_deref(), &common.overrides, seed).map_err(CliError::Invalid)
}

fn pick_camera(path: &Path, index: usize) -> Result<Camera, CliError> {
    let cams = load_cameras(path).map_err(invalid)?;
    let n = cams.len();
    cams.into_iter()
        .nth(index)
        .ok_or_else(|| CliError::Invalid(format!("{} has {n} cameras, index {index} requested", path.display())))
}

fn write_render(out: &RenderOutput, png: &Path, pfm: Option<&Path>) -> Result<(), CliError> {
    let mut color = out.color.clone();
    for c in &mut color.data {
        *c = c.map(|v| v.clamp(0.0, 1.0));
    }
    write_png_rgb(png, &color).map_err(runtime)?;
    if let Some(p) = pfm {
        write_pfm(p, &out.depth).map_err(runtime)?;
    }
    Ok(())
}

fn write_fixture(
    out: &Path,
    kind: FixtureKind,
    gaussians: usize,
    width: usize,
    height: usize,
    views: usize,
    seed: u64,
) -> Result<(), CliError> {
    if gaussians == 0 || width == 0 || height == 0 || views == 0 {
        return Err(CliError::Invalid("fixture sizes must be non-zero".into()));
    }
    fs::create_dir_all(out).map_err(runtime)?;
    match kind {
        FixtureKind::Tissue => {
            let fx = fixtures::tissue_fixture(gaussians, width, height, views, seed);
            save_scene(&fx.truth, out.join("truth.ply")).map_err(runtime)?;
            save_frames(&out.join("frames"), &fx.frames).map_err(runtime)?;
        }
        FixtureKind::Hemisphere => {
            let c = nalgebra::Vector3::new(0.0, 0.0, 3.0);
            let shell = fixtures::hemisphere_shell(c, 1.0, gaussians);
            save_scene(&shell, out.join("hemisphere.ply")).map_err(runtime)?;
            let d = 8.0;
            let cam = Camera::centered(width, height, width as f64 * d / 2.4)
                .with_pose(nalgebra::Matrix3::identity(), nalgebra::Vector3::new(0.0, 0.0, d - c.z));
            write_cameras(&out.join("cameras.json"), &[cam]).map_err(runtime)?;
        }
        FixtureKind::Block => {
            let side = (gaussians as f64).cbrt().round().max(3.0) as usize;
            let h = 0.6 / side as f64;
            let scene = fixtures::padded_block(nalgebra::Vector3::new(-0.3, -0.3, 2.0), [side; 3], h);
            save_scene(&scene, out.join("block.ply")).map_err(runtime)?;
            let cam = Camera::framing(&scene.bounds, width, height);
            write_cameras(&out.join("cameras.json"), &[cam]).map_err(runtime)?;
        }
    }
    log::info!("wrote {kind:?} fixture to {}", out.display());
    Ok(())
}

fn simulate(
    scene: &Scene,
    cfg: &PipelineConfig,
    events: Vec<ForceEvent>,
    steps: usize,
    out_dir: Option<&Path>,
    cam: Option<&Camera>,
    bench: bool,
) -> Result<(), CliError> {
    let mut sim = Simulation::new(scene, cfg.sim.clone()).map_err(invalid)?;
    for e in events {
        sim.add_force(e).map_err(invalid)?;
    }
    if let Some(d) = out_dir {
        fs::create_dir_all(d).map_err(runtime)?;
    }
    let settings = RenderSettings::default();
    let mut sim_seconds = 0.0;
    for _ in 0..steps {
        let t = Instant::now();
        sim.step().map_err(runtime)?;
        sim_seconds += t.elapsed().as_secs_f64();
        let k = sim.step_count();
        if let Some(d) = out_dir {
            save_scene(&sim.to_scene(), d.join(format!("step_{k:05}.ply"))).map_err(runtime)?;
            if let Some(c) = cam {
                let out = rasterize_splats(&sim.splats(), c, &settings);
                write_render(&out, &d.join(format!("step_{k:05}.png")), None)?;
            }
        }
    }
    if bench {
        let report = serde_json::json!({
            "particles": sim.len(),
            "steps": steps,
            "substeps_per_step": sim.cfg.substeps,
            "seconds": sim_seconds,
            "steps_per_sec": steps as f64 / sim_seconds,
            "particles_per_sec": (sim.len() * steps) as f64 / sim_seconds,
        });
        println!("{report}");
    }
    Ok(())
}

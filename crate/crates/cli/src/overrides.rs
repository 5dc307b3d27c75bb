//! Config precedence: command-line flag, then `config.json`, then defaults.

use std::path::Path;

use clap::Args;
use splatsim::config::PipelineConfig;

/// Flags that override individual config fields.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Overrides {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub youngs_modulus: Option<f64>,
    #[arg(long)]
    pub poisson_ratio: Option<f64>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub grid_resolution: Option<usize>,
    #[arg(long)]
    pub substeps: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub max_steps_per_sec: Option<f64>,
    #[arg(long)]
    pub render_width: Option<usize>,
    #[arg(long)]
    pub render_height: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        fn set<T: Copy>(dst: &mut T, v: Option<T>) {
            if let Some(v) = v {
                *dst = v;
            }
        }
        set(&mut cfg.optim.iterations, self.iterations);
        set(&mut cfg.optim.eta, self.eta);
        set(&mut cfg.optim.gamma, self.gamma);
        set(&mut cfg.padding.grid, self.grid);
        set(&mut cfg.padding.tau, self.tau);
        set(&mut cfg.material.youngs_modulus, self.youngs_modulus);
        set(&mut cfg.material.poisson_ratio, self.poisson_ratio);
        set(&mut cfg.material.density, self.density);
        set(&mut cfg.sim.grid_resolution, self.grid_resolution);
        set(&mut cfg.sim.substeps, self.substeps);
        set(&mut cfg.sim.dt, self.dt);
        set(&mut cfg.service.max_steps_per_sec, self.max_steps_per_sec);
        set(&mut cfg.service.render_width, self.render_width);
        set(&mut cfg.service.render_height, self.render_height);
    }
}

/// Loads `config` (or defaults), applies the overrides and the seed, and
/// validates the result.
pub fn resolve_config(
    config: Option<&Path>,
    overrides: &Overrides,
    seed: Option<u64>,
) -> Result<PipelineConfig, String> {
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(p).map_err(|e| e.to_string())?,
        None => PipelineConfig::default(),
    };
    overrides.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.optim.seed = s;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

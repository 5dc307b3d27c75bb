//! `splatsim` command line.

mod commands;
pub mod overrides;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use overrides::{resolve_config, Overrides};

#[derive(Debug, Parser)]
#[command(name = "splatsim", version, about = "Gaussian-splat tissue reconstruction and soft-body simulation")]
pub struct Cli {
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every stochastic choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Wavy tissue surface with rendered RGB-D frames and tool masks.
    Tissue,
    /// Hollow hemispherical shell and an on-axis camera.
    Hemisphere,
    /// Solid block with a padded interior.
    Block,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic ground-truth scenes and frame sets.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "tissue")]
        kind: FixtureKind,
        #[arg(long, default_value_t = 500)]
        gaussians: usize,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 3)]
        views: usize,
    },
    /// Fit Gaussians to a frame directory.
    Reconstruct {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Insert invisible interior particles behind the visible surface.
    Pad {
        #[arg(long)]
        scene: PathBuf,
        /// cameras.json; the first record unless --camera-index is given.
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = 0)]
        camera_index: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the MPM simulation and write per-step snapshots.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        /// JSON list of force events.
        #[arg(long)]
        forces: Option<PathBuf>,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also render each step with this camera (cameras.json).
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        camera_index: usize,
        /// Print throughput instead of only writing snapshots.
        #[arg(long)]
        bench: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Rasterize a scene to PNG (color) and optionally PFM (depth).
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = 0)]
        camera_index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        depth_out: Option<PathBuf>,
    },
    /// Serve interactive sessions over TCP.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Renderer and MPM throughput report (JSON).
    Bench {
        #[arg(long, default_value_t = 10_000)]
        particles: usize,
        /// Second, report-only particle count; 0 skips it.
        #[arg(long, default_value_t = 50_000)]
        large_particles: usize,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 3)]
        steps: usize,
        #[arg(long, default_value_t = 20_000)]
        render_gaussians: usize,
        #[arg(long, default_value_t = 3)]
        render_frames: usize,
    },
}

/// Config file plus per-field overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config or input data. Exit code 1.
    Invalid(String),
    /// Failure while computing or writing results. Exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

pub(crate) fn invalid(e: impl fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

pub(crate) fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp_millis()
        .try_init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("invalid input: --threads must be at least 1");
            return 1;
        }
        // Fails only if already initialized, e.g. by an earlier run in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

//! Argument parsing and dispatch. Exit codes: 0 success, 2 unreadable or
//! malformed files, 3 invalid configuration, 4 numerical failure.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shapeact_core::geometry::Occupancy;
use shapeact_core::solver::NewtonConfig;
use shapeact_core::training::{PositionPenalty, TrainConfig};

use crate::commands::{self, FitArgs, InterpArgs, SimulateArgs, TrainArgs, VoxelizeArgs};
use crate::{json, project, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "shapeact", version, about = "Differentiable shape-targeting soft-body simulation with a learned actuation field")]
pub struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides the project seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OccupancyArg {
    Center,
    Intersect,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PenaltyArg {
    SmoothL1,
    SquaredL2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scale {
    Tiny,
}

#[derive(Debug, Args)]
pub struct ProjectArg {
    /// Project directory; defaults to $SHAPEACT_PROJECT.
    #[arg(long)]
    pub project: Option<PathBuf>,
}

/// Overrides for every training configuration field.
#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    /// JSON file replacing the project's training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub penalty: Option<PenaltyArg>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage1_batch: Option<usize>,
    #[arg(long)]
    pub stage1_lr: Option<f64>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_batch: Option<usize>,
    #[arg(long)]
    pub stage2_lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_epsilon: Option<f64>,
    #[arg(long)]
    pub fit_iters: Option<usize>,
    #[arg(long)]
    pub fit_lr: Option<f64>,
    #[arg(long)]
    pub jaw_gradients: Option<bool>,
    #[arg(long)]
    pub solver_tolerance: Option<f64>,
    #[arg(long)]
    pub solver_max_iterations: Option<usize>,
    /// Newton refinement force tolerance; 0 disables refinement.
    #[arg(long)]
    pub newton_tolerance: Option<f64>,
    #[arg(long)]
    pub newton_steps: Option<usize>,
    #[arg(long)]
    pub max_failed_fraction: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, c: &mut TrainConfig) -> Result<()> {
        if let Some(p) = &self.config {
            *c = json::read(p)?;
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(
            alpha => loss.alpha,
            stage1_epochs => stage1.epochs,
            stage1_batch => stage1.batch,
            stage1_lr => stage1.lr,
            stage2_epochs => stage2.epochs,
            stage2_batch => stage2.batch,
            stage2_lr => stage2.lr,
            beta1 => adam.beta1,
            beta2 => adam.beta2,
            adam_epsilon => adam.epsilon,
            fit_iters => fit_iterations,
            fit_lr => fit_lr,
            jaw_gradients => jaw_gradients,
            solver_tolerance => solver.tolerance,
            solver_max_iterations => solver.max_iterations,
            max_failed_fraction => max_failed_fraction,
        );
        if let Some(p) = self.penalty {
            c.loss.penalty = match p {
                PenaltyArg::SmoothL1 => PositionPenalty::SmoothL1,
                PenaltyArg::SquaredL2 => PositionPenalty::SquaredL2,
            };
        }
        if let Some(t) = self.newton_tolerance {
            c.solver.newton = if t > 0.0 {
                let steps = c.solver.newton.map_or(20, |n| n.max_steps);
                Some(NewtonConfig { force_tolerance: t, max_steps: steps })
            } else {
                None
            };
        }
        if let Some(s) = self.newton_steps {
            if let Some(n) = c.solver.newton.as_mut() {
                n.max_steps = s;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voxelizes a closed OBJ surface into a hexahedral mesh file.
    Voxelize {
        /// Closed, consistently oriented OBJ surface.
        #[arg(long)]
        surface: PathBuf,
        /// Voxel edge length.
        #[arg(long)]
        h: f64,
        /// JSON list of planar cuts: [{"axis": "x", "coord": 1.0, "lo": [0, 0], "hi": [1, 1]}].
        #[arg(long)]
        cut_spec: Option<PathBuf>,
        /// JSON boxes tagging Dirichlet nodes: {"fixed": [[lo, hi]], "jaw": [[lo, hi]]}.
        #[arg(long)]
        bones: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "intersect")]
        occupancy: OccupancyArg,
        /// Samples per element (a perfect cube).
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Mesh file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs training stage 1 (spring-drag pretraining) or 2 (through the simulator).
    Train {
        #[command(flatten)]
        project: ProjectArg,
        /// 1 or 2. Stage 2 starts from the stage 1 checkpoint.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Continues from the stage's own checkpoint.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Fits a latent code to a new target surface.
    Fit {
        #[command(flatten)]
        project: ProjectArg,
        /// Target surface OBJ with the project's surface topology.
        #[arg(long)]
        target: PathBuf,
        /// Outer iterations, each a full solve and one latent update.
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Checkpoint directory; defaults to the latest in the project.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory; defaults to fits/<target stem> in the project.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulates one shape and exports the deformed surface.
    Simulate {
        #[command(flatten)]
        project: ProjectArg,
        /// Checkpoint directory; defaults to the latest in the project.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Latent code file written by `fit`.
        #[arg(long, conflicts_with = "target", required_unless_present = "target")]
        z: Option<String>,
        /// Target OBJ or training frame index; also writes per-vertex errors.
        #[arg(long)]
        target: Option<String>,
        /// Samples per element.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulates a linear path between two latent codes.
    Interp {
        #[command(flatten)]
        project: ProjectArg,
        /// Checkpoint directory; defaults to the latest in the project.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Latent file, target OBJ or training frame index.
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Number of intervals; writes steps + 1 surfaces.
        #[arg(long, default_value_t = 8)]
        steps: usize,
        /// Output directory; defaults to interp/ in the project.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reports per-frame errors of the latest checkpoint.
    Evaluate {
        #[command(flatten)]
        project: ProjectArg,
        /// Checkpoint directory; defaults to the latest in the project.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compares adjoint and finite-difference parameter gradients.
    Gradcheck {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long, value_enum, default_value = "tiny")]
        scale: Scale,
        #[arg(long, default_value = "gradcheck.json")]
        out: PathBuf,
    },
    /// Writes an example project (a cantilevered bar with synthetic targets).
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
}

fn project_root(p: &ProjectArg) -> Result<PathBuf> {
    project::locate(p.project.as_deref())
}

/// Runs a parsed command and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return 3;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("worker pool already configured: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(Outcome { message, code }) => {
            // A closed pipe (`| head`) is not an error of the command.
            let _ = writeln!(std::io::stdout().lock(), "{message}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Outcome {
    message: String,
    code: i32,
}

impl From<String> for Outcome {
    fn from(message: String) -> Self {
        Outcome { message, code: 0 }
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let seed = cli.seed;
    Ok(match &cli.command {
        Command::Voxelize { surface, h, cut_spec, bones, occupancy, samples, out } => commands::voxelize(&VoxelizeArgs {
            surface,
            h: *h,
            cut_spec: cut_spec.as_deref(),
            bones: bones.as_deref(),
            occupancy: match occupancy {
                OccupancyArg::Center => Occupancy::CenterInside,
                OccupancyArg::Intersect => Occupancy::CenterOrIntersect,
            },
            samples: *samples,
            out,
        })?
        .into(),
        Command::Train { project, stage, resume, overrides } => {
            let root = project_root(project)?;
            commands::train(&TrainArgs { project: &root, stage: *stage, resume: *resume, configure: &|c| overrides.apply(c), seed })?
                .into()
        }
        Command::Fit { project, target, iters, checkpoint, out } => {
            let root = project_root(project)?;
            commands::fit(&FitArgs {
                project: &root,
                checkpoint: checkpoint.as_deref(),
                target,
                iterations: *iters,
                out: out.as_deref(),
            })?
            .into()
        }
        Command::Simulate { project, checkpoint, z, target, resolution, out } => {
            let root = project_root(project)?;
            let input = z.as_deref().or(target.as_deref()).ok_or_else(|| Error::Config("pass --z or --target".into()))?;
            commands::simulate_cmd(&SimulateArgs {
                project: &root,
                checkpoint: checkpoint.as_deref(),
                input,
                resolution: *resolution,
                out,
            })?
            .into()
        }
        Command::Interp { project, checkpoint, from, to, steps, out } => {
            let root = project_root(project)?;
            commands::interp(&InterpArgs {
                project: &root,
                checkpoint: checkpoint.as_deref(),
                from,
                to,
                steps: *steps,
                out: out.as_deref(),
            })?
            .into()
        }
        Command::Evaluate { project, checkpoint } => {
            commands::evaluate_cmd(&project_root(project)?, checkpoint.as_deref())?.into()
        }
        Command::Gradcheck { project: _, scale: Scale::Tiny, out } => {
            let (message, passed) = commands::gradcheck_cmd(seed.unwrap_or(3), out)?;
            Outcome { message, code: if passed { 0 } else { 4 } }
        }
        Command::Demo { out } => commands::demo(out, seed.unwrap_or(0))?.into(),
    })
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}


//! Command implementations behind the CLI. Each returns a summary line for
//! standard output; errors carry the exit code.

use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use shapeact_core::field::ShapeField;
use shapeact_core::geometry::{build_samples, cut_records_on_plane, duplicate_cut_vertices, embed_surface, voxelize_with};
use shapeact_core::geometry::{Axis, NodeTag, Occupancy};
use shapeact_core::training::{
    actuation_targets, evaluate, fit_new_pose, interpolate, max_step_displacement, pretrain, simulate, train_stage2, Adam,
    Stage, TargetPose, TrainConfig, WarmStarts,
};
use shapeact_core::Vec3;

use crate::checkpoint::Checkpoint;
use crate::project::{self, Project, ProjectManifest};
use crate::report::{write_vertex_errors, MetricsWriter};
use crate::{gradcheck, json, mesh_file, obj, Error, Result};

/// Planar cut applied after voxelization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutSpec {
    pub axis: Axis,
    pub coord: f64,
    /// Rectangle on the two remaining axes, in increasing axis order.
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

/// Axis-aligned boxes whose nodes become Dirichlet nodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoneSpec {
    #[serde(default)]
    pub fixed: Vec<[Vec3; 2]>,
    #[serde(default)]
    pub jaw: Vec<[Vec3; 2]>,
}

/// A latent code on disk, as written by `fit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentFile {
    pub z: Vec<f64>,
    #[serde(default)]
    pub jaw: Option<[f64; 5]>,
    #[serde(default)]
    pub losses: Vec<f64>,
}

pub struct VoxelizeArgs<'a> {
    pub surface: &'a Path,
    pub h: f64,
    pub cut_spec: Option<&'a Path>,
    pub bones: Option<&'a Path>,
    pub occupancy: Occupancy,
    pub samples: usize,
    pub out: &'a Path,
}

pub fn voxelize(a: &VoxelizeArgs) -> Result<String> {
    let surface = obj::read(a.surface)?;
    let mut mesh = voxelize_with(&surface, a.h, a.occupancy)?;
    if let Some(path) = a.cut_spec {
        let specs: Vec<CutSpec> = json::read(path)?;
        let cuts: Vec<_> =
            specs.iter().flat_map(|c| cut_records_on_plane(&mesh, c.axis, c.coord, c.lo, c.hi)).collect();
        mesh = duplicate_cut_vertices(&mesh, &cuts)?;
    }
    if let Some(path) = a.bones {
        let spec: BoneSpec = json::read(path)?;
        for [lo, hi] in &spec.fixed {
            mesh.tag_nodes_in_box(*lo, *hi, NodeTag::Fixed);
        }
        for [lo, hi] in &spec.jaw {
            mesh.tag_nodes_in_box(*lo, *hi, NodeTag::Jaw);
        }
    }
    let samples = build_samples(&mesh, a.samples)?;
    let embedding = match embed_surface(&mesh, &surface) {
        Ok(e) => Some(e),
        Err(e) => {
            warn!("surface not embedded: {e}");
            None
        }
    };
    mesh_file::write(a.out, &mesh, &samples, embedding.as_ref())?;
    let dirichlet = mesh.tags.iter().filter(|t| t.is_dirichlet()).count();
    Ok(format!(
        "{} elements, {} nodes ({dirichlet} Dirichlet), {} samples -> {}",
        mesh.num_elements(),
        mesh.num_nodes(),
        samples.len(),
        a.out.display()
    ))
}

fn read_manifest(root: &Path) -> Result<ProjectManifest> {
    json::read(&root.join(project::MANIFEST))
}

fn field_mismatch(what: &str) -> Error {
    Error::Config(format!("{what} field configuration differs from the project"))
}

fn load_field(project: &Project, checkpoint: Option<&Path>) -> Result<ShapeField> {
    let dir = match checkpoint {
        Some(d) => d.to_path_buf(),
        None => project.latest_checkpoint().ok_or_else(|| Error::Config("no checkpoint found; train first".into()))?,
    };
    let ckpt = Checkpoint::load(&dir)?;
    if ckpt.field.config() != &project.manifest.field {
        return Err(field_mismatch(&format!("checkpoint {}", dir.display())));
    }
    Ok(ckpt.field)
}

pub struct TrainArgs<'a> {
    pub project: &'a Path,
    pub stage: u8,
    pub resume: bool,
    /// Applied to the manifest's training configuration.
    pub configure: &'a dyn Fn(&mut TrainConfig) -> Result<()>,
    pub seed: Option<u64>,
}

pub fn train(a: &TrainArgs) -> Result<String> {
    let mut manifest = read_manifest(a.project)?;
    (a.configure)(&mut manifest.train)?;
    if let Some(s) = a.seed {
        manifest.seed = s;
    }
    manifest.train.seed = manifest.seed;
    let project = Project::from_manifest(a.project, manifest)?;
    let cfg = project.manifest.train.clone();
    let stage = match a.stage {
        1 => Stage::Pretrain,
        2 => Stage::Simulator,
        s => return Err(Error::Config(format!("stage must be 1 or 2, got {s}"))),
    };
    let own_dir = project.checkpoint_dir(stage.number());

    let (mut field, mut adam, start) = if a.resume {
        let ckpt = Checkpoint::load(&own_dir)?;
        if ckpt.stage != stage {
            return Err(Error::Config(format!("{} holds a stage-{} checkpoint", own_dir.display(), ckpt.stage.number())));
        }
        if ckpt.field.config() != &project.manifest.field {
            return Err(field_mismatch("resumed checkpoint"));
        }
        if ckpt.train != cfg {
            return Err(Error::Config("training configuration differs from the resumed checkpoint".into()));
        }
        let adam = ckpt.adam.ok_or_else(|| Error::Config("checkpoint has no optimizer state to resume".into()))?;
        (ckpt.field, adam, ckpt.epoch + 1)
    } else if stage == Stage::Simulator {
        let dir = project.checkpoint_dir(1);
        if !dir.join(crate::checkpoint::MANIFEST).exists() {
            return Err(Error::Config(format!("stage 2 requires a stage-1 checkpoint in {}", dir.display())));
        }
        let field = load_field(&project, Some(&dir))?;
        let adam = Adam::new(field.params(), cfg.adam);
        (field, adam, 0)
    } else {
        let field = ShapeField::new(project.manifest.field.clone(), project.manifest.seed)?;
        let adam = Adam::new(field.params(), cfg.adam);
        (field, adam, 0)
    };

    let mut metrics = MetricsWriter::open(&project.metrics_path(stage.number()), a.resume)?;
    let mut last_epoch: Option<usize> = start.checked_sub(1);
    let mut io_error: Option<Error> = None;
    let mut observer = |m: &shapeact_core::training::EpochMetrics, f: &ShapeField, ad: &Adam| {
        let saved = metrics.write(m).and_then(|_| {
            Checkpoint { stage, epoch: m.epoch, aborted: false, train: cfg.clone(), field: f.clone(), adam: Some(ad.clone()) }
                .save(&own_dir)
        });
        info!("stage {} epoch {} loss {:e} mean vertex error {:e}", stage.number(), m.epoch, m.loss, m.mean_vertex_error);
        last_epoch = Some(m.epoch);
        saved.map_err(|e| {
            io_error = Some(e);
            shapeact_core::Error::Aborted("could not write training outputs".into())
        })
    };
    let result = match stage {
        Stage::Pretrain => {
            let targets = project
                .scenes
                .iter()
                .map(|scene| {
                    project
                        .frames
                        .iter()
                        .map(|f| {
                            let (t, r) = actuation_targets(scene, &f.target, &cfg.solver)?;
                            info!("spring drag k {:e}, residual {:.3}%, {} iterations", t.stiffness, 100.0 * t.residual, r.iterations);
                            Ok(t)
                        })
                        .collect::<shapeact_core::Result<Vec<_>>>()
                })
                .collect::<shapeact_core::Result<Vec<_>>>()?;
            pretrain(&mut field, &mut adam, &project.scenes, &project.frames, &targets, &cfg, start, &mut observer)
        }
        Stage::Simulator => {
            let mut warm = WarmStarts::new(project.scenes.len(), project.frames.len());
            train_stage2(&mut field, &mut adam, &project.scenes, &project.frames, &cfg, start, &mut warm, &mut observer)
        }
    };
    if let Some(e) = io_error {
        return Err(e);
    }
    match result {
        Ok(history) => {
            let last = history.last();
            Ok(format!(
                "stage {} finished {} epoch(s); final loss {}; checkpoint {}",
                stage.number(),
                history.len(),
                last.map(|m| format!("{:e}", m.loss)).unwrap_or_else(|| "n/a".into()),
                own_dir.display()
            ))
        }
        Err(e) => {
            let epoch = last_epoch.unwrap_or(0);
            let ckpt = Checkpoint { stage, epoch, aborted: true, train: cfg, field, adam: Some(adam) };
            if let Err(save) = ckpt.save(&own_dir) {
                warn!("could not write the abort checkpoint: {save}");
            }
            Err(e.into())
        }
    }
}

/// Latent code from a latent file, a target OBJ, or a training frame index.
fn resolve_latent(project: &Project, field: &ShapeField, spec: &str) -> Result<(Vec<f64>, Option<Vec<Vec3>>)> {
    if let Ok(i) = spec.parse::<usize>() {
        let frame = project
            .frames
            .get(i)
            .ok_or_else(|| Error::Config(format!("frame {i} out of range ({} targets)", project.frames.len())))?;
        return Ok((field.encode(frame.source.clone())?.z, Some(frame.target.positions.clone())));
    }
    let path = Path::new(spec);
    if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("json")) {
        let l: LatentFile = json::read(path)?;
        if l.z.len() != field.config().latent_dim {
            return Err(Error::Config(format!("{spec}: latent of length {}, field expects {}", l.z.len(), field.config().latent_dim)));
        }
        return Ok((l.z, None));
    }
    let pos = project::read_target(path, &project.surface)?;
    let source = project.source_for(&pos)?;
    Ok((field.encode(source)?.z, Some(pos)))
}

pub struct SimulateArgs<'a> {
    pub project: &'a Path,
    pub checkpoint: Option<&'a Path>,
    /// Latent file, target OBJ or training frame index.
    pub input: &'a str,
    pub resolution: Option<usize>,
    pub out: &'a Path,
}

pub fn simulate_cmd(a: &SimulateArgs) -> Result<String> {
    let project = Project::load(a.project)?;
    let field = load_field(&project, a.checkpoint)?;
    let (z, target) = resolve_latent(&project, &field, a.input)?;
    let scene = project.scene(a.resolution.unwrap_or(project.manifest.resolutions[0]))?;
    let sim = simulate(&field, &scene, &z, None, &project.manifest.train.solver)?;
    let positions = scene.surface_positions(&sim.state.u);
    obj::write(a.out, &positions, &project.surface.faces, None)?;
    let report_path = a.out.with_extension("report.json");
    json::write(&report_path, &sim.report, true)?;
    let mut line = format!(
        "{} iterations + {} Newton, converged {}, surface -> {}",
        sim.report.iterations,
        sim.report.newton_steps,
        sim.report.converged,
        a.out.display()
    );
    if let Some(t) = target {
        let stem = a.out.with_file_name(format!("{}_error", a.out.file_stem().unwrap_or_default().to_string_lossy()));
        let errors = write_vertex_errors(&stem, &positions, &t, &project.surface.faces)?;
        let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
        line.push_str(&format!(", mean vertex error {mean:e}"));
    }
    if !sim.report.converged {
        warn!("solve stopped at the iteration limit; report in {}", report_path.display());
    }
    Ok(line)
}

pub struct FitArgs<'a> {
    pub project: &'a Path,
    pub checkpoint: Option<&'a Path>,
    pub target: &'a Path,
    pub iterations: usize,
    pub out: Option<&'a Path>,
}

pub fn fit(a: &FitArgs) -> Result<String> {
    let project = Project::load(a.project)?;
    let field = load_field(&project, a.checkpoint)?;
    let positions = project::read_target(a.target, &project.surface)?;
    let source = project.source_for(&positions)?;
    let target = TargetPose::new(positions.clone(), &project.surface.faces, Vec::new())?;
    let z0 = field.encode(source)?.z;
    let scene = &project.scenes[0];
    let cfg = &project.manifest.train;
    let fitted = fit_new_pose(&field, scene, &target, &z0, a.iterations, cfg)?;
    let stem = a.target.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let out = a.out.map(Path::to_path_buf).unwrap_or_else(|| project.root.join("fits").join(&stem));
    let predicted = scene.surface_positions(&fitted.simulation.state.u);
    obj::write(&out.join("surface.obj"), &predicted, &project.surface.faces, None)?;
    json::write(&out.join("report.json"), &fitted.simulation.report, true)?;
    let latent = LatentFile { z: fitted.z.clone(), jaw: fitted.jaw.map(|j| j.0), losses: fitted.losses.clone() };
    json::write(&out.join("latent.json"), &latent, true)?;
    let errors = write_vertex_errors(&out.join("error"), &predicted, &positions, &project.surface.faces)?;
    let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    Ok(format!(
        "loss {:e} -> {:e} over {} iteration(s), mean vertex error {mean:e}; outputs in {}",
        fitted.losses[0],
        fitted.losses.last().copied().unwrap_or(f64::NAN),
        a.iterations,
        out.display()
    ))
}

pub struct InterpArgs<'a> {
    pub project: &'a Path,
    pub checkpoint: Option<&'a Path>,
    pub from: &'a str,
    pub to: &'a str,
    pub steps: usize,
    pub out: Option<&'a Path>,
}

pub fn interp(a: &InterpArgs) -> Result<String> {
    let project = Project::load(a.project)?;
    let field = load_field(&project, a.checkpoint)?;
    let (z1, _) = resolve_latent(&project, &field, a.from)?;
    let (z2, _) = resolve_latent(&project, &field, a.to)?;
    let shapes = interpolate(&field, &project.scenes[0], &z1, &z2, a.steps, &project.manifest.train.solver)?;
    let out = a.out.map(Path::to_path_buf).unwrap_or_else(|| project.root.join("interp"));
    for (i, s) in shapes.iter().enumerate() {
        obj::write(&out.join(format!("step_{i:03}.obj")), s, &project.surface.faces, None)?;
    }
    Ok(format!(
        "{} shapes, max inter-step displacement {:e}; outputs in {}",
        shapes.len(),
        max_step_displacement(&shapes),
        out.display()
    ))
}

pub fn gradcheck_cmd(seed: u64, out: &Path) -> Result<(String, bool)> {
    let report = gradcheck::tiny(seed)?;
    json::write(out, &report, true)?;
    Ok((
        format!(
            "{} parameters, max relative error {:e} (tolerance {:e}); report -> {}",
            report.entries.len(),
            report.max_relative_error,
            report.tolerance,
            out.display()
        ),
        report.passed,
    ))
}

/// Mean vertex error of every training frame, solved from rest.
pub fn evaluate_cmd(project_root: &Path, checkpoint: Option<&Path>) -> Result<String> {
    let project = Project::load(project_root)?;
    let field = load_field(&project, checkpoint)?;
    let mut lines = Vec::new();
    for (scene, n) in project.scenes.iter().zip(&project.manifest.resolutions) {
        let outcomes = evaluate(&field, scene, &project.frames, &project.manifest.train)?;
        for (name, o) in project.target_names.iter().zip(&outcomes) {
            lines.push(format!("N={n} {name}: loss {:e}, mean vertex error {:e}", o.loss, o.mean_vertex_error));
        }
    }
    Ok(lines.join("\n"))
}

pub fn demo(out: &Path, seed: u64) -> Result<String> {
    let path = crate::demo::write_bar_project(out, seed)?;
    Ok(format!("project written to {}", path.display()))
}

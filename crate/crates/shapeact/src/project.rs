//! Project layout: a `project.json` manifest naming the rest surface, the
//! mesh file, a directory of target OBJs and the checkpoint directory,
//! together with the field and training configuration and the seed.
//! Relative paths are resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapeact_core::field::{EncoderConfig, FieldConfig, LatentSource};
use shapeact_core::geometry::{embed_surface, SurfaceMesh};
use shapeact_core::training::{PcaBasis, Scene, TargetPose, TrainConfig, TrainingFrame};

use crate::{json, mesh_file, obj, Error, Result};

pub const MANIFEST: &str = "project.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub surface: PathBuf,
    /// Mesh container with samples and embedding, see [`mesh_file`].
    pub mesh: PathBuf,
    pub targets: PathBuf,
    pub checkpoints: PathBuf,
    /// Samples per element of every training resolution.
    pub resolutions: Vec<usize>,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

/// A loaded project with every referenced file read.
#[derive(Clone, Debug)]
pub struct Project {
    pub root: PathBuf,
    pub manifest: ProjectManifest,
    pub surface: SurfaceMesh,
    pub scenes: Vec<Scene>,
    pub target_names: Vec<String>,
    pub frames: Vec<TrainingFrame>,
    pub pca: Option<PcaBasis>,
}

/// Resolves the project directory from an explicit path or
/// `SHAPEACT_PROJECT`.
pub fn locate(explicit: Option<&Path>) -> Result<PathBuf> {
    match explicit {
        Some(p) => Ok(p.to_path_buf()),
        None => std::env::var_os("SHAPEACT_PROJECT")
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config("no --project given and SHAPEACT_PROJECT is unset".into())),
    }
}

impl ProjectManifest {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::Config("at least one training resolution is required".into()));
        }
        self.field.validate()?;
        let t = &self.train;
        for (name, s) in [("stage1", &t.stage1), ("stage2", &t.stage2)] {
            if !(s.lr > 0.0 && s.lr.is_finite()) || s.epochs == 0 || s.batch == 0 {
                return Err(Error::Config(format!("{name} needs lr > 0, epochs ≥ 1 and batch ≥ 1")));
            }
        }
        if !(t.fit_lr > 0.0) {
            return Err(Error::Config("fit_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Target OBJs of a directory, sorted by file name.
pub fn target_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a target surface and checks it against the rest topology.
pub fn read_target(path: &Path, rest: &SurfaceMesh) -> Result<Vec<shapeact_core::Vec3>> {
    let s = obj::read(path)?;
    if s.faces != rest.faces || s.vertices.len() != rest.vertices.len() {
        return Err(Error::format(path, "topology differs from the rest surface"));
    }
    Ok(s.vertices)
}

impl Project {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest: ProjectManifest = json::read(&root.join(MANIFEST))?;
        Self::from_manifest(root, manifest)
    }

    pub fn from_manifest(root: &Path, manifest: ProjectManifest) -> Result<Self> {
        manifest.validate()?;
        let surface = obj::read(&root.join(&manifest.surface))?;
        let mesh_path = root.join(&manifest.mesh);
        let bundle = mesh_file::read(&mesh_path)?;
        let embedding = match bundle.embedding {
            Some(e) if e.num_vertices() == surface.num_vertices() => e,
            Some(_) => return Err(Error::format(&mesh_path, "embedding does not match the surface")),
            None => embed_surface(&bundle.mesh, &surface)?,
        };
        let scenes = manifest
            .resolutions
            .iter()
            .map(|&n| {
                let samples = if n == bundle.samples.per_element {
                    bundle.samples.clone()
                } else {
                    shapeact_core::geometry::build_samples(&bundle.mesh, n)?
                };
                let domain = shapeact_core::energy::Domain::new(bundle.mesh.clone(), samples);
                Scene::from_domain(domain, surface.clone(), embedding.clone())
            })
            .collect::<shapeact_core::Result<Vec<_>>>()?;

        let files = target_files(&root.join(&manifest.targets))?;
        let poses = files.iter().map(|f| read_target(f, &surface)).collect::<Result<Vec<_>>>()?;
        let target_names = files.iter().map(|f| f.file_stem().unwrap_or_default().to_string_lossy().into_owned()).collect();
        let pca = match manifest.field.encoder {
            EncoderConfig::Descriptor { dim, .. } if !poses.is_empty() => Some(PcaBasis::fit(&surface.vertices, &poses, dim)?),
            _ => None,
        };
        if let EncoderConfig::AutoDecoder { frames } = manifest.field.encoder {
            if frames != poses.len() {
                return Err(Error::Config(format!("auto-decoder has {frames} codes but there are {} targets", poses.len())));
            }
        }
        let frames = poses
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let (descriptor, source) = match &pca {
                    Some(b) => {
                        let d = b.describe(&p)?;
                        (d.clone(), LatentSource::Descriptor(d))
                    }
                    None => (Vec::new(), LatentSource::Frame(i)),
                };
                Ok(TrainingFrame { target: TargetPose::new(p, &surface.faces, descriptor)?, source })
            })
            .collect::<shapeact_core::Result<Vec<_>>>()?;
        Ok(Project { root: root.to_path_buf(), manifest, surface, scenes, target_names, frames, pca })
    }

    pub fn checkpoint_dir(&self, stage: u8) -> PathBuf {
        self.root.join(&self.manifest.checkpoints).join(format!("stage{stage}"))
    }

    pub fn metrics_path(&self, stage: u8) -> PathBuf {
        self.root.join(&self.manifest.checkpoints).join(format!("metrics_stage{stage}.csv"))
    }

    /// Latest checkpoint: stage 2 if present, else stage 1.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        [2, 1].into_iter().map(|s| self.checkpoint_dir(s)).find(|d| d.join(crate::checkpoint::MANIFEST).exists())
    }

    /// Encoder input for an arbitrary target surface.
    pub fn source_for(&self, positions: &[shapeact_core::Vec3]) -> Result<LatentSource> {
        match &self.pca {
            Some(b) => Ok(LatentSource::Descriptor(b.describe(positions)?)),
            None => Err(Error::Config("the auto-decoder cannot encode new surfaces; pass a latent code instead".into())),
        }
    }

    /// Scene at `samples_per_element`, reusing a training scene when one
    /// matches.
    pub fn scene(&self, samples_per_element: usize) -> Result<Scene> {
        if let Some(i) = self.manifest.resolutions.iter().position(|&n| n == samples_per_element) {
            return Ok(self.scenes[i].clone());
        }
        let base = &self.scenes[0];
        let samples = shapeact_core::geometry::build_samples(&base.domain.mesh, samples_per_element)?;
        let domain = shapeact_core::energy::Domain::new(base.domain.mesh.clone(), samples);
        Ok(Scene::from_domain(domain, self.surface.clone(), base.embedding.clone())?)
    }
}

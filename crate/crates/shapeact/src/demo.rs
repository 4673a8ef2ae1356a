//! Writes a self-contained example project: the cantilevered bar with eight
//! synthetic training targets and eight held-out poses between them.

use std::path::{Path, PathBuf};

use shapeact_core::field::{EncoderConfig, FieldConfig};
use shapeact_core::geometry::{build_samples, embed_surface};
use shapeact_core::synthetic::recovery_bar;
use shapeact_core::training::{StageConfig, TrainConfig, DEFAULT_COMPONENTS};

use crate::project::{ProjectManifest, MANIFEST};
use crate::{json, mesh_file, obj, Result};

/// Field small enough to train on a laptop in about a minute.
pub fn desk_field_config(lo: [f64; 3], hi: [f64; 3]) -> FieldConfig {
    let mut fc = FieldConfig::new(EncoderConfig::Descriptor { dim: DEFAULT_COMPONENTS, hidden: 32 }, lo, hi);
    fc.width = 32;
    fc.latent_dim = 16;
    fc.modulation_hidden = 32;
    fc.omega0 = 10.0;
    fc
}

pub fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        stage1: StageConfig { epochs: 200, batch: 4, lr: 1e-3 },
        stage2: StageConfig { epochs: 100, batch: 1, lr: 1e-4 },
        seed,
        ..TrainConfig::default()
    }
}

/// Creates the project under `dir` and returns the manifest path.
pub fn write_bar_project(dir: &Path, seed: u64) -> Result<PathBuf> {
    // Odd frames of a 16-frame cycle fall halfway between the even ones.
    let syn = recovery_bar(16, 8)?;
    let samples = build_samples(&syn.mesh, 8)?;
    let embedding = embed_surface(&syn.mesh, &syn.surface)?;
    obj::write(&dir.join("surface.obj"), &syn.surface.vertices, &syn.surface.faces, None)?;
    mesh_file::write(&dir.join("mesh.json"), &syn.mesh, &samples, Some(&embedding))?;
    for (f, t) in syn.targets.iter().enumerate() {
        let sub = if f % 2 == 0 { "targets" } else { "heldout" };
        let path = dir.join(sub).join(format!("frame_{:03}.obj", f / 2));
        obj::write(&path, &t.positions, &syn.surface.faces, None)?;
    }
    let (lo, hi) = syn.mesh.bounding_box();
    let manifest = ProjectManifest {
        surface: "surface.obj".into(),
        mesh: "mesh.json".into(),
        targets: "targets".into(),
        checkpoints: "checkpoints".into(),
        resolutions: vec![8],
        field: desk_field_config(lo, hi),
        train: desk_train_config(seed),
        seed,
    };
    let path = dir.join(MANIFEST);
    json::write(&path, &manifest, true)?;
    Ok(path)
}

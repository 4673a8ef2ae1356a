//! Result exports: per-epoch metrics CSV, per-vertex error CSV with an
//! error-colored OBJ, and solve reports.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use shapeact_core::training::{vertex_errors, EpochMetrics};
use shapeact_core::Vec3;

use crate::{obj, Error, Result};

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "stage",
    "loss",
    "position",
    "normal",
    "mean_vertex_error",
    "solver_iterations",
    "failed_frames",
    "wall_time_seconds",
];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e)
}

/// Appends one row per epoch, flushing after each.
pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Opens `path`; `append` keeps existing rows (on resume), otherwise the
    /// file is truncated and the header written.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let existing = append && path.exists();
        let mut opts = OpenOptions::new();
        opts.create(true);
        if existing {
            opts.append(true);
        } else {
            opts.write(true).truncate(true);
        }
        let file = opts.open(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            path: path.to_path_buf(),
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        };
        if !existing {
            w.inner.write_record(METRICS_HEADER).map_err(|e| csv_error(path, e))?;
            w.flush()?;
        }
        Ok(w)
    }

    pub fn write(&mut self, m: &EpochMetrics) -> Result<()> {
        let wall = m.wall_time_seconds.map(|t| format!("{t:.3}")).unwrap_or_default();
        let row = [
            m.epoch.to_string(),
            m.stage.number().to_string(),
            m.loss.to_string(),
            m.position.to_string(),
            m.normal.to_string(),
            m.mean_vertex_error.to_string(),
            m.solver_iterations.to_string(),
            m.failed_frames.to_string(),
            wall,
        ];
        self.inner.write_record(&row).map_err(|e| csv_error(&self.path, e))?;
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Blue (zero) to red (`max`) ramp through white.
pub fn error_color(e: f64, max: f64) -> Vec3 {
    let t = if max > 0.0 { (e / max).clamp(0.0, 1.0) } else { 0.0 };
    if t < 0.5 {
        let s = 2.0 * t;
        [s, s, 1.0]
    } else {
        let s = 2.0 * (1.0 - t);
        [1.0, s, s]
    }
}

/// Writes `<stem>.csv` with `(vertex, error)` rows and `<stem>.obj` with the
/// predicted surface colored by error. Returns the per-vertex errors.
pub fn write_vertex_errors(stem: &Path, predicted: &[Vec3], target: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<f64>> {
    let errors = vertex_errors(predicted, target);
    let csv_path = stem.with_extension("csv");
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    w.write_record(["vertex", "error"]).map_err(|e| csv_error(&csv_path, e))?;
    for (i, e) in errors.iter().enumerate() {
        w.write_record([i.to_string(), e.to_string()]).map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let max = errors.iter().copied().fold(0.0, f64::max);
    let colors: Vec<Vec3> = errors.iter().map(|&e| error_color(e, max)).collect();
    obj::write(&stem.with_extension("obj"), predicted, faces, Some(&colors))?;
    Ok(errors)
}

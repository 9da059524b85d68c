//! CSV helpers and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampler::Trajectory;

fn point_columns(dim: usize) -> Vec<String> {
    (0..dim).map(|d| format!("dim{d}")).collect()
}

pub fn write_points(path: &Path, points: &[f64], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(point_columns(dim))?;
    for row in points.chunks(dim) {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a points CSV with a header row; returns `(points, dim)`.
pub fn read_points(path: &Path) -> Result<(Vec<f64>, usize)> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Argument(format!("cannot read points {}: {e}", path.display())))?;
    let dim = r.headers()?.len();
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter() {
            points.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Argument(format!("{}: bad number '{field}': {e}", path.display())))?,
            );
        }
    }
    if dim == 0 || points.is_empty() {
        return Err(Error::Argument(format!("{} contains no points", path.display())));
    }
    Ok((points, dim))
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "step".into(), "t".into()];
    header.extend(point_columns(dim));
    w.write_record(&header)?;
    for (id, traj) in trajs.iter().enumerate() {
        for (step, (t, z)) in traj.times.iter().zip(&traj.positions).enumerate() {
            let mut row = vec![id.to_string(), step.to_string(), t.to_string()];
            row.extend(z.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub name: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub started_at_unix: f64,
    pub finished_at_unix: f64,
    /// Files written by this command, relative to the output directory.
    pub produced: Vec<String>,
    /// Every file in the output directory other than the manifest.
    pub artifacts: Vec<String>,
    pub summary: serde_json::Value,
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            if rel != MANIFEST_NAME {
                out.push(rel);
            }
        }
    }
    Ok(())
}

impl RunManifest {
    /// Fills in the artifact listing and writes `manifest.json`.
    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished_at_unix = unix_now();
        let mut files = Vec::new();
        list_files(out_dir, out_dir, &mut files)?;
        files.sort();
        self.artifacts = files;
        let path = out_dir.join(MANIFEST_NAME);
        write_json(&path, &self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        let pts = vec![0.1, -2.5, 1e-300, 3.0];
        write_points(&p, &pts, 2).unwrap();
        assert_eq!(read_points(&p).unwrap(), (pts, 2));
        fs::write(&p, "dim0\n").unwrap();
        assert!(matches!(read_points(&p), Err(Error::Argument(_))));
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cloud::{Point, PointCloud};
use crate::{Error, Result};

/// Supervision for one subject: a class index or a real value (age in
/// years for the regression task).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Class(usize),
    Value(f64),
}

impl Target {
    pub fn class(&self) -> Option<usize> {
        match *self {
            Target::Class(c) => Some(c),
            Target::Value(_) => None,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Target::Class(c) => c as f64,
            Target::Value(v) => v,
        }
    }
}

/// One subject: `m` point clouds in a dataset-wide structure order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStructureSample {
    pub subject_id: String,
    pub clouds: Vec<PointCloud>,
    pub target: Target,
}

impl MultiStructureSample {
    pub fn num_points(&self) -> Vec<usize> {
        self.clouds.iter().map(PointCloud::len).collect()
    }
}

/// Records `p_normalized = (p − centroid) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub centroid: Point,
    pub scale: f64,
}

impl Normalization {
    pub fn forward(&self, p: Point) -> Point {
        std::array::from_fn(|k| (p[k] - self.centroid[k]) / self.scale)
    }

    pub fn inverse(&self, p: Point) -> Point {
        std::array::from_fn(|k| p[k] * self.scale + self.centroid[k])
    }
}

fn fit(points: &mut dyn Iterator<Item = Point>) -> Result<Normalization> {
    let pts: Vec<Point> = points.collect();
    if pts.is_empty() {
        return Err(Error::EmptyInput("normalize_subject"));
    }
    let n = pts.len() as f64;
    let centroid: Point = std::array::from_fn(|k| pts.iter().map(|p| p[k]).sum::<f64>() / n);
    let scale =
        pts.iter().map(|p| (0..3).map(|k| (p[k] - centroid[k]).powi(2)).sum::<f64>().sqrt()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate("all points coincide; cannot normalize".into()));
    }
    Ok(Normalization { centroid, scale })
}

fn apply(cloud: &PointCloud, t: &Normalization) -> PointCloud {
    PointCloud { points: cloud.points.iter().map(|&p| t.forward(p)).collect(), structure_id: cloud.structure_id }
}

/// Centers the subject on the joint centroid of all its points and scales
/// the largest distance from that centroid to 1. Relative placement of the
/// structures is preserved.
pub fn normalize_subject(sample: &MultiStructureSample) -> Result<(MultiStructureSample, Normalization)> {
    let t = fit(&mut sample.clouds.iter().flat_map(|c| c.points.iter().copied()))?;
    let out = MultiStructureSample {
        subject_id: sample.subject_id.clone(),
        clouds: sample.clouds.iter().map(|c| apply(c, &t)).collect(),
        target: sample.target,
    };
    Ok((out, t))
}

/// Normalizes every structure on its own centroid and radius.
pub fn normalize_per_structure(sample: &MultiStructureSample) -> Result<(MultiStructureSample, Vec<Normalization>)> {
    let ts = sample.clouds.iter().map(|c| fit(&mut c.points.iter().copied())).collect::<Result<Vec<_>>>()?;
    let out = MultiStructureSample {
        subject_id: sample.subject_id.clone(),
        clouds: sample.clouds.iter().zip(&ts).map(|(c, t)| apply(c, t)).collect(),
        target: sample.target,
    };
    Ok((out, ts))
}

/// One dataset manifest record. Cloud paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    pub clouds: Vec<PathBuf>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(entries)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Loads every subject of a manifest. All subjects must have a target, the
/// same structure count and the same per-structure point counts.
pub fn read_dataset(manifest: &Path) -> Result<Vec<MultiStructureSample>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(manifest)?;
    let samples = entries
        .iter()
        .map(|e| {
            let target = e.target.ok_or_else(|| Error::Format(format!("subject {} has no target", e.subject_id)))?;
            let clouds = e
                .clouds
                .iter()
                .enumerate()
                .map(|(j, p)| PointCloud::read(&base.join(p), j as u32))
                .collect::<Result<Vec<_>>>()?;
            Ok(MultiStructureSample { subject_id: e.subject_id.clone(), clouds, target })
        })
        .collect::<Result<Vec<_>>>()?;
    check_consistent(&samples)?;
    Ok(samples)
}

/// Writes each structure as `<subject>_s<j>.xyz` under `dir` plus
/// `dir/manifest.json`; returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[MultiStructureSample]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let mut clouds = Vec::with_capacity(s.clouds.len());
        for (j, c) in s.clouds.iter().enumerate() {
            let name = PathBuf::from(format!("{}_s{}.xyz", s.subject_id, j));
            c.write_ascii(&dir.join(&name))?;
            clouds.push(name);
        }
        entries.push(ManifestEntry { subject_id: s.subject_id.clone(), target: Some(s.target), clouds });
    }
    let path = dir.join("manifest.json");
    write_manifest(&path, &entries)?;
    Ok(path)
}

/// Every sample must share the first sample's structure count and
/// per-structure point counts.
pub fn check_consistent(samples: &[MultiStructureSample]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let shape = first.num_points();
    for s in samples {
        if s.num_points() != shape {
            return Err(Error::Format(format!(
                "subject {} has per-structure point counts {:?}, expected {:?}",
                s.subject_id,
                s.num_points(),
                shape
            )));
        }
    }
    Ok(())
}

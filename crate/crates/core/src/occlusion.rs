//! Per-point importance by occlusion.
//!
//! For every point `i` of one structure, the point and its `K` nearest
//! neighbours are moved to the origin and the subject is re-evaluated. The
//! importance of `i` is the change of the reference-class logit:
//! `logit_c(occluded) − logit_c(full)`. Positive values mean that hiding
//! the neighbourhood raises the evidence for class `c`.
//!
//! Occlusion acts on the model's input space, i.e. after subject
//! normalization, so the origin is the subject's joint centroid.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fmt::sig9;
use crate::network::{ForwardCtx, Model};
use crate::shapedata::{normalize_subject, MultiStructureSample, Point, PointCloud, Task};
use crate::training::argmax;
use crate::{Error, Result};

/// Occluded variants evaluated per forward pass.
const OCCLUSION_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub structure: usize,
    pub reference_class: usize,
    pub neighbors: usize,
    pub importance: Vec<f64>,
}

impl ImportanceMap {
    pub fn max_abs(&self) -> f64 {
        self.importance.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn dist2(a: Point, b: Point) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Indices of the `k` points closest to point `i` (excluding `i`), nearest
/// first, ties broken by lower index.
pub fn knn(cloud: &PointCloud, i: usize, k: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if i >= n {
        return Err(Error::Parameter(format!("point index {i} out of range for {n} points")));
    }
    if k >= n {
        return Err(Error::Parameter(format!("K = {k} must be smaller than the cloud size {n}")));
    }
    let query = cloud.points[i];
    let mut candidates: Vec<(f64, usize)> =
        cloud.points.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, &p)| (dist2(query, p), j)).collect();
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        candidates.truncate(k);
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(candidates.into_iter().map(|(_, j)| j).collect())
}

/// Copy of `cloud` with the listed points moved to `(0, 0, 0)`.
pub fn occlude(cloud: &PointCloud, indices: &[usize]) -> Result<PointCloud> {
    let mut out = cloud.clone();
    for &i in indices {
        let p = out
            .points
            .get_mut(i)
            .ok_or_else(|| Error::Parameter(format!("occlusion index {i} out of range for {} points", cloud.len())))?;
        *p = [0.0; 3];
    }
    Ok(out)
}

fn logits(model: &Model, samples: &[MultiStructureSample]) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&MultiStructureSample> = samples.iter().collect();
    let output = model.forward(&model.batch_inputs(&refs)?, &mut ForwardCtx::evaluate())?;
    Ok(output.prediction.values().chunks(model.config.outputs).map(<[f64]>::to_vec).collect())
}

/// Importance of every point of `structure` for a classification model.
/// `reference_class` defaults to the model's prediction on the full sample.
/// The sample is taken in raw coordinates; the model's preprocessing is
/// applied before occluding.
pub fn importance_map(
    model: &Model,
    sample: &MultiStructureSample,
    structure: usize,
    k: usize,
    reference_class: Option<usize>,
) -> Result<ImportanceMap> {
    if model.config.task != Task::Classification {
        return Err(Error::UnsupportedTask("occlusion importance needs a classification model".into()));
    }
    let prepared = if model.config.normalize { normalize_subject(sample)?.0 } else { sample.clone() };
    let cloud = prepared
        .clouds
        .get(structure)
        .ok_or_else(|| Error::Parameter(format!("structure {structure} out of range")))?;
    let full = logits(model, std::slice::from_ref(&prepared))?.remove(0);
    let class = match reference_class {
        Some(c) if c < model.config.outputs => c,
        Some(c) => return Err(Error::Parameter(format!("class {c} out of range"))),
        None => argmax(&full),
    };
    let n = cloud.len();
    let mut importance = Vec::with_capacity(n);
    for start in (0..n).step_by(OCCLUSION_BATCH) {
        let variants = (start..(start + OCCLUSION_BATCH).min(n))
            .map(|i| {
                let mut hidden = knn(cloud, i, k)?;
                hidden.push(i);
                let mut s = prepared.clone();
                s.clouds[structure] = occlude(cloud, &hidden)?;
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        for row in logits(model, &variants)? {
            importance.push(row[class] - full[class]);
        }
    }
    if importance.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("importance".into()));
    }
    Ok(ImportanceMap { structure, reference_class: class, neighbors: k, importance })
}

/// Diverging red/white/blue color for `v` in `[-1, 1]`.
pub fn diverging_color(v: f64) -> [u8; 3] {
    let v = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |t: f64| (255.0 * (1.0 - t)).round() as u8;
    if v >= 0.0 {
        [255, fade(v), fade(v)]
    } else {
        [fade(-v), fade(-v), 255]
    }
}

/// Writes `<prefix>.csv` (`x,y,z,importance`) and `<prefix>.ply` (ASCII,
/// float coordinates, uchar colors scaled by the largest |importance|).
pub fn export_importance(map: &ImportanceMap, cloud: &PointCloud, prefix: &Path) -> Result<()> {
    if map.importance.len() != cloud.len() {
        return Err(Error::shape("export_importance", &[map.importance.len()], &[cloud.len()]));
    }
    let with_ext = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        std::path::PathBuf::from(s)
    };
    let mut csv = BufWriter::new(fs::File::create(with_ext(".csv"))?);
    writeln!(csv, "x,y,z,importance")?;
    for (p, v) in cloud.points.iter().zip(&map.importance) {
        writeln!(csv, "{},{},{},{}", sig9(p[0]), sig9(p[1]), sig9(p[2]), sig9(*v))?;
    }
    csv.flush()?;

    let scale = map.max_abs();
    let mut ply = BufWriter::new(fs::File::create(with_ext(".ply"))?);
    write!(
        ply,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )?;
    for (p, v) in cloud.points.iter().zip(&map.importance) {
        let [r, g, b] = diverging_color(if scale > 0.0 { v / scale } else { 0.0 });
        writeln!(ply, "{} {} {} {r} {g} {b}", p[0] as f32, p[1] as f32, p[2] as f32)?;
    }
    ply.flush()?;
    Ok(())
}

//! Synthetic multi-structure corpus.
//!
//! Every subject has `structures` ellipsoid surfaces laid out along the x
//! axis. Per subject and structure the semi-axes are drawn uniformly from
//! `axis_range` and the center is jittered by up to `placement_jitter`.
//! Surface points are `center + axes ⊙ u · radial(u)` for directions `u`
//! uniform on the sphere, plus Gaussian noise of standard deviation
//! `jitter` per coordinate.
//!
//! - Classification: subjects alternate between class 0 (smooth) and class 1,
//!   whose structure 0 carries a radial dent
//!   `radial(u) = 1 − depth · exp(−θ² / 2w²)` with θ the angle between `u`
//!   and `+x` and `w = dent_width`.
//! - Regression: structure 0 is scaled by `s ~ U(scale_range)` and the
//!   target is `s` mapped linearly onto `age_range`. Semi-axes are divided
//!   by their geometric mean so `s` is the only size variation.

use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cloud::{Point, PointCloud};
use super::sample::{MultiStructureSample, Target};
use super::Task;
use crate::rng::{derive_seed, rng_from_seed, RngState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub subjects: usize,
    pub structures: usize,
    pub points: usize,
    pub task: Task,
    pub dent_depth: f64,
    /// Angular width (radians) of the dent.
    pub dent_width: f64,
    pub jitter: f64,
    pub axis_range: [f64; 2],
    pub scale_range: [f64; 2],
    pub age_range: [f64; 2],
    /// Distance between neighbouring structure centers.
    pub spacing: f64,
    pub placement_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            subjects: 100,
            structures: 2,
            points: 256,
            task: Task::Classification,
            dent_depth: 0.3,
            dent_width: 0.4,
            jitter: 0.01,
            axis_range: [0.7, 1.3],
            scale_range: [0.6, 1.4],
            age_range: [60.0, 90.0],
            spacing: 3.0,
            placement_jitter: 0.2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(format!("synth spec: {m}")));
        if self.subjects == 0 || self.structures == 0 || self.points == 0 {
            return bad("subjects, structures and points must be positive");
        }
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !range_ok(self.axis_range) || self.axis_range[0] <= 0.0 {
            return bad("axis_range must be a positive interval");
        }
        if !range_ok(self.scale_range) || self.scale_range[0] <= 0.0 || self.scale_range[0] == self.scale_range[1] {
            return bad("scale_range must be a positive, non-empty interval");
        }
        if !range_ok(self.age_range) {
            return bad("age_range must be an interval");
        }
        if !(0.0..1.0).contains(&self.dent_depth) || !(self.dent_width > 0.0) {
            return bad("dent_depth must lie in [0, 1) and dent_width be positive");
        }
        if !(self.jitter >= 0.0) || !(self.placement_jitter >= 0.0) || !self.spacing.is_finite() {
            return bad("jitter, placement_jitter and spacing must be non-negative");
        }
        Ok(())
    }

    /// Nominal age for a structure-0 scale factor.
    pub fn age_for_scale(&self, s: f64) -> f64 {
        let [s0, s1] = self.scale_range;
        let [a0, a1] = self.age_range;
        a0 + (s - s0) / (s1 - s0) * (a1 - a0)
    }
}

/// Generated subjects together with the generator's ground truth.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub samples: Vec<MultiStructureSample>,
    /// Per subject, which points of structure 0 lie inside the dent region
    /// (angle to `+x` below twice the dent width). Filled for both classes.
    pub dent_masks: Vec<Vec<bool>>,
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.subjects);
    let mut dent_masks = Vec::with_capacity(spec.subjects);
    for i in 0..spec.subjects {
        let mut rng = rng_from_seed(derive_seed(spec.seed, i as u64));
        let (sample, mask) = synth_subject(spec, i, &mut rng)?;
        samples.push(sample);
        dent_masks.push(mask);
    }
    Ok(SynthCorpus { samples, dent_masks })
}

fn unit_direction(rng: &mut RngState) -> Point {
    loop {
        let v: Point = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|c| c / n);
        }
    }
}

fn synth_subject(spec: &SynthSpec, index: usize, rng: &mut RngState) -> Result<(MultiStructureSample, Vec<bool>)> {
    let (target, dented, scale0) = match spec.task {
        Task::Classification => {
            let class = index % 2;
            (Target::Class(class), class == 1, 1.0)
        }
        Task::Regression => {
            let s = rng.gen_range(spec.scale_range[0]..=spec.scale_range[1]);
            (Target::Value(spec.age_for_scale(s)), false, s)
        }
    };
    let noise = Normal::new(0.0, spec.jitter).map_err(|e| Error::Parameter(e.to_string()))?;
    let mid = (spec.structures as f64 - 1.0) / 2.0;
    let mut clouds = Vec::with_capacity(spec.structures);
    let mut mask = Vec::with_capacity(spec.points);
    for j in 0..spec.structures {
        let pj = spec.placement_jitter;
        let offset: Point = std::array::from_fn(|_| if pj > 0.0 { rng.gen_range(-pj..=pj) } else { 0.0 });
        let center = [(j as f64 - mid) * spec.spacing + offset[0], offset[1], offset[2]];
        let [lo, hi] = spec.axis_range;
        let mut axes: Point = std::array::from_fn(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo });
        if spec.task == Task::Regression {
            let g = (axes[0] * axes[1] * axes[2]).cbrt();
            axes = axes.map(|a| a / g);
        }
        let scale = if j == 0 { scale0 } else { 1.0 };
        let mut points = Vec::with_capacity(spec.points);
        for _ in 0..spec.points {
            let u = unit_direction(rng);
            let angle = u[0].clamp(-1.0, 1.0).acos();
            let radial = if dented && j == 0 {
                1.0 - spec.dent_depth * (-angle * angle / (2.0 * spec.dent_width * spec.dent_width)).exp()
            } else {
                1.0
            };
            if j == 0 {
                mask.push(angle < 2.0 * spec.dent_width);
            }
            let p: Point = std::array::from_fn(|k| center[k] + scale * axes[k] * u[k] * radial + rng.sample(noise));
            points.push(p);
        }
        clouds.push(PointCloud::new(points, j as u32)?);
    }
    Ok((MultiStructureSample { subject_id: format!("subj{index:05}"), clouds, target }, mask))
}

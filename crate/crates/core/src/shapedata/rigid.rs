use rand::Rng;
use rand_distr::StandardNormal;

use super::cloud::{Point, PointCloud};
use crate::rng::RngState;
use crate::{Error, Result};

/// `p ↦ R·p + t` with `R` a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        RigidTransform { translation: t, ..Self::identity() }
    }

    /// Rotation about `+z` by `angle` radians.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RigidTransform { rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    /// Rotation of a unit quaternion `(w, x, y, z)`.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let [w, x, y, z] = q;
        RigidTransform {
            rotation: [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ],
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| r[j][i]));
        let t = self.translation;
        let translation = std::array::from_fn(|i| -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2]));
        RigidTransform { rotation: rt, translation }
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform) -> Self {
        let (a, b) = (&self.rotation, &first.rotation);
        let rotation = std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()));
        RigidTransform { rotation, translation: self.apply(first.translation) }
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }
}

/// Rotation uniform on SO(3) (normalized Gaussian quaternion) and
/// translation uniform in `[−max_translation, max_translation]³`.
pub fn random_rigid(rng: &mut RngState, max_translation: f64) -> Result<RigidTransform> {
    if !(max_translation >= 0.0 && max_translation.is_finite()) {
        return Err(Error::Parameter(format!("max_translation must be non-negative, got {max_translation}")));
    }
    let q = loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break q.map(|v| v / norm);
        }
    };
    let mut t = RigidTransform::from_quaternion(q);
    if max_translation > 0.0 {
        t.translation = std::array::from_fn(|_| rng.gen_range(-max_translation..=max_translation));
    }
    Ok(t)
}

pub fn apply_rigid(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud { points: cloud.points.iter().map(|&p| t.apply(p)).collect(), structure_id: cloud.structure_id }
}

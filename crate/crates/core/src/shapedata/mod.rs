//! Point clouds from label volumes, rigid augmentation, subject
//! normalization and a synthetic multi-structure corpus.
//!
//! File formats:
//!
//! - Label volume: `<name>.json` header `{dims, spacing, origin, dtype: "u16"}`
//!   next to `<name>.raw` holding little-endian `u16` labels, x fastest.
//! - Point cloud: ASCII `x y z` per line with 9 significant digits, or the
//!   binary variant (see [`BINARY_MAGIC`]).
//! - Dataset manifest: JSON list of `{subject_id, target, clouds}` with cloud
//!   paths relative to the manifest.

mod cloud;
mod rigid;
mod sample;
mod synth;
mod volume;

use serde::{Deserialize, Serialize};

pub use cloud::{sample_uniform, Point, PointCloud, BINARY_MAGIC};
pub use rigid::{apply_rigid, random_rigid, RigidTransform};
pub use sample::{
    check_consistent, normalize_per_structure, normalize_subject, read_dataset, read_manifest, write_dataset,
    write_manifest, ManifestEntry, MultiStructureSample, Normalization, Target,
};
pub use synth::{synth_dataset, SynthCorpus, SynthSpec};
pub use volume::{extract_boundary, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Classification,
    Regression,
}

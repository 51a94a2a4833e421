use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use crate::{Error, Result};

/// 3-D grid of structure labels. `labels` is x-fastest:
/// `index = x + dx·(y + dy·z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub dims: [usize; 3],
    /// Millimeters per voxel along each axis.
    pub spacing: [f64; 3],
    /// World position of voxel (0, 0, 0) in millimeters.
    pub origin: [f64; 3],
    pub labels: Vec<u16>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], labels: Vec<u16>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Parameter(format!("volume dims must be positive, got {dims:?}")));
        }
        if labels.len() != dims.iter().product::<usize>() {
            return Err(Error::shape("LabelVolume", &dims, &[labels.len()]));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Parameter(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Parameter(format!("volume origin must be finite, got {origin:?}")));
        }
        Ok(LabelVolume { dims, spacing, origin, labels })
    }

    /// Volume filled with `background`.
    pub fn filled(dims: [usize; 3], background: u16) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3], vec![background; dims.iter().product()])
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u16) {
        let i = self.index(x, y, z);
        self.labels[i] = label;
    }

    pub fn world(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    fn is_boundary(&self, x: usize, y: usize, z: usize) -> bool {
        let [dx, dy, dz] = self.dims;
        if x == 0 || y == 0 || z == 0 || x + 1 == dx || y + 1 == dy || z + 1 == dz {
            return true;
        }
        let v = self.get(x, y, z);
        [
            self.get(x - 1, y, z),
            self.get(x + 1, y, z),
            self.get(x, y - 1, z),
            self.get(x, y + 1, z),
            self.get(x, y, z - 1),
            self.get(x, y, z + 1),
        ]
        .iter()
        .any(|&n| n != v)
    }

    /// Reads `<stem>.json` (header) and `<stem>.raw` (little-endian u16).
    /// `path` may name either file or the bare stem.
    pub fn read(path: &Path) -> Result<Self> {
        let (json, raw) = volume_paths(path);
        let header: VolumeHeader = serde_json::from_str(&fs::read_to_string(&json)?)?;
        if header.dtype != "u16" {
            return Err(Error::Format(format!("unsupported volume dtype {:?}", header.dtype)));
        }
        let bytes = fs::read(&raw)?;
        if bytes.len() % 2 != 0 {
            return Err(Error::Format(format!("{} has an odd byte count", raw.display())));
        }
        let labels = bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
        Self::new(header.dims, header.spacing, header.origin, labels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (json, raw) = volume_paths(path);
        let header = VolumeHeader { dims: self.dims, spacing: self.spacing, origin: self.origin, dtype: "u16".into() };
        fs::write(json, serde_json::to_string_pretty(&header)?)?;
        let bytes: Vec<u8> = self.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
        fs::write(raw, bytes)?;
        Ok(())
    }
}

fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("json"), with("raw"))
}

/// World-space centers of every voxel labelled `label` that touches the
/// volume border or has a 6-connected neighbour with another label, in
/// ascending linear index order.
pub fn extract_boundary(vol: &LabelVolume, label: u16) -> Result<PointCloud> {
    let [dx, dy, _] = vol.dims;
    let points: Vec<[f64; 3]> = vol
        .labels
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l == label)
        .map(|(i, _)| (i % dx, (i / dx) % dy, i / (dx * dy)))
        .filter(|&(x, y, z)| vol.is_boundary(x, y, z))
        .map(|(x, y, z)| vol.world(x, y, z))
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyStructure { label });
    }
    PointCloud::new(points, u32::from(label))
}

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::fmt::sig9;
use crate::rng::RngState;
use crate::{Error, Result};

pub type Point = [f64; 3];

/// Magic bytes opening a binary point-cloud file; followed by the point
/// count as a little-endian u64, then `x y z` as little-endian f64.
pub const BINARY_MAGIC: &[u8; 8] = b"MSPCLD01";

/// Ordered points of one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    /// Label of the structure the points were taken from.
    pub structure_id: u32,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, structure_id: u32) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud"));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point cloud coordinate".into()));
        }
        Ok(PointCloud { points, structure_id })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major `n×3` coordinates.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn centroid(&self) -> Point {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// ASCII: one `x y z` line per point, 9 significant digits.
    pub fn write_ascii(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for p in &self.points {
            writeln!(w, "{} {} {}", sig9(p[0]), sig9(p[1]), sig9(p[2]))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ascii(path: &Path, structure_id: u32) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let coords: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            let [x, y, z] = coords[..] else {
                return Err(Error::Format(format!(
                    "{}:{}: expected 3 coordinates, found {}",
                    path.display(),
                    lineno + 1,
                    coords.len()
                )));
            };
            points.push([x, y, z]);
        }
        Self::new(points, structure_id)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 + 24 * self.len());
        bytes.extend_from_slice(BINARY_MAGIC);
        bytes.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in self.points.iter().flatten() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read_binary(path: &Path, structure_id: u32) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 16 || &bytes[..8] != BINARY_MAGIC {
            return Err(Error::Format(format!("{} is not a binary point cloud", path.display())));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if bytes.len() != 16 + 24 * count {
            return Err(Error::Format(format!(
                "{}: header says {count} points, payload has {} bytes",
                path.display(),
                bytes.len() - 16
            )));
        }
        let values: Vec<f64> =
            bytes[16..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        Self::new(values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(), structure_id)
    }

    /// Reads either format, sniffing the binary magic.
    pub fn read(path: &Path, structure_id: u32) -> Result<Self> {
        let mut head = [0u8; 8];
        let is_binary = {
            use std::io::Read;
            let mut f = fs::File::open(path)?;
            f.read(&mut head)? == 8 && &head == BINARY_MAGIC
        };
        if is_binary {
            Self::read_binary(path, structure_id)
        } else {
            Self::read_ascii(path, structure_id)
        }
    }
}

/// Uniform subsample of `n` points: without replacement (partial
/// Fisher-Yates, in draw order) when the cloud has at least `n` points,
/// otherwise `n` independent uniform draws with replacement.
pub fn sample_uniform(cloud: &PointCloud, n: usize, rng: &mut RngState) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Parameter("sample size must be at least 1".into()));
    }
    let len = cloud.len();
    if len == 0 {
        return Err(Error::EmptyInput("sample_uniform"));
    }
    let points = if len >= n {
        let mut idx: Vec<usize> = (0..len).collect();
        for i in 0..n {
            let j = rng.gen_range(i..len);
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| cloud.points[i]).collect()
    } else {
        (0..n).map(|_| cloud.points[rng.gen_range(0..len)]).collect()
    };
    Ok(PointCloud { points, structure_id: cloud.structure_id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn grid(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [i as f64, (i * i) as f64, -(i as f64)]).collect(), 0).unwrap()
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(PointCloud::new(vec![], 0).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]], 0).is_err());
    }

    #[test]
    fn full_sample_is_permutation() {
        let c = grid(50);
        let s = sample_uniform(&c, 50, &mut rng_from_seed(3)).unwrap();
        let mut a = s.points.clone();
        let mut b = c.points.clone();
        a.sort_by(|p, q| p.partial_cmp(q).unwrap());
        b.sort_by(|p, q| p.partial_cmp(q).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn subsample_distinct_members() {
        let c = grid(10_000);
        let s = sample_uniform(&c, 512, &mut rng_from_seed(11)).unwrap();
        assert_eq!(s.len(), 512);
        let mut xs: Vec<i64> = s.points.iter().map(|p| p[0] as i64).collect();
        xs.sort();
        xs.dedup();
        assert_eq!(xs.len(), 512);
        assert!(s.points.iter().all(|p| c.points.contains(p)));
    }

    #[test]
    fn oversample_with_replacement() {
        let c = grid(3);
        let s = sample_uniform(&c, 10, &mut rng_from_seed(0)).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.points.iter().all(|p| c.points.contains(p)));
    }

    #[test]
    fn seeded_determinism() {
        let c = grid(1000);
        let a = sample_uniform(&c, 20, &mut rng_from_seed(5)).unwrap();
        let b = sample_uniform(&c, 20, &mut rng_from_seed(5)).unwrap();
        let d = sample_uniform(&c, 20, &mut rng_from_seed(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
        assert!(sample_uniform(&c, 0, &mut rng_from_seed(5)).is_err());
    }

    #[test]
    fn ascii_and_binary_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = PointCloud::new(vec![[0.1, -2.0, 3.25], [1.0e-7, 12345.6789, 0.0]], 4).unwrap();
        let ascii = dir.path().join("c.xyz");
        c.write_ascii(&ascii).unwrap();
        assert_eq!(fs::read_to_string(&ascii).unwrap(), "0.1 -2 3.25\n1e-7 12345.6789 0\n");
        assert_eq!(PointCloud::read(&ascii, 4).unwrap(), c);

        let bin = dir.path().join("c.bin");
        c.write_binary(&bin).unwrap();
        assert_eq!(fs::metadata(&bin).unwrap().len(), 16 + 48);
        assert_eq!(PointCloud::read(&bin, 4).unwrap(), c);
    }
}

//! PCD1 packed binary split files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   b"PCD1"
//! u32     C   (class count)
//! u32     N   (points per sample)
//! u32 × C per-class sample counts
//! then per sample, grouped by class in ascending label order:
//!   N × 3 f64 coordinates, then one u8 label
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PCD1";

/// Write one split. Samples are stored grouped by label; the input order
/// within a label is preserved.
pub fn write_split(path: &Path, clouds: &[PointCloud], classes: usize, n_points: usize) -> Result<()> {
    if classes == 0 || classes > 255 {
        return Err(Error::Dataset(format!(
            "PCD1 stores labels as one byte; got {classes} classes"
        )));
    }
    let mut counts = vec![0u32; classes];
    for pc in clouds {
        if pc.label >= classes {
            return Err(Error::LabelOutOfRange {
                label: pc.label,
                classes,
            });
        }
        if pc.points.len() != n_points {
            return Err(Error::Dataset(format!(
                "sample has {} points, expected {n_points}",
                pc.points.len()
            )));
        }
        counts[pc.label] += 1;
    }
    let mut buf = Vec::with_capacity(12 + classes * 4 + clouds.len() * (n_points * 24 + 1));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(classes as u32).to_le_bytes());
    buf.extend_from_slice(&(n_points as u32).to_le_bytes());
    for c in &counts {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    for label in 0..classes {
        for pc in clouds.iter().filter(|pc| pc.label == label) {
            for p in &pc.points {
                for coord in p {
                    buf.extend_from_slice(&coord.to_le_bytes());
                }
            }
            buf.push(label as u8);
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read one split back; returns (clouds, classes, points per sample).
pub fn read_split(path: &Path) -> Result<(Vec<PointCloud>, usize, usize)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Dataset(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a PCD1 file"));
    }
    let classes = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n_points = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if classes == 0 || classes > 255 {
        return Err(bad("class count out of range"));
    }
    let mut pos = 12;
    let mut counts = Vec::with_capacity(classes);
    for _ in 0..classes {
        if pos + 4 > bytes.len() {
            return Err(bad("truncated header"));
        }
        counts.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
        pos += 4;
    }
    let total: usize = counts.iter().sum();
    let sample_bytes = n_points * 24 + 1;
    if bytes.len() != pos + total * sample_bytes {
        return Err(bad(&format!(
            "size mismatch: header promises {total} samples of {sample_bytes} bytes"
        )));
    }
    let mut clouds = Vec::with_capacity(total);
    let mut seen = vec![0usize; classes];
    for _ in 0..total {
        let mut points = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let mut p = [0.0f64; 3];
            for coord in &mut p {
                *coord = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
                pos += 8;
            }
            points.push(p);
        }
        let label = bytes[pos] as usize;
        pos += 1;
        if label >= classes {
            return Err(bad(&format!("label {label} out of range")));
        }
        seen[label] += 1;
        clouds.push(PointCloud { points, label });
    }
    if seen != counts {
        return Err(bad("per-class counts in header do not match stored labels"));
    }
    Ok((clouds, classes, n_points))
}

//! On-disk snapshots: a little-endian `f64` array plus a JSON sidecar.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::solver::Trajectory;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub dtype: String,
    /// `[times, nodes]`, row-major.
    pub shape: [usize; 2],
    pub grid: GridSpec,
    pub cfg_hash: String,
    pub seed: u64,
    pub replica: u64,
    pub times: Vec<f64>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Writes `stem.bin` and `stem.json`; returns both paths.
pub fn write_snapshot(stem: &Path, grid: &GridSpec, cfg_hash: &str, seed: u64, traj: &Trajectory) -> Result<(PathBuf, PathBuf)> {
    if traj.fields.len() != traj.times.len() || traj.fields.iter().any(|f| f.len() != grid.len()) {
        return Err(Error::InvalidParameter("trajectory does not match the grid".into()));
    }
    let (bin, json) = paths(stem);
    let mut w = BufWriter::new(fs::File::create(&bin)?);
    for v in traj.fields.iter().flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        dtype: "f64le".into(),
        shape: [traj.times.len(), grid.len()],
        grid: *grid,
        cfg_hash: cfg_hash.into(),
        seed,
        replica: traj.replica,
        times: traj.times.clone(),
    };
    fs::write(&json, serde_json::to_string_pretty(&sidecar)?)?;
    Ok((bin, json))
}

pub fn read_snapshot(stem: &Path) -> Result<(Sidecar, Trajectory)> {
    let (bin, json) = paths(stem);
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&json)?)?;
    if sidecar.format_version != FORMAT_VERSION || sidecar.dtype != "f64le" {
        return Err(Error::InvalidParameter(format!(
            "unsupported snapshot format {} ({})",
            sidecar.format_version, sidecar.dtype
        )));
    }
    let bytes = fs::read(&bin)?;
    let [rows, cols] = sidecar.shape;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::InvalidParameter(format!(
            "snapshot holds {} bytes, sidecar expects {}",
            bytes.len(),
            rows * cols * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let fields = values.chunks(cols.max(1)).take(rows).map(<[f64]>::to_vec).collect();
    let traj = Trajectory {
        replica: sidecar.replica,
        times: sidecar.times.clone(),
        fields,
    };
    Ok((sidecar, traj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new(1, 2.0, 8).unwrap();
        let traj = Trajectory {
            replica: 3,
            times: vec![0.0, 0.5],
            fields: vec![vec![1.0; 8], (0..8).map(|i| i as f64 * 0.1 - 1e-300).collect()],
        };
        let stem = dir.path().join("r3");
        write_snapshot(&stem, &g, "abc", 7, &traj).unwrap();
        let (side, back) = read_snapshot(&stem).unwrap();
        assert_eq!(back, traj);
        assert_eq!(side.seed, 7);
        assert_eq!(side.grid, g);
        std::fs::write(stem.with_extension("bin"), [0u8; 8]).unwrap();
        assert!(read_snapshot(&stem).is_err());
    }
}

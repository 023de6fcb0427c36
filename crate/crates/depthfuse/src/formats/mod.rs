//! On-disk formats: binary PPM/PGM rasters, key=value text, point-cloud CSV
//! and the checkpoint container.

mod checkpoint;
mod keyvalue;
mod netpbm;
mod pointcloud;

use std::path::{Path, PathBuf};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use keyvalue::{parse_key_values, read_calibration, read_meta, write_meta, Calibration, KeyValues};
pub use netpbm::{
    decode_pgm_depth, decode_ppm, encode_pgm_depth, encode_ppm, read_pgm_depth, read_ppm, write_pgm_depth, write_ppm,
    DEPTH_SCALE,
};
pub use pointcloud::{decode_point_cloud, encode_point_cloud, read_point_cloud, write_point_cloud};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: byte {offset}: {reason}", path.display())]
    Malformed { path: PathBuf, offset: usize, reason: String },
}

impl FormatError {
    pub(crate) fn malformed(path: &Path, offset: usize, reason: impl Into<String>) -> Self {
        Self::Malformed { path: path.to_path_buf(), offset, reason: reason.into() }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

pub type FormatResult<T> = Result<T, FormatError>;

pub(crate) fn read_bytes(path: &Path) -> FormatResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| FormatError::io(path, e))
}

/// Writes through a temporary sibling and renames, so readers never observe
/// a partial file.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> FormatResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| FormatError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| FormatError::io(path, e))
}

//! File formats: QM9 XYZ input, JSON-lines datasets, split manifests,
//! synthetic data.

pub mod dataset;
pub mod synthetic;
pub mod xyz;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use dataset::{load_dataset, load_split, save_dataset, save_split, SplitManifest};
pub use synthetic::generate_synthetic;
pub use xyz::{parse_qm9_xyz, parse_qm9_xyz_many, BondSpec, Qm9Record};

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

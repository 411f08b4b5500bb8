//! On-disk formats: Middlebury flow files, binary PNM frames, tensor
//! archives and key=value manifests.

mod archive;
mod flo;
mod manifest;
mod pnm;

pub use archive::{TensorArchive, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use manifest::{parse_manifest, read_manifest, render_manifest, write_manifest};
pub use pnm::{
    decode_pnm, encode_mask_pgm, encode_pnm, read_mask_pgm, read_pnm, write_mask_pgm, write_pnm,
};

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_context(e, path))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_context(e, path))
}

fn io_context(e: std::io::Error, path: &Path) -> CoreError {
    CoreError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

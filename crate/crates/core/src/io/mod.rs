//! On-disk formats: packed spike streams, images, trajectories, Gaussian
//! clouds, network weights and loss logs.

mod image;
mod spk;
mod text;
mod weights;

pub use image::{load_image, read_imgf, read_pgm, save_image, write_imgf, write_pgm};
pub use spk::{load_spk, read_spk, save_spk, write_spk};
pub use text::{
    load_cloud, load_trajectory, read_cloud, read_trajectory, save_cloud, save_loss_csv, save_trajectory, write_cloud,
    write_loss_csv, write_trajectory,
};
pub use weights::{load_sim, read_sim, save_sim, write_sim};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Runs `f` on a buffered writer for `path` and flushes it.
pub(crate) fn with_writer(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Maps plain I/O failures inside a reader to a format error.
pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8], format: &'static str, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(format, format!("file ends inside the {what}")),
        _ => Error::format(format, e.to_string()),
    })
}

pub(crate) fn read_u32(r: &mut impl Read, format: &'static str, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, format, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn check_magic(r: &mut impl Read, magic: &[u8; 4], format: &'static str) -> Result<()> {
    let mut m = [0u8; 4];
    read_exact(r, &mut m, format, "magic")?;
    if &m != magic {
        return Err(Error::format(
            format,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    Ok(())
}

/// Fails unless the reader is exhausted.
pub(crate) fn expect_eof(r: &mut impl Read, format: &'static str) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::format(format, "trailing bytes after payload")),
        Err(e) => Err(Error::format(format, e.to_string())),
    }
}

/// Attaches the file name to errors raised while parsing or writing it.
pub(crate) fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { path: p, source } if p.as_os_str().is_empty() => Error::io(path, source),
        Error::Format { format, reason } => Error::Format {
            format,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    }
}

pub(crate) fn write_all(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| Error::Io {
        path: Default::default(),
        source: e,
    })
}

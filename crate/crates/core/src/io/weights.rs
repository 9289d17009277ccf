use std::io::{Read, Write};
use std::path::Path;

use super::{check_magic, expect_eof, open, read_u32, with_path, with_writer, write_all};
use crate::error::{Error, Result};
use crate::sim_net::{SimNetConfig, SimNetParams};

const FORMAT: &str = "SIM1";

/// `SIM1`, little-endian u32 shift layers, fuse layers, hidden width,
/// window length and parameter count, then f32 values in layer order.
pub fn write_sim(w: &mut impl Write, params: &SimNetParams<f32>) -> Result<()> {
    let c = params.config;
    write_all(w, b"SIM1")?;
    let flat = params.to_flat();
    for v in [c.shift_layers, c.fuse_layers, c.hidden, c.window, flat.len()] {
        let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit the SIM1 header")))?;
        write_all(w, &v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(flat.len() * 4);
    for v in flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_all(w, &buf)
}

pub fn read_sim(r: &mut impl Read) -> Result<SimNetParams<f32>> {
    check_magic(r, b"SIM1", FORMAT)?;
    let mut header = [0usize; 5];
    for h in &mut header {
        *h = read_u32(r, FORMAT, "header")? as usize;
    }
    let config = SimNetConfig {
        shift_layers: header[0],
        fuse_layers: header[1],
        hidden: header[2],
        window: header[3],
    };
    config.validate().map_err(|e| Error::format(FORMAT, e.to_string()))?;
    let expected = crate::sim_net::param_count(&config)?;
    if header[4] != expected {
        return Err(Error::format(
            FORMAT,
            format!("{} parameters stored, configuration needs {expected}", header[4]),
        ));
    }
    let mut data = Vec::new();
    r.take(4 * expected as u64)
        .read_to_end(&mut data)
        .map_err(|e| Error::format(FORMAT, e.to_string()))?;
    if data.len() != 4 * expected {
        return Err(Error::format(FORMAT, "file ends inside the weights"));
    }
    expect_eof(r, FORMAT)?;
    let flat: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let params = SimNetParams::from_flat(config, &flat)?;
    if !params.is_finite() {
        return Err(Error::format(FORMAT, "non-finite weight"));
    }
    Ok(params)
}

pub fn save_sim(path: impl AsRef<Path>, params: &SimNetParams<f32>) -> Result<()> {
    let path = path.as_ref();
    with_writer(path, |w| write_sim(w, params)).map_err(|e| with_path(e, path))
}

pub fn load_sim(path: impl AsRef<Path>) -> Result<SimNetParams<f32>> {
    let path = path.as_ref();
    read_sim(&mut open(path)?).map_err(|e| with_path(e, path))
}

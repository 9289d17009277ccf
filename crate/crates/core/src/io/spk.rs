use std::io::{Read, Write};
use std::path::Path;

use super::{check_magic, expect_eof, open, read_u32, with_path, with_writer, write_all};
use crate::error::{Error, Result};
use crate::spike_sim::SpikeStream;

const MAGIC: &[u8; 4] = b"SPK1";
const FORMAT: &str = "SPK1";

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit the SPK1 header")))
}

/// Header (`SPK1`, then little-endian u32 width, height, readouts, τ in ns)
/// followed by the packed frames.
pub fn write_spk(w: &mut impl Write, stream: &SpikeStream) -> Result<()> {
    write_all(w, MAGIC)?;
    for v in [
        dim(stream.width(), "width")?,
        dim(stream.height(), "height")?,
        dim(stream.num_readouts(), "readout count")?,
        stream.tau_ns(),
    ] {
        write_all(w, &v.to_le_bytes())?;
    }
    write_all(w, stream.packed())
}

pub fn read_spk(r: &mut impl Read) -> Result<SpikeStream> {
    check_magic(r, MAGIC, FORMAT)?;
    let width = read_u32(r, FORMAT, "header")? as usize;
    let height = read_u32(r, FORMAT, "header")? as usize;
    let readouts = read_u32(r, FORMAT, "header")? as usize;
    let tau_ns = read_u32(r, FORMAT, "header")?;
    let len = (width * height)
        .div_ceil(8)
        .checked_mul(readouts)
        .ok_or_else(|| Error::format(FORMAT, "payload size overflows"))?;
    let mut data = Vec::new();
    r.take(len as u64)
        .read_to_end(&mut data)
        .map_err(|e| Error::format(FORMAT, e.to_string()))?;
    if data.len() != len {
        return Err(Error::format(
            FORMAT,
            format!("payload has {} bytes, header implies {len}", data.len()),
        ));
    }
    expect_eof(r, FORMAT)?;
    SpikeStream::from_packed(width, height, readouts, tau_ns, data)
}

pub fn save_spk(path: impl AsRef<Path>, stream: &SpikeStream) -> Result<()> {
    let path = path.as_ref();
    with_writer(path, |w| write_spk(w, stream)).map_err(|e| with_path(e, path))
}

pub fn load_spk(path: impl AsRef<Path>) -> Result<SpikeStream> {
    let path = path.as_ref();
    read_spk(&mut open(path)?).map_err(|e| with_path(e, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_packing() {
        let mut s = SpikeStream::zeros(1, 1, 8, 25_000);
        for (k, bit) in "10110001".chars().enumerate() {
            s.set(0, 0, k, bit == '1');
        }
        let mut buf = Vec::new();
        write_spk(&mut buf, &s).unwrap();
        assert_eq!(buf.len(), 4 + 16 + 8);
        // one pixel per frame: each frame's byte carries the bit in its MSB
        let payload = &buf[20..];
        let bits: String = payload.iter().map(|b| if b & 0x80 != 0 { '1' } else { '0' }).collect();
        assert_eq!(bits, "10110001");
        assert_eq!(read_spk(&mut buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn eight_pixel_frame_is_one_byte() {
        let mut s = SpikeStream::zeros(8, 1, 1, 25_000);
        for (x, bit) in "10110001".chars().enumerate() {
            s.set(x, 0, 0, bit == '1');
        }
        let mut buf = Vec::new();
        write_spk(&mut buf, &s).unwrap();
        assert_eq!(&buf[20..], &[0xB1]);
    }

    #[test]
    fn truncated_and_corrupt_files() {
        let s = SpikeStream::zeros(3, 3, 4, 25_000);
        let mut buf = Vec::new();
        write_spk(&mut buf, &s).unwrap();
        let err = read_spk(&mut &buf[..buf.len() - 1]).unwrap_err().to_string();
        assert!(err.contains("payload"), "{err}");
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_spk(&mut bad.as_slice()).unwrap_err().to_string().contains("magic"));
        let mut long = buf.clone();
        long.push(0);
        assert!(read_spk(&mut long.as_slice()).is_err());
        assert!(read_spk(&mut &buf[..10]).is_err());
    }
}

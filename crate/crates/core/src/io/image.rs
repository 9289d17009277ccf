use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::{check_magic, expect_eof, open, read_exact, read_u32, with_path, with_writer, write_all};
use crate::error::{Error, Result};
use crate::image::GrayImage;

const IMGF: &str = "IMGF";
const PGM: &str = "PGM";

/// `IMGF`, little-endian u32 width and height, then row-major f32 values.
/// Values are stored at single precision.
pub fn write_imgf(w: &mut impl Write, img: &GrayImage) -> Result<()> {
    if let Some(v) = img.as_slice().iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("cannot store non-finite pixel {v}")));
    }
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::invalid(format!("image side {v} too large")));
    write_all(w, b"IMGF")?;
    write_all(w, &dim(img.width())?.to_le_bytes())?;
    write_all(w, &dim(img.height())?.to_le_bytes())?;
    let mut buf = Vec::with_capacity(img.len() * 4);
    for &v in img.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_all(w, &buf)
}

pub fn read_imgf(r: &mut impl Read) -> Result<GrayImage> {
    check_magic(r, b"IMGF", IMGF)?;
    read_imgf_body(r)
}

fn read_imgf_body(r: &mut impl Read) -> Result<GrayImage> {
    let width = read_u32(r, IMGF, "header")? as usize;
    let height = read_u32(r, IMGF, "header")? as usize;
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(IMGF, "image size overflows"))?;
    let mut data = Vec::new();
    r.take(n as u64)
        .read_to_end(&mut data)
        .map_err(|e| Error::format(IMGF, e.to_string()))?;
    if data.len() != n {
        return Err(Error::format(
            IMGF,
            format!("payload has {} bytes, header implies {n}", data.len()),
        ));
    }
    expect_eof(r, IMGF)?;
    let values: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(IMGF, "non-finite pixel value"));
    }
    GrayImage::from_vec(width, height, values)
}

/// Binary 8-bit graymap; values are clamped to `[0, 1]` and quantized.
pub fn write_pgm(w: &mut impl Write, img: &GrayImage) -> Result<()> {
    write_all(w, format!("P5\n{} {}\n255\n", img.width(), img.height()).as_bytes())?;
    let bytes: Vec<u8> = img
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_all(w, &bytes)
}

fn pgm_token(r: &mut impl BufRead) -> Result<usize> {
    let mut tok = String::new();
    loop {
        let mut b = [0u8; 1];
        read_exact(r, &mut b, PGM, "header")?;
        let c = b[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)
                .map_err(|e| Error::format(PGM, e.to_string()))?;
        } else if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                break;
            }
        } else {
            tok.push(c);
        }
    }
    tok.parse()
        .map_err(|_| Error::format(PGM, format!("bad header field {tok:?}")))
}

/// Reads a binary graymap with maxval up to 255 (after the `P5` magic).
fn read_pgm_body(r: &mut impl BufRead) -> Result<GrayImage> {
    let width = pgm_token(r)?;
    let height = pgm_token(r)?;
    let maxval = pgm_token(r)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(PGM, format!("unsupported maxval {maxval}")));
    }
    let mut data = vec![0u8; width * height];
    read_exact(r, &mut data, PGM, "pixel data")?;
    let scale = maxval as f64;
    GrayImage::from_vec(width, height, data.iter().map(|&b| b as f64 / scale).collect())
}

pub fn read_pgm(r: &mut impl BufRead) -> Result<GrayImage> {
    let mut magic = [0u8; 2];
    read_exact(r, &mut magic, PGM, "magic")?;
    if &magic != b"P5" {
        return Err(Error::format(PGM, "expected binary graymap (P5)"));
    }
    read_pgm_body(r)
}

/// Reads either format, chosen by the file's magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let mut magic = [0u8; 2];
    read_exact(&mut r, &mut magic, IMGF, "magic").map_err(|e| with_path(e, path))?;
    let result = match &magic {
        b"P5" => read_pgm_body(&mut r),
        b"IM" => {
            let mut rest = [0u8; 2];
            read_exact(&mut r, &mut rest, IMGF, "magic")
                .and_then(|_| {
                    if &rest == b"GF" {
                        Ok(())
                    } else {
                        Err(Error::format(IMGF, "bad magic"))
                    }
                })
                .and_then(|_| read_imgf_body(&mut r))
        }
        _ => Err(Error::format(
            IMGF,
            "unrecognized image format (expected IMGF or P5 graymap)",
        )),
    };
    result.map_err(|e| with_path(e, path))
}

/// Writes a graymap when the extension is `.pgm`, float data otherwise.
pub fn save_image(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    let pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    with_writer(path, |w| if pgm { write_pgm(w, img) } else { write_imgf(w, img) }).map_err(|e| with_path(e, path))
}

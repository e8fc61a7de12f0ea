//! Image and tensor files.
//!
//! * Binary PGM (`P5`), 8- or 16-bit, read into `[0, 1]`.
//! * `APST`: raw `f64` tensors. Layout: magic `APST`, version (u32), rank
//!   (u32), one u64 per extent, then the row-major payload; all little-endian.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::read_f64s;
use crate::tensor::Tensor;

const TENSOR_MAGIC: &[u8; 4] = b"APST";
const TENSOR_VERSION: u32 = 1;

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(truncated)?;
    if &head[..4] != TENSOR_MAGIC {
        return Err(Error::format("not an APST tensor"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(Error::format(format!("unsupported APST version {version}")));
    }
    let rank = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if !(2..=3).contains(&rank) {
        return Err(Error::format(format!("unsupported tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut len: usize = 1;
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(truncated)?;
        let d = usize::try_from(u64::from_le_bytes(b))
            .map_err(|_| Error::format("extent too large"))?;
        len = len
            .checked_mul(d)
            .ok_or_else(|| Error::format("tensor size overflows"))?;
        shape.push(d);
    }
    let data = read_f64s(&mut r, len)?;
    Tensor::new(shape, data).map_err(|e| Error::format(e.to_string()))
}

fn truncated(e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("truncated file"),
        _ => Error::Io(e),
    }
}

/// Decoded PGM with the sample depth it was stored at.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub image: Tensor,
    pub maxval: u16,
}

fn header_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = String::new();
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            return if token.is_empty() {
                Err(Error::format("truncated PGM header"))
            } else {
                Ok(token)
            };
        }
        match byte[0] {
            b'#' if token.is_empty() => {
                let mut comment = Vec::new();
                r.read_until(b'\n', &mut comment)?;
            }
            b if b.is_ascii_whitespace() => {
                if !token.is_empty() {
                    return Ok(token);
                }
            }
            b => token.push(b as char),
        }
    }
}

fn header_number<R: BufRead>(r: &mut R, what: &str) -> Result<usize> {
    let tok = header_token(r)?;
    tok.parse()
        .map_err(|_| Error::format(format!("bad PGM {what} `{tok}`")))
}

/// Reads a binary (`P5`) PGM. Samples are divided by `maxval`.
pub fn read_pgm<R: Read>(r: R) -> Result<Pgm> {
    let mut r = BufReader::new(r);
    if header_token(&mut r)? != "P5" {
        return Err(Error::format("not a binary PGM (P5)"));
    }
    let width = header_number(&mut r, "width")?;
    let height = header_number(&mut r, "height")?;
    let maxval = header_number(&mut r, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("PGM has zero extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("PGM maxval {maxval} out of range")));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("PGM too large"))?;
    let mut raw = vec![0u8; n * bytes_per];
    r.read_exact(&mut raw).map_err(truncated)?;
    let scale = maxval as f64;
    let data = if bytes_per == 1 {
        raw.iter().map(|&b| b as f64 / scale).collect()
    } else {
        raw.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Ok(Pgm {
        image: Tensor::image(height, width, data)?,
        maxval: maxval as u16,
    })
}

/// Writes a single-channel image as binary PGM, quantizing `[0, 1]` to
/// `0..=maxval`.
pub fn write_pgm<W: Write>(mut w: W, t: &Tensor, maxval: u16) -> Result<()> {
    if t.channels() != 1 || t.spatial_rank() != 2 {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "PGM needs a single-channel image".into(),
        });
    }
    if maxval == 0 {
        return Err(Error::format("PGM maxval must be positive"));
    }
    let (_, h, wd) = t.dims3();
    write!(w, "P5\n{wd} {h}\n{maxval}\n")?;
    let m = maxval as f64;
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * m).round() as u16;
    let mut bytes = Vec::with_capacity(t.len() * 2);
    for &v in t.data() {
        let q = quantize(v);
        if maxval < 256 {
            bytes.push(q as u8);
        } else {
            bytes.extend_from_slice(&q.to_be_bytes());
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Loads a PGM or `APST` file, chosen by its leading bytes.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        read_tensor(bytes.as_slice())
    } else if bytes.starts_with(b"P5") {
        Ok(read_pgm(bytes.as_slice())?.image)
    } else {
        Err(Error::format(format!(
            "{}: unrecognized image format",
            path.display()
        )))
    }
}

/// Saves as 16-bit PGM when the extension is `.pgm`, otherwise as `APST`.
pub fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => write_pgm(&mut buf, t, u16::MAX)?,
        _ => write_tensor(&mut buf, t)?,
    }
    fs::write(path, buf)?;
    Ok(())
}

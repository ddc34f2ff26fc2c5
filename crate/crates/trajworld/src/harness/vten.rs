//! VTEN binary tensor container.
//!
//! Layout: magic `VTEN`, version byte (1), dtype byte (0 = f32 LE,
//! 1 = f64 LE), rank byte, rank x u32 LE dims, row-major payload. Videos and
//! latents on disk always use dtype 0; dtype 1 exists so model parameters
//! reload bit-exactly.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"VTEN";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum VtenData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

pub fn write_vten_f32(mut w: impl Write, dims: &[usize], data: &[f32]) -> Result<()> {
    write_header(&mut w, 0, dims, data.len())?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_vten_f64(mut w: impl Write, dims: &[usize], data: &[f64]) -> Result<()> {
    write_header(&mut w, 1, dims, data.len())?;
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn write_header(w: &mut impl Write, dtype: u8, dims: &[usize], len: usize) -> Result<()> {
    let expect: usize = dims.iter().product();
    if expect != len {
        return Err(Error::invalid(format!(
            "vten dims {dims:?} expect {expect} values, got {len}"
        )));
    }
    if dims.len() > u8::MAX as usize {
        return Err(Error::invalid("vten rank too large"));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dtype, dims.len() as u8])?;
    for &d in dims {
        let d: u32 = d
            .try_into()
            .map_err(|_| Error::invalid(format!("vten dim {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_vten(mut r: impl Read) -> Result<(Vec<usize>, VtenData)> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::format("bad VTEN magic"));
    }
    if head[4] != VERSION {
        return Err(Error::format(format!("unsupported VTEN version {}", head[4])));
    }
    let dtype = head[5];
    let rank = head[6] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        dims.push(u32::from_le_bytes(b) as usize);
    }
    let count: usize = dims.iter().product();
    let data = match dtype {
        0 => {
            let mut bytes = vec![0u8; count * 4];
            r.read_exact(&mut bytes)?;
            VtenData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        1 => {
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)?;
            VtenData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        d => return Err(Error::format(format!("unknown VTEN dtype {d}"))),
    };
    Ok((dims, data))
}

pub fn write_vten_f32_file(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_vten_f32(std::io::BufWriter::new(f), dims, data)
}

pub fn write_vten_f64_file(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_vten_f64(std::io::BufWriter::new(f), dims, data)
}

pub fn read_vten_file(path: &Path) -> Result<(Vec<usize>, VtenData)> {
    let f = std::fs::File::open(path)?;
    read_vten(std::io::BufReader::new(f))
}

pub fn read_vten_f32_file(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    match read_vten_file(path)? {
        (dims, VtenData::F32(v)) => Ok((dims, v)),
        _ => Err(Error::format(format!(
            "{} is not an f32 VTEN file",
            path.display()
        ))),
    }
}

pub fn read_vten_f64_file(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    match read_vten_file(path)? {
        (dims, VtenData::F64(v)) => Ok((dims, v)),
        _ => Err(Error::format(format!(
            "{} is not an f64 VTEN file",
            path.display()
        ))),
    }
}

// Video convenience wrappers.

use crate::rasterizer::{VideoShape, VideoTensor};

pub fn write_video(path: &Path, video: &VideoTensor) -> Result<()> {
    let s = video.shape();
    write_vten_f32_file(path, &[s.t, s.h, s.w, s.c], video.data())
}

pub fn read_video(path: &Path, frame_rate: f64) -> Result<VideoTensor> {
    let (dims, data) = read_vten_f32_file(path)?;
    if dims.len() != 4 {
        return Err(Error::format(format!(
            "video tensor must be rank 4, got {:?}",
            dims
        )));
    }
    VideoTensor::new(
        VideoShape {
            t: dims[0],
            h: dims[1],
            w: dims[2],
            c: dims[3],
            frame_rate,
        },
        data,
    )
}

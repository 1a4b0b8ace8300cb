//! The `HVDP` video file: magic, version, `F, C, H, W` as `u32`, then
//! `F·C·H·W` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use super::binary::{put_f32s, put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VIDEO_MAGIC: &[u8; 4] = b"HVDP";
pub const VIDEO_VERSION: u32 = 1;

pub fn encode_video(video: &Tensor<f32>) -> Result<Vec<u8>> {
    if video.rank() != 4 {
        return Err(Error::invalid(format!(
            "a video must be [F, C, H, W], got {:?}",
            video.shape()
        )));
    }
    let mut out = Vec::with_capacity(24 + video.numel() * 4);
    out.extend_from_slice(VIDEO_MAGIC);
    put_u32(&mut out, VIDEO_VERSION);
    for &d in video.shape() {
        put_u32(&mut out, u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?);
    }
    put_f32s(&mut out, video.data());
    Ok(out)
}

pub fn decode_video(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != VIDEO_MAGIC {
        return Err("bad magic: expected \"HVDP\"".into());
    }
    let version = r.u32()?;
    if version != VIDEO_VERSION {
        return Err(format!("unsupported version {version}, expected {VIDEO_VERSION}"));
    }
    let mut shape = Vec::with_capacity(4);
    for name in ["F", "C", "H", "W"] {
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(format!("non-positive dimension {name}=0"));
        }
        shape.push(d);
    }
    let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("dimensions overflow")?;
    let data = r.f32s(n)?;
    if !r.finished() {
        return Err("trailing bytes after tensor data".into());
    }
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

pub fn write_video(path: &Path, video: &Tensor<f32>) -> Result<()> {
    let bytes = encode_video(video)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a video; with `expect` set, the geometry must match it.
pub fn read_video(path: &Path, expect: Option<&[usize]>) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let v = decode_video(&bytes).map_err(|m| Error::format(path, m))?;
    if let Some(s) = expect {
        if v.shape() != s {
            return Err(Error::format(
                path,
                format!("geometry {:?} does not match expected {:?}", v.shape(), s),
            ));
        }
    }
    Ok(v)
}

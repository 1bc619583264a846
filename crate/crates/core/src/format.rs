//! Bit-exact little-endian codecs for the two on-disk formats.
//!
//! `AFTV` carries a volume: magic, version, a dtype tag (0 = f32
//! intensities, 1 = u8 labels), extents C/H/W/D, spacing (depth, height,
//! width in mm), then the payload row-major in `(c, h, w, d)` order with
//! depth innermost. `AFTC` carries named f32 tensors (parameters, optimizer
//! moments, counters): magic, version, entry count, then per entry a
//! length-prefixed UTF-8 name, rank, extents, and the data.
//!
//! Everything here works on byte slices; file IO lives in the companion
//! crate.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::FormatError;
use crate::volume::{LabelVolume, Volume};

pub const VOLUME_MAGIC: [u8; 4] = *b"AFTV";
pub const VOLUME_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AFTC";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;
/// Sanity bound on tensor rank in checkpoints.
const MAX_RANK: u8 = 8;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    fn version(&mut self, expected: u32) -> Result<(), FormatError> {
        let found = self.u32()?;
        if found != expected {
            return Err(FormatError::BadVersion { expected, found });
        }
        Ok(())
    }

    /// Rejects trailing bytes after a complete parse.
    fn finish(self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::LengthMismatch {
                header: self.pos,
                payload: self.buf.len(),
            });
        }
        Ok(())
    }
}

fn volume_header(out: &mut Vec<u8>, dtype: u8, c: usize, h: usize, w: usize, d: usize, spacing: [f32; 3]) {
    out.extend_from_slice(&VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    out.push(dtype);
    for extent in [c, h, w, d] {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(33 + 4 * v.voxels.len());
    volume_header(&mut out, DTYPE_F32, v.c, v.h, v.w, v.d, v.spacing);
    for &x in &v.voxels {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn encode_labels(l: &LabelVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(33 + l.voxels.len());
    volume_header(&mut out, DTYPE_U8, 1, l.h, l.w, l.d, l.spacing);
    out.extend_from_slice(&l.voxels);
    out
}

/// Either kind of volume file.
#[derive(Clone, Debug, PartialEq)]
pub enum VolumePayload {
    Intensity(Volume),
    Labels(LabelVolume),
}

struct VolumeHeader {
    dtype: u8,
    c: usize,
    h: usize,
    w: usize,
    d: usize,
    spacing: [f32; 3],
}

fn read_volume_header(r: &mut Reader<'_>) -> Result<VolumeHeader, FormatError> {
    r.magic(VOLUME_MAGIC)?;
    r.version(VOLUME_VERSION)?;
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 && dtype != DTYPE_U8 {
        return Err(FormatError::BadDtype(dtype));
    }
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let d = r.u32()? as usize;
    if c == 0 || h == 0 || w == 0 || d == 0 {
        return Err(FormatError::BadValue(alloc::format!(
            "zero extent in header {c}x{h}x{w}x{d}"
        )));
    }
    let spacing = [r.f32()?, r.f32()?, r.f32()?];
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(FormatError::BadValue(alloc::format!(
            "non-positive spacing {spacing:?}"
        )));
    }
    if dtype == DTYPE_U8 && c != 1 {
        return Err(FormatError::BadValue(alloc::format!(
            "label volumes must have one channel, got {c}"
        )));
    }
    Ok(VolumeHeader {
        dtype,
        c,
        h,
        w,
        d,
        spacing,
    })
}

pub fn decode_payload(buf: &[u8]) -> Result<VolumePayload, FormatError> {
    let mut r = Reader::new(buf);
    let hd = read_volume_header(&mut r)?;
    let n = hd
        .c
        .checked_mul(hd.h)
        .and_then(|x| x.checked_mul(hd.w))
        .and_then(|x| x.checked_mul(hd.d))
        .ok_or(FormatError::BadValue(alloc::format!(
            "header extents overflow: {}x{}x{}x{}",
            hd.c,
            hd.h,
            hd.w,
            hd.d
        )))?;
    let payload = match hd.dtype {
        DTYPE_F32 => {
            let bytes = r.take(4 * n)?;
            let voxels: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let v = Volume::new(hd.c, hd.h, hd.w, hd.d, hd.spacing, voxels)
                .map_err(|e| FormatError::BadValue(e.0))?;
            VolumePayload::Intensity(v)
        }
        _ => {
            let voxels = r.take(n)?.to_vec();
            let l = LabelVolume::new(hd.h, hd.w, hd.d, hd.spacing, voxels)
                .map_err(|e| FormatError::BadValue(e.0))?;
            VolumePayload::Labels(l)
        }
    };
    r.finish()?;
    Ok(payload)
}

pub fn decode_volume(buf: &[u8]) -> Result<Volume, FormatError> {
    match decode_payload(buf)? {
        VolumePayload::Intensity(v) => Ok(v),
        VolumePayload::Labels(_) => Err(FormatError::BadValue(
            "expected an intensity volume, found labels".into(),
        )),
    }
}

pub fn decode_labels(buf: &[u8]) -> Result<LabelVolume, FormatError> {
    match decode_payload(buf)? {
        VolumePayload::Labels(l) => Ok(l),
        VolumePayload::Intensity(_) => Err(FormatError::BadValue(
            "expected labels, found an intensity volume".into(),
        )),
    }
}

/// One named tensor inside a checkpoint. Values are stored as f32 on disk;
/// they come back as exact f64 equivalents.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl CheckpointEntry {
    pub fn new(name: &str, shape: &[usize], data: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: data.to_vec(),
        }
    }
}

pub fn encode_checkpoint(entries: &[CheckpointEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        assert!(name.len() <= u16::MAX as usize, "parameter name too long");
        assert!(e.shape.len() <= MAX_RANK as usize, "tensor rank too large");
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.shape.len() as u8);
        for &ext in &e.shape {
            out.extend_from_slice(&(ext as u32).to_le_bytes());
        }
        for &x in &e.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Vec<CheckpointEntry>, FormatError> {
    let mut r = Reader::new(buf);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| FormatError::BadName)?
            .into();
        let rank = r.u8()?;
        if rank > MAX_RANK {
            return Err(FormatError::BadValue(alloc::format!(
                "tensor rank {rank} exceeds limit {MAX_RANK}"
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut n = 1usize;
        for _ in 0..rank {
            let ext = r.u32()? as usize;
            n = n
                .checked_mul(ext)
                .ok_or(FormatError::BadValue("tensor extent overflow".into()))?;
            shape.push(ext);
        }
        let bytes = r.take(4 * n)?;
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        entries.push(CheckpointEntry { name, shape, data });
    }
    r.finish()?;
    Ok(entries)
}

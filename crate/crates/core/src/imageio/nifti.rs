//! Single-file NIfTI-1 (`n+1`): 348-byte little-endian header, 4 zero
//! extension bytes, then raw voxels at offset 352.

use std::path::Path;

use serde::Serialize;

use super::volume::{Modality, VolumeImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NiftiDatatype {
    UInt8,
    Int16,
    Float32,
}

impl NiftiDatatype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::UInt8 => 2,
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Float32 => 16,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            NiftiDatatype::UInt8 => 8,
            NiftiDatatype::Int16 => 16,
            NiftiDatatype::Float32 => 32,
        }
    }

    fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDatatype::UInt8),
            4 => Ok(NiftiDatatype::Int16),
            16 => Ok(NiftiDatatype::Float32),
            other => Err(Error::format("datatype", format!("unsupported NIfTI datatype {other}"))),
        }
    }
}

/// The subset of header fields this reader and writer use. Everything else
/// in the 348 bytes is written as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub magic: [u8; 4],
}

impl NiftiHeader {
    pub fn for_volume(extents: [usize; 3], spacing: [f64; 3], datatype: NiftiDatatype) -> Result<Self> {
        let [d, h, w] = extents;
        let mut dim = [1i16; 8];
        dim[0] = 3;
        for (slot, &n) in dim[1..4].iter_mut().zip(&[w, h, d]) {
            *slot = i16::try_from(n).map_err(|_| Error::format("dim", format!("extent {n} exceeds i16")))?;
        }
        let mut pixdim = [1f32; 8];
        pixdim[1] = spacing[2] as f32;
        pixdim[2] = spacing[1] as f32;
        pixdim[3] = spacing[0] as f32;
        Ok(NiftiHeader {
            sizeof_hdr: HEADER_SIZE as i32,
            dim,
            datatype: datatype.code(),
            bitpix: datatype.bitpix(),
            pixdim,
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            // millimetres
            xyzt_units: 2,
            magic: *MAGIC,
        })
    }

    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        b[0..4].copy_from_slice(&self.sizeof_hdr.to_le_bytes());
        b[38] = b'r';
        for (i, v) in self.dim.iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&v.to_le_bytes());
        }
        b[70..72].copy_from_slice(&self.datatype.to_le_bytes());
        b[72..74].copy_from_slice(&self.bitpix.to_le_bytes());
        for (i, v) in self.pixdim.iter().enumerate() {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        b[108..112].copy_from_slice(&self.vox_offset.to_le_bytes());
        b[112..116].copy_from_slice(&self.scl_slope.to_le_bytes());
        b[116..120].copy_from_slice(&self.scl_inter.to_le_bytes());
        b[123] = self.xyzt_units;
        b[344..348].copy_from_slice(&self.magic);
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_SIZE {
            return Err(Error::format("sizeof_hdr", format!("header truncated at {} bytes", b.len())));
        }
        let i16_at = |o: usize| i16::from_le_bytes([b[o], b[o + 1]]);
        let f32_at = |o: usize| f32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
        let sizeof_hdr = i32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if sizeof_hdr != HEADER_SIZE as i32 {
            let msg = if i32::from_be_bytes([b[0], b[1], b[2], b[3]]) == HEADER_SIZE as i32 {
                "big-endian files are not supported".to_string()
            } else {
                format!("expected 348, found {sizeof_hdr}")
            };
            return Err(Error::format("sizeof_hdr", msg));
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&b[344..348]);
        if &magic != MAGIC {
            return Err(Error::format(
                "magic",
                format!("expected \"n+1\", found {:?}", String::from_utf8_lossy(&magic[..3])),
            ));
        }
        let mut dim = [0i16; 8];
        for (i, v) in dim.iter_mut().enumerate() {
            *v = i16_at(40 + 2 * i);
        }
        let mut pixdim = [0f32; 8];
        for (i, v) in pixdim.iter_mut().enumerate() {
            *v = f32_at(76 + 4 * i);
        }
        Ok(NiftiHeader {
            sizeof_hdr,
            dim,
            datatype: i16_at(70),
            bitpix: i16_at(72),
            pixdim,
            vox_offset: f32_at(108),
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            xyzt_units: b[123],
            magic,
        })
    }

    /// `[D, H, W]`; higher dimensions must be singleton.
    pub fn extents(&self) -> Result<[usize; 3]> {
        let n = self.dim[0];
        if !(3..=7).contains(&n) {
            return Err(Error::format("dim", format!("expected a 3-D image, dim[0] = {n}")));
        }
        if self.dim[4..=(n as usize)].iter().any(|&e| e != 1) {
            return Err(Error::format("dim", "only 3-D images are supported"));
        }
        if self.dim[1..4].iter().any(|&e| e < 1) {
            return Err(Error::format("dim", format!("non-positive extent in {:?}", &self.dim[1..4])));
        }
        Ok([self.dim[3] as usize, self.dim[2] as usize, self.dim[1] as usize])
    }

    /// `[D, H, W]` spacing; non-positive pixdim entries read as 1.
    pub fn spacing(&self) -> [f64; 3] {
        let s = |v: f32| if v > 0.0 { v as f64 } else { 1.0 };
        [s(self.pixdim[3]), s(self.pixdim[2]), s(self.pixdim[1])]
    }
}

/// Encodes a single-channel volume. Integer types round and saturate.
pub fn write_nifti_bytes(v: &VolumeImage, datatype: NiftiDatatype) -> Result<Vec<u8>> {
    if v.channels() != 1 {
        return Err(Error::mismatch(&[1], &[v.channels()]));
    }
    let header = NiftiHeader::for_volume(v.extents(), v.spacing(), datatype)?;
    let data = v.data().data();
    let mut out = Vec::with_capacity(VOX_OFFSET + data.len() * datatype.bitpix() as usize / 8);
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(&[0u8; VOX_OFFSET - HEADER_SIZE]);
    match datatype {
        NiftiDatatype::UInt8 => out.extend(data.iter().map(|&x| x.round().clamp(0.0, 255.0) as u8)),
        NiftiDatatype::Int16 => {
            for &x in data {
                let s = x.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        NiftiDatatype::Float32 => {
            for &x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Decodes a single-file NIfTI-1 volume. Intensity scaling is applied when
/// `scl_slope` is nonzero.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<VolumeImage> {
    let header = NiftiHeader::from_bytes(bytes)?;
    let datatype = NiftiDatatype::from_code(header.datatype)?;
    if header.bitpix != datatype.bitpix() {
        return Err(Error::format(
            "bitpix",
            format!("bitpix {} inconsistent with datatype {}", header.bitpix, header.datatype),
        ));
    }
    let [d, h, w] = header.extents()?;
    let offset = header.vox_offset as usize;
    if offset < VOX_OFFSET {
        return Err(Error::format("vox_offset", format!("{} precedes end of header", header.vox_offset)));
    }
    let count = d * h * w;
    let size = datatype.bitpix() as usize / 8;
    let payload = bytes.get(offset..).unwrap_or(&[]);
    if payload.len() < count * size {
        return Err(Error::format(
            "vox_offset",
            format!("truncated payload: need {} bytes, found {}", count * size, payload.len()),
        ));
    }
    let payload = &payload[..count * size];
    let mut values: Vec<f32> = match datatype {
        NiftiDatatype::UInt8 => payload.iter().map(|&b| b as f32).collect(),
        NiftiDatatype::Int16 => {
            payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32).collect()
        }
        NiftiDatatype::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    if header.scl_slope != 0.0 && (header.scl_slope != 1.0 || header.scl_inter != 0.0) {
        for v in &mut values {
            *v = *v * header.scl_slope + header.scl_inter;
        }
    }
    let data = Tensor::from_vec(&[1, d, h, w], values)?;
    VolumeImage::new(data, header.spacing(), vec![Modality::Other])
}

pub fn write_nifti(v: &VolumeImage, datatype: NiftiDatatype, path: &Path) -> Result<()> {
    std::fs::write(path, write_nifti_bytes(v, datatype)?)?;
    Ok(())
}

pub fn read_nifti(path: &Path) -> Result<VolumeImage> {
    read_nifti_bytes(&std::fs::read(path)?)
}

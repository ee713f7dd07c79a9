//! MetaImage `.mha`: an ASCII `Key = Value` header whose last line is
//! `ElementDataFile = LOCAL`, immediately followed by raw voxels.
//!
//! `DimSize` and `ElementSpacing` list the fastest-varying axis first
//! (x y z), i.e. width, height, depth in tensor terms.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::volume::{Modality, VolumeImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ElementType {
    #[serde(rename = "MET_UCHAR")]
    UChar,
    #[serde(rename = "MET_SHORT")]
    Short,
    #[serde(rename = "MET_FLOAT")]
    Float,
}

impl ElementType {
    pub fn tag(self) -> &'static str {
        match self {
            ElementType::UChar => "MET_UCHAR",
            ElementType::Short => "MET_SHORT",
            ElementType::Float => "MET_FLOAT",
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::UChar => 1,
            ElementType::Short => 2,
            ElementType::Float => 4,
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "MET_UCHAR" => Ok(ElementType::UChar),
            "MET_SHORT" => Ok(ElementType::Short),
            "MET_FLOAT" => Ok(ElementType::Float),
            other => Err(Error::format("ElementType", format!("unsupported element type '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaImageHeader {
    pub ndims: usize,
    /// x y z order.
    pub dim_size: [usize; 3],
    pub element_type: ElementType,
    /// x y z order.
    pub element_spacing: [f64; 3],
    pub data_file: String,
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, n: usize) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| Error::format(key, format!("cannot parse '{t}'"))))
        .collect::<Result<_>>()?;
    if items.len() != n {
        return Err(Error::format(key, format!("expected {n} values, found {}", items.len())));
    }
    Ok(items)
}

fn is_true(value: &str) -> bool {
    value.eq_ignore_ascii_case("true") || value == "1"
}

/// Parses header and payload.
pub(crate) fn parse(bytes: &[u8]) -> Result<(MetaImageHeader, VolumeImage)> {
    let mut ndims = None;
    let mut dim_size = None;
    let mut element_type = None;
    let mut spacing = [1.0f64; 3];
    let mut data_file = None;
    let mut offset = 0usize;

    while data_file.is_none() {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("ElementDataFile", "header ended before ElementDataFile"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::format("header", "non-ASCII header line"))?
            .trim_end_matches('\r');
        offset += end + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::format(line.trim(), "missing '='"))?;
        match key {
            "ObjectType" if value != "Image" => {
                return Err(Error::format(key, format!("unsupported object type '{value}'")))
            }
            "NDims" => {
                let n: usize = value.parse().map_err(|_| Error::format(key, "not an integer"))?;
                if n != 3 {
                    return Err(Error::format(key, format!("only 3-D images are supported, got {n}")));
                }
                ndims = Some(n);
            }
            "DimSize" => {
                let v = parse_list::<usize>(key, value, 3)?;
                if v.contains(&0) {
                    return Err(Error::format(key, "zero extent"));
                }
                dim_size = Some([v[0], v[1], v[2]]);
            }
            "ElementSpacing" | "ElementSize" => {
                let v = parse_list::<f64>(key, value, 3)?;
                if v.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::format(key, "spacing must be positive"));
                }
                spacing = [v[0], v[1], v[2]];
            }
            "ElementType" => element_type = Some(ElementType::from_tag(value)?),
            "CompressedData" if is_true(value) => {
                return Err(Error::format(key, "compressed payloads are not supported"))
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" if is_true(value) => {
                return Err(Error::format(key, "big-endian payloads are not supported"))
            }
            "ElementNumberOfChannels" if value != "1" => {
                return Err(Error::format(key, "multi-channel elements are not supported"))
            }
            "ElementDataFile" => {
                if value != "LOCAL" {
                    return Err(Error::format(key, format!("detached data file '{value}' not supported")));
                }
                data_file = Some(value.to_string());
            }
            _ => {}
        }
    }

    let ndims = ndims.ok_or_else(|| Error::format("NDims", "missing"))?;
    let dim_size = dim_size.ok_or_else(|| Error::format("DimSize", "missing"))?;
    let element_type = element_type.ok_or_else(|| Error::format("ElementType", "missing"))?;
    let header = MetaImageHeader {
        ndims,
        dim_size,
        element_type,
        element_spacing: spacing,
        data_file: data_file.expect("loop exits only once set"),
    };

    let [w, h, d] = dim_size;
    let count = w * h * d;
    let size = element_type.size();
    let payload = &bytes[offset..];
    if payload.len() < count * size {
        return Err(Error::format(
            "ElementDataFile",
            format!("truncated payload: need {} bytes, found {}", count * size, payload.len()),
        ));
    }
    let payload = &payload[..count * size];
    let values: Vec<f32> = match element_type {
        ElementType::UChar => payload.iter().map(|&b| b as f32).collect(),
        ElementType::Short => {
            payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32).collect()
        }
        ElementType::Float => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    let data = Tensor::from_vec(&[1, d, h, w], values)?;
    let volume = VolumeImage::new(data, [spacing[2], spacing[1], spacing[0]], vec![Modality::Other])?;
    Ok((header, volume))
}

/// Decodes an `.mha` byte stream into a single-channel volume.
pub fn read_mha(bytes: &[u8]) -> Result<VolumeImage> {
    parse(bytes).map(|(_, v)| v)
}

pub fn read_mha_file(path: &Path) -> Result<VolumeImage> {
    read_mha(&std::fs::read(path)?)
}

/// Encodes a single-channel volume. Integer element types round and
/// saturate.
pub fn write_mha(v: &VolumeImage, element_type: ElementType) -> Result<Vec<u8>> {
    if v.channels() != 1 {
        return Err(Error::mismatch(&[1], &[v.channels()]));
    }
    let [d, h, w] = v.extents();
    let [sd, sh, sw] = v.spacing();
    let mut header = String::new();
    writeln!(header, "ObjectType = Image").unwrap();
    writeln!(header, "NDims = 3").unwrap();
    writeln!(header, "DimSize = {w} {h} {d}").unwrap();
    writeln!(header, "ElementSpacing = {sw} {sh} {sd}").unwrap();
    writeln!(header, "ElementType = {}", element_type.tag()).unwrap();
    writeln!(header, "ElementDataFile = LOCAL").unwrap();

    let data = v.data().data();
    let mut out = header.into_bytes();
    out.reserve(data.len() * element_type.size());
    match element_type {
        ElementType::UChar => out.extend(data.iter().map(|&x| x.round().clamp(0.0, 255.0) as u8)),
        ElementType::Short => {
            for &x in data {
                let s = x.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        ElementType::Float => {
            for &x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_mha_file(v: &VolumeImage, element_type: ElementType, path: &Path) -> Result<()> {
    std::fs::write(path, write_mha(v, element_type)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(element_type: &str, payload: &[u8]) -> Vec<u8> {
        let mut bytes = format!(
            "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementType = {element_type}\nElementDataFile = LOCAL\n"
        )
        .into_bytes();
        bytes.extend_from_slice(payload);
        bytes
    }

    #[test]
    fn parses_hand_built_float_fixture() {
        let values: Vec<f32> = (0..8).map(|i| i as f32 * 0.5).collect();
        let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(payload.len(), 32);
        let v = read_mha(&fixture("MET_FLOAT", &payload)).unwrap();
        assert_eq!(v.data().dims(), &[1, 2, 2, 2]);
        assert_eq!(v.data().data(), values.as_slice());
        assert_eq!(v.spacing(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let err = read_mha(&fixture("MET_FLOAT", &[0u8; 16])).unwrap_err();
        match err {
            Error::Format { key, message } => {
                assert_eq!(key, "ElementDataFile");
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_element_type_names_the_key() {
        let err = read_mha(&fixture("MET_DOUBLE", &[0u8; 64])).unwrap_err();
        assert!(matches!(err, Error::Format { ref key, .. } if key == "ElementType"));
    }

    #[test]
    fn rejects_non_3d() {
        let bytes = b"NDims = 2\nDimSize = 2 2\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n\0\0\0\0";
        let err = read_mha(bytes).unwrap_err();
        assert!(matches!(err, Error::Format { ref key, .. } if key == "NDims"));
    }

    #[test]
    fn rejects_detached_and_big_endian_data() {
        let detached = b"NDims = 3\nDimSize = 1 1 1\nElementType = MET_UCHAR\nElementDataFile = img.raw\n";
        assert!(read_mha(detached).is_err());
        let msb = b"NDims = 3\nBinaryDataByteOrderMSB = True\nDimSize = 1 1 1\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n\0";
        let err = read_mha(msb).unwrap_err();
        assert!(matches!(err, Error::Format { ref key, .. } if key == "BinaryDataByteOrderMSB"));
    }

    #[test]
    fn axis_order_and_spacing_follow_metaimage_convention() {
        // DimSize 3 2 1 = width 3, height 2, depth 1.
        let mut bytes = b"NDims = 3\nDimSize = 3 2 1\nElementSpacing = 0.5 0.75 2\nElementType = MET_UCHAR\nElementDataFile = LOCAL\r\n".to_vec();
        bytes.extend(0u8..6);
        let v = read_mha(&bytes).unwrap();
        assert_eq!(v.data().dims(), &[1, 1, 2, 3]);
        assert_eq!(v.spacing(), [2.0, 0.75, 0.5]);
        assert_eq!(v.data().data()[4], 4.0);
    }

    #[test]
    fn short_values_survive_as_exact_floats() {
        let shorts: [i16; 8] = [-32768, -1, 0, 1, 1000, 4095, 12345, 32767];
        let payload: Vec<u8> = shorts.iter().flat_map(|v| v.to_le_bytes()).collect();
        let v = read_mha(&fixture("MET_SHORT", &payload)).unwrap();
        let expected: Vec<f32> = shorts.iter().map(|&s| s as f32).collect();
        assert_eq!(v.data().data(), expected.as_slice());
    }

    #[test]
    fn canonical_files_round_trip_byte_for_byte() {
        for ty in [ElementType::UChar, ElementType::Short, ElementType::Float] {
            let data = Tensor::from_vec(&[1, 2, 3, 4], (0..24).map(|i| (i * 7 % 23) as f32).collect()).unwrap();
            let v = VolumeImage::new(data, [1.5, 0.9375, 1.0], vec![Modality::Other]).unwrap();
            let bytes = write_mha(&v, ty).unwrap();
            let back = read_mha(&bytes).unwrap();
            assert_eq!(back, v);
            assert_eq!(write_mha(&back, ty).unwrap(), bytes);
        }
    }
}

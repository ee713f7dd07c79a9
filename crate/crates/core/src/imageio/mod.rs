//! Volume types plus MetaImage (`.mha`) and NIfTI-1 (`.nii`) I/O.
//!
//! Only uncompressed single-file layouts with little-endian voxels are
//! handled. NIfTI orientation fields (qform/sform, quaternions, srow) are
//! written as zeros and ignored on read: spacing is the only geometry kept.

mod case;
mod metaimage;
mod nifti;
mod volume;

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub use case::{read_case, read_case_image, read_dataset, write_case, write_case_image, Case};
pub use metaimage::{read_mha, read_mha_file, write_mha, write_mha_file, ElementType, MetaImageHeader};
pub use nifti::{read_nifti, read_nifti_bytes, write_nifti, write_nifti_bytes, NiftiDatatype, NiftiHeader};
pub use volume::{LabelMap, Modality, VolumeImage};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConversionSummary {
    pub voxels: usize,
    pub source_type: ElementType,
    pub written_type: NiftiDatatype,
    pub spacing: [f64; 3],
}

/// Converts a MetaImage file to single-file NIfTI. `MET_UCHAR` sources stay
/// unsigned 8-bit; everything else is written as 32-bit float.
pub fn convert_mha_to_nifti(input: &Path, output: &Path) -> Result<ConversionSummary> {
    let bytes = std::fs::read(input)?;
    let (header, volume) = metaimage::parse(&bytes)?;
    let written_type = match header.element_type {
        ElementType::UChar => NiftiDatatype::UInt8,
        ElementType::Short | ElementType::Float => NiftiDatatype::Float32,
    };
    write_nifti(&volume, written_type, output)?;
    Ok(ConversionSummary {
        voxels: volume.data().numel(),
        source_type: header.element_type,
        written_type,
        spacing: volume.spacing(),
    })
}

//! Case directories: `<root>/<case_id>/{t1,t1c,t2,flair,seg}.nii`.

use std::fs;
use std::path::Path;

use super::nifti::{read_nifti, write_nifti, NiftiDatatype};
use super::volume::{LabelMap, Modality, VolumeImage};
use crate::error::{Error, Result};

/// One labelled scan.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: String,
    pub image: VolumeImage,
    pub truth: LabelMap,
}

/// Writes one float file per modality into `dir`.
pub fn write_case_image(dir: &Path, image: &VolumeImage) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (c, m) in image.modalities().iter().enumerate() {
        let path = dir.join(format!("{}.nii", m.file_stem()));
        write_nifti(&image.channel(c)?, NiftiDatatype::Float32, &path)?;
    }
    Ok(())
}

/// Writes the modalities plus `seg.nii` as unsigned bytes.
pub fn write_case(root: &Path, case: &Case) -> Result<()> {
    let dir = root.join(&case.id);
    write_case_image(&dir, &case.image)?;
    let seg = case.truth.to_volume(case.image.spacing())?;
    write_nifti(&seg, NiftiDatatype::UInt8, &dir.join("seg.nii"))
}

/// Stacks the input modalities present in `dir`, in canonical order.
pub fn read_case_image(dir: &Path) -> Result<VolumeImage> {
    let mut parts = Vec::new();
    for m in Modality::INPUTS {
        let path = dir.join(format!("{}.nii", m.file_stem()));
        if path.is_file() {
            let v = read_nifti(&path)?;
            let spacing = v.spacing();
            parts.push(VolumeImage::new(v.into_data(), spacing, vec![m])?);
        }
    }
    if parts.is_empty() {
        return Err(Error::Config(format!("no modality files in {}", dir.display())));
    }
    VolumeImage::stack(&parts)
}

pub fn read_case(dir: &Path) -> Result<Case> {
    let image = read_case_image(dir)?;
    let seg = dir.join("seg.nii");
    if !seg.is_file() {
        return Err(Error::Config(format!("missing {}", seg.display())));
    }
    let truth = LabelMap::from_volume(&read_nifti(&seg)?)?;
    if truth.extents() != image.extents() {
        return Err(Error::mismatch(&image.extents(), &truth.extents()));
    }
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Case { id, image, truth })
}

/// Every subdirectory of `root` holding a `seg.nii`, sorted by name.
pub fn read_dataset(root: &Path) -> Result<Vec<Case>> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("seg.nii").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("no cases found under {}", root.display())));
    }
    dirs.iter().map(|d| read_case(d)).collect()
}

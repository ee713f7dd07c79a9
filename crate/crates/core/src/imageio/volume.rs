use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// MRI acquisition tag of one image channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    T1,
    T1c,
    T2,
    Flair,
    Label,
    Other,
}

impl Modality {
    /// Input modalities in canonical channel order.
    pub const INPUTS: [Modality; 4] = [Modality::T1, Modality::T1c, Modality::T2, Modality::Flair];

    /// File stem used in case directories (`t1.nii`, `seg.nii`, ...).
    pub fn file_stem(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::T1c => "t1c",
            Modality::T2 => "t2",
            Modality::Flair => "flair",
            Modality::Label => "seg",
            Modality::Other => "other",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Modality::T1),
            "t1c" => Ok(Modality::T1c),
            "t2" => Ok(Modality::T2),
            "flair" => Ok(Modality::Flair),
            "seg" | "label" => Ok(Modality::Label),
            "other" => Ok(Modality::Other),
            _ => Err(Error::Config(format!("unknown modality '{s}'"))),
        }
    }
}

/// A multi-channel volume `[C, D, H, W]` with voxel spacing in millimetres.
///
/// `spacing` follows tensor axis order: depth, height, width.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeImage {
    data: Tensor,
    spacing: [f64; 3],
    modalities: Vec<Modality>,
}

impl VolumeImage {
    pub fn new(data: Tensor, spacing: [f64; 3], modalities: Vec<Modality>) -> Result<Self> {
        if data.shape().rank() != 4 {
            return Err(Error::InvalidShape {
                dims: data.dims().to_vec(),
                reason: "volume must be [C, D, H, W]",
            });
        }
        if data.dims()[0] != modalities.len() {
            return Err(Error::mismatch(&[data.dims()[0]], &[modalities.len()]));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Domain(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        Ok(VolumeImage { data, spacing, modalities })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn channels(&self) -> usize {
        self.modalities.len()
    }

    /// Spatial extents `[D, H, W]`.
    pub fn extents(&self) -> [usize; 3] {
        let d = self.data.dims();
        [d[1], d[2], d[3]]
    }

    /// Single-channel volume holding channel `c`.
    pub fn channel(&self, c: usize) -> Result<VolumeImage> {
        let [d, h, w] = self.extents();
        let data = Tensor::from_vec(&[1, d, h, w], self.data.outer(c).to_vec())?;
        VolumeImage::new(data, self.spacing, vec![self.modalities[c]])
    }

    /// Stacks single- or multi-channel volumes of equal extent.
    pub fn stack(parts: &[VolumeImage]) -> Result<VolumeImage> {
        let first = parts.first().ok_or(Error::Usage("cannot stack zero volumes"))?;
        let mut data = first.data.clone();
        let mut modalities = first.modalities.clone();
        for part in &parts[1..] {
            data = Tensor::concat_outer(&data, &part.data)?;
            modalities.extend_from_slice(&part.modalities);
        }
        VolumeImage::new(data, first.spacing, modalities)
    }

    pub fn with_data(&self, data: Tensor) -> Result<VolumeImage> {
        VolumeImage::new(data, self.spacing, self.modalities.clone())
    }
}

/// Binary segmentation `[D, H, W]`: 0 background, 1 whole tumor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    extents: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(extents: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if extents.iter().product::<usize>() != data.len() || extents.contains(&0) {
            return Err(Error::InvalidShape { dims: extents.to_vec(), reason: "label buffer length" });
        }
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Domain(format!("label value {bad} outside {{0, 1}}")));
        }
        Ok(LabelMap { extents, data })
    }

    pub fn zeros(extents: [usize; 3]) -> Result<Self> {
        Self::new(extents, vec![0; extents.iter().product()])
    }

    /// Any nonzero voxel of a single-channel volume becomes foreground, so
    /// multi-label tumor maps collapse to the whole tumor.
    pub fn from_volume(v: &VolumeImage) -> Result<Self> {
        if v.channels() != 1 {
            return Err(Error::mismatch(&[1], &[v.channels()]));
        }
        let data = v.data().data().iter().map(|&x| u8::from(x != 0.0)).collect();
        Self::new(v.extents(), data)
    }

    pub fn to_volume(&self, spacing: [f64; 3]) -> Result<VolumeImage> {
        let [d, h, w] = self.extents;
        let data = Tensor::from_vec(&[1, d, h, w], self.data.iter().map(|&v| v as f32).collect())?;
        VolumeImage::new(data, spacing, vec![Modality::Label])
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.data.len() as f64
    }
}

//! Intensity normalization, trilinear resampling and Gaussian smoothing.

use crate::error::{Error, Result};
use crate::imageio::{LabelMap, VolumeImage};
use crate::tensor::Tensor;

/// Channels whose standard deviation falls below this are zeroed.
pub const MIN_STD: f64 = 1e-8;

/// Z-scores each channel using the statistics of its nonzero voxels.
/// Zero voxels stay zero.
pub fn normalize_intensity(v: &VolumeImage) -> VolumeImage {
    let mut data = v.data().clone();
    for c in 0..v.channels() {
        let channel = data.outer_mut(c);
        let (mut n, mut sum) = (0usize, 0f64);
        for &x in channel.iter().filter(|&&x| x != 0.0) {
            n += 1;
            sum += x as f64;
        }
        if n == 0 {
            continue;
        }
        let mean = sum / n as f64;
        let var = channel
            .iter()
            .filter(|&&x| x != 0.0)
            .map(|&x| (x as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        for x in channel.iter_mut().filter(|x| **x != 0.0) {
            *x = if std < MIN_STD { 0.0 } else { ((*x as f64 - mean) / std) as f32 };
        }
    }
    v.with_data(data).expect("shape unchanged")
}

/// Visits every 1-D line of `dims` (rank 4) along `axis`, passing the
/// offset of its first element and the element stride.
fn for_each_line(dims: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let strides: Vec<usize> = (0..4).map(|a| dims[a + 1..].iter().product()).collect();
    let others: Vec<usize> = (0..4).filter(|&a| a != axis).collect();
    for i in 0..dims[others[0]] {
        for j in 0..dims[others[1]] {
            for k in 0..dims[others[2]] {
                let base = i * strides[others[0]] + j * strides[others[1]] + k * strides[others[2]];
                f(base, strides[axis]);
            }
        }
    }
}

/// Linear interpolation of one axis to `target` samples, align-corners false.
fn resample_axis(x: &Tensor, axis: usize, target: usize) -> Result<Tensor> {
    let src = x.dims()[axis];
    if src == target {
        return Ok(x.clone());
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = target;
    let mut out = Tensor::zeros(&dims)?;
    let scale = src as f64 / target as f64;
    let taps: Vec<(usize, usize, f64)> = (0..target)
        .map(|j| {
            let pos = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect();
    let input = x.data();
    let mut offsets = Vec::new();
    for_each_line(x.dims(), axis, |base, stride| offsets.push((base, stride)));
    let mut out_offsets = Vec::with_capacity(offsets.len());
    for_each_line(&dims, axis, |base, stride| out_offsets.push((base, stride)));
    let output = out.data_mut();
    for (&(ib, is), &(ob, os)) in offsets.iter().zip(&out_offsets) {
        for (j, &(lo, hi, t)) in taps.iter().enumerate() {
            let a = input[ib + lo * is] as f64;
            let b = input[ib + hi * is] as f64;
            output[ob + j * os] = (a + (b - a) * t) as f32;
        }
    }
    Ok(out)
}

/// Trilinear resampling to `target` `[D, H, W]`. Spacing is rescaled so the
/// physical extent is preserved.
pub fn resample_trilinear(v: &VolumeImage, target: [usize; 3]) -> Result<VolumeImage> {
    if target.contains(&0) {
        return Err(Error::InvalidShape { dims: target.to_vec(), reason: "target extents must be positive" });
    }
    let mut data = v.data().clone();
    for (axis, &t) in target.iter().enumerate() {
        data = resample_axis(&data, axis + 1, t)?;
    }
    let src = v.extents();
    let spacing = [0, 1, 2].map(|a| v.spacing()[a] * src[a] as f64 / target[a] as f64);
    VolumeImage::new(data, spacing, v.modalities().to_vec())
}

/// Trilinear resampling of a label map, foreground where the interpolated
/// value reaches 0.5.
pub fn resample_labels(labels: &LabelMap, target: [usize; 3]) -> Result<LabelMap> {
    let v = labels.to_volume([1.0; 3])?;
    let r = resample_trilinear(&v, target)?;
    let data = r.data().data().iter().map(|&x| (x >= 0.5) as u8).collect();
    LabelMap::new(target, data)
}

/// Normal density `exp(-(x-mu)^2 / 2 sigma^2) / (sigma sqrt(2 pi))`.
pub fn gaussian_pdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let z = (x - mu) / sigma;
    Ok((-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSpec {
    sigma: f64,
    radius: usize,
}

impl GaussianSpec {
    /// Truncation radius `ceil(3 sigma)`.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        Ok(GaussianSpec { sigma, radius: (3.0 * sigma).ceil() as usize })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Normalized taps for offsets `-radius..=radius`.
    pub fn kernel(&self) -> Vec<f64> {
        let r = self.radius as i64;
        let raw: Vec<f64> = (-r..=r)
            .map(|t| gaussian_pdf(t as f64, 0.0, self.sigma).expect("sigma validated"))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Half-sample symmetric reflection: `d c b a | a b c d | d c b a`.
fn reflect(i: i64, n: usize) -> usize {
    let period = 2 * n as i64;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn filter_axis(x: &Tensor, axis: usize, kernel: &[f64]) -> Tensor {
    let n = x.dims()[axis];
    let r = (kernel.len() / 2) as i64;
    let mut out = x.clone();
    let input = x.data();
    let output = out.data_mut();
    let mut line = vec![0f64; n + 2 * r as usize];
    for_each_line(x.dims(), axis, |base, stride| {
        for (k, slot) in line.iter_mut().enumerate() {
            *slot = input[base + reflect(k as i64 - r, n) * stride] as f64;
        }
        for i in 0..n {
            let acc: f64 = kernel.iter().zip(&line[i..]).map(|(w, v)| w * v).sum();
            output[base + i * stride] = acc as f32;
        }
    });
    out
}

fn gaussian_filter_ordered(v: &VolumeImage, spec: GaussianSpec, order: [usize; 3]) -> VolumeImage {
    let kernel = spec.kernel();
    let mut data = v.data().clone();
    for axis in order {
        data = filter_axis(&data, axis + 1, &kernel);
    }
    v.with_data(data).expect("shape unchanged")
}

/// Separable Gaussian smoothing of every channel, reflecting at the borders.
pub fn gaussian_filter3d(v: &VolumeImage, spec: GaussianSpec) -> VolumeImage {
    gaussian_filter_ordered(v, spec, [0, 1, 2])
}

/// normalize, resize, smooth.
pub fn preprocess_volume(v: &VolumeImage, target: [usize; 3], sigma: Option<f64>) -> Result<VolumeImage> {
    let resized = resample_trilinear(&normalize_intensity(v), target)?;
    Ok(match sigma {
        Some(s) => gaussian_filter3d(&resized, GaussianSpec::new(s)?),
        None => resized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::Modality;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn volume(dims: [usize; 4], data: Vec<f32>) -> VolumeImage {
        let t = Tensor::from_vec(&dims, data).unwrap();
        VolumeImage::new(t, [1.0; 3], vec![Modality::Other; dims[0]]).unwrap()
    }

    fn noise(dims: [usize; 4], seed: u64) -> VolumeImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        volume(dims, (0..n).map(|_| rng.random_range(-1.7f32..1.7)).collect())
    }

    fn stats(xs: impl Iterator<Item = f32>) -> (f64, f64) {
        let v: Vec<f64> = xs.map(|x| x as f64).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        (mean, var.sqrt())
    }

    #[test]
    fn normalize_hand_values() {
        let v = normalize_intensity(&volume([1, 1, 1, 3], vec![1.0, 0.0, 3.0]));
        assert_eq!(v.data().data(), &[-1.0, 0.0, 1.0]);
        let flat = normalize_intensity(&volume([1, 1, 1, 3], vec![2.0, 2.0, 0.0]));
        assert!(flat.data().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_gives_unit_statistics() {
        let raw = noise([2, 6, 6, 6], 3);
        let v = normalize_intensity(&raw.with_data(raw.data().map(|x| x + 4.0)).unwrap());
        for c in 0..2 {
            let (m, s) = stats(v.data().outer(c).iter().copied().filter(|&x| x != 0.0));
            assert!(m.abs() < 1e-4 && (s - 1.0).abs() < 1e-4, "{m} {s}");
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = normalize_intensity(&noise([1, 5, 5, 5], 9));
        let twice = normalize_intensity(&once);
        assert!(once.data().max_abs_diff(twice.data()).unwrap() < 1e-4);
    }

    #[test]
    fn resample_identity_and_constant() {
        let v = noise([1, 4, 5, 6], 1);
        let same = resample_trilinear(&v, [4, 5, 6]).unwrap();
        assert!(same.data().max_abs_diff(v.data()).unwrap() < 1e-6);
        let c = volume([1, 3, 3, 3], vec![2.5; 27]);
        let r = resample_trilinear(&c, [7, 2, 5]).unwrap();
        assert!(r.data().data().iter().all(|&x| (x - 2.5).abs() < 1e-6));
        assert_eq!(r.spacing(), [3.0 / 7.0, 1.5, 0.6]);
    }

    #[test]
    fn ramp_downsample_hits_sample_centres() {
        let v = volume([1, 1, 1, 8], (0..8).map(|i| i as f32).collect());
        let r = resample_trilinear(&v, [1, 1, 4]).unwrap();
        for (j, &x) in r.data().data().iter().enumerate() {
            assert!((x - (2.0 * j as f32 + 0.5)).abs() < 1e-5);
        }
    }

    #[test]
    fn pdf_values() {
        assert!((gaussian_pdf(0.0, 0.0, 1.0).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(gaussian_pdf(1.3, 0.5, 2.0).unwrap(), gaussian_pdf(-0.3, 0.5, 2.0).unwrap());
        assert!(gaussian_pdf(0.0, 0.0, 0.0).is_err());
        assert!(GaussianSpec::new(-1.0).is_err());
        let (mu, sigma, n) = (0.7, 1.3, 20_000);
        let h = 12.0 * sigma / n as f64;
        let integral: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * gaussian_pdf(mu - 6.0 * sigma + i as f64 * h, mu, sigma).unwrap()
            })
            .sum::<f64>()
            * h;
        assert!((integral - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-5..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(got, vec![1, 2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
    }

    #[test]
    fn kernel_is_normalized() {
        let spec = GaussianSpec::new(1.0).unwrap();
        assert_eq!(spec.radius(), 3);
        assert!((spec.kernel().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impulse_response_is_kernel_product() {
        let mut data = vec![0f32; 729];
        data[4 * 81 + 4 * 9 + 4] = 1.0;
        let spec = GaussianSpec::new(1.0).unwrap();
        let out = gaussian_filter3d(&volume([1, 9, 9, 9], data), spec);
        let k0 = spec.kernel()[3];
        assert!((out.data().data()[364] as f64 - k0.powi(3)).abs() < 1e-7);
        assert!((out.data().sum() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn constant_volume_is_unchanged() {
        let v = volume([1, 5, 5, 5], vec![3.0; 125]);
        let out = gaussian_filter3d(&v, GaussianSpec::new(1.5).unwrap());
        assert!(out.data().max_abs_diff(v.data()).unwrap() < 1e-6);
    }

    #[test]
    fn smoothing_halves_noise_variance() {
        let v = noise([1, 32, 32, 32], 11);
        let out = gaussian_filter3d(&v, GaussianSpec::new(1.0).unwrap());
        let (_, s_in) = stats(v.data().data().iter().copied());
        let (_, s_out) = stats(out.data().data().iter().copied());
        assert!(s_out * s_out < 0.5 * s_in * s_in);
    }

    #[test]
    fn preprocess_chain_shapes() {
        let v = noise([2, 8, 8, 8], 5);
        let out = preprocess_volume(&v, [4, 4, 4], Some(0.8)).unwrap();
        assert_eq!(out.data().dims(), &[2, 4, 4, 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn axis_order_commutes(seed in 0u64..1000, sigma in 0.4f64..2.0) {
            let v = noise([2, 5, 6, 7], seed);
            let spec = GaussianSpec::new(sigma).unwrap();
            let a = gaussian_filter_ordered(&v, spec, [0, 1, 2]);
            let b = gaussian_filter_ordered(&v, spec, [2, 1, 0]);
            prop_assert!(a.data().max_abs_diff(b.data()).unwrap() < 1e-5);
        }

        #[test]
        fn labels_resample_to_binary(bits in proptest::collection::vec(0u8..2, 64)) {
            let m = LabelMap::new([4, 4, 4], bits).unwrap();
            let r = resample_labels(&m, [8, 2, 4]).unwrap();
            prop_assert!(r.data().iter().all(|&b| b <= 1));
            prop_assert_eq!(resample_labels(&m, [4, 4, 4]).unwrap(), m);
        }
    }
}

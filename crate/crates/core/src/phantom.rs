//! Synthetic multi-modality brain phantoms with ellipsoidal tumors.
//!
//! A phantom is an ellipsoidal brain on a zero background. Tumors are small
//! ellipsoids that differ from healthy tissue in every modality. Each tumor
//! is accompanied by `mimics_per_tumor` unlabelled lesions that light up in a
//! single modality only, so no individual channel separates tumor from
//! tissue. Gaussian noise is added inside the brain; the background stays
//! exactly zero.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{Case, LabelMap, Modality, VolumeImage};
use crate::tensor::Tensor;

/// `(foreground, background)` intensities for T1, T1c, T2 and FLAIR.
pub const DEFAULT_CONTRAST: [(f32, f32); 4] = [(0.55, 1.0), (1.9, 1.0), (1.7, 1.0), (1.8, 1.0)];

const PLACEMENT_ATTEMPTS: usize = 2000;
const SCALE_HEADROOM: f64 = 1.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub extent: usize,
    pub modalities: usize,
    pub tumor_count: usize,
    /// Relative semi-axis range in voxels. All tumors are rescaled by one
    /// common factor to meet `tumor_fraction_target`.
    pub tumor_radius_range: [f64; 2],
    pub tumor_fraction_target: f64,
    pub noise_sigma: f64,
    pub intensity_contrast: Vec<(f32, f32)>,
    pub mimics_per_tumor: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            extent: 32,
            modalities: 4,
            tumor_count: 2,
            tumor_radius_range: [3.0, 6.0],
            tumor_fraction_target: 0.02,
            noise_sigma: 0.1,
            intensity_contrast: DEFAULT_CONTRAST.to_vec(),
            mimics_per_tumor: 1,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    /// Two-modality (T1, T1c) variant used for desk-scale training.
    pub fn desk() -> Self {
        PhantomSpec::default().with_modalities(2)
    }

    /// Changes the extent and scales the radius range with it.
    pub fn with_extent(mut self, extent: usize) -> Self {
        let f = extent as f64 / self.extent as f64;
        self.tumor_radius_range = self.tumor_radius_range.map(|r| r * f);
        self.extent = extent;
        self
    }

    /// Keeps the first `m` modalities and their default contrasts.
    pub fn with_modalities(mut self, m: usize) -> Self {
        self.modalities = m;
        self.intensity_contrast = DEFAULT_CONTRAST.iter().copied().cycle().take(m).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.extent == 0 || !self.extent.is_multiple_of(16) {
            return fail(format!("extent {} is not a positive multiple of 16", self.extent));
        }
        if !(1..=Modality::INPUTS.len()).contains(&self.modalities) {
            return fail(format!("modalities must be in 1..=4, got {}", self.modalities));
        }
        if self.intensity_contrast.len() != self.modalities {
            return fail(format!(
                "{} contrast pairs for {} modalities",
                self.intensity_contrast.len(),
                self.modalities
            ));
        }
        if self.intensity_contrast.iter().any(|&(f, b)| f == b || f == 0.0 || b == 0.0) {
            return fail("contrast pairs must be nonzero and distinct".into());
        }
        let [lo, hi] = self.tumor_radius_range;
        if !(lo > 0.0 && lo <= hi) {
            return fail(format!("invalid tumor radius range [{lo}, {hi}]"));
        }
        if self.tumor_count > 0 && !(self.tumor_fraction_target > 0.0 && self.tumor_fraction_target < 0.5) {
            return fail(format!("tumor fraction {} outside (0, 0.5)", self.tumor_fraction_target));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        self.level(p) <= 1.0
    }

    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum()
    }

    fn scaled(&self, s: f64) -> Ellipsoid {
        Ellipsoid { center: self.center, radii: self.radii.map(|r| r * s) }
    }

    /// Inclusive voxel bounds clipped to the grid.
    fn bounds(&self, extent: usize) -> [(usize, usize); 3] {
        [0, 1, 2].map(|a| {
            let lo = (self.center[a] - self.radii[a]).floor().max(0.0) as usize;
            let hi = ((self.center[a] + self.radii[a]).ceil().max(0.0) as usize).min(extent - 1);
            (lo, hi)
        })
    }

    fn for_each_voxel(&self, extent: usize, mut f: impl FnMut(usize, [f64; 3])) {
        let [(z0, z1), (y0, y1), (x0, x1)] = self.bounds(extent);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = [z as f64, y as f64, x as f64];
                    if self.contains(p) {
                        f((z * extent + y) * extent + x, p);
                    }
                }
            }
        }
    }

    fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radii.iter().product::<f64>()
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller; 1 - u keeps the log argument in (0, 1].
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn random_radii(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> [f64; 3] {
    [0; 3].map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
}

/// Draws a center whose ellipsoid fits strictly inside `brain`, avoiding
/// `taken` when possible.
fn place(
    rng: &mut ChaCha8Rng,
    brain: &Ellipsoid,
    radii: [f64; 3],
    taken: &[Ellipsoid],
) -> Option<Ellipsoid> {
    // One voxel of margin from the brain surface.
    let inner = Ellipsoid { center: brain.center, radii: brain.radii.map(|r| r - 1.0) };
    let reach = radii.iter().cloned().fold(0.0, f64::max);
    for attempt in 0..PLACEMENT_ATTEMPTS {
        let center = [0, 1, 2].map(|a| brain.center[a] + rng.random_range(-1.0..1.0) * (inner.radii[a] - reach).max(0.0));
        let e = Ellipsoid { center, radii };
        let corners_inside = (0..3).all(|a| {
            [-1.0, 1.0].iter().all(|&s| {
                let mut p = center;
                p[a] += s * radii[a];
                inner.contains(p)
            })
        });
        if !corners_inside || !ellipsoid_inside(&e, &inner) {
            continue;
        }
        let separated = taken.iter().all(|t| {
            let d = (0..3).map(|a| (t.center[a] - center[a]).powi(2)).sum::<f64>().sqrt();
            d > reach + t.radii.iter().cloned().fold(0.0, f64::max)
        });
        if separated || attempt >= PLACEMENT_ATTEMPTS / 2 {
            return Some(e);
        }
    }
    None
}

/// Samples the surface of `e` densely and checks every sample against `outer`.
fn ellipsoid_inside(e: &Ellipsoid, outer: &Ellipsoid) -> bool {
    let n = 24;
    (0..=n).all(|i| {
        let theta = PI * i as f64 / n as f64;
        (0..2 * n).all(|j| {
            let phi = PI * j as f64 / n as f64;
            let dir = [theta.cos(), theta.sin() * phi.cos(), theta.sin() * phi.sin()];
            outer.contains([0, 1, 2].map(|a| e.center[a] + e.radii[a] * dir[a]))
        })
    })
}

fn count_union(shapes: &[Ellipsoid], extent: usize, scratch: &mut [bool]) -> usize {
    scratch.iter_mut().for_each(|b| *b = false);
    let mut n = 0;
    for e in shapes {
        e.for_each_voxel(extent, |i, _| {
            if !scratch[i] {
                scratch[i] = true;
                n += 1;
            }
        });
    }
    n
}

/// Largest common scale in `(0, hi]` whose union voxel count stays closest
/// to `target`, found by bisection on the monotone count.
fn fit_scale(shapes: &[Ellipsoid], extent: usize, target: usize, hi: f64) -> f64 {
    let mut scratch = vec![false; extent.pow(3)];
    let count = |s: f64, scratch: &mut [bool]| {
        let scaled: Vec<_> = shapes.iter().map(|e| e.scaled(s)).collect();
        count_union(&scaled, extent, scratch)
    };
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..48 {
        let mid = 0.5 * (lo + up);
        if count(mid, &mut scratch) < target {
            lo = mid;
        } else {
            up = mid;
        }
    }
    let below = count(lo, &mut scratch);
    let above = count(up, &mut scratch);
    if target.abs_diff(below) <= target.abs_diff(above) && lo > 0.0 {
        lo
    } else {
        up
    }
}

/// Deterministic phantom for `spec.seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(VolumeImage, LabelMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e = spec.extent;
    let ef = e as f64;
    let mid = (ef - 1.0) / 2.0;
    let brain = Ellipsoid {
        center: [0; 3].map(|_| mid + rng.random_range(-0.5..0.5)),
        radii: [0.42, 0.38, 0.40].map(|f| f * ef * rng.random_range(0.95..1.0)),
    };
    let min_brain = brain.radii.iter().cloned().fold(f64::INFINITY, f64::min);
    if spec.tumor_count > 0 && spec.tumor_radius_range[1] >= min_brain - 1.0 {
        return Err(Error::Config(format!(
            "tumor radius {} does not fit in a brain of radius {min_brain:.1}",
            spec.tumor_radius_range[1]
        )));
    }

    let voxels = e * e * e;
    let target = (spec.tumor_fraction_target * voxels as f64).round() as usize;
    let shapes: Vec<[f64; 3]> = (0..spec.tumor_count).map(|_| random_radii(&mut rng, spec.tumor_radius_range)).collect();
    let nominal: f64 = shapes.iter().map(|&r| Ellipsoid { center: [0.0; 3], radii: r }.volume()).sum();
    let s_max = if spec.tumor_count > 0 { SCALE_HEADROOM * (target as f64 / nominal).cbrt() } else { 0.0 };

    let mut tumors = Vec::with_capacity(spec.tumor_count);
    for r in &shapes {
        let radii = r.map(|x| x * s_max);
        let placed = place(&mut rng, &brain, radii, &tumors)
            .ok_or_else(|| Error::Config("tumor does not fit inside the brain".into()))?;
        tumors.push(placed);
    }
    let base: Vec<Ellipsoid> = tumors.iter().zip(&shapes).map(|(t, &r)| Ellipsoid { center: t.center, radii: r }).collect();
    let scale = if spec.tumor_count > 0 { fit_scale(&base, e, target, s_max) } else { 0.0 };
    let tumors: Vec<Ellipsoid> = base.iter().map(|t| t.scaled(scale)).collect();

    let mut mimics = Vec::new();
    if spec.modalities > 1 {
        for k in 0..spec.tumor_count * spec.mimics_per_tumor {
            let radii = random_radii(&mut rng, spec.tumor_radius_range).map(|x| x * scale);
            let mut taken = tumors.clone();
            taken.extend(mimics.iter().map(|(m, _)| *m));
            if let Some(m) = place(&mut rng, &brain, radii, &taken) {
                mimics.push((m, k % spec.modalities));
            }
        }
    }

    let mut labels = vec![0u8; voxels];
    for t in &tumors {
        t.for_each_voxel(e, |i, _| labels[i] = 1);
    }
    let mut inside = vec![false; voxels];
    brain.for_each_voxel(e, |i, _| inside[i] = true);

    let mut data = Vec::with_capacity(spec.modalities * voxels);
    for (m, &(fg, bg)) in spec.intensity_contrast.iter().enumerate() {
        let mut channel: Vec<f32> = (0..voxels)
            .map(|i| match (inside[i], labels[i]) {
                (false, _) => 0.0,
                (true, 1) => fg,
                (true, _) => bg,
            })
            .collect();
        for (shape, bright) in &mimics {
            if *bright == m {
                shape.for_each_voxel(e, |i, _| {
                    if labels[i] == 0 {
                        channel[i] = fg;
                    }
                });
            }
        }
        data.extend(channel);
    }
    if spec.noise_sigma > 0.0 {
        for c in 0..spec.modalities {
            for i in 0..voxels {
                if inside[i] {
                    data[c * voxels + i] += (spec.noise_sigma * standard_normal(&mut rng)) as f32;
                }
            }
        }
    }

    let tensor = Tensor::from_vec(&[spec.modalities, e, e, e], data)?;
    let modalities = Modality::INPUTS[..spec.modalities].to_vec();
    let image = VolumeImage::new(tensor, [1.0; 3], modalities)?;
    Ok((image, LabelMap::new([e; 3], labels)?))
}

pub fn case_id(seed: u64) -> String {
    format!("case_{seed:04}")
}

/// `n_train` training cases with seeds `base_seed..` followed by `n_test`
/// held-out cases with the next seeds.
pub fn make_dataset(template: &PhantomSpec, n_train: usize, n_test: usize, base_seed: u64) -> Result<(Vec<Case>, Vec<Case>)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config("a dataset needs at least one training and one test case".into()));
    }
    let mut cases = (0..(n_train + n_test) as u64)
        .map(|k| {
            let seed = base_seed + k;
            let (image, truth) = generate_phantom(&PhantomSpec { seed, ..template.clone() })?;
            Ok(Case { id: case_id(seed), image, truth })
        })
        .collect::<Result<Vec<_>>>()?;
    let test = cases.split_off(n_train);
    Ok((cases, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> PhantomSpec {
        PhantomSpec { extent: 16, tumor_radius_range: [1.5, 3.0], seed, ..PhantomSpec::desk() }
    }

    #[test]
    fn no_tumor_no_noise_is_two_valued() {
        let spec = PhantomSpec { tumor_count: 0, noise_sigma: 0.0, ..PhantomSpec::default() };
        let (image, truth) = generate_phantom(&spec).unwrap();
        assert_eq!(truth.foreground_count(), 0);
        for c in 0..4 {
            let mut values: Vec<f32> = image.data().outer(c).to_vec();
            values.sort_by(f32::total_cmp);
            values.dedup();
            assert_eq!(values, vec![0.0, DEFAULT_CONTRAST[c].1]);
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_phantom(&small(4)).unwrap();
        let b = generate_phantom(&small(4)).unwrap();
        let c = generate_phantom(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn tumors_lie_inside_the_brain() {
        for seed in 0..5 {
            let (image, truth) = generate_phantom(&PhantomSpec { seed, ..PhantomSpec::desk() }).unwrap();
            let e = 32;
            for (i, &l) in truth.data().iter().enumerate() {
                if l == 1 {
                    assert_ne!(image.data().outer(0)[i], 0.0);
                    // six-neighbourhood is brain too
                    let (z, y, x) = (i / (e * e), i / e % e, i % e);
                    for (dz, dy, dx) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                        for s in [-1i64, 1] {
                            let j = ((z as i64 + s * dz) * e as i64 + y as i64 + s * dy) * e as i64 + x as i64 + s * dx;
                            assert_ne!(image.data().outer(1)[j as usize], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mimics_make_single_channels_ambiguous() {
        let spec = PhantomSpec { noise_sigma: 0.0, ..PhantomSpec::desk() };
        let (image, truth) = generate_phantom(&spec).unwrap();
        for c in 0..2 {
            let fg = DEFAULT_CONTRAST[c].0;
            let bright_healthy = image
                .data()
                .outer(c)
                .iter()
                .zip(truth.data())
                .filter(|(&v, &l)| v == fg && l == 0)
                .count();
            assert!(bright_healthy > 0, "channel {c} alone separates the tumor");
        }
    }

    #[test]
    fn foreground_fraction_tracks_target() {
        for seed in 0..20 {
            let (_, truth) = generate_phantom(&PhantomSpec { seed, ..PhantomSpec::desk() }).unwrap();
            let f = truth.foreground_fraction();
            assert!((0.014..=0.026).contains(&f), "seed {seed}: {f}");
        }
    }

    #[test]
    fn smaller_extents_scale_the_radii() {
        let spec = PhantomSpec::desk().with_extent(16);
        assert_eq!(spec.tumor_radius_range, [1.5, 3.0]);
        let (_, labels) = generate_phantom(&spec).unwrap();
        assert!((0.01..0.03).contains(&labels.foreground_fraction()));
    }

    #[test]
    fn oversized_tumors_are_rejected() {
        let spec = PhantomSpec { tumor_radius_range: [4.0, 20.0], ..small(0) };
        assert!(matches!(generate_phantom(&spec), Err(Error::Config(_))));
        assert!(generate_phantom(&PhantomSpec { extent: 24, ..small(0) }).is_err());
    }

    #[test]
    fn dataset_seeds_are_consecutive_and_disjoint() {
        let (train, test) = make_dataset(&small(0), 4, 2, 10).unwrap();
        let ids: Vec<_> = train.iter().chain(&test).map(|c| c.id.clone()).collect();
        assert_eq!(ids, (10..16).map(case_id).collect::<Vec<_>>());
        for a in &train {
            for b in &test {
                assert_ne!(a.image, b.image);
            }
        }
        let (again, _) = make_dataset(&small(0), 4, 2, 10).unwrap();
        assert_eq!(again, train);
        assert!(make_dataset(&small(0), 0, 1, 0).is_err());
    }

    #[test]
    fn noise_has_requested_spread() {
        let spec = PhantomSpec { tumor_count: 0, noise_sigma: 0.2, ..PhantomSpec::desk() };
        let (image, _) = generate_phantom(&spec).unwrap();
        let brain: Vec<f64> = image.data().outer(0).iter().filter(|&&v| v != 0.0).map(|&v| v as f64 - 1.0).collect();
        let mean = brain.iter().sum::<f64>() / brain.len() as f64;
        let sd = (brain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / brain.len() as f64).sqrt();
        assert!(mean.abs() < 0.01 && (sd - 0.2).abs() < 0.01, "{mean} {sd}");
    }
}

//! 3-D convolution and transposed convolution over `[C, D, H, W]` volumes.
//!
//! "Convolution" here is cross-correlation (no kernel flip). Weights are laid
//! out `[out_ch, in_ch, k, k, k]` for both layer kinds. Every output element
//! is accumulated in `f64` in a fixed order: input channel, then kernel
//! depth/height/width offset.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Kernel size, stride and symmetric zero padding of a cubic kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Stride-1 convolution with `(k - 1) / 2` padding; preserves extents.
    pub fn same(kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) || kernel > 7 {
            return Err(Error::Config(format!("same-padded kernel must be odd and at most 7, got {kernel}")));
        }
        Ok(ConvGeometry { kernel, stride: 1, padding: (kernel - 1) / 2 })
    }

    /// Non-overlapping 2×2×2 stride-2 kernel; halves extents.
    pub fn down() -> Self {
        ConvGeometry { kernel: 2, stride: 2, padding: 0 }
    }

    fn validate(&self) -> Result<()> {
        match (self.kernel, self.stride) {
            (k, 1) if k % 2 == 1 && k <= 7 && self.padding == (k - 1) / 2 => Ok(()),
            (2, 2) if self.padding == 0 => Ok(()),
            _ => Err(Error::Config(format!("unsupported convolution geometry {self:?}"))),
        }
    }

    fn output_extent(&self, n: usize) -> Result<usize> {
        if self.stride == 2 && !n.is_multiple_of(2) {
            return Err(Error::InvalidShape { dims: vec![n], reason: "stride-2 input must be even" });
        }
        Ok((n + 2 * self.padding - self.kernel) / self.stride + 1)
    }
}

/// Uniform Glorot initialisation bound for a cubic kernel.
fn glorot_bound(in_ch: usize, out_ch: usize, kernel: usize) -> f64 {
    let k3 = (kernel * kernel * kernel) as f64;
    (6.0 / ((in_ch as f64 + out_ch as f64) * k3)).sqrt()
}

fn glorot_tensor(dims: &[usize], bound: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let mut t = Tensor::zeros(dims)?;
    for w in t.data_mut() {
        *w = rng.random_range(-bound..bound) as f32;
    }
    Ok(t)
}

fn volume_dims(x: &Tensor) -> Result<[usize; 4]> {
    match *x.dims() {
        [c, d, h, w] => Ok([c, d, h, w]),
        _ => Err(Error::InvalidShape { dims: x.dims().to_vec(), reason: "expected [C, D, H, W]" }),
    }
}

/// Range of output positions `o` whose input index `o * 1 + tap - pad`
/// lies inside `[0, n_in)`, for stride-1 kernels.
#[inline]
fn valid_range(tap: usize, pad: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap);
    let hi = (n_in + pad).saturating_sub(tap).min(n_out);
    (lo, hi.max(lo))
}

/// Learnable 3-D convolution with bias and gradient buffers.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    pub geometry: ConvGeometry,
}

impl Conv3d {
    /// Glorot-uniform weights, zero bias.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        geometry: ConvGeometry,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        geometry.validate()?;
        let k = geometry.kernel;
        let dims = [out_ch, in_ch, k, k, k];
        let weight = glorot_tensor(&dims, glorot_bound(in_ch, out_ch, k), rng)?;
        Self::from_params(weight, Tensor::zeros(&[out_ch])?, geometry)
    }

    pub fn from_params(weight: Tensor, bias: Tensor, geometry: ConvGeometry) -> Result<Self> {
        geometry.validate()?;
        let k = geometry.kernel;
        match *weight.dims() {
            [o, _, a, b, c] if a == k && b == k && c == k && bias.dims() == [o] => {}
            _ => return Err(Error::mismatch(&[0, 0, k, k, k], weight.dims())),
        }
        Ok(Conv3d {
            grad_weight: Tensor::zeros(weight.dims())?,
            grad_bias: Tensor::zeros(bias.dims())?,
            weight,
            bias,
            geometry,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn output_dims(&self, input: &Tensor) -> Result<[usize; 4]> {
        let [c, d, h, w] = volume_dims(input)?;
        if c != self.in_channels() {
            return Err(Error::mismatch(&[self.in_channels()], &[c]));
        }
        let g = &self.geometry;
        Ok([self.out_channels(), g.output_extent(d)?, g.output_extent(h)?, g.output_extent(w)?])
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let out_dims = self.output_dims(input)?;
        if self.geometry.stride == 1 {
            Ok(self.forward_same(input, out_dims))
        } else {
            Ok(self.forward_down(input, out_dims))
        }
    }

    /// Returns the input gradient and adds parameter gradients into
    /// `grad_weight` / `grad_bias`.
    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let out_dims = self.output_dims(input)?;
        if grad_out.dims() != out_dims {
            return Err(Error::mismatch(&out_dims, grad_out.dims()));
        }
        if self.geometry.stride == 1 {
            Ok(self.backward_same(input, grad_out))
        } else {
            Ok(self.backward_down(input, grad_out))
        }
    }

    fn forward_same(&self, input: &Tensor, out_dims: [usize; 4]) -> Tensor {
        let dims = volume_dims(input).expect("checked");
        let weights: Vec<f64> = self.weight.data().iter().map(|&v| v as f64).collect();
        let bias: Vec<f64> = self.bias.data().iter().map(|&v| v as f64).collect();
        let out = correlate_same(input.data(), dims, &weights, &bias, out_dims[0], self.geometry.kernel);
        Tensor::from_vec(&out_dims, out).expect("dims computed above")
    }

    fn backward_same(&mut self, input: &Tensor, grad_out: &Tensor) -> Tensor {
        let [ci_n, d, h, w] = volume_dims(input).expect("checked");
        let co_n = self.out_channels();
        let k = self.geometry.kernel;
        let p = self.geometry.padding;
        let k3 = k * k * k;
        let plane = d * h * w;
        let padded = pad_rows(input.data(), ci_n * d * h, w, p);
        let grad64: Vec<f64> = grad_out.data().iter().map(|&x| x as f64).collect();

        let gw = weight_gradient(&padded, &grad64, [ci_n, d, h, w], co_n, k);
        for (slot, g) in self.grad_weight.data_mut().iter_mut().zip(gw) {
            *slot = (*slot as f64 + g) as f32;
        }
        let gb = self.grad_bias.data_mut();
        for co in 0..co_n {
            let s: f64 = grad64[co * plane..(co + 1) * plane].iter().sum();
            gb[co] = (gb[co] as f64 + s) as f32;
        }

        // Input gradient: correlation of the upstream gradient with the
        // spatially flipped, channel-transposed kernel.
        let mut flipped = vec![0f64; self.weight.numel()];
        let src_w = self.weight.data();
        for co in 0..co_n {
            for ci in 0..ci_n {
                let from = (co * ci_n + ci) * k3;
                let to = (ci * co_n + co) * k3;
                for t in 0..k3 {
                    flipped[to + t] = src_w[from + k3 - 1 - t] as f64;
                }
            }
        }
        let zero_bias = vec![0f64; ci_n];
        let grad_in =
            correlate_same(grad_out.data(), [co_n, d, h, w], &flipped, &zero_bias, ci_n, k);
        Tensor::from_vec(input.dims(), grad_in).expect("input dims")
    }

    fn forward_down(&self, input: &Tensor, out_dims: [usize; 4]) -> Tensor {
        let [ci_n, d, h, w] = volume_dims(input).expect("checked");
        let [co_n, od_n, oh_n, ow_n] = out_dims;
        let x = input.data();
        let weights = self.weight.data();
        let mut out = Vec::with_capacity(co_n * od_n * oh_n * ow_n);
        for co in 0..co_n {
            for od in 0..od_n {
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let mut acc = self.bias.data()[co] as f64;
                        for ci in 0..ci_n {
                            let wbase = (co * ci_n + ci) * 8;
                            for kd in 0..2 {
                                for kh in 0..2 {
                                    let row = ((ci * d + 2 * od + kd) * h + 2 * oh + kh) * w + 2 * ow;
                                    let wr = wbase + (kd * 2 + kh) * 2;
                                    acc += weights[wr] as f64 * x[row] as f64;
                                    acc += weights[wr + 1] as f64 * x[row + 1] as f64;
                                }
                            }
                        }
                        out.push(acc as f32);
                    }
                }
            }
        }
        Tensor::from_vec(&out_dims, out).expect("dims computed above")
    }

    fn backward_down(&mut self, input: &Tensor, grad_out: &Tensor) -> Tensor {
        let [ci_n, d, h, w] = volume_dims(input).expect("checked");
        let [co_n, od_n, oh_n, ow_n] = volume_dims(grad_out).expect("checked");
        let x = input.data();
        let g = grad_out.data();
        let weights = self.weight.data();
        let mut gw = vec![0f64; self.weight.numel()];
        let mut gb = vec![0f64; co_n];
        let mut gin = vec![0f64; input.numel()];
        for co in 0..co_n {
            for od in 0..od_n {
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let go = g[((co * od_n + od) * oh_n + oh) * ow_n + ow] as f64;
                        gb[co] += go;
                        for ci in 0..ci_n {
                            let wbase = (co * ci_n + ci) * 8;
                            for kd in 0..2 {
                                for kh in 0..2 {
                                    for kw in 0..2 {
                                        let xi = ((ci * d + 2 * od + kd) * h + 2 * oh + kh) * w
                                            + 2 * ow
                                            + kw;
                                        let wi = wbase + (kd * 2 + kh) * 2 + kw;
                                        gw[wi] += go * x[xi] as f64;
                                        gin[xi] += go * weights[wi] as f64;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        accumulate(&mut self.grad_weight, &gw);
        accumulate(&mut self.grad_bias, &gb);
        Tensor::from_vec(input.dims(), gin.into_iter().map(|v| v as f32).collect())
            .expect("input dims")
    }
}

/// Learnable 2×2×2 stride-2 transposed convolution; doubles extents.
///
/// Each input voxel `i` writes the `2×2×2` output block starting at `2i`, so
/// blocks never overlap.
#[derive(Clone, Debug)]
pub struct ConvTranspose3d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

impl ConvTranspose3d {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = glorot_tensor(&[out_ch, in_ch, 2, 2, 2], glorot_bound(in_ch, out_ch, 2), rng)?;
        Self::from_params(weight, Tensor::zeros(&[out_ch])?)
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        match *weight.dims() {
            [o, _, 2, 2, 2] if bias.dims() == [o] => {}
            _ => return Err(Error::mismatch(&[0, 0, 2, 2, 2], weight.dims())),
        }
        Ok(ConvTranspose3d {
            grad_weight: Tensor::zeros(weight.dims())?,
            grad_bias: Tensor::zeros(bias.dims())?,
            weight,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    fn check_input(&self, input: &Tensor) -> Result<[usize; 4]> {
        let dims = volume_dims(input)?;
        if dims[0] != self.in_channels() {
            return Err(Error::mismatch(&[self.in_channels()], &[dims[0]]));
        }
        Ok(dims)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let [ci_n, d, h, w] = self.check_input(input)?;
        let co_n = self.out_channels();
        let (od_n, oh_n, ow_n) = (2 * d, 2 * h, 2 * w);
        let x = input.data();
        let weights = self.weight.data();
        let plane_in = d * h * w;
        let mut out = vec![0f32; co_n * od_n * oh_n * ow_n];
        for co in 0..co_n {
            for id in 0..d {
                for ih in 0..h {
                    for iw in 0..w {
                        let vin = id * h * w + ih * w + iw;
                        for kd in 0..2 {
                            for kh in 0..2 {
                                for kw in 0..2 {
                                    let mut acc = self.bias.data()[co] as f64;
                                    for ci in 0..ci_n {
                                        let wi = (co * ci_n + ci) * 8 + (kd * 2 + kh) * 2 + kw;
                                        acc += weights[wi] as f64 * x[ci * plane_in + vin] as f64;
                                    }
                                    let oi = ((co * od_n + 2 * id + kd) * oh_n + 2 * ih + kh)
                                        * ow_n
                                        + 2 * iw
                                        + kw;
                                    out[oi] = acc as f32;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[co_n, od_n, oh_n, ow_n], out)
    }

    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let [ci_n, d, h, w] = self.check_input(input)?;
        let co_n = self.out_channels();
        let expected = [co_n, 2 * d, 2 * h, 2 * w];
        if grad_out.dims() != expected {
            return Err(Error::mismatch(&expected, grad_out.dims()));
        }
        let (oh_n, ow_n) = (2 * h, 2 * w);
        let od_n = 2 * d;
        let x = input.data();
        let g = grad_out.data();
        let weights = self.weight.data();
        let plane_in = d * h * w;
        let mut gw = vec![0f64; self.weight.numel()];
        let mut gb = vec![0f64; co_n];
        let mut gin = vec![0f64; input.numel()];
        for co in 0..co_n {
            for id in 0..d {
                for ih in 0..h {
                    for iw in 0..w {
                        let vin = id * h * w + ih * w + iw;
                        for kd in 0..2 {
                            for kh in 0..2 {
                                for kw in 0..2 {
                                    let oi = ((co * od_n + 2 * id + kd) * oh_n + 2 * ih + kh)
                                        * ow_n
                                        + 2 * iw
                                        + kw;
                                    let go = g[oi] as f64;
                                    gb[co] += go;
                                    for ci in 0..ci_n {
                                        let wi = (co * ci_n + ci) * 8 + (kd * 2 + kh) * 2 + kw;
                                        gw[wi] += go * x[ci * plane_in + vin] as f64;
                                        gin[ci * plane_in + vin] += go * weights[wi] as f64;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        accumulate(&mut self.grad_weight, &gw);
        accumulate(&mut self.grad_bias, &gb);
        Tensor::from_vec(input.dims(), gin.into_iter().map(|v| v as f32).collect())
    }
}

fn accumulate(target: &mut Tensor, delta: &[f64]) {
    for (t, &d) in target.data_mut().iter_mut().zip(delta) {
        *t = (*t as f64 + d) as f32;
    }
}

/// Copies `rows` rows of length `w` into `f64` rows with `p` zeros on each
/// side.
fn pad_rows(data: &[f32], rows: usize, w: usize, p: usize) -> Vec<f64> {
    let wp = w + 2 * p;
    let mut out = vec![0f64; rows * wp];
    for (dst, src) in out.chunks_exact_mut(wp).zip(data.chunks_exact(w)) {
        for (d, &s) in dst[p..p + w].iter_mut().zip(src) {
            *d = s as f64;
        }
    }
    out
}

/// Same-padded stride-1 cross-correlation of a `[C_in, D, H, W]` buffer
/// with `[C_out, C_in, k, k, k]` weights. Taps that fall outside the volume
/// along depth or height are skipped; along width the rows are zero-padded.
///
/// Output channels are processed in blocks of `CO_BLOCK` and output rows in
/// tiles of up to eight voxels, so that one accumulator tile stays in
/// registers across the whole reduction.
fn correlate_same(
    input: &[f32],
    [ci_n, d, h, w]: [usize; 4],
    weights: &[f64],
    bias: &[f64],
    co_n: usize,
    k: usize,
) -> Vec<f32> {
    let p = (k - 1) / 2;
    let padded = pad_rows(input, ci_n * d * h, w, p);
    let geom = RowGeometry { ci_n, d, h, w, k, p };
    let mut out = vec![0f32; co_n * d * h * w];
    let blocks = co_n.div_ceil(CO_BLOCK);
    let k3 = k * k * k;
    let mut packed = vec![[0f64; CO_BLOCK]; ci_n * k3];
    for blk in 0..blocks {
        let co0 = blk * CO_BLOCK;
        let width = CO_BLOCK.min(co_n - co0);
        // packed[ci * k3 + tap][b] = weight[co0 + b][ci][tap], zero beyond co_n.
        for ci in 0..ci_n {
            for t in 0..k3 {
                let mut lane = [0f64; CO_BLOCK];
                for (b, v) in lane.iter_mut().enumerate().take(width) {
                    *v = weights[((co0 + b) * ci_n + ci) * k3 + t];
                }
                packed[ci * k3 + t] = lane;
            }
        }
        let mut bias_lane = [0f64; CO_BLOCK];
        for (b, v) in bias_lane.iter_mut().enumerate().take(width) {
            *v = bias[co0 + b];
        }
        let block = CoBlock { co0, width, packed: &packed, bias: bias_lane };
        match w {
            w if w >= 8 => correlate_tiles::<8>(&padded, &geom, &block, &mut out),
            4..=7 => correlate_tiles::<4>(&padded, &geom, &block, &mut out),
            2..=3 => correlate_tiles::<2>(&padded, &geom, &block, &mut out),
            _ => correlate_tiles::<1>(&padded, &geom, &block, &mut out),
        }
    }
    out
}

const CO_BLOCK: usize = 4;

struct RowGeometry {
    ci_n: usize,
    d: usize,
    h: usize,
    w: usize,
    k: usize,
    p: usize,
}

struct CoBlock<'a> {
    co0: usize,
    width: usize,
    packed: &'a [[f64; CO_BLOCK]],
    bias: [f64; CO_BLOCK],
}

fn correlate_tiles<const XB: usize>(
    padded: &[f64],
    g: &RowGeometry,
    blk: &CoBlock<'_>,
    out: &mut [f32],
) {
    let RowGeometry { ci_n, d, h, w, k, p } = *g;
    let wp = w + 2 * p;
    let k3 = k * k * k;
    let plane = d * h * w;
    let vol = d * h * wp;
    for od in 0..d {
        let (kd_lo, kd_hi) = tap_range(od, p, d, k);
        for oh in 0..h {
            let (kh_lo, kh_hi) = tap_range(oh, p, h, k);
            let mut x0 = 0;
            while x0 < w {
                // The last tile may overlap the previous one; it recomputes
                // identical values.
                let x0c = x0.min(w - XB);
                let mut acc = [blk.bias; XB];
                for ci in 0..ci_n {
                    let src = &padded[ci * vol..(ci + 1) * vol];
                    let wci = &blk.packed[ci * k3..(ci + 1) * k3];
                    for kd in kd_lo..kd_hi {
                        let id = od + kd - p;
                        for kh in kh_lo..kh_hi {
                            let ih = oh + kh - p;
                            let row = &src[(id * h + ih) * wp + x0c..][..XB + k - 1];
                            let taps = &wci[(kd * k + kh) * k..][..k];
                            for (kw, tap) in taps.iter().enumerate() {
                                let seg = &row[kw..kw + XB];
                                for x in 0..XB {
                                    let v = seg[x];
                                    for b in 0..CO_BLOCK {
                                        acc[x][b] += tap[b] * v;
                                    }
                                }
                            }
                        }
                    }
                }
                let base = (od * h + oh) * w + x0c;
                for b in 0..blk.width {
                    let dst = &mut out[(blk.co0 + b) * plane + base..][..XB];
                    for x in 0..XB {
                        dst[x] = acc[x][b] as f32;
                    }
                }
                x0 = x0c + XB;
            }
        }
    }
}

/// `Σ_pos grad[co, pos] · input[ci, pos + tap − p]` for every weight, with
/// the input already row-padded. Output channels are handled four at a time
/// from a position-major copy of the gradient; each weight's sum runs over
/// positions in row-major order.
fn weight_gradient(
    padded: &[f64],
    grad: &[f64],
    [ci_n, d, h, w]: [usize; 4],
    co_n: usize,
    k: usize,
) -> Vec<f64> {
    let geom = RowGeometry { ci_n, d, h, w, k, p: (k - 1) / 2 };
    let plane = d * h * w;
    let mut out = vec![0f64; co_n * ci_n * k * k * k];
    let mut lanes = vec![[0f64; CO_BLOCK]; plane];
    for co0 in (0..co_n).step_by(CO_BLOCK) {
        let width = CO_BLOCK.min(co_n - co0);
        for (pos, lane) in lanes.iter_mut().enumerate() {
            *lane = [0.0; CO_BLOCK];
            for (b, v) in lane.iter_mut().enumerate().take(width) {
                *v = grad[(co0 + b) * plane + pos];
            }
        }
        match k {
            1 => weight_gradient_block::<1>(padded, &lanes, &geom, co0, width, &mut out),
            3 => weight_gradient_block::<3>(padded, &lanes, &geom, co0, width, &mut out),
            5 => weight_gradient_block::<5>(padded, &lanes, &geom, co0, width, &mut out),
            7 => weight_gradient_block::<7>(padded, &lanes, &geom, co0, width, &mut out),
            _ => unreachable!("kernel size validated at construction"),
        }
    }
    out
}

fn weight_gradient_block<const K: usize>(
    padded: &[f64],
    grad_lanes: &[[f64; CO_BLOCK]],
    g: &RowGeometry,
    co0: usize,
    width: usize,
    out: &mut [f64],
) {
    let RowGeometry { ci_n, d, h, w, p, .. } = *g;
    let wp = w + 2 * p;
    let vol = d * h * wp;
    let k3 = K * K * K;
    for ci in 0..ci_n {
        let src = &padded[ci * vol..(ci + 1) * vol];
        for kd in 0..K {
            let (d_lo, d_hi) = valid_range(kd, p, d, d);
            for kh in 0..K {
                let (h_lo, h_hi) = valid_range(kh, p, h, h);
                let mut acc = [[0f64; CO_BLOCK]; K];
                for od in d_lo..d_hi {
                    let id = od + kd - p;
                    for oh in h_lo..h_hi {
                        let ih = oh + kh - p;
                        let gl = &grad_lanes[(od * h + oh) * w..][..w];
                        let row = &src[(id * h + ih) * wp..][..wp];
                        for x in 0..w {
                            let gv = gl[x];
                            let seg = &row[x..x + K];
                            for kw in 0..K {
                                let v = seg[kw];
                                for b in 0..CO_BLOCK {
                                    acc[kw][b] += gv[b] * v;
                                }
                            }
                        }
                    }
                }
                for (kw, lane) in acc.iter().enumerate() {
                    for (b, &v) in lane.iter().enumerate().take(width) {
                        out[((co0 + b) * ci_n + ci) * k3 + (kd * K + kh) * K + kw] = v;
                    }
                }
            }
        }
    }
}

/// Kernel offsets `t` for which output position `o` reads an in-range input
/// `o + t - p`.
#[inline]
fn tap_range(o: usize, p: usize, n: usize, k: usize) -> (usize, usize) {
    let lo = p.saturating_sub(o);
    let hi = (n + p - o).min(k);
    (lo, hi)
}

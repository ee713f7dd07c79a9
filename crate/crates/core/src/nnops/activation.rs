use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Initial PReLU slope for every channel.
pub const PRELU_INIT_SLOPE: f32 = 0.25;

/// Parametric ReLU with one learnable slope per channel (axis 0).
#[derive(Clone, Debug)]
pub struct PRelu {
    pub slopes: Tensor,
    pub grad: Tensor,
}

impl PRelu {
    pub fn new(channels: usize) -> Result<Self> {
        Self::from_slopes(Tensor::full(&[channels], PRELU_INIT_SLOPE)?)
    }

    pub fn from_slopes(slopes: Tensor) -> Result<Self> {
        if slopes.shape().rank() != 1 {
            return Err(Error::InvalidShape { dims: slopes.dims().to_vec(), reason: "slopes must be 1-D" });
        }
        Ok(PRelu { grad: Tensor::zeros(slopes.dims())?, slopes })
    }

    pub fn channels(&self) -> usize {
        self.slopes.numel()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    fn check(&self, input: &Tensor) -> Result<()> {
        if input.shape().rank() == 0 || input.dims()[0] != self.channels() {
            return Err(Error::mismatch(&[self.channels()], &input.dims()[..1.min(input.dims().len())]));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        let mut out = input.clone();
        for c in 0..self.channels() {
            let a = self.slopes.data()[c];
            for v in out.outer_mut(c) {
                if *v < 0.0 {
                    *v *= a;
                }
            }
        }
        Ok(out)
    }

    /// Returns the input gradient; adds `Σ_{x<0} x·upstream` into the slope
    /// gradient of each channel.
    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        if input.dims() != grad_out.dims() {
            return Err(Error::mismatch(input.dims(), grad_out.dims()));
        }
        let mut grad_in = grad_out.clone();
        for c in 0..self.channels() {
            let a = self.slopes.data()[c];
            let mut slope_grad = 0f64;
            for (gi, &x) in grad_in.outer_mut(c).iter_mut().zip(input.outer(c)) {
                if x < 0.0 {
                    slope_grad += x as f64 * *gi as f64;
                    *gi *= a;
                }
            }
            let g = &mut self.grad.data_mut()[c];
            *g = (*g as f64 + slope_grad) as f32;
        }
        Ok(grad_in)
    }
}

/// Softmax across axis 0 independently at every voxel, with max subtraction.
pub fn softmax_voxelwise(logits: &Tensor) -> Result<Tensor> {
    let dims = logits.dims();
    if dims.len() < 2 {
        return Err(Error::InvalidShape { dims: dims.to_vec(), reason: "expected [C, ...]" });
    }
    let channels = dims[0];
    let plane = logits.numel() / channels;
    let x = logits.data();
    let mut out = vec![0f32; logits.numel()];
    for v in 0..plane {
        let max = (0..channels).map(|c| x[c * plane + v]).fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0f64;
        for c in 0..channels {
            let e = ((x[c * plane + v] - max) as f64).exp();
            out[c * plane + v] = e as f32;
            total += e;
        }
        for c in 0..channels {
            let e = out[c * plane + v] as f64;
            out[c * plane + v] = (e / total) as f32;
        }
    }
    Tensor::from_vec(dims, out)
}

/// Pulls a gradient with respect to softmax probabilities back to the logits:
/// `dz_c = p_c (g_c − Σ_k p_k g_k)`.
pub fn softmax_backward(probs: &Tensor, grad_probs: &Tensor) -> Result<Tensor> {
    if probs.dims() != grad_probs.dims() {
        return Err(Error::mismatch(probs.dims(), grad_probs.dims()));
    }
    let channels = probs.dims()[0];
    let plane = probs.numel() / channels;
    let p = probs.data();
    let g = grad_probs.data();
    let mut out = vec![0f32; probs.numel()];
    for v in 0..plane {
        let inner: f64 = (0..channels).map(|c| p[c * plane + v] as f64 * g[c * plane + v] as f64).sum();
        for c in 0..channels {
            let i = c * plane + v;
            out[i] = (p[i] as f64 * (g[i] as f64 - inner)) as f32;
        }
    }
    Tensor::from_vec(probs.dims(), out)
}

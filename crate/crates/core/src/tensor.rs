//! Dense row-major `f32` tensors.
//!
//! Volumes are laid out channel-first (`[C, D, H, W]`), width fastest. There is
//! no broadcasting: binary operations require identical shapes.
//!
//! Reductions accumulate in `f64` and visit elements in row-major buffer order,
//! so results are bitwise reproducible for a given input.

use crate::error::{Error, Result};

/// Ordered list of extents, each at least 1. The empty list is a scalar.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.contains(&0) {
            return Err(Error::InvalidShape { dims, reason: "zero extent" });
        }
        let mut count: usize = 1;
        for &d in &dims {
            count = match count.checked_mul(d) {
                Some(c) if c <= isize::MAX as usize / std::mem::size_of::<f32>() => c,
                _ => return Err(Error::InvalidShape { dims, reason: "element count overflows" }),
            };
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

/// Axis selection for [`Tensor::reduce_sum`].
#[derive(Clone, Copy, Debug)]
pub enum Axes<'a> {
    All,
    Some(&'a [usize]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    /// Allocates a tensor with every element set to `fill`.
    pub fn full(dims: &[usize], fill: f32) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![fill; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn from_vec(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::mismatch(&[shape.numel()], &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: Shape(Vec::new()), data: vec![value] }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    fn check_same(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.check_same(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|x| x * factor)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// Sum of every element, accumulated in `f64` in buffer order.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&x| x as f64).sum()
    }

    /// Sums over the selected axes, removing them from the shape. A full
    /// reduction returns a rank-0 tensor.
    pub fn reduce_sum(&self, axes: Axes<'_>) -> Result<Tensor> {
        let rank = self.shape.rank();
        let mut reduced = vec![false; rank];
        match axes {
            Axes::All => reduced.iter_mut().for_each(|r| *r = true),
            Axes::Some(list) => {
                for &axis in list {
                    if axis >= rank {
                        return Err(Error::InvalidAxis { axis, rank });
                    }
                    reduced[axis] = true;
                }
            }
        }
        if reduced.iter().all(|&r| r) {
            return Ok(Tensor::scalar(self.sum() as f32));
        }

        let dims = self.dims();
        let out_dims: Vec<usize> =
            dims.iter().zip(&reduced).filter(|(_, &r)| !r).map(|(&d, _)| d).collect();
        let out_shape = Shape::new(out_dims)?;
        let out_strides = out_shape.strides();
        // Stride of each input axis in the output buffer; zero for reduced axes.
        let mut axis_out_stride = vec![0usize; rank];
        let mut k = 0;
        for axis in 0..rank {
            if !reduced[axis] {
                axis_out_stride[axis] = out_strides[k];
                k += 1;
            }
        }

        let mut acc = vec![0f64; out_shape.numel()];
        let mut index = vec![0usize; rank];
        let mut out_pos = 0usize;
        for &x in &self.data {
            acc[out_pos] += x as f64;
            // Advance the row-major multi-index, tracking the output offset.
            for axis in (0..rank).rev() {
                index[axis] += 1;
                out_pos += axis_out_stride[axis];
                if index[axis] < dims[axis] {
                    break;
                }
                out_pos -= axis_out_stride[axis] * dims[axis];
                index[axis] = 0;
            }
        }
        Ok(Tensor { shape: out_shape, data: acc.into_iter().map(|x| x as f32).collect() })
    }

    /// Constant padding with per-axis `(before, after)` extents.
    pub fn pad(&self, pads: &[(usize, usize)], value: f32) -> Result<Tensor> {
        if pads.len() != self.shape.rank() {
            return Err(Error::mismatch(&[self.shape.rank()], &[pads.len()]));
        }
        let out_dims: Vec<usize> =
            self.dims().iter().zip(pads).map(|(&d, &(b, a))| d + b + a).collect();
        let mut out = Tensor::full(&out_dims, value)?;
        let offsets: Vec<usize> = pads.iter().map(|&(b, _)| b).collect();
        let large = out.shape.clone();
        for_each_block_row(self.dims(), &large, &offsets, |s, l, n| {
            out.data[l..l + n].copy_from_slice(&self.data[s..s + n]);
        });
        Ok(out)
    }

    /// Extracts the block starting at `starts` with extents `lens`; the
    /// inverse of [`Tensor::pad`].
    pub fn crop(&self, starts: &[usize], lens: &[usize]) -> Result<Tensor> {
        let rank = self.shape.rank();
        if starts.len() != rank || lens.len() != rank {
            return Err(Error::mismatch(&[rank], &[starts.len().min(lens.len())]));
        }
        for axis in 0..rank {
            if starts[axis] + lens[axis] > self.dims()[axis] {
                return Err(Error::InvalidShape {
                    dims: lens.to_vec(),
                    reason: "crop window exceeds tensor extent",
                });
            }
        }
        let mut out = Tensor::zeros(lens)?;
        for_each_block_row(lens, &self.shape, starts, |s, l, n| {
            out.data[s..s + n].copy_from_slice(&self.data[l..l + n]);
        });
        Ok(out)
    }

    /// Contiguous slice of outer-axis index `i` (a channel, for `[C, ...]`).
    pub fn outer(&self, i: usize) -> &[f32] {
        let inner = self.data.len() / self.dims()[0];
        &self.data[i * inner..(i + 1) * inner]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [f32] {
        let inner = self.data.len() / self.dims()[0];
        &mut self.data[i * inner..(i + 1) * inner]
    }

    /// Concatenates along axis 0.
    pub fn concat_outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape.rank() == 0 || a.dims()[1..] != b.dims()[1..] || a.shape.rank() != b.shape.rank()
        {
            return Err(Error::mismatch(a.dims(), b.dims()));
        }
        let mut dims = a.dims().to_vec();
        dims[0] += b.dims()[0];
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor::from_vec(&dims, data)
    }

    /// Splits along axis 0 into `[..at]` and `[at..]`.
    pub fn split_outer(&self, at: usize) -> Result<(Tensor, Tensor)> {
        let n = self.dims()[0];
        if at == 0 || at >= n {
            return Err(Error::InvalidShape { dims: self.dims().to_vec(), reason: "bad split" });
        }
        let inner = self.numel() / n;
        let mut left = self.dims().to_vec();
        let mut right = self.dims().to_vec();
        left[0] = at;
        right[0] = n - at;
        Ok((
            Tensor::from_vec(&left, self.data[..at * inner].to_vec())?,
            Tensor::from_vec(&right, self.data[at * inner..].to_vec())?,
        ))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Visits each innermost row of a block of extent `small` placed at
/// `offsets` inside a tensor of extent `large`, yielding the row's start in
/// both buffers and its length.
fn for_each_block_row(
    small: &[usize],
    large: &Shape,
    offsets: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = small.len();
    if rank == 0 {
        f(0, 0, 1);
        return;
    }
    let large_strides = large.strides();
    let row = small[rank - 1];
    let rows: usize = small[..rank - 1].iter().product();
    let mut index = vec![0usize; rank - 1];
    for r in 0..rows {
        let mut base = offsets[rank - 1];
        for axis in 0..rank - 1 {
            base += (index[axis] + offsets[axis]) * large_strides[axis];
        }
        f(r * row, base, row);
        for axis in (0..rank - 1).rev() {
            index[axis] += 1;
            if index[axis] < small[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
}

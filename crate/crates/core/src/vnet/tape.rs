//! Record of the ops executed by one forward pass, replayed in reverse to
//! compute gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) type NodeId = usize;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Op {
    Input,
    Conv { layer: usize, x: NodeId },
    UpConv { layer: usize, x: NodeId },
    PRelu { layer: usize, x: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Channel concatenation `[a; b]`.
    Concat { a: NodeId, b: NodeId },
    /// Output channel `c` copies input channel `c % C_in`.
    Tile { x: NodeId },
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Tape {
    pub ops: Vec<Op>,
    pub values: Vec<Tensor>,
}

impl Tape {
    pub fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        self.ops.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }
}

pub(crate) fn tile_channels(x: &Tensor, channels: usize) -> Result<Tensor> {
    let c_in = x.dims()[0];
    let mut dims = x.dims().to_vec();
    dims[0] = channels;
    let mut data = Vec::with_capacity(x.numel() / c_in * channels);
    for c in 0..channels {
        data.extend_from_slice(x.outer(c % c_in));
    }
    Tensor::from_vec(&dims, data)
}

pub(crate) fn tile_channels_backward(grad: &Tensor, c_in: usize) -> Result<Tensor> {
    let mut dims = grad.dims().to_vec();
    dims[0] = c_in;
    let mut out = Tensor::zeros(&dims)?;
    for c in 0..grad.dims()[0] {
        for (o, &g) in out.outer_mut(c % c_in).iter_mut().zip(grad.outer(c)) {
            *o += g;
        }
    }
    Ok(out)
}

/// Adds `g` into the gradient slot, allocating it on first use.
pub(crate) fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub(crate) fn missing_tape() -> Error {
    Error::Usage("backward called without a recorded forward pass")
}

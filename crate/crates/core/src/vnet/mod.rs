//! The V-Net stage graph.
//!
//! Left (compression) stage `s` runs `LEFT_CONV_COUNTS[s-1]` same-padded 5³
//! convolutions with `base·2^(s-1)` channels and adds its input back
//! (residual). Between left stages a 2³ stride-2 convolution halves the
//! extent and doubles the channels. Right (decompression) stage `s` doubles
//! the extent with a 2³ transposed convolution to `base·2^(s-1)` channels,
//! concatenates the matching left stage's output, runs its convolutions at
//! `base·2^s` channels and adds the concatenated input back. A final 1³
//! convolution maps to the class logits. Every convolution and transition is
//! followed by a per-channel PReLU.
//!
//! When stage 1 has more channels than the network input, the residual adds
//! the input tiled across channels (`channel c ← input channel c mod C_in`).

mod receptive;
mod tape;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnops::{Conv3d, ConvGeometry, ConvTranspose3d, PRelu};
use crate::tensor::Tensor;

pub use receptive::{format_table, receptive_field_table, receptive_fields, RfRow};
use tape::{accumulate, missing_tape, tile_channels, tile_channels_backward, NodeId, Op, Tape};

/// Convolutions per left stage, stages 1 through 5.
pub const LEFT_CONV_COUNTS: [usize; 5] = [1, 2, 3, 3, 3];
/// Convolutions per right stage, stages 4 down to 1.
pub const RIGHT_CONV_COUNTS: [usize; 4] = [3, 3, 2, 1];
pub const STAGE_KERNEL: usize = 5;
pub const TRANSITION_KERNEL: usize = 2;
/// Number of halvings between the input and the deepest stage.
pub const DEPTH: usize = LEFT_CONV_COUNTS.len() - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub input_extent: usize,
}

impl Default for VNetConfig {
    fn default() -> Self {
        VNetConfig { in_channels: 4, base_channels: 16, num_classes: 2, input_extent: 128 }
    }
}

impl VNetConfig {
    /// Laptop-sized geometry: 32³ input, 2 modalities, 4 base channels.
    pub fn desk() -> Self {
        VNetConfig { in_channels: 2, base_channels: 4, num_classes: 2, input_extent: 32 }
    }

    pub fn validate(&self) -> Result<()> {
        let divisor = 1 << DEPTH;
        if self.input_extent == 0 || !self.input_extent.is_multiple_of(divisor) {
            return Err(Error::Config(format!(
                "input_extent {} is not a positive multiple of {divisor}",
                self.input_extent
            )));
        }
        if self.in_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.num_classes != 2 {
            return Err(Error::Config(format!("num_classes must be 2, got {}", self.num_classes)));
        }
        Ok(())
    }

    /// Feature channels of left stage `s` (1-based).
    pub fn left_channels(&self, stage: usize) -> usize {
        self.base_channels << (stage - 1)
    }

    /// Feature channels of right stage `s` (1-based): the concatenation of
    /// the up-sampled path and the forwarded left features.
    pub fn right_channels(&self, stage: usize) -> usize {
        2 * self.left_channels(stage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageSpec {
    pub side: Side,
    pub index: usize,
    pub conv_count: usize,
    pub channels: usize,
}

/// Stages in execution order: left 1..=5, right 4..=1, output.
pub fn stage_specs(config: &VNetConfig) -> Vec<StageSpec> {
    let mut specs = Vec::new();
    for (i, &n) in LEFT_CONV_COUNTS.iter().enumerate() {
        specs.push(StageSpec {
            side: Side::Left,
            index: i + 1,
            conv_count: n,
            channels: config.left_channels(i + 1),
        });
    }
    for (j, &n) in RIGHT_CONV_COUNTS.iter().enumerate() {
        let index = DEPTH - j;
        specs.push(StageSpec {
            side: Side::Right,
            index,
            conv_count: n,
            channels: config.right_channels(index),
        });
    }
    specs.push(StageSpec {
        side: Side::Output,
        index: 0,
        conv_count: 1,
        channels: config.num_classes,
    });
    specs
}

/// A convolution followed by a PReLU, as indices into the model's layers.
#[derive(Clone, Copy, Debug)]
struct Unit {
    conv: usize,
    act: usize,
}

#[derive(Clone, Debug)]
struct LeftStage {
    units: Vec<Unit>,
    /// Stride-2 transition into the next stage; absent for the deepest one.
    down: Option<Unit>,
}

#[derive(Clone, Debug)]
struct RightStage {
    up_conv: usize,
    up_act: usize,
    units: Vec<Unit>,
}

#[derive(Clone, Debug)]
pub struct VNetModel {
    config: VNetConfig,
    convs: Vec<Conv3d>,
    up_convs: Vec<ConvTranspose3d>,
    prelus: Vec<PRelu>,
    left: Vec<LeftStage>,
    right: Vec<RightStage>,
    output: usize,
    tape: Option<Tape>,
}

impl VNetModel {
    /// Builds and initialises every layer from `seed`.
    pub fn build(config: VNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let five = ConvGeometry::same(STAGE_KERNEL)?;
        let mut convs = Vec::new();
        let mut up_convs = Vec::new();
        let mut prelus = Vec::new();

        let unit = |convs: &mut Vec<Conv3d>,
                        prelus: &mut Vec<PRelu>,
                        c_in: usize,
                        c_out: usize,
                        geometry: ConvGeometry,
                        rng: &mut ChaCha8Rng|
         -> Result<Unit> {
            convs.push(Conv3d::new(c_in, c_out, geometry, rng)?);
            prelus.push(PRelu::new(c_out)?);
            Ok(Unit { conv: convs.len() - 1, act: prelus.len() - 1 })
        };

        let mut left = Vec::new();
        let mut c_in = config.in_channels;
        for (i, &n) in LEFT_CONV_COUNTS.iter().enumerate() {
            let stage = i + 1;
            let ch = config.left_channels(stage);
            let mut units = Vec::new();
            for j in 0..n {
                let from = if j == 0 { c_in } else { ch };
                units.push(unit(&mut convs, &mut prelus, from, ch, five, &mut rng)?);
            }
            let down = if stage <= DEPTH {
                let next = config.left_channels(stage + 1);
                Some(unit(&mut convs, &mut prelus, ch, next, ConvGeometry::down(), &mut rng)?)
            } else {
                None
            };
            left.push(LeftStage { units, down });
            c_in = config.left_channels(stage + 1);
        }

        let mut right = Vec::new();
        let mut c_path = config.left_channels(DEPTH + 1);
        for (j, &n) in RIGHT_CONV_COUNTS.iter().enumerate() {
            let stage = DEPTH - j;
            let up_out = config.left_channels(stage);
            up_convs.push(ConvTranspose3d::new(c_path, up_out, &mut rng)?);
            prelus.push(PRelu::new(up_out)?);
            let (up_conv, up_act) = (up_convs.len() - 1, prelus.len() - 1);
            let ch = config.right_channels(stage);
            let mut units = Vec::new();
            for _ in 0..n {
                units.push(unit(&mut convs, &mut prelus, ch, ch, five, &mut rng)?);
            }
            right.push(RightStage { up_conv, up_act, units });
            c_path = ch;
        }

        convs.push(Conv3d::new(c_path, config.num_classes, ConvGeometry::same(1)?, &mut rng)?);
        let output = convs.len() - 1;

        Ok(VNetModel { config, convs, up_convs, prelus, left, right, output, tape: None })
    }

    pub fn config(&self) -> &VNetConfig {
        &self.config
    }

    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Every parameter tensor in a fixed order: convolutions (weight, bias),
    /// transposed convolutions (weight, bias), PReLU slopes.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for c in &self.up_convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.extend(self.prelus.iter().map(|p| &p.slopes));
        out
    }

    /// Gradient buffers, parallel to [`VNetModel::params`].
    pub fn grads(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(&c.grad_weight);
            out.push(&c.grad_bias);
        }
        for c in &self.up_convs {
            out.push(&c.grad_weight);
            out.push(&c.grad_bias);
        }
        out.extend(self.prelus.iter().map(|p| &p.grad));
        out
    }

    /// Mutable parameters paired with their gradients, in
    /// [`VNetModel::params`] order.
    pub fn params_and_grads_mut(&mut self) -> Vec<(&mut Tensor, &Tensor)> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push((&mut c.weight, &c.grad_weight));
            out.push((&mut c.bias, &c.grad_bias));
        }
        for c in &mut self.up_convs {
            out.push((&mut c.weight, &c.grad_weight));
            out.push((&mut c.bias, &c.grad_bias));
        }
        out.extend(self.prelus.iter_mut().map(|p| (&mut p.slopes, &p.grad)));
        out
    }

    /// Overwrites every parameter, in [`VNetModel::params`] order.
    pub fn load_params(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.params_and_grads_mut();
        if slots.len() != values.len() {
            return Err(Error::mismatch(&[slots.len()], &[values.len()]));
        }
        for ((p, _), v) in slots.iter_mut().zip(values) {
            if p.dims() != v.dims() {
                return Err(Error::mismatch(p.dims(), v.dims()));
            }
            p.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.convs.iter_mut().for_each(Conv3d::zero_grad);
        self.up_convs.iter_mut().for_each(ConvTranspose3d::zero_grad);
        self.prelus.iter_mut().for_each(PRelu::zero_grad);
    }

    /// Forward pass without recording; safe on a shared, frozen model.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let tape = self.run(input)?;
        Ok(tape.values.last().expect("non-empty tape").clone())
    }

    /// Forward pass that keeps every intermediate for [`VNetModel::backward`]
    /// when `record_tape` is set.
    pub fn forward(&mut self, input: &Tensor, record_tape: bool) -> Result<Tensor> {
        let mut tape = self.run(input)?;
        let out = if record_tape {
            let out = tape.values.last().expect("non-empty tape").clone();
            self.tape = Some(tape);
            out
        } else {
            self.tape = None;
            tape.values.pop().expect("non-empty tape")
        };
        Ok(out)
    }

    /// Replays the recorded pass in reverse, adding into every parameter
    /// gradient, and returns the gradient with respect to the input. The tape
    /// is consumed.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let tape = self.tape.take().ok_or_else(missing_tape)?;
        let last = tape.values.len() - 1;
        if upstream.dims() != tape.value(last).dims() {
            return Err(Error::mismatch(tape.value(last).dims(), upstream.dims()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; tape.ops.len()];
        grads[last] = Some(upstream.clone());
        let mut input_grad = None;

        for id in (0..tape.ops.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            match tape.ops[id] {
                Op::Input => input_grad = Some(g),
                Op::Conv { layer, x } => {
                    let gx = self.convs[layer].backward(tape.value(x), &g)?;
                    accumulate(&mut grads[x], gx)?;
                }
                Op::UpConv { layer, x } => {
                    let gx = self.up_convs[layer].backward(tape.value(x), &g)?;
                    accumulate(&mut grads[x], gx)?;
                }
                Op::PRelu { layer, x } => {
                    let gx = self.prelus[layer].backward(tape.value(x), &g)?;
                    accumulate(&mut grads[x], gx)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a], g.clone())?;
                    accumulate(&mut grads[b], g)?;
                }
                Op::Concat { a, b } => {
                    let (ga, gb) = g.split_outer(tape.value(a).dims()[0])?;
                    accumulate(&mut grads[a], ga)?;
                    accumulate(&mut grads[b], gb)?;
                }
                Op::Tile { x, .. } => {
                    let gx = tile_channels_backward(&g, tape.value(x).dims()[0])?;
                    accumulate(&mut grads[x], gx)?;
                }
            }
        }
        input_grad.ok_or(Error::Usage("tape has no input node"))
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    fn run(&self, input: &Tensor) -> Result<Tape> {
        let n = self.config.input_extent;
        let expected = [self.config.in_channels, n, n, n];
        if input.dims() != expected {
            return Err(Error::mismatch(&expected, input.dims()));
        }
        let mut tape = Tape::default();
        let mut x = tape.push(Op::Input, input.clone());
        let mut skips = Vec::new();

        for stage in &self.left {
            let out = self.left_stage(&mut tape, stage, x)?;
            match stage.down {
                Some(down) => {
                    skips.push(out);
                    x = self.unit(&mut tape, down, out)?;
                }
                None => x = out,
            }
        }

        for stage in &self.right {
            let skip = skips.pop().ok_or(Error::Usage("decoder stage without skip features"))?;
            let up = self.up_convs[stage.up_conv].forward(tape.value(x))?;
            let up = tape.push(Op::UpConv { layer: stage.up_conv, x }, up);
            let act = self.prelus[stage.up_act].forward(tape.value(up))?;
            let up = tape.push(Op::PRelu { layer: stage.up_act, x: up }, act);
            let cat = Tensor::concat_outer(tape.value(up), tape.value(skip))?;
            let cat = tape.push(Op::Concat { a: up, b: skip }, cat);
            let mut h = cat;
            for &u in &stage.units {
                h = self.unit(&mut tape, u, h)?;
            }
            x = self.add(&mut tape, h, cat)?;
        }

        let logits = self.convs[self.output].forward(tape.value(x))?;
        tape.push(Op::Conv { layer: self.output, x }, logits);
        Ok(tape)
    }

    fn unit(&self, tape: &mut Tape, u: Unit, x: NodeId) -> Result<NodeId> {
        let y = self.convs[u.conv].forward(tape.value(x))?;
        let y = tape.push(Op::Conv { layer: u.conv, x }, y);
        let z = self.prelus[u.act].forward(tape.value(y))?;
        Ok(tape.push(Op::PRelu { layer: u.act, x: y }, z))
    }

    fn add(&self, tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sum = tape.value(a).add(tape.value(b))?;
        Ok(tape.push(Op::Add { a, b }, sum))
    }

    fn left_stage(&self, tape: &mut Tape, stage: &LeftStage, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for &u in &stage.units {
            h = self.unit(tape, u, h)?;
        }
        let channels = tape.value(h).dims()[0];
        let residual = if tape.value(x).dims()[0] == channels {
            x
        } else {
            let tiled = tile_channels(tape.value(x), channels)?;
            tape.push(Op::Tile { x }, tiled)
        };
        self.add(tape, h, residual)
    }

    /// Runs left stage `stage` (1-based) on `input`, convolutions plus
    /// residual only, without the down transition.
    pub fn left_stage_forward(&self, stage: usize, input: &Tensor) -> Result<Tensor> {
        let spec = self
            .left
            .get(stage.wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!("no left stage {stage}")))?;
        let mut tape = Tape::default();
        let x = tape.push(Op::Input, input.clone());
        let out = self.left_stage(&mut tape, spec, x)?;
        Ok(tape.values.swap_remove(out))
    }
}

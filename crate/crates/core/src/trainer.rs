//! SGD training loop, evaluation and checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{Case, LabelMap, VolumeImage};
use crate::loss::{binarize, dice_coefficient, loss_from_logits, LossKind};
use crate::nnops::softmax_voxelwise;
use crate::tensor::Tensor;
use crate::vnet::{VNetConfig, VNetModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Save every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Foreground weight of the cross-entropy loss. `None` uses the
    /// background/foreground voxel ratio of the training set.
    pub fg_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            momentum: 0.9,
            loss: LossKind::Dice,
            seed: 0,
            checkpoint_every: 0,
            fg_weight: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be non-negative", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if let Some(w) = self.fg_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("fg_weight {w} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parses a flat `key = value` file holding both model and training fields.
/// Blank lines and `#` comments are ignored; unknown keys are errors.
pub fn parse_config(text: &str) -> Result<(VNetConfig, TrainConfig)> {
    let mut model = VNetConfig::desk();
    let mut train = TrainConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("line {}: {key}: {e}", n + 1));
        macro_rules! parse {
            () => {
                value.parse().map_err(|e| bad(&e))?
            };
        }
        match key {
            "in_channels" => model.in_channels = parse!(),
            "base_channels" => model.base_channels = parse!(),
            "num_classes" => model.num_classes = parse!(),
            "input_extent" => model.input_extent = parse!(),
            "epochs" => train.epochs = parse!(),
            "learning_rate" | "lr" => train.learning_rate = parse!(),
            "momentum" => train.momentum = parse!(),
            "loss" => train.loss = parse!(),
            "seed" => train.seed = parse!(),
            "checkpoint_every" => train.checkpoint_every = parse!(),
            "fg_weight" => {
                train.fg_weight = match value {
                    "auto" => None,
                    _ => Some(parse!()),
                }
            }
            _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1))),
        }
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_dice: f64,
}

/// Optimizer and bookkeeping carried across epochs and checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub velocity: Vec<Tensor>,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: &VNetModel) -> Self {
        let velocity = model.params().iter().map(|p| Tensor::zeros(p.dims()).expect("valid dims")).collect();
        TrainState { epoch: 0, velocity, history: Vec::new() }
    }
}

/// `v = mu v + g; p -= lr v`.
pub fn sgd_step(model: &mut VNetModel, velocity: &mut [Tensor], lr: f64, momentum: f64) {
    let (lr, mu) = (lr as f32, momentum as f32);
    for ((p, g), v) in model.params_and_grads_mut().into_iter().zip(velocity) {
        for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
}

/// Background over foreground voxel count, or 1 when there is no foreground.
pub fn class_ratio(cases: &[Case]) -> f64 {
    let (fg, total) = cases
        .iter()
        .fold((0usize, 0usize), |(f, t), c| (f + c.truth.foreground_count(), t + c.truth.len()));
    if fg == 0 {
        1.0
    } else {
        (total - fg) as f64 / fg as f64
    }
}

fn check_input(config: &VNetConfig, image: &VolumeImage) -> Result<()> {
    let e = config.input_extent;
    let expected = [config.in_channels, e, e, e];
    if image.data().dims() != expected {
        return Err(Error::mismatch(&expected, image.data().dims()));
    }
    Ok(())
}

/// Visit order of the cases in `epoch` (1-based), a function of the seed
/// and epoch only.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs epochs `state.epoch + 1 ..= cfg.epochs`, calling `after_epoch` once
/// each epoch completes.
pub fn train(
    model: &mut VNetModel,
    cases: &[Case],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut after_epoch: impl FnMut(&VNetModel, &TrainState) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for case in cases {
        check_input(model.config(), &case.image)?;
    }
    if state.velocity.len() != model.params().len() {
        return Err(Error::Checkpoint("optimizer state does not match the model".into()));
    }
    let fg_weight = cfg.fg_weight.unwrap_or_else(|| class_ratio(cases));
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let (mut loss_sum, mut dice_sum) = (0f64, 0f64);
        for i in epoch_order(cfg.seed, epoch, cases.len()) {
            let case = &cases[i];
            model.zero_grad();
            let logits = model.forward(case.image.data(), true)?;
            let out = loss_from_logits(cfg.loss, &logits, &case.truth, fg_weight)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, case: case.id.clone() });
            }
            model.backward(&out.logit_grad)?;
            sgd_step(model, &mut state.velocity, cfg.learning_rate, cfg.momentum);
            loss_sum += out.loss;
            dice_sum += dice_coefficient(&binarize(&out.probs)?, &case.truth)?.value();
        }
        let n = cases.len() as f64;
        state.epoch = epoch;
        state.history.push(EpochRecord { epoch, loss: loss_sum / n, train_dice: dice_sum / n });
        after_epoch(model, state)?;
    }
    Ok(())
}

/// Softmax probabilities and the binarized segmentation of one image.
pub fn predict(model: &VNetModel, image: &VolumeImage) -> Result<(Tensor, LabelMap)> {
    check_input(model.config(), image)?;
    let probs = softmax_voxelwise(&model.infer(image.data())?)?;
    let labels = binarize(&probs)?;
    Ok((probs, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseScore {
    pub case: String,
    pub dice: f64,
    pub predicted_voxels: usize,
    pub truth_voxels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub cases: Vec<CaseScore>,
    pub mean_dice: f64,
}

impl Evaluation {
    pub fn to_table(&self) -> String {
        let width = self.cases.iter().map(|c| c.case.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:>6}  {:>9}  {:>9}\n", "case", "dice", "predicted", "truth");
        for c in &self.cases {
            let _ = writeln!(out, "{:<width$}  {:>6.4}  {:>9}  {:>9}", c.case, c.dice, c.predicted_voxels, c.truth_voxels);
        }
        let _ = writeln!(out, "{:<width$}  {:>6.4}", "mean", self.mean_dice);
        out
    }
}

pub fn evaluate(model: &VNetModel, cases: &[Case]) -> Result<Evaluation> {
    if cases.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut scores = Vec::with_capacity(cases.len());
    for case in cases {
        let (_, labels) = predict(model, &case.image)?;
        scores.push(CaseScore {
            case: case.id.clone(),
            dice: dice_coefficient(&labels, &case.truth)?.value(),
            predicted_voxels: labels.foreground_count(),
            truth_voxels: case.truth.foreground_count(),
        });
    }
    let mean_dice = scores.iter().map(|s| s.dice).sum::<f64>() / scores.len() as f64;
    Ok(Evaluation { cases: scores, mean_dice })
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VNETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: VNetConfig,
    train: TrainConfig,
}

/// Serialized form: magic, version, JSON configs, epoch, tensor shape
/// directory, parameters, velocities, history. All numbers little-endian.
pub fn checkpoint_bytes(model: &VNetModel, cfg: &TrainConfig, state: &TrainState) -> Result<Vec<u8>> {
    let params = model.params();
    if state.velocity.len() != params.len() {
        return Err(Error::Checkpoint("optimizer state does not match the model".into()));
    }
    let meta = serde_json::to_vec(&CheckpointMeta { model: *model.config(), train: cfg.clone() })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(state.epoch as u64).to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in &params {
        out.extend_from_slice(&(p.dims().len() as u32).to_le_bytes());
        for &d in p.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in params.iter().copied().chain(&state.velocity) {
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&(state.history.len() as u32).to_le_bytes());
    for r in &state.history {
        out.extend_from_slice(&(r.epoch as u64).to_le_bytes());
        out.extend_from_slice(&r.loss.to_le_bytes());
        out.extend_from_slice(&r.train_dice.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn tensor(&mut self, dims: &[usize]) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Tensor::from_vec(dims, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Inverse of [`checkpoint_bytes`]. Trailing bytes are rejected.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(VNetModel, TrainConfig, TrainState)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let epoch = r.u64()? as usize;
    let count = r.u32()? as usize;
    let mut model = VNetModel::build(meta.model, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let expected: Vec<Vec<usize>> = model.params().iter().map(|p| p.dims().to_vec()).collect();
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("{count} tensors, model has {}", expected.len())));
    }
    for want in &expected {
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != want {
            return Err(Error::Checkpoint(format!("tensor shape {dims:?} does not match {want:?}")));
        }
    }
    let params = expected.iter().map(|d| r.tensor(d)).collect::<Result<Vec<_>>>()?;
    let velocity = expected.iter().map(|d| r.tensor(d)).collect::<Result<Vec<_>>>()?;
    let n_hist = r.u32()? as usize;
    let mut history = Vec::with_capacity(n_hist.min(1 << 20));
    for _ in 0..n_hist {
        history.push(EpochRecord { epoch: r.u64()? as usize, loss: r.f64()?, train_dice: r.f64()? });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    model.load_params(&params)?;
    Ok((model, meta.train, TrainState { epoch, velocity, history }))
}

pub fn save_checkpoint(path: &Path, model: &VNetModel, cfg: &TrainConfig, state: &TrainState) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model, cfg, state)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(VNetModel, TrainConfig, TrainState)> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

//! Reference implementations and finite-difference tools shared by the
//! integration tests. Everything here is deliberately naive.

#![allow(dead_code)]

pub mod reference;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnetseg::Tensor;

pub fn random_tensor(dims: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Cross-correlation over `[C, D, H, W]` with weights `[O, C, k, k, k]`,
/// zero padding `pad` on every side and equal stride on every axis.
pub fn naive_conv3d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [c_n, d, h, wd] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let (o_n, k) = (w.dims()[0], w.dims()[2]);
    let out_len = |n: usize| (n + 2 * pad - k) / stride + 1;
    let (od, oh, ow) = (out_len(d), out_len(h), out_len(wd));
    let xv = |c: usize, z: i64, y: i64, xx: i64| -> f64 {
        if z < 0 || y < 0 || xx < 0 || z >= d as i64 || y >= h as i64 || xx >= wd as i64 {
            0.0
        } else {
            x.data()[((c * d + z as usize) * h + y as usize) * wd + xx as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(o_n * od * oh * ow);
    for o in 0..o_n {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[o] as f64;
                    for c in 0..c_n {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let wi = (((o * c_n + c) * k + kz) * k + ky) * k + kx;
                                    let iz = (z * stride + kz) as i64 - pad as i64;
                                    let iy = (y * stride + ky) as i64 - pad as i64;
                                    let ix = (xx * stride + kx) as i64 - pad as i64;
                                    acc += w.data()[wi] as f64 * xv(c, iz, iy, ix);
                                }
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    Tensor::from_vec(&[o_n, od, oh, ow], out).unwrap()
}

/// 2×2×2 stride-2 transposed convolution by scattering each input voxel.
pub fn naive_conv_transpose(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let [c_n, d, h, wd] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let o_n = w.dims()[0];
    let (od, oh, ow) = (2 * d, 2 * h, 2 * wd);
    let mut out = vec![0f64; o_n * od * oh * ow];
    for o in 0..o_n {
        for v in out[o * od * oh * ow..(o + 1) * od * oh * ow].iter_mut() {
            *v = b.data()[o] as f64;
        }
        for c in 0..c_n {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        let xval = x.data()[((c * d + z) * h + y) * wd + xx] as f64;
                        for a in 0..2 {
                            for bb in 0..2 {
                                for cc in 0..2 {
                                    let wi = (o * c_n + c) * 8 + (a * 2 + bb) * 2 + cc;
                                    let oi = ((o * od + 2 * z + a) * oh + 2 * y + bb) * ow + 2 * xx + cc;
                                    out[oi] += w.data()[wi] as f64 * xval;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[o_n, od, oh, ow], out.into_iter().map(|v| v as f32).collect()).unwrap()
}

/// `sum_i r_i y_i` in f64.
pub fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Central difference of `f` with respect to `values[idx]`, using the step
/// actually representable in f32.
pub fn central_difference(values: &mut [f32], idx: usize, h: f32, mut f: impl FnMut(&[f32]) -> f64) -> f64 {
    let orig = values[idx];
    let (plus, minus) = (orig + h, orig - h);
    values[idx] = plus;
    let fp = f(values);
    values[idx] = minus;
    let fm = f(values);
    values[idx] = orig;
    (fp - fm) / (plus as f64 - minus as f64)
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// `count` distinct indices below `n`, deterministic in `seed`.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, count).into_vec()
}

pub mod gradcheck {
    //! Each check returns the largest relative error between analytic and
    //! central-difference gradients over a deterministic sample of entries.

    use super::reference::{perturbed, to_vol, weighted_sum_ref, ReferenceVNet};
    use super::*;
    use vnetseg::imageio::LabelMap;
    use vnetseg::loss::{loss_from_logits, soft_dice_loss, weighted_cross_entropy, LossKind};
    use vnetseg::nnops::{softmax_voxelwise, Conv3d, ConvGeometry, ConvTranspose3d, PRelu};
    use vnetseg::vnet::{VNetConfig, VNetModel};

    /// Entries sampled per tensor.
    pub const SAMPLES: usize = 12;

    fn worst(errors: impl IntoIterator<Item = f64>) -> f64 {
        errors.into_iter().fold(0.0, f64::max)
    }

    fn check_tensor(
        target: &Tensor,
        analytic: &Tensor,
        h: f32,
        floor: f64,
        seed: u64,
        mut loss: impl FnMut(&Tensor) -> f64,
    ) -> f64 {
        let mut values = target.data().to_vec();
        let dims = target.dims().to_vec();
        let idx = sample_indices(values.len(), SAMPLES, seed);
        worst(idx.into_iter().map(|i| {
            let n = central_difference(&mut values, i, h, |v| loss(&Tensor::from_vec(&dims, v.to_vec()).unwrap()));
            relative_error(analytic.data()[i] as f64, n, floor)
        }))
    }

    pub fn conv3d(geometry: ConvGeometry, c_in: usize, c_out: usize, extent: usize, seed: u64) -> f64 {
        let k = geometry.kernel;
        let w = random_tensor(&[c_out, c_in, k, k, k], seed);
        let b = random_tensor(&[c_out], seed + 1);
        let x = random_tensor(&[c_in, extent, extent, extent], seed + 2);
        let mut conv = Conv3d::from_params(w.clone(), b.clone(), geometry).unwrap();
        let r = random_tensor(&conv.output_dims(&x).unwrap(), seed + 3);
        let gx = conv.backward(&x, &r).unwrap();
        let (gw, gb) = (conv.grad_weight.clone(), conv.grad_bias.clone());
        // The layer is linear in every argument, so a large step is exact.
        let h = 0.25;
        let floor = 1e-3;
        let ex = check_tensor(&x, &gx, h, floor, seed, |x| {
            weighted_sum(&Conv3d::from_params(w.clone(), b.clone(), geometry).unwrap().forward(x).unwrap(), &r)
        });
        let ew = check_tensor(&w, &gw, h, floor, seed + 4, |w| {
            weighted_sum(&Conv3d::from_params(w.clone(), b.clone(), geometry).unwrap().forward(&x).unwrap(), &r)
        });
        let eb = check_tensor(&b, &gb, h, floor, seed + 5, |b| {
            weighted_sum(&Conv3d::from_params(w.clone(), b.clone(), geometry).unwrap().forward(&x).unwrap(), &r)
        });
        worst([ex, ew, eb])
    }

    pub fn conv_transpose3d(c_in: usize, c_out: usize, extent: usize, seed: u64) -> f64 {
        let w = random_tensor(&[c_out, c_in, 2, 2, 2], seed);
        let b = random_tensor(&[c_out], seed + 1);
        let x = random_tensor(&[c_in, extent, extent, extent], seed + 2);
        let mut up = ConvTranspose3d::from_params(w.clone(), b.clone()).unwrap();
        let r = random_tensor(&[c_out, 2 * extent, 2 * extent, 2 * extent], seed + 3);
        let gx = up.backward(&x, &r).unwrap();
        let (gw, gb) = (up.grad_weight.clone(), up.grad_bias.clone());
        let (h, floor) = (0.25, 1e-3);
        let run = |w: &Tensor, b: &Tensor, x: &Tensor| {
            weighted_sum(&ConvTranspose3d::from_params(w.clone(), b.clone()).unwrap().forward(x).unwrap(), &r)
        };
        worst([
            check_tensor(&x, &gx, h, floor, seed, |x| run(&w, &b, x)),
            check_tensor(&w, &gw, h, floor, seed + 4, |w| run(w, &b, &x)),
            check_tensor(&b, &gb, h, floor, seed + 5, |b| run(&w, b, &x)),
        ])
    }

    pub fn prelu(channels: usize, extent: usize, seed: u64) -> f64 {
        // Keep inputs at least 0.1 from the kink so a 0.01 step stays on one side.
        let x = random_tensor(&[channels, extent, extent, extent], seed).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 });
        let slopes = random_tensor(&[channels], seed + 1).map(|v| 0.25 + 0.2 * v);
        let r = random_tensor(x.dims(), seed + 2);
        let mut act = PRelu::from_slopes(slopes.clone()).unwrap();
        let gx = act.backward(&x, &r).unwrap();
        let gs = act.grad.clone();
        let (h, floor) = (0.01, 1e-3);
        let run = |s: &Tensor, x: &Tensor| weighted_sum(&PRelu::from_slopes(s.clone()).unwrap().forward(x).unwrap(), &r);
        worst([
            check_tensor(&x, &gx, h, floor, seed, |x| run(&slopes, x)),
            check_tensor(&slopes, &gs, h, floor, seed + 3, |s| run(s, &x)),
        ])
    }

    fn random_labels(extent: usize, seed: u64) -> LabelMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = extent.pow(3);
        LabelMap::new([extent; 3], (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect()).unwrap()
    }

    /// Gradient of loss(softmax(logits)) with respect to the logits.
    pub fn softmax_loss(kind: LossKind, extent: usize, seed: u64) -> f64 {
        let logits = random_tensor(&[2, extent, extent, extent], seed).scale(2.0);
        let truth = random_labels(extent, seed + 1);
        let fg_weight = 2.5;
        let analytic = loss_from_logits(kind, &logits, &truth, fg_weight).unwrap().logit_grad;
        let (h, floor) = (1e-2, 1e-3);
        let mut values = logits.data().to_vec();
        let scale = analytic.data().iter().fold(0f32, |m, &g| m.max(g.abs())) as f64;
        let idx = sample_indices(values.len(), 4 * SAMPLES, seed + 2);
        worst(idx.into_iter().map(|i| {
            let n = central_difference(&mut values, i, h, |v| {
                let probs = softmax_voxelwise(&Tensor::from_vec(logits.dims(), v.to_vec()).unwrap()).unwrap();
                match kind {
                    LossKind::Dice => soft_dice_loss(&probs, &truth).unwrap().0,
                    LossKind::WeightedCe => weighted_cross_entropy(&probs, &truth, fg_weight).unwrap().0,
                }
            });
            relative_error(analytic.data()[i] as f64, n, floor * scale)
        }))
    }

    /// Largest output difference between the model and the f64 reference,
    /// relative to the largest reference output.
    pub fn vnet_forward_agreement(config: VNetConfig, seed: u64) -> f64 {
        let model = VNetModel::build(config, seed).unwrap();
        let e = config.input_extent;
        let x = random_tensor(&[config.in_channels, e, e, e], seed + 1);
        let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
        let reference = ReferenceVNet::new(&config, &params).forward(to_vol(&x));
        let y = model.infer(&x).unwrap();
        let peak = reference.v.iter().fold(0f64, |m, v| m.max(v.abs()));
        let diff = reference.v.iter().zip(y.data()).fold(0f64, |m, (a, &b)| m.max((a - b as f64).abs()));
        diff / peak
    }

    /// Whole-network check: analytic gradients from the model against central
    /// differences of the f64 reference network, on `samples` parameter
    /// entries spread over the parameter tensors plus as many input entries.
    /// Errors are floored at 1e-3 of the largest gradient in the tensor.
    pub fn vnet(config: VNetConfig, samples: usize, seed: u64) -> f64 {
        let mut model = VNetModel::build(config, seed).unwrap();
        let e = config.input_extent;
        let x = random_tensor(&[config.in_channels, e, e, e], seed + 1);
        let r = random_tensor(&[2, e, e, e], seed + 2);
        model.zero_grad();
        model.forward(&x, true).unwrap();
        let gx = model.backward(&r).unwrap();
        let grads: Vec<Tensor> = model.grads().into_iter().cloned().collect();
        let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
        let floor = |t: &Tensor| 1e-3 * t.data().iter().fold(0f32, |m, &g| m.max(g.abs())) as f64;

        let net = ReferenceVNet::new(&config, &params);
        let x0 = to_vol(&x);
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
        let mut errors = Vec::new();
        let stride = (params.len() / samples).max(1);
        for s in 0..samples {
            let t = (s * stride + rng.random_range(0..stride)).min(params.len() - 1);
            let i = rng.random_range(0..params[t].numel());
            let fp = weighted_sum_ref(&perturbed(&net, t, i, h).forward(x0.clone()), &r);
            let fm = weighted_sum_ref(&perturbed(&net, t, i, -h).forward(x0.clone()), &r);
            errors.push(relative_error(grads[t].data()[i] as f64, (fp - fm) / (2.0 * h), floor(&grads[t])));
        }
        for i in sample_indices(x0.v.len(), samples, seed + 4) {
            let mut xp = x0.clone();
            xp.v[i] += h;
            let mut xm = x0.clone();
            xm.v[i] -= h;
            let n = (weighted_sum_ref(&net.forward(xp), &r) - weighted_sum_ref(&net.forward(xm), &r)) / (2.0 * h);
            errors.push(relative_error(gx.data()[i] as f64, n, floor(&gx)));
        }
        worst(errors)
    }
}

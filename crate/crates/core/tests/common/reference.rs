//! Double-precision V-Net forward pass written from the architecture
//! description alone. It reads parameters in the model's public order:
//! convolutions (weight, bias), transposed convolutions (weight, bias),
//! PReLU slopes, each family in construction order.

use vnetseg::vnet::{VNetConfig, LEFT_CONV_COUNTS, RIGHT_CONV_COUNTS};
use vnetseg::Tensor;

#[derive(Clone)]
pub struct Vol {
    pub c: usize,
    pub n: usize,
    pub v: Vec<f64>,
}

impl Vol {
    fn at(&self, c: usize, z: i64, y: i64, x: i64) -> f64 {
        let n = self.n as i64;
        if z < 0 || y < 0 || x < 0 || z >= n || y >= n || x >= n {
            return 0.0;
        }
        self.v[((c * self.n + z as usize) * self.n + y as usize) * self.n + x as usize]
    }
}

struct Param {
    dims: Vec<usize>,
    v: Vec<f64>,
}

fn conv(x: &Vol, w: &Param, b: &Param, stride: usize) -> Vol {
    let (o_n, k) = (w.dims[0], w.dims[2]);
    let pad = if stride == 1 { (k - 1) / 2 } else { 0 };
    let n = x.n / stride;
    let mut v = vec![0f64; o_n * n * n * n];
    for o in 0..o_n {
        for z in 0..n {
            for y in 0..n {
                for xx in 0..n {
                    let mut acc = b.v[o];
                    for c in 0..x.c {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let wv = w.v[(((o * x.c + c) * k + kz) * k + ky) * k + kx];
                                    let iz = (z * stride + kz) as i64 - pad as i64;
                                    let iy = (y * stride + ky) as i64 - pad as i64;
                                    let ix = (xx * stride + kx) as i64 - pad as i64;
                                    acc += wv * x.at(c, iz, iy, ix);
                                }
                            }
                        }
                    }
                    v[((o * n + z) * n + y) * n + xx] = acc;
                }
            }
        }
    }
    Vol { c: o_n, n, v }
}

fn up_conv(x: &Vol, w: &Param, b: &Param) -> Vol {
    let o_n = w.dims[0];
    let n = 2 * x.n;
    let mut v = vec![0f64; o_n * n * n * n];
    for o in 0..o_n {
        for z in 0..n {
            for y in 0..n {
                for xx in 0..n {
                    let mut acc = b.v[o];
                    for c in 0..x.c {
                        let wv = w.v[(o * x.c + c) * 8 + ((z % 2) * 2 + y % 2) * 2 + xx % 2];
                        acc += wv * x.at(c, (z / 2) as i64, (y / 2) as i64, (xx / 2) as i64);
                    }
                    v[((o * n + z) * n + y) * n + xx] = acc;
                }
            }
        }
    }
    Vol { c: o_n, n, v }
}

fn prelu(x: &Vol, a: &Param) -> Vol {
    let block = x.n.pow(3);
    let v = x.v.iter().enumerate().map(|(i, &t)| if t > 0.0 { t } else { a.v[i / block] * t }).collect();
    Vol { c: x.c, n: x.n, v }
}

fn add(a: &Vol, b: &Vol) -> Vol {
    Vol { c: a.c, n: a.n, v: a.v.iter().zip(&b.v).map(|(p, q)| p + q).collect() }
}

/// Channel `c` of the result is channel `c mod C` of `x`.
fn tile(x: &Vol, channels: usize) -> Vol {
    let block = x.n.pow(3);
    let mut v = Vec::with_capacity(channels * block);
    for c in 0..channels {
        v.extend_from_slice(&x.v[(c % x.c) * block..(c % x.c + 1) * block]);
    }
    Vol { c: channels, n: x.n, v }
}

fn concat(a: &Vol, b: &Vol) -> Vol {
    let mut v = a.v.clone();
    v.extend_from_slice(&b.v);
    Vol { c: a.c + b.c, n: a.n, v }
}

pub struct ReferenceVNet {
    convs: Vec<(Param, Param)>,
    ups: Vec<(Param, Param)>,
    slopes: Vec<Param>,
}

impl ReferenceVNet {
    pub fn new(config: &VNetConfig, params: &[Tensor]) -> Self {
        let depth = LEFT_CONV_COUNTS.len();
        let n_convs = LEFT_CONV_COUNTS.iter().sum::<usize>() + (depth - 1) + RIGHT_CONV_COUNTS.iter().sum::<usize>() + 1;
        let n_ups = RIGHT_CONV_COUNTS.len();
        let mut it = params.iter().map(|t| Param { dims: t.dims().to_vec(), v: t.data().iter().map(|&x| x as f64).collect() });
        let convs = (0..n_convs).map(|_| (it.next().unwrap(), it.next().unwrap())).collect();
        let ups = (0..n_ups).map(|_| (it.next().unwrap(), it.next().unwrap())).collect();
        let slopes: Vec<Param> = it.collect();
        assert_eq!(slopes.len(), n_convs - 1 + n_ups, "parameter count for {config:?}");
        ReferenceVNet { convs, ups, slopes }
    }

    pub fn forward(&self, x: Vol) -> Vol {
        let (mut ci, mut ai, mut ui) = (0, 0, 0);
        let unit = |h: &Vol, stride: usize, ci: &mut usize, ai: &mut usize| {
            let (w, b) = &self.convs[*ci];
            *ci += 1;
            let y = prelu(&conv(h, w, b, stride), &self.slopes[*ai]);
            *ai += 1;
            y
        };
        let mut skips = Vec::new();
        let mut u = x;
        for (s, &count) in LEFT_CONV_COUNTS.iter().enumerate() {
            let mut h = u.clone();
            for _ in 0..count {
                h = unit(&h, 1, &mut ci, &mut ai);
            }
            let residual = if u.c == h.c { u.clone() } else { tile(&u, h.c) };
            let out = add(&h, &residual);
            if s + 1 < LEFT_CONV_COUNTS.len() {
                u = unit(&out, 2, &mut ci, &mut ai);
                skips.push(out);
            } else {
                u = out;
            }
        }
        for &count in RIGHT_CONV_COUNTS.iter() {
            let (w, b) = &self.ups[ui];
            ui += 1;
            let up = prelu(&up_conv(&u, w, b), &self.slopes[ai]);
            ai += 1;
            let cat = concat(&up, &skips.pop().unwrap());
            let mut h = cat.clone();
            for _ in 0..count {
                h = unit(&h, 1, &mut ci, &mut ai);
            }
            u = add(&h, &cat);
        }
        let (w, b) = &self.convs[ci];
        conv(&u, w, b, 1)
    }
}

pub fn to_vol(t: &Tensor) -> Vol {
    Vol { c: t.dims()[0], n: t.dims()[1], v: t.data().iter().map(|&x| x as f64).collect() }
}

/// `sum_i r_i y_i` over a reference output.
pub fn weighted_sum_ref(y: &Vol, r: &Tensor) -> f64 {
    y.v.iter().zip(r.data()).map(|(a, &b)| a * b as f64).sum()
}

/// Perturbs entry `i` of parameter tensor `t` by `delta` in double precision.
pub fn perturbed(net: &ReferenceVNet, t: usize, i: usize, delta: f64) -> ReferenceVNet {
    let clone = |p: &Param| Param { dims: p.dims.clone(), v: p.v.clone() };
    let mut flat: Vec<Param> = Vec::new();
    for (w, b) in net.convs.iter().chain(&net.ups) {
        flat.push(clone(w));
        flat.push(clone(b));
    }
    flat.extend(net.slopes.iter().map(clone));
    flat[t].v[i] += delta;
    let n_convs = net.convs.len();
    let n_ups = net.ups.len();
    let mut it = flat.into_iter();
    let convs = (0..n_convs).map(|_| (it.next().unwrap(), it.next().unwrap())).collect();
    let ups = (0..n_ups).map(|_| (it.next().unwrap(), it.next().unwrap())).collect();
    ReferenceVNet { convs, ups, slopes: it.collect() }
}

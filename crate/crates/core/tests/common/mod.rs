//! Brute-force reference kernels shared by the kernel and acceptance tests.

#![allow(dead_code)]

use feanet::tensor::PoolKind;
use feanet::{ConvSpec, Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

pub fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, s: &ConvSpec) -> Tensor {
    let xs = x.shape();
    let (kh, kw) = s.kernel;
    let oh = (xs.h + 2 * s.padding - kh) / s.stride + 1;
    let ow = (xs.w + 2 * s.padding - kw) / s.stride + 1;
    let mut out = Tensor::zeros([xs.n, s.out_channels, oh, ow]);
    for n in 0..xs.n {
        for o in 0..s.out_channels {
            for y in 0..oh {
                for x_ in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..xs.c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * s.stride + i) as isize - s.padding as isize;
                                let ix = (x_ * s.stride + j) as isize - s.padding as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, i, j);
                            }
                        }
                    }
                    let idx = out.shape().index(n, o, y, x_);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

/// Scatter form: every input pixel stamps the kernel into the output.
pub fn naive_transposed(x: &Tensor, w: &Tensor, b: Option<&Tensor>, s: &ConvSpec) -> Tensor {
    let xs = x.shape();
    let (kh, kw) = s.kernel;
    let full_h = (xs.h - 1) * s.stride + kh;
    let full_w = (xs.w - 1) * s.stride + kw;
    let (oh, ow) = (full_h - 2 * s.padding, full_w - 2 * s.padding);
    let mut out = Tensor::zeros([xs.n, s.out_channels, oh, ow]);
    for n in 0..xs.n {
        for c in 0..xs.c {
            for y in 0..xs.h {
                for x_ in 0..xs.w {
                    for o in 0..s.out_channels {
                        for i in 0..kh {
                            for j in 0..kw {
                                let oy = (y * s.stride + i) as isize - s.padding as isize;
                                let ox = (x_ * s.stride + j) as isize - s.padding as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let idx = out.shape().index(n, o, oy as usize, ox as usize);
                                out.data_mut()[idx] += x.at(n, c, y, x_) * w.at(c, o, i, j);
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = b {
        for n in 0..xs.n {
            for o in 0..s.out_channels {
                for y in 0..oh {
                    for x_ in 0..ow {
                        let idx = out.shape().index(n, o, y, x_);
                        out.data_mut()[idx] += b.data()[o];
                    }
                }
            }
        }
    }
    out
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> (Shape, ConvSpec) {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=4);
    let h = rng.random_range(3..=8);
    let w = rng.random_range(3..=8);
    let k = rng.random_range(1..=3);
    let spec = ConvSpec::new(c, rng.random_range(1..=4), k)
        .stride(rng.random_range(1..=2))
        .padding(rng.random_range(0..k))
        .bias(rng.random_bool(0.5));
    (Shape::new(n, c, h, w), spec)
}

pub fn naive_pool(x: &Tensor, kind: PoolKind, k: usize, s: usize) -> Tensor {
    let xs = x.shape();
    let (oh, ow) = ((xs.h - k) / s + 1, (xs.w - k) / s + 1);
    let mut out = Tensor::zeros([xs.n, xs.c, oh, ow]);
    for n in 0..xs.n {
        for c in 0..xs.c {
            for y in 0..oh {
                for x_ in 0..ow {
                    let window: Vec<f64> = (0..k)
                        .flat_map(|i| (0..k).map(move |j| (i, j)))
                        .map(|(i, j)| x.at(n, c, y * s + i, x_ * s + j))
                        .collect();
                    let v = match kind {
                        PoolKind::Max => window.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                        PoolKind::Avg => window.iter().sum::<f64>() / window.len() as f64,
                    };
                    let idx = out.shape().index(n, c, y, x_);
                    out.data_mut()[idx] = v;
                }
            }
        }
    }
    out
}

pub fn naive_bn(x: &Tensor, gamma: &[f64], beta: &[f64], stats: Option<(&[f64], &[f64])>, eps: f64) -> Tensor {
    let xs = x.shape();
    let mut out = x.clone();
    for c in 0..xs.c {
        let vals: Vec<f64> = (0..xs.n)
            .flat_map(|n| (0..xs.h).flat_map(move |h| (0..xs.w).map(move |w| (n, h, w))))
            .map(|(n, h, w)| x.at(n, c, h, w))
            .collect();
        let (mean, var) = match stats {
            Some((m, v)) => (m[c], v[c]),
            None => {
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                (m, vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64)
            }
        };
        for n in 0..xs.n {
            for h in 0..xs.h {
                for w in 0..xs.w {
                    let idx = xs.index(n, c, h, w);
                    out.data_mut()[idx] = gamma[c] * (x.data()[idx] - mean) / (var + eps).sqrt() + beta[c];
                }
            }
        }
    }
    out
}

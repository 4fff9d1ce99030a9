use super::conv::gemm;
use super::graph::{BatchStats, Graph, Op, Var};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

fn per_channel(op: &'static str, v: &Tensor, channels: usize) -> Result<()> {
    if v.numel() != channels {
        return Err(Error::shape(
            op,
            format!("{} per-channel values for {channels} channels", v.numel()),
        ));
    }
    Ok(())
}

/// Index of the first maximum; ties resolve to the lowest index.
fn first_argmax(values: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, v) in values {
        if best.0 == usize::MAX || v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub(crate) fn batch_norm_backward(
    s: Shape,
    gamma: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    batch_stats: bool,
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = s.plane();
    let m = (s.n * plane) as f64;
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            for i in base..base + plane {
                dgamma[c] += dy[i] * xhat[i];
                dbeta[c] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0; s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let k = gamma[c] * inv_std[c];
            for i in base..base + plane {
                dx[i] = if batch_stats {
                    // dgamma/dbeta are exactly the two reductions of dxhat / gamma.
                    k * (dy[i] - dbeta[c] / m - xhat[i] * dgamma[c] / m)
                } else {
                    k * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn avg_pool_backward(
    xs: Shape,
    ys: Shape,
    window: usize,
    stride: usize,
    dy: &[f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; xs.numel()];
    let scale = 1.0 / (window * window) as f64;
    for nc in 0..xs.n * xs.c {
        for oy in 0..ys.h {
            for ox in 0..ys.w {
                let d = dy[(nc * ys.h + oy) * ys.w + ox] * scale;
                for ky in 0..window {
                    let row = (nc * xs.h + oy * stride + ky) * xs.w + ox * stride;
                    dx[row..row + window].iter_mut().for_each(|v| *v += d);
                }
            }
        }
    }
    dx
}

pub(crate) fn dense_backward(x: &Tensor, w: &Tensor, dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.shape().n;
    let fin = x.numel() / n;
    let fout = w.shape().n;
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    // dX (n x in) = dY (n x out) * W (out x in)
    gemm(
        n,
        fout,
        fin,
        (dy, fout as isize, 1),
        (w.data(), fin as isize, 1),
        0.0,
        &mut dx,
    );
    // dW (out x in) = dY^T (out x n) * X (n x in)
    gemm(
        fout,
        n,
        fin,
        (dy, 1, fout as isize),
        (x.data(), fin as isize, 1),
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0; fout];
    for row in dy.chunks(fout) {
        db.iter_mut().zip(row).for_each(|(b, d)| *b += d);
    }
    (dx, dw, db)
}

pub(crate) fn softmax_channel_backward(s: &Tensor, dy: &[f64]) -> Vec<f64> {
    let sh = s.shape();
    let plane = sh.plane();
    let sd = s.data();
    let mut dx = vec![0.0; sh.numel()];
    for n in 0..sh.n {
        for p in 0..plane {
            let idx = |c: usize| (n * sh.c + c) * plane + p;
            let dot: f64 = (0..sh.c).map(|c| sd[idx(c)] * dy[idx(c)]).sum();
            for c in 0..sh.c {
                dx[idx(c)] = sd[idx(c)] * (dy[idx(c)] - dot);
            }
        }
    }
    dx
}

/// Maps every index of `a` to the broadcast index of `b`.
fn broadcast_index(a: Shape, b: Shape) -> impl Fn(usize) -> usize {
    let pick = |ad: usize, bd: usize| if bd == 1 && ad != 1 { 0 } else { 1 };
    let keep = [pick(a.n, b.n), pick(a.c, b.c), pick(a.h, b.h), pick(a.w, b.w)];
    move |i| {
        let w = i % a.w;
        let h = (i / a.w) % a.h;
        let c = (i / a.plane()) % a.c;
        let n = i / (a.c * a.plane());
        b.index(n * keep[0], c * keep[1], h * keep[2], w * keep[3])
    }
}

pub(crate) fn mul_backward(a: &Tensor, b: &Tensor, dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let map = broadcast_index(a.shape(), b.shape());
    let mut da = vec![0.0; a.numel()];
    let mut db = vec![0.0; b.numel()];
    for (i, &d) in dy.iter().enumerate() {
        let j = map(i);
        da[i] = d * b.data()[j];
        db[j] += d * a.data()[i];
    }
    (da, db)
}

pub(crate) fn concat_backward(parts: &[(Var, Shape)], out: Shape, dy: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let plane = out.plane();
    let mut offset = 0;
    let mut grads = Vec::with_capacity(parts.len());
    for &(v, s) in parts {
        let mut g = Vec::with_capacity(s.numel());
        for n in 0..out.n {
            let start = (n * out.c + offset) * plane;
            g.extend_from_slice(&dy[start..start + s.c * plane]);
        }
        offset += s.c;
        grads.push((v, g));
    }
    grads
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    SoftmaxChannel,
}

impl Graph {
    /// Batch normalization using the batch's own per-channel statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let xs = self.shape(x);
        per_channel("batchnorm2d", self.value(gamma), xs.c)?;
        per_channel("batchnorm2d", self.value(beta), xs.c)?;
        let plane = xs.plane();
        let count = xs.n * plane;
        let xd = self.value(x).data();
        let mut mean = vec![0.0; xs.c];
        let mut var = vec![0.0; xs.c];
        for c in 0..xs.c {
            let vals = (0..xs.n).flat_map(|n| {
                let base = (n * xs.c + c) * plane;
                xd[base..base + plane].iter().copied()
            });
            mean[c] = vals.clone().sum::<f64>() / count as f64;
            var[c] = vals.map(|v| (v - mean[c]).powi(2)).sum::<f64>() / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.normalize(x, gamma, beta, &mean, &inv_std);
        let unbiased = if count > 1 {
            var.iter().map(|v| v * count as f64 / (count - 1) as f64).collect()
        } else {
            var.clone()
        };
        let y = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
        );
        Ok((y, BatchStats { mean, var: unbiased }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.shape(x).c;
        per_channel("batchnorm2d", self.value(gamma), c)?;
        per_channel("batchnorm2d", self.value(beta), c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(
                "batchnorm2d",
                format!("running statistics do not have {c} channels"),
            ));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.normalize(x, gamma, beta, running_mean, &inv_std);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
        ))
    }

    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
    ) -> (Tensor, Vec<f64>) {
        let xs = self.shape(x);
        let plane = xs.plane();
        let xd = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xs.numel()];
        let mut out = vec![0.0; xs.numel()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let base = (n * xs.c + c) * plane;
                for i in base..base + plane {
                    xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + b[c];
                }
            }
        }
        (Tensor::from_vec(xs, out).expect("same shape"), xhat)
    }

    /// Windowed pooling without padding. The window must tile the input
    /// exactly: `(h - window) % stride == 0`.
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x);
        if window == 0 || stride == 0 {
            return Err(Error::shape("pool2d", "window and stride must be positive"));
        }
        if xs.h < window || xs.w < window || (xs.h - window) % stride != 0 || (xs.w - window) % stride != 0
        {
            return Err(Error::shape(
                "pool2d",
                format!(
                    "window {window} stride {stride} does not tile {}x{} exactly",
                    xs.h, xs.w
                ),
            ));
        }
        let ys = Shape::new(xs.n, xs.c, (xs.h - window) / stride + 1, (xs.w - window) / stride + 1);
        let xd = self.value(x).data();
        match kind {
            PoolKind::Max => {
                let mut index = Vec::with_capacity(ys.numel());
                for nc in 0..xs.n * xs.c {
                    for oy in 0..ys.h {
                        for ox in 0..ys.w {
                            let cells = (0..window).flat_map(|ky| {
                                (0..window).map(move |kx| {
                                    (nc * xs.h + oy * stride + ky) * xs.w + ox * stride + kx
                                })
                            });
                            index.push(first_argmax(cells.map(|i| (i, xd[i]))));
                        }
                    }
                }
                let out = index.iter().map(|&i| xd[i]).collect();
                let out = Tensor::from_vec(ys, out)?;
                Ok(self.push(out, Op::Gather { x, index }))
            }
            PoolKind::Avg => {
                let scale = 1.0 / (window * window) as f64;
                let mut out = Vec::with_capacity(ys.numel());
                for nc in 0..xs.n * xs.c {
                    for oy in 0..ys.h {
                        for ox in 0..ys.w {
                            let mut s = 0.0;
                            for ky in 0..window {
                                let row = (nc * xs.h + oy * stride + ky) * xs.w + ox * stride;
                                s += xd[row..row + window].iter().sum::<f64>();
                            }
                            out.push(s * scale);
                        }
                    }
                }
                let out = Tensor::from_vec(ys, out)?;
                Ok(self.push(out, Op::AvgPool { x, window, stride }))
            }
        }
    }

    /// Reduces every `(h, w)` plane to one value: `(n, c, 1, 1)`.
    pub fn global_pool(&mut self, x: Var, kind: PoolKind) -> Var {
        let xs = self.shape(x);
        let plane = xs.plane();
        let xd = self.value(x).data();
        let ys = Shape::new(xs.n, xs.c, 1, 1);
        match kind {
            PoolKind::Max => {
                let index: Vec<usize> = (0..xs.n * xs.c)
                    .map(|nc| first_argmax((nc * plane..(nc + 1) * plane).map(|i| (i, xd[i]))))
                    .collect();
                let out = index.iter().map(|&i| xd[i]).collect();
                let out = Tensor::from_vec(ys, out).expect("shape");
                self.push(out, Op::Gather { x, index })
            }
            PoolKind::Avg => {
                let out = xd
                    .chunks(plane)
                    .map(|p| p.iter().sum::<f64>() / plane as f64)
                    .collect();
                let out = Tensor::from_vec(ys, out).expect("shape");
                self.push(out, Op::GlobalAvg { x })
            }
        }
    }

    /// Reduces across channels at every pixel: `(n, 1, h, w)`.
    pub fn channel_reduce(&mut self, x: Var, kind: PoolKind) -> Var {
        let xs = self.shape(x);
        let plane = xs.plane();
        let xd = self.value(x).data();
        let ys = Shape::new(xs.n, 1, xs.h, xs.w);
        let at = move |n: usize, c: usize, p: usize| (n * xs.c + c) * plane + p;
        match kind {
            PoolKind::Max => {
                let index: Vec<usize> = (0..xs.n)
                    .flat_map(|n| {
                        (0..plane).map(move |p| {
                            first_argmax((0..xs.c).map(|c| (at(n, c, p), xd[at(n, c, p)])))
                        })
                    })
                    .collect();
                let out = index.iter().map(|&i| xd[i]).collect();
                let out = Tensor::from_vec(ys, out).expect("shape");
                self.push(out, Op::Gather { x, index })
            }
            PoolKind::Avg => {
                let out = (0..xs.n)
                    .flat_map(|n| {
                        (0..plane)
                            .map(move |p| (0..xs.c).map(|c| xd[at(n, c, p)]).sum::<f64>() / xs.c as f64)
                    })
                    .collect();
                let out = Tensor::from_vec(ys, out).expect("shape");
                self.push(out, Op::ChannelAvg { x })
            }
        }
    }

    /// `y = W x + b` per batch item. `x` is `(n, in, 1, 1)` (any trailing
    /// layout with `c*h*w == in` is accepted), `W` is `(out, in, 1, 1)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let fin = xs.c * xs.plane();
        if ws.c * ws.plane() != fin {
            return Err(Error::shape(
                "dense",
                format!("weight {ws} expects {} inputs, got {fin}", ws.c * ws.plane()),
            ));
        }
        let fout = ws.n;
        if let Some(b) = b {
            per_channel("dense", self.value(b), fout)?;
        }
        let mut out = vec![0.0; xs.n * fout];
        gemm(
            xs.n,
            fin,
            fout,
            (self.value(x).data(), fin as isize, 1),
            (self.value(w).data(), 1, fin as isize),
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bd).for_each(|(v, b)| *v += b);
            }
        }
        let out = Tensor::from_vec(Shape::new(xs.n, fout, 1, 1), out)?;
        Ok(self.push(out, Op::Dense { x, w, b }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::SoftmaxChannel => self.softmax_channel(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid { x })
    }

    /// Softmax across the channel axis independently at every pixel.
    pub fn softmax_channel(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let plane = xs.plane();
        let xd = self.value(x).data();
        let mut out = vec![0.0; xs.numel()];
        for n in 0..xs.n {
            for p in 0..plane {
                let idx = |c: usize| (n * xs.c + c) * plane + p;
                let m = (0..xs.c).map(|c| xd[idx(c)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for c in 0..xs.c {
                    let e = (xd[idx(c)] - m).exp();
                    out[idx(c)] = e;
                    z += e;
                }
                for c in 0..xs.c {
                    out[idx(c)] /= z;
                }
            }
        }
        let out = Tensor::from_vec(xs, out).expect("shape");
        self.push(out, Op::SoftmaxChannel { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("add", format!("{sa} vs {sb}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(sa, data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Elementwise product; `b` broadcasts along axes where its extent is 1.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.dims().iter().zip(sb.dims()).all(|(&x, y)| y == x || y == 1);
        if !ok {
            return Err(Error::shape(
                "mul",
                format!("{sb} does not broadcast onto {sa}"),
            ));
        }
        let map = broadcast_index(sa, sb);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let data = ad.iter().enumerate().map(|(i, v)| v * bd[map(i)]).collect();
        let out = Tensor::from_vec(sa, data)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale { x, k })
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat", "nothing to concatenate"))?;
        let s0 = self.shape(first);
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::shape("concat", format!("{s} vs {s0}")));
            }
            c += s.c;
        }
        let mut data = Vec::with_capacity(s0.n * c * s0.plane());
        for n in 0..s0.n {
            for &p in parts {
                data.extend_from_slice(self.value(p).item(n));
            }
        }
        let out = Tensor::from_vec(Shape::new(s0.n, c, s0.h, s0.w), data)?;
        Ok(self.push(
            out,
            Op::ConcatChannels {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Sum of all entries as a `(1, 1, 1, 1)` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::full([1, 1, 1, 1], s), Op::Sum { x })
    }

    /// Records a scalar whose gradient w.r.t. `x` is already known.
    pub(crate) fn fused_scalar(&mut self, x: Var, value: f64, dx: Vec<f64>) -> Var {
        debug_assert_eq!(dx.len(), self.value(x).numel());
        self.push(Tensor::full([1, 1, 1, 1], value), Op::Fused { x, dx })
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x: Tensor, f: impl FnOnce(&mut Graph, Var) -> Var) -> Tensor {
        let mut g = Graph::new();
        let v = g.constant(x);
        let y = f(&mut g, v);
        g.value(y).clone()
    }

    #[test]
    fn pool_2x2() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let max = run(x.clone(), |g, v| g.pool2d(v, PoolKind::Max, 2, 2).unwrap());
        let avg = run(x, |g, v| g.pool2d(v, PoolKind::Avg, 2, 2).unwrap());
        assert_eq!(max.data(), &[4.0]);
        assert_eq!(avg.data(), &[2.5]);
    }

    #[test]
    fn pool_rejects_inexact_tiling() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::zeros([1, 1, 5, 5]));
        assert!(g.pool2d(v, PoolKind::Max, 2, 2).is_err());
        assert!(g.pool2d(v, PoolKind::Max, 3, 2).is_ok());
    }

    #[test]
    fn max_pool_gradient_goes_to_first_tie() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec([1, 1, 2, 2], vec![3., 3., 1., 3.]).unwrap());
        let y = g.pool2d(x, PoolKind::Max, 2, 2).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1., 0., 0., 0.]);
    }

    #[test]
    fn global_and_channel_reductions() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let avg = run(x.clone(), |g, v| g.global_pool(v, PoolKind::Avg));
        let max = run(x, |g, v| g.global_pool(v, PoolKind::Max));
        assert_eq!((avg.data()[0], max.data()[0]), (2.5, 4.0));

        let x = Tensor::from_vec([1, 4, 1, 1], vec![1., 2., 3., 4.]).unwrap();
        let avg = run(x.clone(), |g, v| g.channel_reduce(v, PoolKind::Avg));
        let max = run(x, |g, v| g.channel_reduce(v, PoolKind::Max));
        assert_eq!((avg.data()[0], max.data()[0]), (2.5, 4.0));

        let c = Tensor::full([2, 3, 2, 2], 0.7);
        for kind in [PoolKind::Max, PoolKind::Avg] {
            let y = run(c.clone(), |g, v| g.global_pool(v, kind));
            assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
            let y = run(c.clone(), |g, v| g.channel_reduce(v, kind));
            assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        }
    }

    #[test]
    fn dense_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec([1, 2, 1, 1], vec![1., 1.]).unwrap());
        let w = g.constant(Tensor::from_vec([2, 2, 1, 1], vec![1., 2., 3., 4.]).unwrap());
        let y = g.dense(x, w, None).unwrap();
        assert_eq!(g.value(y).data(), &[3., 7.]);

        let x = g.constant(Tensor::from_vec([1, 3, 1, 1], vec![0.3, -2., 5.]).unwrap());
        let eye = g.constant(
            Tensor::from_vec([3, 3, 1, 1], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
        );
        let zero_b = g.constant(Tensor::vector(vec![0.0; 3]));
        let y = g.dense(x, eye, Some(zero_b)).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let zero_w = g.constant(Tensor::zeros([2, 3, 1, 1]));
        let b = g.constant(Tensor::vector(vec![0.25, -1.5]));
        let y = g.dense(x, zero_w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[0.25, -1.5]);
    }

    #[test]
    fn activations() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1., 0., 2.]).unwrap();
        assert_eq!(run(x.clone(), |g, v| g.relu(v)).data(), &[0., 0., 2.]);
        assert_eq!(run(x, |g, v| g.sigmoid(v)).data()[1], 0.5);
        let s = run(Tensor::full([2, 9, 3, 3], 1.7), |g, v| g.softmax_channel(v));
        assert!(s.data().iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
        let big = Tensor::from_vec([1, 1, 1, 2], vec![-800., 800.]).unwrap();
        let y = run(big, |g, v| g.sigmoid(v));
        assert!(y.data()[0] >= 0.0 && y.data()[1] <= 1.0 && y.is_finite());
    }

    #[test]
    fn batch_norm_constant_channel_gives_beta() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([3, 2, 2, 2], 4.2));
        let gamma = g.constant(Tensor::vector(vec![1.3, -0.4]));
        let beta = g.constant(Tensor::vector(vec![0.5, -2.0]));
        let (y, stats) = g.batch_norm_train(x, gamma, beta, DEFAULT_BN_EPS).unwrap();
        let yv = g.value(y);
        for n in 0..3 {
            assert!((yv.at(n, 0, 1, 1) - 0.5).abs() < 1e-12);
            assert!((yv.at(n, 1, 0, 1) + 2.0).abs() < 1e-12);
        }
        assert!(stats.mean.iter().all(|m| (m - 4.2).abs() < 1e-12));
    }

    #[test]
    fn batch_norm_fixed_point() {
        let mut g = Graph::new();
        let data = vec![-1.0, 1.0, 1.0, -1.0];
        let x = g.constant(Tensor::from_vec([2, 1, 1, 2], data.clone()).unwrap());
        let gamma = g.constant(Tensor::vector(vec![1.0]));
        let beta = g.constant(Tensor::vector(vec![0.0]));
        let (y, _) = g.batch_norm_train(x, gamma, beta, 1e-12).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn running_stats_momentum() {
        let mut rs = RunningStats::new(1);
        rs.update(
            &BatchStats {
                mean: vec![2.0],
                var: vec![3.0],
            },
            0.1,
        );
        assert!((rs.mean[0] - 0.2).abs() < 1e-15);
        assert!((rs.var[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn mul_broadcasts_both_ways() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec([1, 2, 1, 2], vec![1., 2., 3., 4.]).unwrap());
        let ch = g.constant(Tensor::from_vec([1, 2, 1, 1], vec![10., 100.]).unwrap());
        let px = g.constant(Tensor::from_vec([1, 1, 1, 2], vec![-1., 2.]).unwrap());
        let y = g.mul(a, ch).unwrap();
        assert_eq!(g.value(y).data(), &[10., 20., 300., 400.]);
        let y = g.mul(a, px).unwrap();
        assert_eq!(g.value(y).data(), &[-1., 4., -3., 8.]);
        assert!(g.mul(ch, a).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones([1, 1, 1, 2]));
        assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn backward_of_sum_and_square() {
        let mut g = Graph::new();
        let xv = Tensor::from_vec([1, 2, 1, 2], vec![0.5, -1., 2., 3.]).unwrap();
        let x = g.param(xv.clone());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);

        let mut g = Graph::new();
        let x = g.param(xv.clone());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        g.backward(half).unwrap();
        assert_eq!(g.grad(x).unwrap(), xv.data());

        // a second pass accumulates
        g.backward(half).unwrap();
        let doubled: Vec<f64> = xv.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.grad(x).unwrap(), &doubled[..]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }
}

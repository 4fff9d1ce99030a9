//! Convolution and transposed convolution via im2col and a dense GEMM.

use super::graph::{Graph, Op, Var};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution layer.
///
/// The same spec describes a transposed convolution, in which case the
/// weight is laid out `(in_channels, out_channels, kh, kw)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, stride 1, no padding, no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            padding: 0,
            has_bias: false,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::shape(op, "channel counts must be positive"));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 {
            return Err(Error::shape(op, "kernel and stride must be positive"));
        }
        Ok(())
    }

    /// Output size of the forward convolution, `(h + 2p - k) / s + 1`.
    ///
    /// Uses floor division, so a trailing row or column that no window
    /// fully covers is dropped.
    pub fn conv_output(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate("conv2d")?;
        let (kh, kw) = self.kernel;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {ph}x{pw}"),
            ));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    /// `true` when the forward geometry tiles the padded input exactly.
    pub fn is_exact(&self, h: usize, w: usize) -> bool {
        let (kh, kw) = self.kernel;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        ph >= kh && pw >= kw && (ph - kh) % self.stride == 0 && (pw - kw) % self.stride == 0
    }

    /// Output size of the transposed convolution, `(h - 1) s - 2p + k`.
    pub fn transposed_output(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate("transposed_conv2d")?;
        let (kh, kw) = self.kernel;
        let full_h = (h.saturating_sub(1)) * self.stride + kh;
        let full_w = (w.saturating_sub(1)) * self.stride + kw;
        if h == 0 || w == 0 || full_h <= 2 * self.padding || full_w <= 2 * self.padding {
            return Err(Error::shape(
                "transposed_conv2d",
                format!("padding {} leaves no output for {h}x{w} input", self.padding),
            ));
        }
        Ok((full_h - 2 * self.padding, full_w - 2 * self.padding))
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn transposed_weight_shape(&self) -> Shape {
        Shape::new(
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
        )
    }

    fn patch_len(&self, channels: usize) -> usize {
        channels * self.kernel.0 * self.kernel.1
    }
}

/// Spatial geometry shared by im2col and col2im: an `(c, h, w)` image
/// scanned by windows producing an `oh x ow` grid.
#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds windows into a `(c*kh*kw, oh*ow)` row-major matrix.
fn im2col(x: &[f64], g: Geometry, cols: &mut [f64]) {
    let ncols = g.oh * g.ow;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto the image.
fn col2im(cols: &[f64], g: Geometry, x: &mut [f64]) {
    let ncols = g.oh * g.ow;
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Strided matrix operand: `(data, row_stride, col_stride)`.
pub(super) type Mat<'a> = (&'a [f64], isize, isize);

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, with `c` row-major.
pub(super) fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: operand extents are checked by the callers' shape logic; the
    // asserts below guard the largest index each operand can touch.
    assert!(a.0.len() >= (m - 1) * a.1 as usize + (k - 1) * a.2 as usize + 1);
    assert!(b.0.len() >= (k - 1) * b.1 as usize + (n - 1) * b.2 as usize + 1);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<()> {
    match (bias, spec.has_bias) {
        (Some(b), true) if b.numel() == spec.out_channels => Ok(()),
        (Some(b), true) => Err(Error::shape(
            op,
            format!(
                "bias has {} entries, out_channels is {}",
                b.numel(),
                spec.out_channels
            ),
        )),
        (None, false) => Ok(()),
        (Some(_), false) => Err(Error::shape(op, "bias given but spec has no bias")),
        (None, true) => Err(Error::shape(op, "spec requires a bias")),
    }
}

fn check_input(op: &'static str, x: Shape, channels: usize) -> Result<()> {
    if x.c != channels {
        return Err(Error::shape(
            op,
            format!("input channel dim c={} but spec expects {channels}", x.c),
        ));
    }
    Ok(())
}

fn check_weight(op: &'static str, w: Shape, expected: Shape) -> Result<()> {
    if w != expected {
        let names = ["dim0", "dim1", "kh", "kw"];
        let (i, _) = w
            .dims()
            .iter()
            .zip(expected.dims())
            .enumerate()
            .find(|(_, (a, b))| **a != *b)
            .map(|(i, (a, b))| (i, (*a, b)))
            .unwrap_or((0, (0, 0)));
        return Err(Error::shape(
            op,
            format!(
                "weight shape {w} differs from expected {expected} in {}",
                names[i]
            ),
        ));
    }
    Ok(())
}

fn conv_geometry(x: Shape, spec: &ConvSpec) -> Result<Geometry> {
    let (oh, ow) = spec.conv_output(x.h, x.w)?;
    Ok(Geometry {
        c: x.c,
        h: x.h,
        w: x.w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        oh,
        ow,
    })
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let xs = x.shape();
    check_input("conv2d", xs, spec.in_channels)?;
    check_weight("conv2d", w.shape(), spec.weight_shape())?;
    check_bias("conv2d", bias, spec)?;
    let g = conv_geometry(xs, spec)?;
    let k = spec.patch_len(xs.c);
    let p = g.oh * g.ow;
    let cout = spec.out_channels;
    let mut out = vec![0.0; xs.n * cout * p];
    let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { k * p }];
    for n in 0..xs.n {
        let xn = x.item(n);
        let cols: &[f64] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        let yn = &mut out[n * cout * p..(n + 1) * cout * p];
        gemm(
            cout,
            k,
            p,
            (w.data(), k as isize, 1),
            (cols, p as isize, 1),
            0.0,
            yn,
        );
        if let Some(b) = bias {
            for (co, row) in yn.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::from_vec(Shape::new(xs.n, cout, g.oh, g.ow), out)
}

/// Returns `(dx, dw, db)`. `dx` is empty when `need_dx` is false and `db`
/// is empty when there is no bias.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    dy: &[f64],
    need_dx: bool,
    has_bias: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let xs = x.shape();
    let g = conv_geometry(xs, spec).expect("geometry validated in forward");
    let k = spec.patch_len(xs.c);
    let p = g.oh * g.ow;
    let cout = spec.out_channels;
    let mut dw = vec![0.0; cout * k];
    let mut db = vec![0.0; if has_bias { cout } else { 0 }];
    let mut dx = vec![0.0; if need_dx { xs.numel() } else { 0 }];
    let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { k * p }];
    let mut dcols = vec![0.0; if need_dx { k * p } else { 0 }];
    let item = xs.c * xs.plane();
    for n in 0..xs.n {
        let dyn_ = &dy[n * cout * p..(n + 1) * cout * p];
        let xn = x.item(n);
        let cols: &[f64] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        // dW += dY (cout x p) * cols^T (p x k)
        gemm(
            cout,
            p,
            k,
            (dyn_, p as isize, 1),
            (cols, 1, p as isize),
            1.0,
            &mut dw,
        );
        if has_bias {
            for (co, row) in dyn_.chunks(p).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
        }
        if need_dx {
            // dcols = W^T (k x cout) * dY (cout x p)
            let dxn = &mut dx[n * item..(n + 1) * item];
            if g.is_pointwise() {
                gemm(
                    k,
                    cout,
                    p,
                    (w.data(), 1, k as isize),
                    (dyn_, p as isize, 1),
                    0.0,
                    dxn,
                );
            } else {
                gemm(
                    k,
                    cout,
                    p,
                    (w.data(), 1, k as isize),
                    (dyn_, p as isize, 1),
                    0.0,
                    &mut dcols,
                );
                col2im(&dcols, g, dxn);
            }
        }
    }
    (dx, dw, db)
}

/// The transposed convolution scatters each input pixel through the kernel;
/// its output plays the role of the input in the matching forward geometry.
fn transposed_geometry(x: Shape, spec: &ConvSpec) -> Result<Geometry> {
    let (oh, ow) = spec.transposed_output(x.h, x.w)?;
    Ok(Geometry {
        c: spec.out_channels,
        h: oh,
        w: ow,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        oh: x.h,
        ow: x.w,
    })
}

pub(crate) fn conv_transpose2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let xs = x.shape();
    check_input("transposed_conv2d", xs, spec.in_channels)?;
    check_weight("transposed_conv2d", w.shape(), spec.transposed_weight_shape())?;
    check_bias("transposed_conv2d", bias, spec)?;
    let g = transposed_geometry(xs, spec)?;
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let k = spec.patch_len(cout);
    let p = xs.plane();
    let out_item = cout * g.h * g.w;
    let mut out = vec![0.0; xs.n * out_item];
    let mut cols = vec![0.0; k * p];
    for n in 0..xs.n {
        // cols (k x p) = W^T (k x cin) * X (cin x p)
        gemm(
            k,
            cin,
            p,
            (w.data(), 1, k as isize),
            (x.item(n), p as isize, 1),
            0.0,
            &mut cols,
        );
        let yn = &mut out[n * out_item..(n + 1) * out_item];
        col2im(&cols, g, yn);
        if let Some(b) = bias {
            for (co, plane) in yn.chunks_mut(g.h * g.w).enumerate() {
                let bv = b.data()[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::from_vec(Shape::new(xs.n, cout, g.h, g.w), out)
}

pub(crate) fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    dy: &[f64],
    need_dx: bool,
    has_bias: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let xs = x.shape();
    let g = transposed_geometry(xs, spec).expect("geometry validated in forward");
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let k = spec.patch_len(cout);
    let p = xs.plane();
    let out_item = cout * g.h * g.w;
    let mut dw = vec![0.0; cin * k];
    let mut db = vec![0.0; if has_bias { cout } else { 0 }];
    let mut dx = vec![0.0; if need_dx { xs.numel() } else { 0 }];
    let mut dcols = vec![0.0; k * p];
    for n in 0..xs.n {
        let dyn_ = &dy[n * out_item..(n + 1) * out_item];
        im2col(dyn_, g, &mut dcols);
        // dW += X (cin x p) * dcols^T (p x k)
        gemm(
            cin,
            p,
            k,
            (x.item(n), p as isize, 1),
            (&dcols, 1, p as isize),
            1.0,
            &mut dw,
        );
        if need_dx {
            // dX (cin x p) = W (cin x k) * dcols (k x p)
            gemm(
                cin,
                k,
                p,
                (w.data(), k as isize, 1),
                (&dcols, p as isize, 1),
                0.0,
                &mut dx[n * cin * p..(n + 1) * cin * p],
            );
        }
        if has_bias {
            for (co, plane) in dyn_.chunks(g.h * g.w).enumerate() {
                db[co] += plane.iter().sum::<f64>();
            }
        }
    }
    (dx, dw, db)
}

impl Graph {
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        )?;
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var> {
        let out = conv_transpose2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        )?;
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, spec }))
    }
}

/// Forward-only convenience wrappers over plain tensors.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    conv2d_forward(x, w, bias, &spec)
}

pub fn transposed_conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    spec: ConvSpec,
) -> Result<Tensor> {
    conv_transpose2d_forward(x, w, bias, &spec)
}

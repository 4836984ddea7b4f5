//! Convolution kernels (1-D, 2-D and transposed 2-D) built on im2col + GEMM.
//!
//! All three share one code path: a 1-D convolution is a 2-D convolution over a
//! single row, and the transposed convolution reuses the same column layout in
//! the opposite direction, which makes it the exact adjoint of `conv2d`.

use crate::error::{Error, Result};
use crate::numerics::{matmul, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, padding: usize) -> Self {
        Self {
            kh: k,
            kw: k,
            sh: stride,
            sw: stride,
            ph: padding,
            pw: padding,
        }
    }

    pub fn row(k: usize, stride: usize, padding: usize) -> Self {
        Self {
            kh: 1,
            kw: k,
            sh: 1,
            sw: stride,
            ph: 0,
            pw: padding,
        }
    }

    /// Output extent of a forward convolution, or `None` when the kernel does not fit.
    pub fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let hp = h + 2 * self.ph;
        let wp = w + 2 * self.pw;
        if self.kh > hp || self.kw > wp || self.sh == 0 || self.sw == 0 {
            return None;
        }
        Some(((hp - self.kh) / self.sh + 1, (wp - self.kw) / self.sw + 1))
    }

    /// Output extent of a transposed convolution, or `None` when it would be empty.
    pub fn transposed_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.sh == 0 || self.sw == 0 {
            return None;
        }
        let ho = ((h - 1) * self.sh + self.kh).checked_sub(2 * self.ph)?;
        let wo = ((w - 1) * self.sw + self.kw).checked_sub(2 * self.pw)?;
        (ho > 0 && wo > 0).then_some((ho, wo))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Forward,
    Transposed,
}

/// Resolved shapes of one convolution call. `h, w` describe the input grid and
/// `ho, wo` the output grid, whatever the direction.
#[derive(Clone, Copy, Debug)]
pub struct ConvPlan {
    pub kind: ConvKind,
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeom,
    batched: bool,
    one_d: bool,
}

impl ConvPlan {
    pub fn conv1d(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (n, cin, l, batched) = match *input {
            [c, l] => (1, c, l, false),
            [n, c, l] => (n, c, l, true),
            _ => return Err(Error::shape("conv1d", format!("input must be C×L or N×C×L, got {input:?}"))),
        };
        let &[cout, wc, k] = weight else {
            return Err(Error::shape("conv1d", format!("weight must be Cout×Cin×K, got {weight:?}")));
        };
        if wc != cin {
            return Err(Error::shape("conv1d", format!("input has {cin} channels, weight expects {wc}")));
        }
        let geom = ConvGeom::row(k, stride, padding);
        let (_, lo) = geom.conv_out(1, l).ok_or_else(|| {
            Error::shape("conv1d", format!("kernel {k} does not fit length {l} with padding {padding} (stride {stride})"))
        })?;
        Ok(Self { kind: ConvKind::Forward, n, cin, h: 1, w: l, cout, ho: 1, wo: lo, geom, batched, one_d: true })
    }

    pub fn conv2d(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (n, cin, h, w, batched) = split_image_shape("conv2d", input)?;
        let &[cout, wc, kh, kw] = weight else {
            return Err(Error::shape("conv2d", format!("weight must be Cout×Cin×Kh×Kw, got {weight:?}")));
        };
        if wc != cin {
            return Err(Error::shape("conv2d", format!("input has {cin} channels, weight expects {wc}")));
        }
        let geom = ConvGeom { kh, kw, sh: stride, sw: stride, ph: padding, pw: padding };
        let (ho, wo) = geom.conv_out(h, w).ok_or_else(|| {
            Error::shape("conv2d", format!("kernel {kh}×{kw} does not fit {h}×{w} with padding {padding} (stride {stride})"))
        })?;
        Ok(Self { kind: ConvKind::Forward, n, cin, h, w, cout, ho, wo, geom, batched, one_d: false })
    }

    pub fn conv_transpose2d(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (n, cin, h, w, batched) = split_image_shape("conv_transpose2d", input)?;
        let &[wc, cout, kh, kw] = weight else {
            return Err(Error::shape("conv_transpose2d", format!("weight must be Cin×Cout×Kh×Kw, got {weight:?}")));
        };
        if wc != cin {
            return Err(Error::shape("conv_transpose2d", format!("input has {cin} channels, weight expects {wc}")));
        }
        let geom = ConvGeom { kh, kw, sh: stride, sw: stride, ph: padding, pw: padding };
        let (ho, wo) = geom.transposed_out(h, w).ok_or_else(|| {
            Error::shape("conv_transpose2d", format!("empty output for {h}×{w}, kernel {kh}×{kw}, stride {stride}, padding {padding}"))
        })?;
        Ok(Self { kind: ConvKind::Transposed, n, cin, h, w, cout, ho, wo, geom, batched, one_d: false })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(4);
        if self.batched {
            s.push(self.n);
        }
        s.push(self.cout);
        if !self.one_d {
            s.push(self.ho);
        }
        s.push(self.wo);
        s
    }

    fn weight_cols(&self) -> usize {
        match self.kind {
            ConvKind::Forward => self.cin * self.geom.kh * self.geom.kw,
            ConvKind::Transposed => self.cout * self.geom.kh * self.geom.kw,
        }
    }

    /// Forward pass; `x` is `n×cin×h×w`, result `n×cout×ho×wo`.
    pub fn forward<S: Scalar>(&self, x: &[S], weight: &[S], bias: Option<&[S]>) -> Vec<S> {
        let mut y = match self.kind {
            ConvKind::Forward => {
                let np = self.n * self.ho * self.wo;
                let cols = im2col(x, self.n, self.cin, self.h, self.w, &self.geom, self.ho, self.wo);
                let mut out = vec![S::zero(); self.cout * np];
                matmul(weight, false, &cols, false, &mut out, self.cout, self.weight_cols(), np, false);
                from_channel_major(&out, self.n, self.cout, self.ho * self.wo)
            }
            ConvKind::Transposed => {
                let np = self.n * self.h * self.w;
                let xc = to_channel_major(x, self.n, self.cin, self.h * self.w);
                let rows = self.weight_cols();
                let mut cols = vec![S::zero(); rows * np];
                matmul(weight, true, &xc, false, &mut cols, rows, self.cin, np, false);
                col2im(&cols, self.n, self.cout, self.ho, self.wo, &self.geom, self.h, self.w)
            }
        };
        if let Some(b) = bias {
            let plane = self.ho * self.wo;
            for chunk in y.chunks_mut(plane).enumerate() {
                let bc = b[chunk.0 % self.cout];
                chunk.1.iter_mut().for_each(|v| *v = *v + bc);
            }
        }
        y
    }

    /// Gradients `(dx, dweight, dbias)`; each is computed only when requested.
    pub fn backward<S: Scalar>(
        &self,
        x: &[S],
        weight: &[S],
        dy: &[S],
        want: [bool; 3],
    ) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
        let plane = self.ho * self.wo;
        let db = want[2].then(|| {
            let mut db = vec![S::zero(); self.cout];
            for (i, chunk) in dy.chunks(plane).enumerate() {
                let c = i % self.cout;
                db[c] = db[c] + chunk.iter().copied().sum::<S>();
            }
            db
        });
        if !want[0] && !want[1] {
            return (None, None, db);
        }
        let rows = self.weight_cols();
        match self.kind {
            ConvKind::Forward => {
                let np = self.n * plane;
                let dyc = to_channel_major(dy, self.n, self.cout, plane);
                let dw = want[1].then(|| {
                    let cols = im2col(x, self.n, self.cin, self.h, self.w, &self.geom, self.ho, self.wo);
                    let mut dw = vec![S::zero(); self.cout * rows];
                    matmul(&dyc, false, &cols, true, &mut dw, self.cout, np, rows, false);
                    dw
                });
                let dx = want[0].then(|| {
                    let mut dcols = vec![S::zero(); rows * np];
                    matmul(weight, true, &dyc, false, &mut dcols, rows, self.cout, np, false);
                    col2im(&dcols, self.n, self.cin, self.h, self.w, &self.geom, self.ho, self.wo)
                });
                (dx, dw, db)
            }
            ConvKind::Transposed => {
                let np = self.n * self.h * self.w;
                let cols = im2col(dy, self.n, self.cout, self.ho, self.wo, &self.geom, self.h, self.w);
                let dx = want[0].then(|| {
                    let mut dxc = vec![S::zero(); self.cin * np];
                    matmul(weight, false, &cols, false, &mut dxc, self.cin, rows, np, false);
                    from_channel_major(&dxc, self.n, self.cin, self.h * self.w)
                });
                let dw = want[1].then(|| {
                    let xc = to_channel_major(x, self.n, self.cin, self.h * self.w);
                    let mut dw = vec![S::zero(); self.cin * rows];
                    matmul(&xc, false, &cols, true, &mut dw, self.cin, np, rows, false);
                    dw
                });
                (dx, dw, db)
            }
        }
    }
}

fn split_image_shape(op: &'static str, input: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *input {
        [c, h, w] => Ok((1, c, h, w, false)),
        [n, c, h, w] => Ok((n, c, h, w, true)),
        _ => Err(Error::shape(op, format!("input must be C×H×W or N×C×H×W, got {input:?}"))),
    }
}

/// `n×c×p` → `c×(n·p)`.
fn to_channel_major<S: Scalar>(x: &[S], n: usize, c: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src = &x[(ni * c + ci) * p..(ni * c + ci + 1) * p];
            out[ci * n * p + ni * p..ci * n * p + (ni + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// `c×(n·p)` → `n×c×p`.
fn from_channel_major<S: Scalar>(x: &[S], n: usize, c: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src = &x[ci * n * p + ni * p..ci * n * p + (ni + 1) * p];
            out[(ni * c + ci) * p..(ni * c + ci + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// Unfolds `n×c×h×w` into a `(c·kh·kw) × (n·ho·wo)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(x: &[S], n: usize, c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize) -> Vec<S> {
    let p = ho * wo;
    let np = n * p;
    let mut cols = vec![S::zero(); c * g.kh * g.kw * np];
    for ni in 0..n {
        for ci in 0..c {
            let img = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let dst = &mut cols[row * np + ni * p..row * np + (ni + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &img[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto an `n×c×h×w` grid.
#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(cols: &[S], n: usize, c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize) -> Vec<S> {
    let p = ho * wo;
    let np = n * p;
    let mut x = vec![S::zero(); n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            let img = &mut x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let src = &cols[row * np + ni * p..row * np + (ni + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut img[iy as usize * w..(iy as usize + 1) * w];
                        let src_row = &src[oy * wo..(oy + 1) * wo];
                        for (ox, &s) in src_row.iter().enumerate() {
                            let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] = dst_row[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn check_bias<S: Scalar>(op: &'static str, bias: Option<&Tensor<S>>, cout: usize) -> Result<()> {
    match bias {
        Some(b) if b.numel() != cout => Err(Error::shape(op, format!("bias has {} entries, expected {cout}", b.numel()))),
        _ => Ok(()),
    }
}

/// 1-D cross-correlation over `C×L` (or `N×C×L`) input.
pub fn conv1d<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: Option<&Tensor<S>>, stride: usize, padding: usize) -> Result<Tensor<S>> {
    let plan = ConvPlan::conv1d(input.shape(), weight.shape(), stride, padding)?;
    check_bias("conv1d", bias, plan.cout)?;
    Tensor::new(plan.out_shape(), plan.forward(input.data(), weight.data(), bias.map(|b| b.data())))
}

/// 2-D cross-correlation over `C×H×W` (or `N×C×H×W`) input.
pub fn conv2d<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: Option<&Tensor<S>>, stride: usize, padding: usize) -> Result<Tensor<S>> {
    let plan = ConvPlan::conv2d(input.shape(), weight.shape(), stride, padding)?;
    check_bias("conv2d", bias, plan.cout)?;
    Tensor::new(plan.out_shape(), plan.forward(input.data(), weight.data(), bias.map(|b| b.data())))
}

/// Transposed 2-D convolution; weight layout is `Cin×Cout×Kh×Kw`.
pub fn conv_transpose2d<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: Option<&Tensor<S>>, stride: usize, padding: usize) -> Result<Tensor<S>> {
    let plan = ConvPlan::conv_transpose2d(input.shape(), weight.shape(), stride, padding)?;
    check_bias("conv_transpose2d", bias, plan.cout)?;
    Tensor::new(plan.out_shape(), plan.forward(input.data(), weight.data(), bias.map(|b| b.data())))
}

//! Bias-free 2-D convolutions: standard, pointwise and depthwise.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvKind {
    Standard,
    Depthwise,
    Pointwise,
}

impl ConvKind {
    pub fn name(self) -> &'static str {
        match self {
            ConvKind::Standard => "conv",
            ConvKind::Depthwise => "depthwise",
            ConvKind::Pointwise => "pointwise",
        }
    }
}

/// Convolution kernel. Standard: `(c_out, c_in, k, k)`, depthwise: `(c, 1, k, k)`,
/// pointwise: `(c_out, c_in, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeight<T = f32> {
    kind: ConvKind,
    tensor: Tensor<T>,
}

impl<T: Scalar> ConvWeight<T> {
    pub fn new(kind: ConvKind, tensor: Tensor<T>) -> Result<Self> {
        let [o, i, kh, kw] = tensor.shape();
        if kh != kw || kh == 0 || o == 0 || i == 0 {
            return Err(Error::shape(format!(
                "{} kernel must be square and non-empty, got {:?}",
                kind.name(),
                tensor.shape()
            )));
        }
        match kind {
            ConvKind::Pointwise if kh != 1 => {
                return Err(Error::shape(format!(
                    "pointwise kernel must be 1x1, got {kh}x{kw}"
                )))
            }
            ConvKind::Depthwise if i != 1 => {
                return Err(Error::shape(format!(
                    "depthwise kernel must have one input channel per group, got {i}"
                )))
            }
            _ => {}
        }
        Ok(Self { kind, tensor })
    }

    pub fn zeros(kind: ConvKind, c_out: usize, c_in: usize, k: usize) -> Result<Self> {
        let shape = match kind {
            ConvKind::Depthwise => [c_out, 1, k, k],
            _ => [c_out, c_in, k, k],
        };
        Self::new(kind, Tensor::zeros(shape))
    }

    #[inline]
    pub fn kind(&self) -> ConvKind {
        self.kind
    }

    #[inline]
    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    #[inline]
    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.tensor
    }

    #[inline]
    pub fn c_out(&self) -> usize {
        self.tensor.n()
    }

    /// Input channels the kernel expects.
    #[inline]
    pub fn c_in(&self) -> usize {
        match self.kind {
            ConvKind::Depthwise => self.tensor.n(),
            _ => self.tensor.c(),
        }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.tensor.h()
    }

    pub fn param_count(&self) -> usize {
        self.tensor.len()
    }
}

/// Spatial bookkeeping shared by forward and backward passes.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("stride must be at least 1"));
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        if hp < k || wp < k {
            return Err(Error::shape(format!(
                "kernel {k}x{k} larger than padded input {hp}x{wp}"
            )));
        }
        let ho = (hp - k) / stride + 1;
        let wo = (wp - k) / stride + 1;
        if ho == 0 || wo == 0 {
            return Err(Error::shape("convolution produces an empty output"));
        }
        Ok(Self {
            h,
            w,
            ho,
            wo,
            k,
            stride,
            pad,
        })
    }

    /// Output indices `o` with `o·stride + tap − pad` inside `[0, len)`.
    #[inline]
    fn valid(&self, tap: usize, len: usize, out_len: usize) -> (usize, usize) {
        let off = tap as isize - self.pad as isize;
        let s = self.stride as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_excl = if (len as isize - 1 - off) < 0 {
            0
        } else {
            ((len as isize - 1 - off) / s + 1).min(out_len as isize)
        };
        (lo as usize, (hi_excl.max(lo)) as usize)
    }

    #[inline]
    fn src(&self, o: usize, tap: usize) -> usize {
        o * self.stride + tap - self.pad
    }
}

/// `dst += wv · shift(src)` for one kernel tap.
#[inline]
fn tap_forward<T: Scalar>(dst: &mut [T], src: &[T], wv: T, ky: usize, kx: usize, g: &Geometry) {
    let (y0, y1) = g.valid(ky, g.h, g.ho);
    let (x0, x1) = g.valid(kx, g.w, g.wo);
    if x0 >= x1 {
        return;
    }
    for oy in y0..y1 {
        let iy = g.src(oy, ky);
        let drow = &mut dst[oy * g.wo + x0..oy * g.wo + x1];
        let srow = &src[iy * g.w..(iy + 1) * g.w];
        if g.stride == 1 {
            let ix0 = g.src(x0, kx);
            for (d, &s) in drow.iter_mut().zip(&srow[ix0..ix0 + (x1 - x0)]) {
                *d += wv * s;
            }
        } else {
            for (j, d) in drow.iter_mut().enumerate() {
                *d += wv * srow[g.src(x0 + j, kx)];
            }
        }
    }
}

/// Transposed tap: `dst(input grad) += wv · unshift(src(output grad))`.
#[inline]
fn tap_backward_input<T: Scalar>(dst: &mut [T], src: &[T], wv: T, ky: usize, kx: usize, g: &Geometry) {
    let (y0, y1) = g.valid(ky, g.h, g.ho);
    let (x0, x1) = g.valid(kx, g.w, g.wo);
    if x0 >= x1 {
        return;
    }
    for oy in y0..y1 {
        let iy = g.src(oy, ky);
        let srow = &src[oy * g.wo + x0..oy * g.wo + x1];
        let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
        if g.stride == 1 {
            let ix0 = g.src(x0, kx);
            for (d, &s) in drow[ix0..ix0 + (x1 - x0)].iter_mut().zip(srow) {
                *d += wv * s;
            }
        } else {
            for (j, &s) in srow.iter().enumerate() {
                drow[g.src(x0 + j, kx)] += wv * s;
            }
        }
    }
}

/// `Σ grad_out · shift(input)` for one kernel tap.
#[inline]
fn tap_dot<T: Scalar>(grad_out: &[T], input: &[T], ky: usize, kx: usize, g: &Geometry) -> T {
    let (y0, y1) = g.valid(ky, g.h, g.ho);
    let (x0, x1) = g.valid(kx, g.w, g.wo);
    let mut acc = T::zero();
    if x0 >= x1 {
        return acc;
    }
    for oy in y0..y1 {
        let iy = g.src(oy, ky);
        let grow = &grad_out[oy * g.wo + x0..oy * g.wo + x1];
        let irow = &input[iy * g.w..(iy + 1) * g.w];
        if g.stride == 1 {
            let ix0 = g.src(x0, kx);
            for (&a, &b) in grow.iter().zip(&irow[ix0..ix0 + (x1 - x0)]) {
                acc += a * b;
            }
        } else {
            for (j, &a) in grow.iter().enumerate() {
                acc += a * irow[g.src(x0 + j, kx)];
            }
        }
    }
    acc
}

fn check_dense(input: &Tensor<impl Scalar>, weight: &ConvWeight<impl Scalar>) -> Result<()> {
    if weight.kind() == ConvKind::Depthwise {
        return Err(Error::shape("conv2d called with a depthwise kernel"));
    }
    if input.c() != weight.c_in() {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels, kernel expects {}",
            input.c(),
            weight.c_in()
        )));
    }
    Ok(())
}

fn check_depthwise(input: &Tensor<impl Scalar>, weight: &ConvWeight<impl Scalar>) -> Result<()> {
    if weight.kind() != ConvKind::Depthwise {
        return Err(Error::shape("depthwise_conv2d called with a dense kernel"));
    }
    if input.c() != weight.c_in() {
        return Err(Error::shape(format!(
            "depthwise_conv2d: input has {} channels, kernel has {}",
            input.c(),
            weight.c_in()
        )));
    }
    Ok(())
}

/// Dense (standard or pointwise) convolution with zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &ConvWeight<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_dense(input, weight)?;
    let g = Geometry::new(input.h(), input.w(), weight.k(), stride, padding)?;
    let (n, c_in, c_out, k) = (input.n(), input.c(), weight.c_out(), g.k);
    let wt = weight.tensor();
    let mut out = Tensor::zeros([n, c_out, g.ho, g.wo]);
    let plane = g.ho * g.wo;
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, o) = (idx / c_out, idx % c_out);
            for i in 0..c_in {
                let src = input.plane(b, i);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wt.at([o, i, ky, kx]);
                        tap_forward(dst, src, wv, ky, kx, &g);
                    }
                }
            }
        });
    Ok(out)
}

/// Vector-Jacobian product of [`conv2d`]: `(grad_input, grad_weight)`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &ConvWeight<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_dense(input, weight)?;
    let g = Geometry::new(input.h(), input.w(), weight.k(), stride, padding)?;
    let (n, c_in, c_out, k) = (input.n(), input.c(), weight.c_out(), g.k);
    if grad_out.shape() != [n, c_out, g.ho, g.wo] {
        return Err(Error::shape(format!(
            "conv2d backward: grad {:?}, expected {:?}",
            grad_out.shape(),
            [n, c_out, g.ho, g.wo]
        )));
    }
    let wt = weight.tensor();

    let mut grad_in = Tensor::zeros(input.shape());
    let hw = g.h * g.w;
    grad_in
        .data_mut()
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, i) = (idx / c_in, idx % c_in);
            for o in 0..c_out {
                let src = grad_out.plane(b, o);
                for ky in 0..k {
                    for kx in 0..k {
                        tap_backward_input(dst, src, wt.at([o, i, ky, kx]), ky, kx, &g);
                    }
                }
            }
        });

    let mut grad_w = Tensor::zeros(wt.shape());
    grad_w
        .data_mut()
        .par_chunks_mut(c_in * k * k)
        .enumerate()
        .for_each(|(o, dst)| {
            for b in 0..n {
                let go = grad_out.plane(b, o);
                for i in 0..c_in {
                    let src = input.plane(b, i);
                    for ky in 0..k {
                        for kx in 0..k {
                            dst[(i * k + ky) * k + kx] += tap_dot(go, src, ky, kx, &g);
                        }
                    }
                }
            }
        });
    Ok((grad_in, grad_w))
}

/// Per-channel spatial convolution; output channel `i` reads only input channel `i`.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &ConvWeight<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_depthwise(input, weight)?;
    let g = Geometry::new(input.h(), input.w(), weight.k(), stride, padding)?;
    let (n, c, k) = (input.n(), input.c(), g.k);
    let wt = weight.tensor();
    let mut out = Tensor::zeros([n, c, g.ho, g.wo]);
    out.data_mut()
        .par_chunks_mut(g.ho * g.wo)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, ch) = (idx / c, idx % c);
            let src = input.plane(b, ch);
            for ky in 0..k {
                for kx in 0..k {
                    tap_forward(dst, src, wt.at([ch, 0, ky, kx]), ky, kx, &g);
                }
            }
        });
    Ok(out)
}

/// Vector-Jacobian product of [`depthwise_conv2d`]: `(grad_input, grad_weight)`.
pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &ConvWeight<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_depthwise(input, weight)?;
    let g = Geometry::new(input.h(), input.w(), weight.k(), stride, padding)?;
    let (n, c, k) = (input.n(), input.c(), g.k);
    if grad_out.shape() != [n, c, g.ho, g.wo] {
        return Err(Error::shape(format!(
            "depthwise backward: grad {:?}, expected {:?}",
            grad_out.shape(),
            [n, c, g.ho, g.wo]
        )));
    }
    let wt = weight.tensor();

    let mut grad_in = Tensor::zeros(input.shape());
    grad_in
        .data_mut()
        .par_chunks_mut(g.h * g.w)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, ch) = (idx / c, idx % c);
            let src = grad_out.plane(b, ch);
            for ky in 0..k {
                for kx in 0..k {
                    tap_backward_input(dst, src, wt.at([ch, 0, ky, kx]), ky, kx, &g);
                }
            }
        });

    let mut grad_w = Tensor::zeros(wt.shape());
    grad_w
        .data_mut()
        .par_chunks_mut(k * k)
        .enumerate()
        .for_each(|(ch, dst)| {
            for b in 0..n {
                let go = grad_out.plane(b, ch);
                let src = input.plane(b, ch);
                for ky in 0..k {
                    for kx in 0..k {
                        dst[ky * k + kx] += tap_dot(go, src, ky, kx, &g);
                    }
                }
            }
        });
    Ok((grad_in, grad_w))
}

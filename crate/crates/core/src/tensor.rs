//! Dense rank-4 tensors in NCHW layout.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type. `f32` is the working type, `f64` is used for
/// gradient checks.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

/// Shape `(n, c, h, w)`.
pub type Shape = [usize; 4];

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([b, ch, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, [b, c, y, x]: [usize; 4]) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let i = self.index(idx);
        self.data[i] = v;
    }

    /// Contiguous `h·w` plane of image `b`, channel `c`.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// All channels of image `b`.
    #[inline]
    pub fn image(&self, b: usize) -> &[T] {
        let chw = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[b * chw..(b + 1) * chw]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_value(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a })
    }

    pub fn min_value(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::infinity(), |a, b| if b < a { b } else { a })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if a.n() != b.n() || a.h() != b.h() || a.w() != b.w() {
            return Err(Error::shape(format!(
                "concat: {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        let (n, h, w) = (a.n(), a.h(), a.w());
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(a.image(i));
            data.extend_from_slice(b.image(i));
        }
        Ok(Self {
            shape: [n, a.c() + b.c(), h, w],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`]: first `c_first` channels, then the rest.
    pub fn split_channels(&self, c_first: usize) -> Result<(Self, Self)> {
        if c_first > self.c() {
            return Err(Error::shape(format!(
                "split at {c_first} of {} channels",
                self.c()
            )));
        }
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let mut a = Vec::with_capacity(n * c_first * hw);
        let mut b = Vec::with_capacity(n * (c - c_first) * hw);
        for i in 0..n {
            let img = self.image(i);
            a.extend_from_slice(&img[..c_first * hw]);
            b.extend_from_slice(&img[c_first * hw..]);
        }
        Ok((
            Self {
                shape: [n, c_first, h, w],
                data: a,
            },
            Self {
                shape: [n, c - c_first, h, w],
                data: b,
            },
        ))
    }

    /// Zero-pad bottom/right edges up to `(h, w)`.
    pub fn pad_to(&self, h: usize, w: usize) -> Result<Self> {
        if h < self.h() || w < self.w() {
            return Err(Error::shape(format!(
                "pad_to {h}x{w} smaller than {}x{}",
                self.h(),
                self.w()
            )));
        }
        let mut out = Self::zeros([self.n(), self.c(), h, w]);
        for b in 0..self.n() {
            for c in 0..self.c() {
                let src = self.plane(b, c);
                let dst = out.plane_mut(b, c);
                for y in 0..self.h() {
                    dst[y * w..y * w + self.w()]
                        .copy_from_slice(&src[y * self.w()..(y + 1) * self.w()]);
                }
            }
        }
        Ok(out)
    }

    /// Keep the top-left `(h, w)` window.
    pub fn crop_to(&self, h: usize, w: usize) -> Result<Self> {
        if h > self.h() || w > self.w() {
            return Err(Error::shape(format!(
                "crop_to {h}x{w} larger than {}x{}",
                self.h(),
                self.w()
            )));
        }
        let mut out = Self::zeros([self.n(), self.c(), h, w]);
        for b in 0..self.n() {
            for c in 0..self.c() {
                let src = self.plane(b, c);
                let dst = out.plane_mut(b, c);
                for y in 0..h {
                    dst[y * w..(y + 1) * w].copy_from_slice(&src[y * self.w()..y * self.w() + w]);
                }
            }
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Mirror along the width axis.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.w();
        Self::from_fn(self.shape, |[b, c, y, x]| self.at([b, c, y, w - 1 - x]))
    }

    /// Rotate each plane by 90° counter-clockwise, `quarter_turns` times.
    pub fn rotate90(&self, quarter_turns: usize) -> Self {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            let [n, c, h, w] = out.shape;
            // rotated (y, x) reads source (x, w-1-y)
            out = Self::from_fn([n, c, w, h], |[b, ch, y, x]| out.at([b, ch, x, w - 1 - y]));
        }
        out
    }
}

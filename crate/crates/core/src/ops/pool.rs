use crate::error::{Error, Result};
use crate::tensor::{lit, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

fn out_dims(h: usize, w: usize, k: usize, stride: usize) -> Result<(usize, usize)> {
    if k == 0 || stride == 0 {
        return Err(Error::shape("pool window and stride must be positive"));
    }
    if k > h || k > w {
        return Err(Error::shape(format!(
            "pool window {k}x{k} larger than input {h}x{w}"
        )));
    }
    Ok(((h - k) / stride + 1, (w - k) / stride + 1))
}

/// Windowed max or mean, no padding.
pub fn pool2d<T: Scalar>(input: &Tensor<T>, mode: PoolMode, k: usize, stride: usize) -> Result<Tensor<T>> {
    let (ho, wo) = out_dims(input.h(), input.w(), k, stride)?;
    let w = input.w();
    let inv: T = lit(1.0 / (k * k) as f64);
    let mut out = Tensor::zeros([input.n(), input.c(), ho, wo]);
    for b in 0..input.n() {
        for c in 0..input.c() {
            let src = input.plane(b, c);
            let dst = out.plane_mut(b, c);
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, x0) = (oy * stride, ox * stride);
                    let v = match mode {
                        PoolMode::Max => {
                            let mut m = T::neg_infinity();
                            for y in y0..y0 + k {
                                for &s in &src[y * w + x0..y * w + x0 + k] {
                                    if s > m {
                                        m = s;
                                    }
                                }
                            }
                            m
                        }
                        PoolMode::Avg => {
                            let mut acc = T::zero();
                            for y in y0..y0 + k {
                                for &s in &src[y * w + x0..y * w + x0 + k] {
                                    acc += s;
                                }
                            }
                            acc * inv
                        }
                    };
                    dst[oy * wo + ox] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`pool2d`]. Max routes each window's gradient to its first
/// (row-major) maximal element.
pub fn pool2d_backward<T: Scalar>(
    input: &Tensor<T>,
    mode: PoolMode,
    k: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (ho, wo) = out_dims(input.h(), input.w(), k, stride)?;
    if grad_out.shape() != [input.n(), input.c(), ho, wo] {
        return Err(Error::shape(format!(
            "pool backward: grad {:?}, expected {:?}",
            grad_out.shape(),
            [input.n(), input.c(), ho, wo]
        )));
    }
    let w = input.w();
    let inv: T = lit(1.0 / (k * k) as f64);
    let mut grad_in = Tensor::zeros(input.shape());
    for b in 0..input.n() {
        for c in 0..input.c() {
            let src = input.plane(b, c);
            let go = grad_out.plane(b, c);
            let dst = grad_in.plane_mut(b, c);
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = go[oy * wo + ox];
                    let (y0, x0) = (oy * stride, ox * stride);
                    match mode {
                        PoolMode::Max => {
                            let mut best = y0 * w + x0;
                            for y in y0..y0 + k {
                                for x in x0..x0 + k {
                                    if src[y * w + x] > src[best] {
                                        best = y * w + x;
                                    }
                                }
                            }
                            dst[best] += g;
                        }
                        PoolMode::Avg => {
                            for y in y0..y0 + k {
                                for x in x0..x0 + k {
                                    dst[y * w + x] += g * inv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_is_invariant() {
        let x = Tensor::<f32>::full([1, 2, 6, 6], 7.0);
        for mode in [PoolMode::Max, PoolMode::Avg] {
            let y = pool2d(&x, mode, 2, 2).unwrap();
            assert_eq!(y.shape(), [1, 2, 3, 3]);
            assert!(y.data().iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn single_window() {
        let x = Tensor::<f32>::new([1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(pool2d(&x, PoolMode::Max, 2, 2).unwrap().data(), &[7.0]);
        assert_eq!(pool2d(&x, PoolMode::Avg, 2, 2).unwrap().data(), &[4.0]);
    }

    #[test]
    fn four_by_four_windows() {
        #[rustfmt::skip]
        let x = Tensor::<f32>::new([1, 1, 4, 4], vec![
            1.0, 2.0,   5.0, 0.0,
            3.0, 4.0,   1.0, 1.0,

            9.0, 8.0,  -1.0, -2.0,
            7.0, 6.0,  -3.0, -6.0,
        ]).unwrap();
        assert_eq!(pool2d(&x, PoolMode::Max, 2, 2).unwrap().data(), &[4.0, 5.0, 9.0, -1.0]);
        assert_eq!(pool2d(&x, PoolMode::Avg, 2, 2).unwrap().data(), &[2.5, 1.75, 7.5, -3.0]);
    }

    #[test]
    fn window_larger_than_input_errors() {
        let x = Tensor::<f32>::zeros([1, 1, 1, 3]);
        assert!(pool2d(&x, PoolMode::Max, 2, 2).is_err());
    }

    #[test]
    fn max_gradient_goes_to_first_maximum() {
        let x = Tensor::<f32>::new([1, 1, 2, 2], vec![2.0, 5.0, 5.0, 1.0]).unwrap();
        let g = Tensor::full([1, 1, 1, 1], 1.0);
        let gi = pool2d_backward(&x, PoolMode::Max, 2, 2, &g).unwrap();
        assert_eq!(gi.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn avg_pool_conserves_sum_on_tiling_windows() {
        let x = Tensor::<f64>::from_fn([1, 3, 6, 8], |[_, c, y, x]| (c * 48 + y * 8 + x) as f64 * 0.1);
        let y = pool2d(&x, PoolMode::Avg, 2, 2).unwrap();
        assert!((y.sum() * 4.0 - x.sum()).abs() < 1e-9);
    }
}

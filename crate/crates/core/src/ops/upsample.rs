use crate::error::{Error, Result};
use crate::tensor::{lit, Scalar, Tensor};

/// Source coordinate for each output index under the half-pixel
/// (align-corners = false) convention, clamped to the border.
/// Returns `(lo, hi, frac)` with value = (1 − frac)·src[lo] + frac·src[hi].
pub(crate) fn sample_grid(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { s - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

/// Bilinear resize of every plane to `(out_h, out_w)`.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 || input.h() == 0 || input.w() == 0 {
        return Err(Error::shape("resize to or from an empty plane"));
    }
    let rows = sample_grid(out_h, input.h());
    let cols = sample_grid(out_w, input.w());
    let w = input.w();
    let mut out = Tensor::zeros([input.n(), input.c(), out_h, out_w]);
    for b in 0..input.n() {
        for c in 0..input.c() {
            let src = input.plane(b, c);
            let dst = out.plane_mut(b, c);
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                let (fy, gy): (T, T) = (lit(fy), lit(1.0 - fy));
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let (fx, gx): (T, T) = (lit(fx), lit(1.0 - fx));
                    let top = gx * src[y0 * w + x0] + fx * src[y0 * w + x1];
                    let bot = gx * src[y1 * w + x0] + fx * src[y1 * w + x1];
                    dst[oy * out_w + ox] = gy * top + fy * bot;
                }
            }
        }
    }
    Ok(out)
}

fn resize_bilinear_backward<T: Scalar>(in_shape: [usize; 4], grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = in_shape;
    let (out_h, out_w) = (grad_out.h(), grad_out.w());
    let rows = sample_grid(out_h, h);
    let cols = sample_grid(out_w, w);
    let mut grad_in = Tensor::zeros(in_shape);
    for b in 0..n {
        for ch in 0..c {
            let go = grad_out.plane(b, ch);
            let dst = grad_in.plane_mut(b, ch);
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                let (fy, gy): (T, T) = (lit(fy), lit(1.0 - fy));
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let (fx, gx): (T, T) = (lit(fx), lit(1.0 - fx));
                    let g = go[oy * out_w + ox];
                    dst[y0 * w + x0] += g * gy * gx;
                    dst[y0 * w + x1] += g * gy * fx;
                    dst[y1 * w + x0] += g * fy * gx;
                    dst[y1 * w + x1] += g * fy * fx;
                }
            }
        }
    }
    grad_in
}

/// Integer-factor bilinear upsampling.
pub fn upsample_bilinear<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::shape("upsample factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    resize_bilinear(input, input.h() * factor, input.w() * factor)
}

pub fn upsample_bilinear_backward<T: Scalar>(
    in_shape: [usize; 4],
    factor: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = in_shape;
    if factor == 0 || grad_out.shape() != [n, c, h * factor, w * factor] {
        return Err(Error::shape(format!(
            "upsample backward: grad {:?} for input {:?} at factor {factor}",
            grad_out.shape(),
            in_shape
        )));
    }
    if factor == 1 {
        return Ok(grad_out.clone());
    }
    Ok(resize_bilinear_backward(in_shape, grad_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_one_is_identity() {
        let x = Tensor::<f32>::from_fn([1, 2, 3, 3], |[_, c, y, x]| (c + y * 3 + x) as f32);
        assert_eq!(upsample_bilinear(&x, 1).unwrap(), x);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f64>::full([1, 1, 3, 5], 0.25);
        for f in 2..5 {
            let y = upsample_bilinear(&x, f).unwrap();
            assert_eq!(y.shape(), [1, 1, 3 * f, 5 * f]);
            assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn two_by_two_doubles_by_hand() {
        // centres map to -0.25, 0.25, 0.75, 1.25 -> clamped 0, 0.25, 0.75, 1
        // and the input is the plane 2y + x, so out = 2Y + X
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = upsample_bilinear(&x, 2).unwrap();
        #[rustfmt::skip]
        let expected = [
            0.0, 0.25, 0.75, 1.0,
            0.5, 0.75, 1.25, 1.5,
            1.5, 1.75, 2.25, 2.5,
            2.0, 2.25, 2.75, 3.0,
        ];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{:?}", y.data());
        }
    }

    #[test]
    fn backward_conserves_mass() {
        let x = Tensor::<f64>::zeros([1, 1, 3, 2]);
        let g = Tensor::full([1, 1, 6, 4], 1.0f64);
        let gi = upsample_bilinear_backward(x.shape(), 2, &g).unwrap();
        assert!((gi.sum() - 24.0).abs() < 1e-12);
    }
}

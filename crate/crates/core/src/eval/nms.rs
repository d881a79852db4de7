use super::EdgeMap;

/// Radius of the triangle filter applied before estimating orientation.
pub const ORIENT_SMOOTH_RADIUS: usize = 4;

/// Mirror index into `0..n` (edge sample repeated), valid for any offset.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Separable triangle filter `[1 … r+1 … 1] / (r+1)²` with symmetric padding.
pub fn conv_tri(data: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    if r == 0 || h == 0 || w == 0 {
        return data.to_vec();
    }
    let taps: Vec<(isize, f64)> = (-(r as isize)..=r as isize)
        .map(|d| (d, (r as isize + 1 - d.abs()) as f64 / ((r + 1) * (r + 1)) as f64))
        .collect();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .map(|&(d, k)| k * data[y * w + reflect(x as isize + d, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .map(|&(d, k)| k * tmp[reflect(y as isize + d, h) * w + x])
                .sum();
        }
    }
    out
}

/// Finite differences along x and y: central inside, one-sided at borders,
/// zero along an axis of length 1.
pub fn gradient2(data: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let d = |a: &dyn Fn(usize) -> f64, i: usize, n: usize| -> f64 {
        if n < 2 {
            0.0
        } else if i == 0 {
            a(1) - a(0)
        } else if i == n - 1 {
            a(n - 1) - a(n - 2)
        } else {
            (a(i + 1) - a(i - 1)) / 2.0
        }
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            gx[y * w + x] = d(&|i| data[y * w + i], x, w);
            gy[y * w + x] = d(&|i| data[i * w + x], y, h);
        }
    }
    (gx, gy)
}

/// Edge-normal angle in `[0, π)` per pixel: the direction of the
/// largest-magnitude eigenvalue of the Hessian of the smoothed map.
pub fn orientation(map: &EdgeMap) -> Vec<f64> {
    let (h, w) = (map.h(), map.w());
    let e: Vec<f64> = map.data().iter().map(|&v| v as f64).collect();
    let s = conv_tri(&e, h, w, ORIENT_SMOOTH_RADIUS);
    let (ox, oy) = gradient2(&s, h, w);
    let (oxx, _) = gradient2(&ox, h, w);
    let (oxy, oyy) = gradient2(&oy, h, w);
    (0..h * w)
        .map(|i| {
            let (a, b, c) = (oxx[i], oxy[i], oyy[i]);
            // Direction of the larger eigenvalue; rotate a quarter turn when
            // the smaller one dominates in magnitude.
            let mut o = 0.5 * (2.0 * b).atan2(a - c);
            if a + c < 0.0 {
                o += std::f64::consts::FRAC_PI_2;
            }
            o.rem_euclid(std::f64::consts::PI)
        })
        .collect()
}

/// Bilinear sample with coordinates clamped into the map.
fn interp(e: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| e[yy * w + xx] as f64;
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

/// Keeps a pixel only if it is at least as large as both bilinearly
/// interpolated neighbours one pixel away along the edge normal. Survivors
/// keep their value; everything else becomes 0.
pub fn nms_thin(map: &EdgeMap) -> EdgeMap {
    let (h, w) = (map.h(), map.w());
    if h == 0 || w == 0 {
        return map.clone();
    }
    let o = orientation(map);
    let e = map.data();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let v = e[i];
            if v == 0.0 {
                continue;
            }
            let (c, s) = (o[i].cos(), o[i].sin());
            let vf = v as f64;
            let a = interp(e, h, w, x as f64 + c, y as f64 + s);
            let b = interp(e, h, w, x as f64 - c, y as f64 - s);
            if vf >= a && vf >= b {
                out[i] = v;
            }
        }
    }
    EdgeMap::from_raw(h, w, out)
}

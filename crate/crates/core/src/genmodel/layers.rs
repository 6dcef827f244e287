//! 3×3, stride-2, padding-1 convolution helpers on channel-major
//! activations: an activation is a `(channels, batch·height·width)` matrix.

use ndarray::Array2;

pub const KERNEL: usize = 3;
pub const TAPS: usize = KERNEL * KERNEL;
pub const LEAKY_SLOPE: f64 = 0.1;

/// Patches of a `(c, b·h·w)` activation under the stride-2 convolution that
/// maps `h×w` to `h/2 × w/2`: returns `(c·9, b·(h/2)·(w/2))`.
pub fn im2col(x: &Array2<f64>, batch: usize, h: usize, w: usize) -> Array2<f64> {
    let c = x.nrows();
    let (ho, wo) = (h / 2, w / 2);
    let mut cols = Array2::zeros((c * TAPS, batch * ho * wo));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    let ncols = batch * ho * wo;
    for ch in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * TAPS + ky * KERNEL + kx) * ncols;
                for b in 0..batch {
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = ch * batch * h * w + (b * h + iy as usize) * w;
                        let dst = row + (b * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                cs[dst + ox] = xs[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters `(c·9, b·(h/2)·(w/2))` patches back onto
/// a `(c, b·h·w)` activation, summing overlaps.
pub fn col2im(cols: &Array2<f64>, c: usize, batch: usize, h: usize, w: usize) -> Array2<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut x = Array2::zeros((c, batch * h * w));
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = cols.as_slice().expect("standard layout");
    let ncols = batch * ho * wo;
    for ch in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * TAPS + ky * KERNEL + kx) * ncols;
                for b in 0..batch {
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = ch * batch * h * w + (b * h + iy as usize) * w;
                        let src = row + (b * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                xs[dst + ix as usize] += cs[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(c, b·s)` channel-major activation to `(c·s, b)` feature columns.
pub fn flatten(x: &Array2<f64>, batch: usize) -> Array2<f64> {
    let c = x.nrows();
    let s = x.ncols() / batch;
    let mut out = Array2::zeros((c * s, batch));
    for ch in 0..c {
        for b in 0..batch {
            for p in 0..s {
                out[[ch * s + p, b]] = x[[ch, b * s + p]];
            }
        }
    }
    out
}

/// Inverse of [`flatten`].
pub fn unflatten(x: &Array2<f64>, channels: usize) -> Array2<f64> {
    let batch = x.ncols();
    let s = x.nrows() / channels;
    let mut out = Array2::zeros((channels, batch * s));
    for ch in 0..channels {
        for b in 0..batch {
            for p in 0..s {
                out[[ch, b * s + p]] = x[[ch * s + p, b]];
            }
        }
    }
    out
}

pub fn add_bias(x: &mut Array2<f64>, bias: &[f64]) {
    for (mut row, &b) in x.rows_mut().into_iter().zip(bias) {
        row.mapv_inplace(|v| v + b);
    }
}

pub fn bias_grad(dy: &Array2<f64>) -> Vec<f64> {
    dy.rows().into_iter().map(|r| r.sum()).collect()
}

pub fn leaky(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Multiplies `grad` in place by the leaky-ReLU derivative at `z`.
pub fn leaky_backward(grad: &mut Array2<f64>, z: &Array2<f64>) {
    grad.zip_mut_with(z, |g, &v| {
        if v <= 0.0 {
            *g *= LEAKY_SLOPE
        }
    });
}

//! Naive loop implementations used as oracles for the optimized kernels.
//!
//! Nothing here shares code with [`crate::kernels`]; every routine is the
//! textbook definition written as plain nested loops. They panic on invalid
//! input instead of returning errors.

use crate::kernels::BatchNormParams;
use crate::tensor::Tensor;

/// Direct cross-correlation with explicit bounds checks on every tap.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor {
    let [n, in_ch, h, w] = input.dims();
    let [out_ch, in_pg, k, _] = weights.dims();
    assert_eq!(in_pg * groups, in_ch);
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let out_pg = out_ch / groups;
    let mut out = Tensor::zeros([n, out_ch, oh, ow]);
    for b in 0..n {
        for oc in 0..out_ch {
            let g = oc / out_pg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0f64, |bs| bs[oc] as f64);
                    for icl in 0..in_pg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let v = input.get(b, g * in_pg + icl, iy as usize, ix as usize);
                                let wv = weights.get(oc, icl, ky, kx);
                                acc += v as f64 * wv as f64;
                            }
                        }
                    }
                    out.set(b, oc, oy, ox, acc as f32);
                }
            }
        }
    }
    out
}

/// Scatter-accumulate definition: every input pixel deposits a scaled copy of
/// the kernel into the output at `stride` spacing, then `padding` is cropped.
pub fn conv2d_transposed(input: &Tensor, weights: &Tensor, stride: usize, padding: usize) -> Tensor {
    let [n, in_ch, h, w] = input.dims();
    let [_, out_ch, k, _] = weights.dims();
    let full_h = (h - 1) * stride + k;
    let full_w = (w - 1) * stride + k;
    let mut full = vec![0.0f64; n * out_ch * full_h * full_w];
    for b in 0..n {
        for ic in 0..in_ch {
            for iy in 0..h {
                for ix in 0..w {
                    let v = input.get(b, ic, iy, ix) as f64;
                    for oc in 0..out_ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = iy * stride + ky;
                                let x = ix * stride + kx;
                                full[((b * out_ch + oc) * full_h + y) * full_w + x] +=
                                    v * weights.get(ic, oc, ky, kx) as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    let oh = full_h - 2 * padding;
    let ow = full_w - 2 * padding;
    Tensor::from_fn([n, out_ch, oh, ow], |[b, c, y, x]| {
        full[((b * out_ch + c) * full_h + y + padding) * full_w + x + padding] as f32
    })
}

pub fn batchnorm(input: &Tensor, p: &BatchNormParams) -> Tensor {
    Tensor::from_fn(input.dims(), |[b, c, y, x]| {
        let v = input.get(b, c, y, x);
        p.gamma[c] * (v - p.mean[c]) / (p.variance[c] + p.epsilon).sqrt() + p.beta[c]
    })
}

/// Window maximum by scanning the full `window × window` neighbourhood.
pub fn maxpool(input: &Tensor, window: usize) -> Tensor {
    let [_, _, h, w] = input.dims();
    let r = (window / 2) as isize;
    Tensor::from_fn(input.dims(), |[b, c, y, x]| {
        let mut m = f32::NEG_INFINITY;
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = y as isize + dy;
                let xx = x as isize + dx;
                if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                    m = m.max(input.get(b, c, yy as usize, xx as usize));
                }
            }
        }
        m
    })
}

/// Non-overlapping `factor × factor` average pooling.
pub fn avg_downsample(input: &Tensor, factor: usize) -> Tensor {
    let [n, c, h, w] = input.dims();
    Tensor::from_fn([n, c, h / factor, w / factor], |[b, ch, y, x]| {
        let mut s = 0.0f64;
        for dy in 0..factor {
            for dx in 0..factor {
                s += input.get(b, ch, y * factor + dy, x * factor + dx) as f64;
            }
        }
        (s / (factor * factor) as f64) as f32
    })
}

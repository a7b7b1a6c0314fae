//! Numeric kernels for every layer type in the network.
//!
//! All kernels are pure. Output planes are computed independently (one
//! `(batch, channel)` plane per task) with a fixed accumulation order, so the
//! parallel and sequential builds produce bit-identical results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::for_each_chunk_mut;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Swish,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Swish => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Output extent of a forward convolution along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transposed_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    ((input - 1) * stride + kernel).checked_sub(2 * padding).filter(|&n| n > 0)
}

/// Grouped 2-D cross-correlation.
///
/// `weights` is `(out_ch, in_ch / groups, k, k)`; `bias`, when given, has one
/// entry per output channel.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    let [n, in_ch, h, w] = input.dims();
    let [out_ch, in_per_group, kh, kw] = weights.dims();
    if kh != kw {
        return Err(Error::config(format!("non-square kernel {:?}", weights.dims())));
    }
    if groups == 0 || in_ch % groups != 0 || out_ch % groups != 0 {
        return Err(Error::config(format!(
            "groups={groups} must divide input channels {in_ch} and output channels {out_ch}"
        )));
    }
    if in_per_group != in_ch / groups {
        return Err(Error::config(format!(
            "weights {:?} expect {} input channels per group, input {:?} with groups={groups} has {}",
            weights.dims(),
            in_per_group,
            input.dims(),
            in_ch / groups
        )));
    }
    if stride == 0 {
        return Err(Error::config("stride must be >= 1"));
    }
    if let Some(b) = bias {
        if b.len() != out_ch {
            return Err(Error::config(format!(
                "bias length {} does not match output channels {out_ch}",
                b.len()
            )));
        }
    }
    let k = kh;
    let (oh, ow) = match (
        conv_output_len(h, k, stride, padding),
        conv_output_len(w, k, stride, padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::config(format!(
                "kernel {k} with padding {padding} does not fit input {:?}",
                input.dims()
            )))
        }
    };

    let out_per_group = out_ch / groups;
    let mut out = Tensor::zeros([n, out_ch, oh, ow]);
    let wdata = weights.data();
    for_each_chunk_mut(out.data_mut(), oh * ow, |plane_idx, plane| {
        let b = plane_idx / out_ch;
        let oc = plane_idx % out_ch;
        if let Some(bias) = bias {
            plane.fill(bias[oc]);
        }
        let group = oc / out_per_group;
        for icl in 0..in_per_group {
            let src = input.plane(b, group * in_per_group + icl);
            let wbase = (oc * in_per_group + icl) * k * k;
            for ky in 0..k {
                let (oy0, oy1) = valid_range(h, oh, ky, stride, padding);
                for kx in 0..k {
                    let wv = wdata[wbase + ky * k + kx];
                    let (ox0, ox1) = valid_range(w, ow, kx, stride, padding);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - padding;
                        let in_row = &src[iy * w..(iy + 1) * w];
                        let out_row = &mut plane[oy * ow + ox0..oy * ow + ox1];
                        if stride == 1 {
                            let ix0 = ox0 + kx - padding;
                            for (o, &i) in out_row.iter_mut().zip(&in_row[ix0..]) {
                                *o += wv * i;
                            }
                        } else {
                            for (j, o) in out_row.iter_mut().enumerate() {
                                *o += wv * in_row[(ox0 + j) * stride + kx - padding];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Output indices `o` in `[lo, hi)` with `0 <= o*stride + tap - padding < input_len`.
#[inline]
fn valid_range(input_len: usize, output_len: usize, tap: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if tap >= padding {
        0
    } else {
        (padding - tap).div_ceil(stride)
    };
    // o*stride + tap - padding <= input_len - 1
    let limit = input_len - 1 + padding;
    let hi = if limit < tap {
        0
    } else {
        ((limit - tap) / stride + 1).min(output_len)
    };
    (lo.min(hi), hi)
}

/// Transposed convolution (the adjoint of [`conv2d`] with the same geometry).
///
/// `weights` is `(in_ch, out_ch, k, k)`.
pub fn conv2d_transposed(input: &Tensor, weights: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let [n, in_ch, h, w] = input.dims();
    let [w_in, out_ch, kh, kw] = weights.dims();
    if kh != kw {
        return Err(Error::config(format!("non-square kernel {:?}", weights.dims())));
    }
    if w_in != in_ch {
        return Err(Error::config(format!(
            "transposed conv weights {:?} expect {w_in} input channels, input {:?} has {in_ch}",
            weights.dims(),
            input.dims()
        )));
    }
    if stride == 0 {
        return Err(Error::config("stride must be >= 1"));
    }
    let k = kh;
    let (oh, ow) = match (
        conv_transposed_output_len(h, k, stride, padding),
        conv_transposed_output_len(w, k, stride, padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::config(format!(
                "padding {padding} too large for transposed kernel {k} on input {:?}",
                input.dims()
            )))
        }
    };
    let mut out = Tensor::zeros([n, out_ch, oh, ow]);
    let wdata = weights.data();
    for_each_chunk_mut(out.data_mut(), oh * ow, |plane_idx, plane| {
        let b = plane_idx / out_ch;
        let oc = plane_idx % out_ch;
        for ic in 0..in_ch {
            let src = input.plane(b, ic);
            let wbase = (ic * out_ch + oc) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wdata[wbase + ky * k + kx];
                    for iy in 0..h {
                        let oy = iy * stride + ky;
                        if oy < padding || oy - padding >= oh {
                            continue;
                        }
                        let orow = (oy - padding) * ow;
                        for ix in 0..w {
                            let ox = ix * stride + kx;
                            if ox < padding || ox - padding >= ow {
                                continue;
                            }
                            plane[orow + ox - padding] += wv * src[iy * w + ix];
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Per-channel parameters of an inference-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub epsilon: f32,
}

impl BatchNormParams {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            variance: vec![1.0; channels],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            epsilon: 0.0,
        }
    }
}

pub fn batchnorm_inference(input: &Tensor, p: &BatchNormParams) -> Result<Tensor> {
    let c = input.channels();
    for (name, v) in [
        ("mean", &p.mean),
        ("variance", &p.variance),
        ("gamma", &p.gamma),
        ("beta", &p.beta),
    ] {
        if v.len() != c {
            return Err(Error::config(format!(
                "batchnorm {name} has length {}, input has {c} channels",
                v.len()
            )));
        }
    }
    if p.variance.iter().any(|&v| v < 0.0) {
        return Err(Error::config("batchnorm variance must be non-negative"));
    }
    let scale: Vec<f32> = p
        .gamma
        .iter()
        .zip(&p.variance)
        .map(|(g, v)| g / (v + p.epsilon).sqrt())
        .collect();
    let mut out = input.clone();
    let plane = input.plane_len();
    for_each_chunk_mut(out.data_mut(), plane, |idx, dst| {
        let ch = idx % c;
        let (m, s, b) = (p.mean[ch], scale[ch], p.beta[ch]);
        for v in dst {
            *v = (*v - m) * s + b;
        }
    });
    Ok(out)
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    let mut out = input.clone();
    activation_in_place(&mut out, kind);
    out
}

pub fn activation_in_place(t: &mut Tensor, kind: Activation) {
    let plane = t.plane_len();
    for_each_chunk_mut(t.data_mut(), plane, |_, dst| {
        for v in dst {
            *v = kind.apply(*v);
        }
    });
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::config("upsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let [n, c, h, w] = input.dims();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for_each_chunk_mut(out.data_mut(), oh * ow, |idx, dst| {
        let src = input.plane(idx / c, idx % c);
        for oy in 0..oh {
            let row = &src[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *d = row[ox / factor];
            }
        }
    });
    Ok(out)
}

/// Same-size sliding-window maximum with `-inf` outside the map.
pub fn maxpool_window(input: &Tensor, window: usize) -> Result<Tensor> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::config(format!("maxpool window must be odd and >= 1, got {window}")));
    }
    if window == 1 {
        return Ok(input.clone());
    }
    let [_, c, h, w] = input.dims();
    let r = window / 2;
    let mut out = input.clone();
    // max is exact, so the separable row/column passes equal the 2-D window.
    for_each_chunk_mut(out.data_mut(), h * w, |idx, dst| {
        let src = input.plane(idx / c, idx % c);
        let mut rows = vec![f32::NEG_INFINITY; h * w];
        for y in 0..h {
            let line = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                rows[y * w + x] = line[lo..=hi].iter().copied().fold(f32::NEG_INFINITY, f32::max);
            }
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            for x in 0..w {
                let mut m = f32::NEG_INFINITY;
                for yy in lo..=hi {
                    m = m.max(rows[yy * w + x]);
                }
                dst[y * w + x] = m;
            }
        }
    });
    Ok(out)
}

pub fn elementwise_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape {
            edge: "elementwise_add".into(),
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    let mut out = a.clone();
    for (o, &x) in out.data_mut().iter_mut().zip(b.data()) {
        *o += x;
    }
    Ok(out)
}

/// Concatenates along the channel axis, preserving input order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("concat_channels needs at least one input"))?;
    let [n, _, h, w] = first.dims();
    for p in parts {
        let [pn, _, ph, pw] = p.dims();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::Shape {
                edge: "concat_channels".into(),
                expected: [n, p.channels(), h, w],
                actual: p.dims(),
            });
        }
    }
    let total: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * total * h * w);
    for b in 0..n {
        for p in parts {
            let start = p.offset(b, 0, 0, 0);
            data.extend_from_slice(&p.data()[start..start + p.channels() * h * w]);
        }
    }
    Tensor::new([n, total, h, w], data)
}

/// Spatial mean per channel: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let [n, c, _, _] = input.dims();
    let area = input.plane_len() as f32;
    Tensor::from_fn([n, c, 1, 1], |[b, ch, _, _]| {
        input.plane(b, ch).iter().sum::<f32>() / area
    })
}

/// Multiplies each channel plane by a per-channel gate of shape `(n, c, 1, 1)`.
pub fn scale_channels(input: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let [n, c, _, _] = input.dims();
    if gate.dims() != [n, c, 1, 1] {
        return Err(Error::Shape {
            edge: "scale_channels".into(),
            expected: [n, c, 1, 1],
            actual: gate.dims(),
        });
    }
    let mut out = input.clone();
    let plane = input.plane_len();
    let g = gate.data();
    for_each_chunk_mut(out.data_mut(), plane, |idx, dst| {
        let s = g[idx];
        for v in dst {
            *v *= s;
        }
    });
    Ok(out)
}

/// Fully connected layer over the channel axis of a `(n, in, 1, 1)` tensor.
/// `weights` is `(out, in, 1, 1)`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    let [_, c, h, w] = input.dims();
    if (h, w) != (1, 1) {
        return Err(Error::config(format!("dense expects (n, c, 1, 1) input, got {:?}", input.dims())));
    }
    if weights.dims()[1] != c || weights.dims()[2..] != [1, 1] {
        return Err(Error::config(format!(
            "dense weights {:?} do not match {c} input features",
            weights.dims()
        )));
    }
    conv2d(input, weights, bias, 1, 0, 1)
}

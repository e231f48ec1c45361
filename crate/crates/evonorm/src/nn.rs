//! Neural-network kernels for the anchor models: grouped 2-D convolution,
//! global average pooling, softmax cross-entropy, He initialization and
//! SGD with Nesterov momentum plus the warmup/cosine schedule.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the output extent is ceil(input/stride).
    Same,
    /// No padding; kernel must fit.
    Valid,
}

fn conv_geometry(input: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let pad_total = ((out - 1) * stride + k).saturating_sub(input);
            (out, pad_total / 2)
        }
        Padding::Valid => ((input - k) / stride + 1, 0),
    }
}

/// Weight layout for convolutions: (kh, kw, c_in_per_group, c_out).
pub fn conv_weight_shape(kh: usize, kw: usize, c_in_per_group: usize, c_out: usize) -> Shape {
    Shape::new(kh, kw, c_in_per_group, c_out)
}

fn check_conv(x: &Tensor, w: &Tensor, groups: usize) -> Result<()> {
    let ci = x.shape().c;
    let co = w.shape().c;
    if groups == 0 || ci % groups != 0 || co % groups != 0 {
        return Err(Error::GroupDivisibility {
            groups,
            channels: ci,
        });
    }
    if w.shape().w != ci / groups {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().as_tuple(),
            rhs: w.shape().as_tuple(),
        });
    }
    Ok(())
}

/// Cross-correlation with grouped channels. `groups == c_in` is depthwise.
///
/// The hot loops run over contiguous channel rows with unchecked indexing;
/// index validity is established by the geometry computed up front.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: Padding,
    groups: usize,
) -> Result<Tensor> {
    check_conv(x, w, groups)?;
    let (n, hi, wi, ci) = x.shape().as_tuple();
    let (kh, kw, cig, co) = w.shape().as_tuple();
    let cog = co / groups;
    let (ho, pad_y) = conv_geometry(hi, kh, stride, padding);
    let (wo, pad_x) = conv_geometry(wi, kw, stride, padding);
    let mut out = Tensor::zeros(Shape::new(n, ho, wo, co));
    let od = out.data_mut();
    let xd = x.data();
    let wd = w.data();
    for b in 0..n {
        for oy in 0..ho {
            let iy0 = (oy * stride) as isize - pad_y as isize;
            for ky in 0..kh {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= hi as isize {
                    continue;
                }
                let xrow_base = (b * hi + iy as usize) * wi;
                let orow_base = (b * ho + oy) * wo;
                for kx in 0..kw {
                    // Output columns whose input column stays in bounds.
                    let (ox_lo, ox_hi) =
                        valid_ox_range(wo, wi, stride, pad_x, kx);
                    let wbase = (ky * kw + kx) * cig * co;
                    for ox in ox_lo..ox_hi {
                        let ix = (ox * stride + kx) - pad_x;
                        let xbase = (xrow_base + ix) * ci;
                        let obase = (orow_base + ox) * co;
                        unsafe {
                            for g in 0..groups {
                                let acc = od.get_unchecked_mut(obase + g * cog..obase + (g + 1) * cog);
                                for cii in 0..cig {
                                    let xv = *xd.get_unchecked(xbase + g * cig + cii);
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let wrow = wd.get_unchecked(
                                        wbase + cii * co + g * cog..wbase + cii * co + (g + 1) * cog,
                                    );
                                    for (a, wv) in acc.iter_mut().zip(wrow) {
                                        *a += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Range of output columns for which `ix = ox*stride + kx - pad` lands in
/// `[0, wi)`.
#[inline]
fn valid_ox_range(wo: usize, wi: usize, stride: usize, pad: usize, kx: usize) -> (usize, usize) {
    // ix >= 0  =>  ox >= ceil((pad - kx) / stride)
    let lo = if kx >= pad {
        0
    } else {
        (pad - kx).div_ceil(stride)
    };
    // ix < wi  =>  ox <= floor((wi - 1 + pad - kx) / stride)
    let hi = if wi + pad > kx {
        ((wi - 1 + pad - kx) / stride + 1).min(wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Gradients of conv2d w.r.t. input and weights.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
    groups: usize,
) -> Result<(Tensor, Tensor)> {
    check_conv(x, w, groups)?;
    let (n, hi, wi, ci) = x.shape().as_tuple();
    let (kh, kw, cig, co) = w.shape().as_tuple();
    let cog = co / groups;
    let (ho, pad_y) = conv_geometry(hi, kh, stride, padding);
    let (wo, pad_x) = conv_geometry(wi, kw, stride, padding);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let xd = x.data();
    let wd = w.data();
    let gd = grad_out.data();
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    for b in 0..n {
        for oy in 0..ho {
            let iy0 = (oy * stride) as isize - pad_y as isize;
            for ky in 0..kh {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= hi as isize {
                    continue;
                }
                let xrow_base = (b * hi + iy as usize) * wi;
                let orow_base = (b * ho + oy) * wo;
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = valid_ox_range(wo, wi, stride, pad_x, kx);
                    let wbase = (ky * kw + kx) * cig * co;
                    for ox in ox_lo..ox_hi {
                        let ix = (ox * stride + kx) - pad_x;
                        let xbase = (xrow_base + ix) * ci;
                        let obase = (orow_base + ox) * co;
                        unsafe {
                            for g in 0..groups {
                                let gslice = gd.get_unchecked(obase + g * cog..obase + (g + 1) * cog);
                                for cii in 0..cig {
                                    let wrow = wd.get_unchecked(
                                        wbase + cii * co + g * cog..wbase + cii * co + (g + 1) * cog,
                                    );
                                    let mut acc = 0.0;
                                    for (gv, wv) in gslice.iter().zip(wrow) {
                                        acc += gv * wv;
                                    }
                                    *dxd.get_unchecked_mut(xbase + g * cig + cii) += acc;
                                    let xv = *xd.get_unchecked(xbase + g * cig + cii);
                                    if xv != 0.0 {
                                        let dwrow = dwd.get_unchecked_mut(
                                            wbase + cii * co + g * cog
                                                ..wbase + cii * co + (g + 1) * cog,
                                        );
                                        for (dv, gv) in dwrow.iter_mut().zip(gslice) {
                                            *dv += xv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw))
}

/// Mean over the spatial extent: (n,h,w,c) -> (n,1,1,c).
pub fn global_avg_pool_forward(x: &Tensor) -> Tensor {
    let (n, h, w, c) = x.shape().as_tuple();
    let mut out = Tensor::zeros(Shape::new(n, 1, 1, c));
    let od = out.data_mut();
    let xd = x.data();
    let inv = 1.0 / (h * w) as f64;
    for b in 0..n {
        let obase = b * c;
        for i in 0..h * w {
            let xbase = (b * h * w + i) * c;
            for ch in 0..c {
                od[obase + ch] += xd[xbase + ch];
            }
        }
        for ch in 0..c {
            od[obase + ch] *= inv;
        }
    }
    out
}

pub fn global_avg_pool_backward(x_shape: Shape, grad_out: &Tensor) -> Tensor {
    let (n, h, w, c) = x_shape.as_tuple();
    let mut dx = Tensor::zeros(x_shape);
    let dxd = dx.data_mut();
    let gd = grad_out.data();
    let inv = 1.0 / (h * w) as f64;
    for b in 0..n {
        for i in 0..h * w {
            let base = (b * h * w + i) * c;
            for ch in 0..c {
                dxd[base + ch] = gd[b * c + ch] * inv;
            }
        }
    }
    dx
}

/// Mean softmax cross-entropy over the batch. Logits are (n,1,1,k).
/// Returns the scalar loss and the cached softmax probabilities.
pub fn softmax_xent_forward(logits: &Tensor, labels: &[usize]) -> Result<(Tensor, Tensor)> {
    let (n, h, w, k) = logits.shape().as_tuple();
    if h != 1 || w != 1 || labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "softmax_xent",
            lhs: logits.shape().as_tuple(),
            rhs: (labels.len(), 1, 1, k),
        });
    }
    for &label in labels {
        if label >= k {
            return Err(Error::LabelRange { label, classes: k });
        }
    }
    let mut probs = Tensor::zeros(logits.shape());
    let pd = probs.data_mut();
    let ld = logits.data();
    let mut loss = 0.0;
    for b in 0..n {
        let row = &ld[b * k..(b + 1) * k];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut z = 0.0;
        for &v in row {
            z += (v - m).exp();
        }
        let lse = m + z.ln();
        loss += lse - row[labels[b]];
        for (j, &v) in row.iter().enumerate() {
            pd[b * k + j] = (v - lse).exp();
        }
    }
    Ok((Tensor::scalar(loss / n as f64), probs))
}

pub fn softmax_xent_backward(probs: &Tensor, labels: &[usize], grad_scalar: f64) -> Tensor {
    let (n, _, _, k) = probs.shape().as_tuple();
    let mut dl = probs.clone();
    let dd = dl.data_mut();
    let scale = grad_scalar / n as f64;
    for b in 0..n {
        dd[b * k + labels[b]] -= 1.0;
        for j in 0..k {
            dd[b * k + j] *= scale;
        }
    }
    dl
}

/// Fraction of rows whose argmax equals the label (ties pick the lowest index).
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let (n, _, _, k) = logits.shape().as_tuple();
    let ld = logits.data();
    let mut hits = 0usize;
    for b in 0..n {
        let row = &ld[b * k..(b + 1) * k];
        let mut best = 0usize;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == labels[b] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// He fan-in normal initialization: N(0, sqrt(2/fan_in)).
pub fn he_normal(shape: Shape, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    let data = (0..shape.len()).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape/data agree")
}

/// SGD momentum state; velocities mirror parameter shapes.
#[derive(Debug, Clone)]
pub struct OptState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    velocity: Vec<Tensor>,
}

impl OptState {
    pub fn new(params: &[Tensor], momentum: f64, weight_decay: f64, nesterov: bool) -> Self {
        OptState {
            momentum,
            weight_decay,
            nesterov,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn velocity(&self, i: usize) -> &Tensor {
        &self.velocity[i]
    }
}

/// One optimizer step: g' = g + wd·θ; v' = m·v + g';
/// θ' = θ − lr·(g' + m·v') in Nesterov form, θ − lr·v' otherwise.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptState, lr: f64) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.velocity.len());
    let m = state.momentum;
    let wd = state.weight_decay;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        let pd = p.data_mut();
        let gd = g.data();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            let gp = gd[i] + wd * pd[i];
            let vn = m * vd[i] + gp;
            vd[i] = vn;
            let step = if state.nesterov { gp + m * vn } else { vn };
            pd[i] -= lr * step;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// Learning rate at `step`: linear ramp 0→base over `warmup` steps, then
/// constant or half-cosine decay measured on post-warmup progress.
pub fn lr_at(schedule: LrSchedule, base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    match schedule {
        LrSchedule::Constant => base,
        LrSchedule::Cosine => {
            let span = total.saturating_sub(warmup).max(1);
            let progress = (step - warmup) as f64 / span as f64;
            0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

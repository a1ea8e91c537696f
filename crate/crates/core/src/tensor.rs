//! Dense float tensors and the handful of numeric operations the rest of
//! the crate is built on: same-padded 2-D convolution (with the backward
//! passes used by training), bilinear sampling, momentum SGD, and a
//! central-difference gradient probe.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major array of 32-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape("Tensor::from_vec", shape, &[data.len()]));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Tensor::from_vec".into()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "Tensor::sub", |a, b| a - b)
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "Tensor::add", |a, b| a + b)
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn scale_in_place(&mut self, factor: f32) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    fn zip(&self, other: &Tensor, context: &str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(context, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Weights and bias of one 2-D convolution layer.
///
/// Weights are stored `[out_channels, in_channels, k, k]`; `k` must be odd
/// so "same" zero padding is symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<ConvParams> {
        let ws = weights.shape();
        if ws.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "conv weights must be rank 4 [out,in,k,k], got {ws:?}"
            )));
        }
        if ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv kernel must be square with odd size, got {}x{}",
                ws[2], ws[3]
            )));
        }
        if bias.shape() != [ws[0]] {
            return Err(Error::shape("ConvParams bias", &[ws[0]], bias.shape()));
        }
        Ok(ConvParams { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn zeros_like(&self) -> ConvParams {
        ConvParams {
            weights: Tensor::zeros(self.weights.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }
}

fn check_chw(t: &Tensor, context: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(context, &[0, 0, 0], t.shape())),
    }
}

/// Same-padded 2-D convolution of a `[C_in, H, W]` tensor.
///
/// Output position `(o, i, j)` is `bias[o]` plus the kernel window dotted
/// with the zero-padded input.
pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let (c_in, h, w) = check_chw(input, "conv2d input")?;
    let k = params.kernel_size();
    if c_in != params.in_channels() {
        return Err(Error::shape(
            "conv2d channels",
            &[params.in_channels()],
            &[c_in],
        ));
    }
    if h < k || w < k {
        return Err(Error::InvalidConfig(format!(
            "conv2d input {h}x{w} smaller than kernel {k}x{k}"
        )));
    }
    let c_out = params.out_channels();
    let off = k / 2;
    let mut out = Tensor::zeros(&[c_out, h, w]);

    let wdat = params.weights.data();
    let idat = input.data();
    let odat = out.data_mut();
    for o in 0..c_out {
        let plane = &mut odat[o * h * w..(o + 1) * h * w];
        plane.fill(params.bias.data()[o]);
        for c in 0..c_in {
            let in_plane = &idat[c * h * w..(c + 1) * h * w];
            for dy in 0..k {
                for dx in 0..k {
                    let wv = wdat[((o * c_in + c) * k + dy) * k + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    // Row r of the input contributes to output row i = r - dy + off.
                    let (j0, j1) = col_range(w, dx, off);
                    for i in 0..h {
                        let r = i as isize + dy as isize - off as isize;
                        if r < 0 || r >= h as isize {
                            continue;
                        }
                        let src = &in_plane[r as usize * w + (j0 + dx - off)..][..j1 - j0];
                        let dst = &mut plane[i * w + j0..i * w + j1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

// Valid output-column interval [j0, j1) for kernel column dx: the sampled
// input column j + dx - off must land in [0, w).
fn col_range(w: usize, dx: usize, off: usize) -> (usize, usize) {
    let j0 = off.saturating_sub(dx);
    let j1 = (w + off).saturating_sub(dx).min(w);
    (j0, j1.max(j0))
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_input_grad(
    grad_out: &Tensor,
    params: &ConvParams,
    input_shape: &[usize],
) -> Result<Tensor> {
    let (c_out, h, w) = check_chw(grad_out, "conv2d_input_grad")?;
    if c_out != params.out_channels() {
        return Err(Error::shape(
            "conv2d_input_grad channels",
            &[params.out_channels()],
            &[c_out],
        ));
    }
    let c_in = params.in_channels();
    if input_shape != [c_in, h, w] {
        return Err(Error::shape(
            "conv2d_input_grad input shape",
            &[c_in, h, w],
            input_shape,
        ));
    }
    let k = params.kernel_size();
    let off = k / 2;
    let mut grad_in = Tensor::zeros(&[c_in, h, w]);
    let wdat = params.weights.data();
    let gdat = grad_out.data();
    let gi = grad_in.data_mut();
    for o in 0..c_out {
        let g_plane = &gdat[o * h * w..(o + 1) * h * w];
        for c in 0..c_in {
            let in_plane = &mut gi[c * h * w..(c + 1) * h * w];
            for dy in 0..k {
                for dx in 0..k {
                    let wv = wdat[((o * c_in + c) * k + dy) * k + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    // d_in[y][x] += g[y - dy + off][x - dx + off] * w
                    let (x0, x1) = col_range(w, k - 1 - dx, off);
                    for y in 0..h {
                        let gy = y as isize - dy as isize + off as isize;
                        if gy < 0 || gy >= h as isize {
                            continue;
                        }
                        let src = &g_plane[gy as usize * w + (x0 + off - dx)..][..x1 - x0];
                        let dst = &mut in_plane[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Gradients of `conv2d` with respect to the kernel weights and bias,
/// accumulated into `acc`.
pub fn conv2d_param_grad(input: &Tensor, grad_out: &Tensor, acc: &mut ConvParams) -> Result<()> {
    let (c_in, h, w) = check_chw(input, "conv2d_param_grad input")?;
    let (c_out, gh, gw) = check_chw(grad_out, "conv2d_param_grad grad")?;
    if (gh, gw) != (h, w) || c_in != acc.in_channels() || c_out != acc.out_channels() {
        return Err(Error::shape(
            "conv2d_param_grad",
            &[acc.out_channels(), acc.in_channels(), h, w],
            &[c_out, c_in, gh, gw],
        ));
    }
    let k = acc.kernel_size();
    let off = k / 2;
    let idat = input.data();
    let gdat = grad_out.data();
    let wg = acc.weights.data_mut();
    let bg = acc.bias.data_mut();
    for o in 0..c_out {
        let g_plane = &gdat[o * h * w..(o + 1) * h * w];
        bg[o] += g_plane.iter().sum::<f32>();
        for c in 0..c_in {
            let in_plane = &idat[c * h * w..(c + 1) * h * w];
            for dy in 0..k {
                for dx in 0..k {
                    let (j0, j1) = col_range(w, dx, off);
                    // Row dots stay f32 (they vectorize); the cross-row
                    // accumulation is f64 to limit cancellation error.
                    let mut acc_w = 0.0f64;
                    for i in 0..h {
                        let r = i as isize + dy as isize - off as isize;
                        if r < 0 || r >= h as isize {
                            continue;
                        }
                        let a = &g_plane[i * w + j0..i * w + j1];
                        let b = &in_plane[r as usize * w + (j0 + dx - off)..][..j1 - j0];
                        acc_w += a.iter().zip(b).map(|(x, y)| x * y).sum::<f32>() as f64;
                    }
                    wg[((o * c_in + c) * k + dy) * k + dx] += acc_w as f32;
                }
            }
        }
    }
    Ok(())
}

/// Bilinear interpolation of a single-channel `[1, H, W]` map at fractional
/// `(row, col)` points. Points outside the map are clamped to the border.
pub fn bilinear_sample(map: &Tensor, points: &[(f32, f32)]) -> Result<Vec<f32>> {
    let (c, h, w) = check_chw(map, "bilinear_sample")?;
    if c != 1 {
        return Err(Error::shape("bilinear_sample channels", &[1], &[c]));
    }
    Ok(points
        .iter()
        .map(|&(r, cc)| bilinear_at(map.data(), h, w, r, cc))
        .collect())
}

#[inline]
pub(crate) fn bilinear_at(plane: &[f32], h: usize, w: usize, r: f32, c: f32) -> f32 {
    let r = r.clamp(0.0, (h - 1) as f32);
    let c = c.clamp(0.0, (w - 1) as f32);
    let r0 = r.floor() as usize;
    let c0 = c.floor() as usize;
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = r - r0 as f32;
    let fc = c - c0 as f32;
    let v00 = plane[r0 * w + c0];
    let v01 = plane[r0 * w + c1];
    let v10 = plane[r1 * w + c0];
    let v11 = plane[r1 * w + c1];
    v00 * (1.0 - fr) * (1.0 - fc) + v01 * (1.0 - fr) * fc + v10 * fr * (1.0 - fc) + v11 * fr * fc
}

/// Geometry of one bilinear tap with zero-outside semantics: corner
/// indices, fractional position, and per-corner validity masks. Samples
/// fade linearly to zero past the map edge, matching the zero padding of
/// `conv2d`, so a deformable layer with all-zero offsets reproduces the
/// plain convolution exactly. The same geometry is reused across channels
/// when sampling multi-channel maps.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TapGeom {
    pub i00: usize,
    pub i01: usize,
    pub i10: usize,
    pub i11: usize,
    pub m00: f32,
    pub m01: f32,
    pub m10: f32,
    pub m11: f32,
    pub fr: f32,
    pub fc: f32,
}

impl TapGeom {
    #[inline]
    pub fn weights(&self) -> (f32, f32, f32, f32) {
        (
            self.m00 * (1.0 - self.fr) * (1.0 - self.fc),
            self.m01 * (1.0 - self.fr) * self.fc,
            self.m10 * self.fr * (1.0 - self.fc),
            self.m11 * self.fr * self.fc,
        )
    }

    #[inline]
    pub fn value(&self, plane: &[f32]) -> f32 {
        let (w00, w01, w10, w11) = self.weights();
        w00 * plane[self.i00] + w01 * plane[self.i01] + w10 * plane[self.i10] + w11 * plane[self.i11]
    }

    #[inline]
    pub fn d_row(&self, plane: &[f32]) -> f32 {
        (self.m10 * plane[self.i10] - self.m00 * plane[self.i00]) * (1.0 - self.fc)
            + (self.m11 * plane[self.i11] - self.m01 * plane[self.i01]) * self.fc
    }

    #[inline]
    pub fn d_col(&self, plane: &[f32]) -> f32 {
        (self.m01 * plane[self.i01] - self.m00 * plane[self.i00]) * (1.0 - self.fr)
            + (self.m11 * plane[self.i11] - self.m10 * plane[self.i10]) * self.fr
    }
}

#[inline]
pub(crate) fn tap_geom(h: usize, w: usize, r: f32, c: f32) -> TapGeom {
    let r0f = r.floor();
    let c0f = c.floor();
    let r0 = r0f as isize;
    let c0 = c0f as isize;
    let r1 = r0 + 1;
    let c1 = c0 + 1;
    let hh = h as isize;
    let ww = w as isize;
    let mask = |rr: isize, cc: isize| -> f32 {
        if rr >= 0 && rr < hh && cc >= 0 && cc < ww {
            1.0
        } else {
            0.0
        }
    };
    // Invalid corners are masked to zero; their index only needs to stay
    // in bounds for the (discarded) load.
    let idx = |rr: isize, cc: isize| -> usize {
        let rr = rr.clamp(0, hh - 1) as usize;
        let cc = cc.clamp(0, ww - 1) as usize;
        rr * w + cc
    };
    TapGeom {
        i00: idx(r0, c0),
        i01: idx(r0, c1),
        i10: idx(r1, c0),
        i11: idx(r1, c1),
        m00: mask(r0, c0),
        m01: mask(r0, c1),
        m10: mask(r1, c0),
        m11: mask(r1, c1),
        fr: r - r0f,
        fc: c - c0f,
    }
}

/// Momentum-SGD hyperparameters with stepped learning-rate decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub decay_factor: f32,
    pub decay_every_epochs: usize,
    pub total_epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            momentum: 0.9,
            decay_factor: 0.96,
            decay_every_epochs: 10,
            total_epochs: 30,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        // Zero is allowed so a no-op training run stays expressible.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every_epochs == 0 || self.total_epochs == 0 {
            return Err(Error::InvalidConfig(
                "decay_every_epochs and total_epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn effective_lr(&self, epoch: usize) -> f32 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every_epochs) as i32)
    }
}

/// One momentum-SGD update:
/// `v <- momentum * v - lr(epoch) * g`, `p <- p + v`.
pub fn sgd_momentum_step(
    params: &mut Tensor,
    velocity: &mut Tensor,
    grads: &Tensor,
    config: &OptimizerConfig,
    epoch: usize,
) -> Result<()> {
    config.validate()?;
    if params.shape() != velocity.shape() || params.shape() != grads.shape() {
        return Err(Error::shape(
            "sgd_momentum_step",
            params.shape(),
            grads.shape(),
        ));
    }
    let lr = config.effective_lr(epoch);
    let mu = config.momentum;
    for ((p, v), g) in params
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut())
        .zip(grads.data())
    {
        *v = mu * *v - lr * *g;
        *p += *v;
    }
    Ok(())
}

/// Central-difference gradient of a scalar objective, one coordinate at a
/// time. The objective is evaluated in f64 so this stays usable as a
/// high-precision oracle against analytic backward passes.
pub fn finite_diff_grad(
    mut objective: impl FnMut(&Tensor) -> f64,
    params: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("eps must be > 0, got {eps}")));
    }
    let mut probe = params.clone();
    let mut grad = Tensor::zeros(params.shape());
    for i in 0..params.numel() {
        let orig = probe.data()[i];
        let p_plus = (orig as f64 + eps) as f32;
        let p_minus = (orig as f64 - eps) as f32;
        probe.data_mut()[i] = p_plus;
        let plus = objective(&probe);
        probe.data_mut()[i] = p_minus;
        let minus = objective(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite_diff_grad objective".into()));
        }
        // Divide by the step the f32 parameters actually realized.
        let step = p_plus as f64 - p_minus as f64;
        grad.data_mut()[i] = ((plus - minus) / step) as f32;
    }
    Ok(grad)
}

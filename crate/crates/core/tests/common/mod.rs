// Shared by several integration-test binaries; not every binary uses
// every helper.
#![allow(dead_code)]

//! Test-side f64 reference implementation of the score pipeline and the
//! surrogate loss. Written as plain nested loops, independent of the
//! crate's f32 code paths, so finite differences over it act as a true
//! oracle for the analytic gradients.

use okfem_core::stream::{FirstFramePolicy, OkfemModel};
use okfem_core::training::{GroundTruthKeyframes, LossConfig};

pub struct OracleConv {
    pub out_ch: usize,
    pub in_ch: usize,
    pub k: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl OracleConv {
    fn from(p: &okfem_core::tensor::ConvParams) -> OracleConv {
        OracleConv {
            out_ch: p.out_channels(),
            in_ch: p.in_channels(),
            k: p.kernel_size(),
            weights: p.weights.data().iter().map(|&v| v as f64).collect(),
            bias: p.bias.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

pub struct OracleModel {
    pub backbone: Vec<OracleConv>,
    pub offset: OracleConv,
    pub response: OracleConv,
    pub th: Vec<f64>,
    pub shape: (usize, usize, usize),
    pub first_frame_policy: FirstFramePolicy,
}

impl OracleModel {
    pub fn from_model(m: &OkfemModel) -> OracleModel {
        OracleModel {
            backbone: m.deform.backbone.iter().map(OracleConv::from).collect(),
            offset: OracleConv::from(&m.deform.offset_predictor),
            response: OracleConv::from(&m.deform.response_kernel),
            th: m.th.th.data().iter().map(|&v| v as f64).collect(),
            shape: m.config.input_shape,
            first_frame_policy: m.config.first_frame_policy,
        }
    }
}

fn conv2d_ref(input: &[f64], c_in: usize, h: usize, w: usize, conv: &OracleConv) -> Vec<f64> {
    assert_eq!(c_in, conv.in_ch);
    let k = conv.k;
    let off = k as isize / 2;
    let mut out = vec![0.0f64; conv.out_ch * h * w];
    for o in 0..conv.out_ch {
        for i in 0..h {
            for j in 0..w {
                let mut acc = conv.bias[o];
                for c in 0..c_in {
                    for dy in 0..k {
                        for dx in 0..k {
                            let r = i as isize + dy as isize - off;
                            let s = j as isize + dx as isize - off;
                            if r >= 0 && r < h as isize && s >= 0 && s < w as isize {
                                acc += conv.weights[((o * c_in + c) * k + dy) * k + dx]
                                    * input[(c * h + r as usize) * w + s as usize];
                            }
                        }
                    }
                }
                out[(o * h + i) * w + j] = acc;
            }
        }
    }
    out
}

fn bilinear_zero_outside(plane: &[f64], h: usize, w: usize, r: f64, c: f64) -> f64 {
    let r0 = r.floor() as isize;
    let c0 = c.floor() as isize;
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    let read = |rr: isize, cc: isize| -> f64 {
        if rr >= 0 && rr < h as isize && cc >= 0 && cc < w as isize {
            plane[rr as usize * w + cc as usize]
        } else {
            0.0
        }
    };
    read(r0, c0) * (1.0 - fr) * (1.0 - fc)
        + read(r0, c0 + 1) * (1.0 - fr) * fc
        + read(r0 + 1, c0) * fr * (1.0 - fc)
        + read(r0 + 1, c0 + 1) * fr * fc
}

/// Receptive-field map of one frame, entirely in f64.
pub fn oracle_receptive_field(m: &OracleModel, frame: &[f64]) -> Vec<f64> {
    let (c, h, w) = m.shape;
    let mut act: Vec<f64> = frame.to_vec();
    let mut ch = c;
    for layer in &m.backbone {
        act = conv2d_ref(&act, ch, h, w, layer)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        ch = layer.out_ch;
    }
    let offsets = conv2d_ref(&act, ch, h, w, &m.offset);
    let k = m.response.k;
    let off = (k / 2) as f64;
    let mut d = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let mut acc = m.response.bias[0];
            for a in 0..k {
                for b in 0..k {
                    let t = a * k + b;
                    let dr = offsets[(2 * t) * h * w + p];
                    let dc = offsets[(2 * t + 1) * h * w + p];
                    let r = i as f64 + a as f64 - off + dr;
                    let cc = j as f64 + b as f64 - off + dc;
                    for chan in 0..ch {
                        let pl = &act[chan * h * w..(chan + 1) * h * w];
                        acc += m.response.weights[(chan * k + a) * k + b]
                            * bilinear_zero_outside(pl, h, w, r, cc);
                    }
                }
            }
            d[p] = acc;
        }
    }
    d
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The smooth surrogate loss over a sequence, in f64 end to end.
pub fn oracle_surrogate_loss(
    m: &OracleModel,
    frames: &[Vec<f64>],
    gt: &GroundTruthKeyframes,
    cfg: &LossConfig,
) -> f64 {
    let f = frames.len();
    let (_, h, w) = m.shape;
    let mut prev: Option<Vec<f64>> = None;
    let th_sum: f64 = m.th.iter().sum();
    let tau = cfg.ste_temperature as f64;
    let sigma = cfg.score_scale as f64;
    let alpha = cfg.alpha as f64;
    let beta = cfg.beta as f64;
    let mut total = 0.0f64;
    for (t, frame) in frames.iter().enumerate() {
        let d = oracle_receptive_field(m, frame);
        if t == 0 {
            let z0 = match m.first_frame_policy {
                FirstFramePolicy::AlwaysKeyframe => 1.0,
                FirstFramePolicy::NeverKeyframe => 0.0,
            };
            let y0 = if gt.is_keyframe(0) { 0.0 } else { 1.0 };
            total += alpha * ((1.0 - y0) * (1.0 - z0) + y0 * z0);
        } else {
            let dp = prev.as_ref().unwrap();
            let s: f64 = d.iter().zip(dp).map(|(a, b)| a - b).sum::<f64>() - th_sum;
            let y = if gt.is_keyframe(t) { 0.0 } else { 1.0 };
            let z = sigmoid(s / tau);
            total += alpha * ((1.0 - y) * (1.0 - z) + y * z) - beta * z * (s / sigma).tanh();
        }
        let _ = (h, w);
        prev = Some(d);
    }
    total / f as f64
}

fn param_mut<'a>(m: &'a mut OracleModel, group: &str, layer: usize, idx: usize) -> &'a mut f64 {
    match group {
        "th" => &mut m.th[idx],
        "response_w" => &mut m.response.weights[idx],
        "response_b" => &mut m.response.bias[idx],
        "offset_w" => &mut m.offset.weights[idx],
        "offset_b" => &mut m.offset.bias[idx],
        "backbone_w" => &mut m.backbone[layer].weights[idx],
        "backbone_b" => &mut m.backbone[layer].bias[idx],
        _ => panic!("unknown group {group}"),
    }
}

/// Central finite difference over one coordinate of one parameter group.
#[allow(clippy::too_many_arguments)]
pub fn oracle_fd(
    m: &mut OracleModel,
    group: &str,
    layer: usize,
    idx: usize,
    eps: f64,
    frames: &[Vec<f64>],
    gt: &GroundTruthKeyframes,
    cfg: &LossConfig,
) -> f64 {
    let orig = *param_mut(m, group, layer, idx);
    *param_mut(m, group, layer, idx) = orig + eps;
    let plus = oracle_surrogate_loss(m, frames, gt, cfg);
    *param_mut(m, group, layer, idx) = orig - eps;
    let minus = oracle_surrogate_loss(m, frames, gt, cfg);
    *param_mut(m, group, layer, idx) = orig;
    (plus - minus) / (2.0 * eps)
}

/// Frames of a sample converted to f64 buffers.
pub fn frames_to_f64(frames: &[okfem_core::tensor::Tensor]) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|f| f.data().iter().map(|&v| v as f64).collect())
        .collect()
}

use okfem_core::recognizer::{VisualFeature, W2vTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Separable multi-class feature clusters (train and held-out splits
/// share the class centers) plus a word-vector table.
pub fn separable_dataset(
    classes: usize,
    per_class_train: usize,
    per_class_test: usize,
    d_vis: usize,
    noise: f32,
    seed: u64,
) -> (
    Vec<(VisualFeature, usize)>,
    Vec<(VisualFeature, usize)>,
    W2vTable,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..d_vis).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut draw = |count: usize| {
        let mut data = Vec::with_capacity(classes * count);
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..count {
                let values = center
                    .iter()
                    .map(|&v| v + rng.gen_range(-noise..noise))
                    .collect();
                data.push((VisualFeature { values }, c));
            }
        }
        data
    };
    let train = draw(per_class_train);
    let test = draw(per_class_test);
    let table = W2vTable::from_pairs(
        (0..classes)
            .map(|c| {
                (
                    format!("class{c}"),
                    (0..okfem_core::io::W2V_DIM)
                        .map(|_| rng.gen_range(-0.5..0.5))
                        .collect(),
                )
            })
            .collect(),
    )
    .unwrap();
    (train, test, table)
}

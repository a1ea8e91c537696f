//! Online keyframe extraction: one frame in, at most one keyframe record
//! out, with only the previous receptive-field and appearance maps kept as
//! state. Selection at frame `t` never looks at frames after `t`.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, tap_geom, ConvParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What to do at the first frame, where no motion evidence exists yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstFramePolicy {
    NeverKeyframe,
    AlwaysKeyframe,
}

/// Shape and structure of the extraction model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OkfemConfig {
    /// (channels, height, width) of every incoming frame.
    pub input_shape: (usize, usize, usize),
    /// Plain 3x3 conv layers ahead of the deformable layer.
    pub backbone_layers: usize,
    pub backbone_channels: usize,
    pub deform_kernel_size: usize,
    pub first_frame_policy: FirstFramePolicy,
}

impl Default for OkfemConfig {
    fn default() -> Self {
        OkfemConfig {
            input_shape: (3, 32, 32),
            backbone_layers: 2,
            backbone_channels: 16,
            deform_kernel_size: 3,
            first_frame_policy: FirstFramePolicy::NeverKeyframe,
        }
    }
}

impl OkfemConfig {
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidConfig(format!(
                "input shape must be non-empty, got {:?}",
                self.input_shape
            )));
        }
        if self.deform_kernel_size % 2 == 0 || self.deform_kernel_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "deform_kernel_size must be odd, got {}",
                self.deform_kernel_size
            )));
        }
        if h < self.deform_kernel_size || w < self.deform_kernel_size {
            return Err(Error::InvalidConfig(format!(
                "frame {h}x{w} smaller than deform kernel {}",
                self.deform_kernel_size
            )));
        }
        if self.backbone_layers > 0 && self.backbone_channels == 0 {
            return Err(Error::InvalidConfig("backbone_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Channel count of the map the deformable layer samples from.
    pub fn base_channels(&self) -> usize {
        if self.backbone_layers == 0 {
            self.input_shape.0
        } else {
            self.backbone_channels
        }
    }
}

/// Parameters of the deformable response path: a plain conv backbone, an
/// offset predictor emitting `2*k*k` per-position offsets, and the
/// single-channel response kernel applied at the deformed sample points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformableConvParams {
    pub backbone: Vec<ConvParams>,
    pub offset_predictor: ConvParams,
    pub response_kernel: ConvParams,
}

impl DeformableConvParams {
    pub fn validate(&self, config: &OkfemConfig) -> Result<()> {
        let k = config.deform_kernel_size;
        if self.offset_predictor.out_channels() != 2 * k * k {
            return Err(Error::InvalidConfig(format!(
                "offset predictor must emit {} channels, got {}",
                2 * k * k,
                self.offset_predictor.out_channels()
            )));
        }
        if self.response_kernel.out_channels() != 1 {
            return Err(Error::InvalidConfig(format!(
                "response kernel must emit 1 channel, got {}",
                self.response_kernel.out_channels()
            )));
        }
        if self.backbone.len() != config.backbone_layers {
            return Err(Error::InvalidConfig(format!(
                "expected {} backbone layers, got {}",
                config.backbone_layers,
                self.backbone.len()
            )));
        }
        Ok(())
    }
}

/// Learnable pixel-wise threshold, same spatial size as the motion map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdKernel {
    pub th: Tensor,
}

/// Appearance kernel W; input channels match the frame channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceParams {
    pub w: ConvParams,
}

/// Adaptive receptive field D(t) of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceptiveFieldMap {
    pub map: Tensor,
    pub frame_index: usize,
}

/// Temporal difference r(t) = D(t) - D(t-1).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionDiffMap {
    pub r: Tensor,
    pub frame_index: usize,
}

/// Per-pixel score map s(t) = r(t) - TH and its total S(t).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub s_map: Tensor,
    pub total: f32,
}

/// Hard selection decision: keyframe iff S(t) > 0, strictly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateDecision {
    pub selected: bool,
    pub frame_index: usize,
}

/// An emitted keyframe with its key motion and key appearance features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRecord {
    pub frame_index: usize,
    pub score: f32,
    pub k_fm: Tensor,
    pub k_fa: Tensor,
}

/// Streaming state: exactly one previous receptive field and one previous
/// appearance map, regardless of sequence length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OkfemState {
    pub prev_receptive_field: Option<ReceptiveFieldMap>,
    pub prev_appearance: Option<Tensor>,
    pub frame_index: usize,
}

impl OkfemState {
    /// Fixed-width binary encoding, used to check the O(1)-state contract.
    pub fn to_bytes(&self) -> Vec<u8> {
        fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(&(self.frame_index as u64).to_le_bytes());
        match &self.prev_receptive_field {
            Some(rf) => {
                buf.push(1);
                buf.extend_from_slice(&(rf.frame_index as u64).to_le_bytes());
                put_tensor(&mut buf, &rf.map);
            }
            None => buf.push(0),
        }
        match &self.prev_appearance {
            Some(t) => {
                buf.push(1);
                put_tensor(&mut buf, t);
            }
            None => buf.push(0),
        }
        buf
    }
}

/// The full extraction model: deformable response path, threshold, and
/// appearance kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OkfemModel {
    pub config: OkfemConfig,
    pub deform: DeformableConvParams,
    pub th: ThresholdKernel,
    pub appearance: AppearanceParams,
}

fn uniform_conv(
    rng: &mut ChaCha8Rng,
    c_out: usize,
    c_in: usize,
    k: usize,
    scale: f32,
) -> ConvParams {
    let weights = Tensor::from_fn(&[c_out, c_in, k, k], |_| rng.gen_range(-scale..scale));
    ConvParams::new(weights, Tensor::zeros(&[c_out])).expect("valid conv dims")
}

impl OkfemModel {
    /// Seeded random initialization. Offset-predictor weights start small
    /// so the receptive field begins close to a plain convolution.
    pub fn init(config: OkfemConfig, seed: u64) -> Result<OkfemModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c_in, h, w) = config.input_shape;
        let k = config.deform_kernel_size;
        let mut backbone = Vec::with_capacity(config.backbone_layers);
        let mut ch = c_in;
        for _ in 0..config.backbone_layers {
            let scale = (1.0 / (ch * 9) as f32).sqrt();
            backbone.push(uniform_conv(&mut rng, config.backbone_channels, ch, 3, scale));
            ch = config.backbone_channels;
        }
        let base = config.base_channels();
        let mut offset_predictor = uniform_conv(&mut rng, 2 * k * k, base, k, 0.02);
        // A small non-zero bias keeps initial sample points off the
        // integer lattice, where the interpolant's derivative jumps.
        offset_predictor.bias = Tensor::filled(&[2 * k * k], 0.05);
        let response_scale = (1.0 / (base * k * k) as f32).sqrt();
        let response_kernel = uniform_conv(&mut rng, 1, base, k, response_scale);
        let w_scale = (1.0 / (c_in * k * k) as f32).sqrt();
        let appearance_w = uniform_conv(&mut rng, c_in, c_in, k, w_scale);
        let model = OkfemModel {
            deform: DeformableConvParams {
                backbone,
                offset_predictor,
                response_kernel,
            },
            th: ThresholdKernel {
                th: Tensor::zeros(&[1, h, w]),
            },
            appearance: AppearanceParams { w: appearance_w },
            config,
        };
        model.deform.validate(&model.config)?;
        Ok(model)
    }

    /// Replace the threshold with a constant level (a mildly positive
    /// start keeps low-motion frames out of the gate from the first
    /// epoch).
    pub fn with_threshold_level(mut self, level: f32) -> OkfemModel {
        let (_, h, w) = self.config.input_shape;
        self.th = ThresholdKernel {
            th: Tensor::filled(&[1, h, w], level),
        };
        self
    }

    fn check_frame(&self, frame: &Tensor) -> Result<()> {
        let (c, h, w) = self.config.input_shape;
        if frame.shape() != [c, h, w] {
            return Err(Error::shape("okfem frame", &[c, h, w], frame.shape()));
        }
        Ok(())
    }

    /// Process one frame: compute D(t) and y(t), gate on the score of the
    /// motion difference, and advance the state.
    pub fn step(&self, state: &mut OkfemState, frame: &Tensor) -> Result<Option<KeyframeRecord>> {
        self.check_frame(frame)?;
        let t = state.frame_index;
        let d_t = receptive_field(frame, &self.deform, t)?;
        let y_t = appearance(frame, &d_t, &self.appearance)?;

        let record = match (&state.prev_receptive_field, &state.prev_appearance) {
            (Some(d_prev), Some(y_prev)) => {
                let r = motion_diff(&d_t, d_prev)?;
                let score = frame_score(&r, &self.th)?;
                let decision = gate(&score, t);
                if decision.selected {
                    Some(KeyframeRecord {
                        frame_index: t,
                        score: score.total,
                        k_fm: r.r,
                        k_fa: y_t.add(y_prev)?,
                    })
                } else {
                    None
                }
            }
            _ => match self.config.first_frame_policy {
                FirstFramePolicy::NeverKeyframe => None,
                // No motion evidence yet: zero motion feature, score 0.
                FirstFramePolicy::AlwaysKeyframe => Some(KeyframeRecord {
                    frame_index: t,
                    score: 0.0,
                    k_fm: Tensor::zeros(d_t.map.shape()),
                    k_fa: y_t.clone(),
                }),
            },
        };

        state.prev_receptive_field = Some(d_t);
        state.prev_appearance = Some(y_t);
        state.frame_index = t + 1;
        Ok(record)
    }

    /// Same gating pipeline, but D(t) is supplied directly (precomputed
    /// receptive-field maps read from file). No frame pixels are available
    /// on this path, so emitted records carry a zero appearance feature.
    pub fn step_precomputed(
        &self,
        state: &mut OkfemState,
        d_map: Tensor,
    ) -> Result<Option<KeyframeRecord>> {
        if d_map.shape() != self.th.th.shape() {
            return Err(Error::shape(
                "precomputed receptive field",
                self.th.th.shape(),
                d_map.shape(),
            ));
        }
        let t = state.frame_index;
        let d_t = ReceptiveFieldMap {
            map: d_map,
            frame_index: t,
        };
        let record = match &state.prev_receptive_field {
            Some(d_prev) => {
                let r = motion_diff(&d_t, d_prev)?;
                let score = frame_score(&r, &self.th)?;
                if gate(&score, t).selected {
                    Some(KeyframeRecord {
                        frame_index: t,
                        score: score.total,
                        k_fa: Tensor::zeros(r.r.shape()),
                        k_fm: r.r,
                    })
                } else {
                    None
                }
            }
            None => match self.config.first_frame_policy {
                FirstFramePolicy::NeverKeyframe => None,
                FirstFramePolicy::AlwaysKeyframe => Some(KeyframeRecord {
                    frame_index: t,
                    score: 0.0,
                    k_fm: Tensor::zeros(d_t.map.shape()),
                    k_fa: Tensor::zeros(d_t.map.shape()),
                }),
            },
        };
        state.prev_receptive_field = Some(d_t);
        state.prev_appearance = None;
        state.frame_index = t + 1;
        Ok(record)
    }

    /// Convenience: stream a whole sequence and collect the records.
    pub fn extract(&self, frames: &[Tensor]) -> Result<Vec<KeyframeRecord>> {
        let mut state = init_state(&self.config)?;
        let mut records = Vec::new();
        for frame in frames {
            if let Some(rec) = self.step(&mut state, frame)? {
                records.push(rec);
            }
        }
        Ok(records)
    }
}

/// Fresh streaming state: no stored maps, frame counter at zero.
pub fn init_state(config: &OkfemConfig) -> Result<OkfemState> {
    config.validate()?;
    Ok(OkfemState {
        prev_receptive_field: None,
        prev_appearance: None,
        frame_index: 0,
    })
}

/// Everything the training backward pass needs from one frame's forward:
/// backbone activations (`acts[0]` is the frame itself), predicted
/// offsets, and the receptive field.
#[derive(Debug, Clone)]
pub(crate) struct FrameTrace {
    pub acts: Vec<Tensor>,
    pub offsets: Tensor,
    pub d: Tensor,
}

fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

pub(crate) fn receptive_field_trace(
    frame: &Tensor,
    params: &DeformableConvParams,
) -> Result<FrameTrace> {
    let mut acts = Vec::with_capacity(params.backbone.len() + 1);
    acts.push(frame.clone());
    for layer in &params.backbone {
        let z = conv2d(acts.last().unwrap(), layer)?;
        acts.push(relu(&z));
    }
    let base = acts.last().unwrap();
    let offsets = conv2d(base, &params.offset_predictor)?;
    let d = deform_response(base, &offsets, &params.response_kernel)?;
    Ok(FrameTrace { acts, offsets, d })
}

/// Adaptive receptive field of one frame: backbone convs with relu, then
/// the deformable response at offset-shifted sample points.
pub fn receptive_field(
    frame: &Tensor,
    params: &DeformableConvParams,
    frame_index: usize,
) -> Result<ReceptiveFieldMap> {
    let trace = receptive_field_trace(frame, params)?;
    Ok(ReceptiveFieldMap {
        map: trace.d,
        frame_index,
    })
}

/// Deformable convolution: for each output position, sample `base` at the
/// regular grid shifted by the predicted per-tap offsets and combine with
/// the response-kernel weights. Samples fade to zero past the map edge,
/// the same padding convention as `conv2d`, so zero offsets reproduce the
/// plain convolution.
pub(crate) fn deform_response(
    base: &Tensor,
    offsets: &Tensor,
    response: &ConvParams,
) -> Result<Tensor> {
    let (c_b, h, w) = match *base.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("deform base", &[0, 0, 0], base.shape())),
    };
    let k = response.kernel_size();
    if response.in_channels() != c_b {
        return Err(Error::shape(
            "deform response channels",
            &[response.in_channels()],
            &[c_b],
        ));
    }
    if offsets.shape() != [2 * k * k, h, w] {
        return Err(Error::shape(
            "deform offsets",
            &[2 * k * k, h, w],
            offsets.shape(),
        ));
    }
    let off = (k / 2) as f32;
    let mut out = Tensor::zeros(&[1, h, w]);
    let bias = response.bias.data()[0];
    let wdat = response.weights.data();
    let odat = offsets.data();
    let bdat = base.data();
    let plane = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let mut acc = bias;
            for a in 0..k {
                for b in 0..k {
                    let m = a * k + b;
                    let dr = odat[(2 * m) * h * w + p];
                    let dc = odat[(2 * m + 1) * h * w + p];
                    let r = i as f32 + a as f32 - off + dr;
                    let c = j as f32 + b as f32 - off + dc;
                    // Corner indices and weights are shared by every
                    // channel at this sample point.
                    let tap = tap_geom(h, w, r, c);
                    for ch in 0..c_b {
                        let pl = &bdat[ch * h * w..(ch + 1) * h * w];
                        acc += wdat[(ch * k + a) * k + b] * tap.value(pl);
                    }
                }
            }
            plane[p] = acc;
        }
    }
    Ok(out)
}

/// Backward pass of `deform_response` for a spatially uniform upstream
/// gradient `g` on the output map (the score is a plain sum over pixels,
/// so that is the only case training needs). Accumulates into the base
/// map, the offset maps, and the response-kernel gradients.
pub(crate) fn deform_backward(
    base: &Tensor,
    offsets: &Tensor,
    response: &ConvParams,
    g: f32,
    d_base: &mut Tensor,
    d_offsets: &mut Tensor,
    d_response: &mut ConvParams,
) -> Result<()> {
    let (c_b, h, w) = match *base.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("deform base", &[0, 0, 0], base.shape())),
    };
    let k = response.kernel_size();
    let off = (k / 2) as f32;
    let wdat = response.weights.data();
    let odat = offsets.data();
    let bdat = base.data();
    let db = d_base.data_mut();
    let doff = d_offsets.data_mut();
    d_response.bias.data_mut()[0] += g * (h * w) as f32;
    // Response-weight grads sum one term per pixel; accumulate in f64 and
    // fold into the shared buffer once.
    let mut dw = vec![0.0f64; c_b * k * k];
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            for a in 0..k {
                for b in 0..k {
                    let m = a * k + b;
                    let dr = odat[(2 * m) * h * w + p];
                    let dc = odat[(2 * m + 1) * h * w + p];
                    let r = i as f32 + a as f32 - off + dr;
                    let c = j as f32 + b as f32 - off + dc;
                    let tap = tap_geom(h, w, r, c);
                    let (w00, w01, w10, w11) = tap.weights();
                    let mut grad_r = 0.0f32;
                    let mut grad_c = 0.0f32;
                    for ch in 0..c_b {
                        let pl = &bdat[ch * h * w..(ch + 1) * h * w];
                        let wv = wdat[(ch * k + a) * k + b];
                        dw[(ch * k + a) * k + b] += (g * tap.value(pl)) as f64;
                        let dv = g * wv;
                        let dpl = &mut db[ch * h * w..(ch + 1) * h * w];
                        dpl[tap.i00] += dv * w00;
                        dpl[tap.i01] += dv * w01;
                        dpl[tap.i10] += dv * w10;
                        dpl[tap.i11] += dv * w11;
                        grad_r += dv * tap.d_row(pl);
                        grad_c += dv * tap.d_col(pl);
                    }
                    doff[(2 * m) * h * w + p] += grad_r;
                    doff[(2 * m + 1) * h * w + p] += grad_c;
                }
            }
        }
    }
    for (acc, v) in d_response.weights.data_mut().iter_mut().zip(&dw) {
        *acc += *v as f32;
    }
    Ok(())
}

/// Temporal difference of consecutive receptive fields.
pub fn motion_diff(d_t: &ReceptiveFieldMap, d_prev: &ReceptiveFieldMap) -> Result<MotionDiffMap> {
    if d_t.frame_index != d_prev.frame_index + 1 {
        return Err(Error::NonConsecutiveFrames {
            prev: d_prev.frame_index,
            next: d_t.frame_index,
        });
    }
    Ok(MotionDiffMap {
        r: d_t.map.sub(&d_prev.map)?,
        frame_index: d_t.frame_index,
    })
}

/// Per-pixel score s = r - TH and the frame total S.
pub fn frame_score(r: &MotionDiffMap, th: &ThresholdKernel) -> Result<FrameScore> {
    let s_map = r.r.sub(&th.th)?;
    let total = s_map.sum() as f32;
    Ok(FrameScore { s_map, total })
}

/// Keyframe iff the total score is strictly positive.
pub fn gate(score: &FrameScore, frame_index: usize) -> GateDecision {
    GateDecision {
        selected: score.total > 0.0,
        frame_index,
    }
}

/// Appearance map y(t): the frame plus the receptive field (broadcast over
/// channels), convolved with kernel W.
pub fn appearance(
    frame: &Tensor,
    d_t: &ReceptiveFieldMap,
    params: &AppearanceParams,
) -> Result<Tensor> {
    let (c, h, w) = match *frame.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("appearance frame", &[0, 0, 0], frame.shape())),
    };
    if d_t.map.shape() != [1, h, w] {
        return Err(Error::shape("appearance d", &[1, h, w], d_t.map.shape()));
    }
    let mut summed = Tensor::zeros(&[c, h, w]);
    let d = d_t.map.data();
    let f = frame.data();
    let s = summed.data_mut();
    for ch in 0..c {
        for p in 0..h * w {
            s[ch * h * w + p] = f[ch * h * w + p] + d[p];
        }
    }
    conv2d(&summed, &params.w)
}

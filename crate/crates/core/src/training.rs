//! Selection loss, its gradient path through the hard gate, the epoch
//! loop, and the alpha/beta sweep harness.
//!
//! The loss reported during training uses the hard gate values. For
//! gradients, the hard indicator Z(f) is replaced by the straight-through
//! surrogate sigmoid(S(f)/tau), so every parameter that feeds S receives a
//! signal: TH directly, and the response kernel, offset predictor, and
//! backbone through r(t). The appearance kernel W does not feed S, so its
//! gradient under this objective is structurally zero.

use crate::error::{Error, Result};
use crate::io::VideoSample;
use crate::stream::{
    deform_backward, frame_score, gate, motion_diff, receptive_field_trace, FirstFramePolicy,
    FrameTrace, OkfemConfig, OkfemModel, ReceptiveFieldMap,
};
use crate::summarize::{f_score, keyframes_to_keyshots, kts_segment, Aggregation, Summary};
use crate::tensor::{
    conv2d_input_grad, conv2d_param_grad, sgd_momentum_step, ConvParams, OptimizerConfig, Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Loss hyperparameters: the alpha/beta balance, the straight-through
/// temperature tau, and the score-bounding scale sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f32,
    pub beta: f32,
    pub ste_temperature: f32,
    pub score_scale: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.6,
            beta: 0.42,
            ste_temperature: 1.0,
            score_scale: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!(
                "alpha and beta must be in [0, 1], got {} / {}",
                self.alpha, self.beta
            )));
        }
        if !(self.ste_temperature > 0.0) || !(self.score_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "ste_temperature and score_scale must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Reference keyframe set of one sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthKeyframes {
    keyframe_indices: Vec<usize>,
    num_frames: usize,
}

impl GroundTruthKeyframes {
    pub fn new(mut keyframe_indices: Vec<usize>, num_frames: usize) -> Result<Self> {
        keyframe_indices.sort_unstable();
        keyframe_indices.dedup();
        if let Some(&bad) = keyframe_indices.iter().find(|&&i| i >= num_frames) {
            return Err(Error::InvalidInput(format!(
                "keyframe index {bad} out of range for {num_frames} frames"
            )));
        }
        Ok(GroundTruthKeyframes {
            keyframe_indices,
            num_frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn indices(&self) -> &[usize] {
        &self.keyframe_indices
    }

    pub fn is_keyframe(&self, frame: usize) -> bool {
        self.keyframe_indices.binary_search(&frame).is_ok()
    }
}

/// Hard selection loss over one sequence:
/// `alpha * (misses + false positives) - beta * sum over selected frames
/// of tanh(S/sigma)`. Not length-normalized; the training loop divides by
/// the frame count.
pub fn selection_loss(
    scores: &[f32],
    gates: &[bool],
    gt: &GroundTruthKeyframes,
    config: &LossConfig,
) -> Result<f32> {
    config.validate()?;
    let f = gt.num_frames();
    if f == 0 {
        return Err(Error::InvalidInput("selection_loss on empty sequence".into()));
    }
    if scores.len() != f || gates.len() != f {
        return Err(Error::shape(
            "selection_loss lengths",
            &[f],
            &[scores.len(), gates.len()],
        ));
    }
    let mut err_count = 0u32;
    let mut score_sum = 0.0f64;
    for i in 0..f {
        let is_gt = gt.is_keyframe(i);
        let selected = gates[i];
        if is_gt != selected {
            err_count += 1;
        }
        if selected {
            score_sum += (scores[i] as f64 / config.score_scale as f64).tanh();
        }
    }
    // Kept as alpha*A + beta*B so the loss is exactly linear in both.
    let a_term = err_count as f32;
    let b_term = -(score_sum as f32);
    Ok(config.alpha * a_term + config.beta * b_term)
}

/// Smooth gate used in the backward pass.
#[inline]
pub fn smooth_gate(score: f64, temperature: f64) -> f64 {
    1.0 / (1.0 + (-score / temperature).exp())
}

/// d(loss)/d(S_f) for one frame under the straight-through surrogate,
/// before length normalization.
#[inline]
fn score_grad(s: f64, is_gt: bool, cfg: &LossConfig) -> f64 {
    let tau = cfg.ste_temperature as f64;
    let sigma = cfg.score_scale as f64;
    let z = smooth_gate(s, tau);
    let zp = z * (1.0 - z) / tau;
    let th = (s / sigma).tanh();
    let sech2 = 1.0 - th * th;
    let y = if is_gt { 0.0 } else { 1.0 };
    cfg.alpha as f64 * (2.0 * y - 1.0) * zp - cfg.beta as f64 * (zp * th + z * sech2 / sigma)
}

/// Gradients for every trainable group. The appearance entry is always
/// zero under this objective but is carried so the optimizer state lines
/// up with the model.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub th: Tensor,
    pub response: ConvParams,
    pub offset: ConvParams,
    pub backbone: Vec<ConvParams>,
    pub appearance: ConvParams,
}

impl ModelGradients {
    pub fn zeros_like(model: &OkfemModel) -> ModelGradients {
        ModelGradients {
            th: Tensor::zeros(model.th.th.shape()),
            response: model.deform.response_kernel.zeros_like(),
            offset: model.deform.offset_predictor.zeros_like(),
            backbone: model.deform.backbone.iter().map(|l| l.zeros_like()).collect(),
            appearance: model.appearance.w.zeros_like(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.th.is_finite()
            && self.response.weights.is_finite()
            && self.response.bias.is_finite()
            && self.offset.weights.is_finite()
            && self.offset.bias.is_finite()
            && self
                .backbone
                .iter()
                .all(|l| l.weights.is_finite() && l.bias.is_finite())
    }
}

/// Loss values and selection stats from one sequence pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub hard_loss: f64,
    pub surrogate_loss: f64,
    pub selected: usize,
    pub num_frames: usize,
}

struct SequenceForward {
    traces: Vec<FrameTrace>,
    scores: Vec<f32>,
    selected: Vec<bool>,
}

fn forward_sequence(model: &OkfemModel, frames: &[Tensor]) -> Result<SequenceForward> {
    let mut traces: Vec<FrameTrace> = Vec::with_capacity(frames.len());
    let mut scores = vec![0.0f32; frames.len()];
    let mut selected = vec![false; frames.len()];
    for (t, frame) in frames.iter().enumerate() {
        let trace = receptive_field_trace(frame, &model.deform)?;
        if t == 0 {
            selected[0] = model.config.first_frame_policy == FirstFramePolicy::AlwaysKeyframe;
        } else {
            let d_t = ReceptiveFieldMap {
                map: trace.d.clone(),
                frame_index: t,
            };
            let d_prev = ReceptiveFieldMap {
                map: traces[t - 1].d.clone(),
                frame_index: t - 1,
            };
            let r = motion_diff(&d_t, &d_prev)?;
            let score = frame_score(&r, &model.th)?;
            scores[t] = score.total;
            selected[t] = gate(&score, t).selected;
        }
        traces.push(trace);
    }
    Ok(SequenceForward {
        traces,
        scores,
        selected,
    })
}

/// Per-frame score totals and hard gates of a sequence, as used by the
/// loss; frame 0 carries score 0 and the first-frame policy's gate.
pub fn sequence_scores(model: &OkfemModel, frames: &[Tensor]) -> Result<(Vec<f32>, Vec<bool>)> {
    let fwd = forward_sequence(model, frames)?;
    Ok((fwd.scores, fwd.selected))
}

/// Full backward pass over one sequence: hard loss for reporting,
/// straight-through gradients for every parameter group, both normalized
/// by the frame count.
pub fn loss_gradients(
    model: &OkfemModel,
    frames: &[Tensor],
    gt: &GroundTruthKeyframes,
    config: &LossConfig,
) -> Result<(ModelGradients, LossReport)> {
    config.validate()?;
    let f = frames.len();
    if f < 2 {
        return Err(Error::InvalidInput(format!(
            "loss_gradients needs at least 2 frames, got {f}"
        )));
    }
    if gt.num_frames() != f {
        return Err(Error::shape("loss_gradients frames", &[gt.num_frames()], &[f]));
    }
    let fwd = forward_sequence(model, frames)?;
    let hard_loss =
        selection_loss(&fwd.scores, &fwd.selected, gt, config)? as f64 / f as f64;
    if !hard_loss.is_finite() {
        return Err(Error::NonFinite("selection loss".into()));
    }

    // Per-frame dL/dS under the smooth surrogate, plus the surrogate loss
    // itself for diagnostics.
    let tau = config.ste_temperature as f64;
    let sigma = config.score_scale as f64;
    let mut g = vec![0.0f64; f + 1];
    let mut surrogate = 0.0f64;
    {
        let y0 = if gt.is_keyframe(0) { 0.0 } else { 1.0 };
        let z0 = if fwd.selected[0] { 1.0 } else { 0.0 };
        surrogate += config.alpha as f64 * ((1.0 - y0) * (1.0 - z0) + y0 * z0);
    }
    for t in 1..f {
        let s = fwd.scores[t] as f64;
        let is_gt = gt.is_keyframe(t);
        let y = if is_gt { 0.0 } else { 1.0 };
        let z = smooth_gate(s, tau);
        surrogate += config.alpha as f64 * ((1.0 - y) * (1.0 - z) + y * z)
            - config.beta as f64 * z * (s / sigma).tanh();
        g[t] = score_grad(s, is_gt, config) / f as f64;
    }
    let surrogate_loss = surrogate / f as f64;

    let mut grads = ModelGradients::zeros_like(model);
    // S sums every pixel of r - TH, so each TH pixel sees -sum(g).
    let th_grad = -(g[1..f].iter().sum::<f64>()) as f32;
    grads.th = Tensor::filled(model.th.th.shape(), th_grad);

    let layers = &model.deform.backbone;
    for t in 0..f {
        let gv = (g[t] - g[t + 1]) as f32;
        if gv == 0.0 {
            continue;
        }
        let trace = &fwd.traces[t];
        let base = trace.acts.last().unwrap();
        let mut d_base = Tensor::zeros(base.shape());
        let mut d_off = Tensor::zeros(trace.offsets.shape());
        deform_backward(
            base,
            &trace.offsets,
            &model.deform.response_kernel,
            gv,
            &mut d_base,
            &mut d_off,
            &mut grads.response,
        )?;
        conv2d_param_grad(base, &d_off, &mut grads.offset)?;
        if layers.is_empty() {
            continue;
        }
        let from_offsets =
            conv2d_input_grad(&d_off, &model.deform.offset_predictor, base.shape())?;
        let mut da = d_base.add(&from_offsets)?;
        for i in (0..layers.len()).rev() {
            // acts[i + 1] = relu(conv(acts[i])): gate the incoming grad.
            let mut dz = da;
            for (z, &a) in dz.data_mut().iter_mut().zip(fwd.traces[t].acts[i + 1].data()) {
                if a <= 0.0 {
                    *z = 0.0;
                }
            }
            conv2d_param_grad(&trace.acts[i], &dz, &mut grads.backbone[i])?;
            if i > 0 {
                da = conv2d_input_grad(&dz, &layers[i], trace.acts[i].shape())?;
            } else {
                break;
            }
        }
    }

    if !grads.is_finite() {
        return Err(Error::NonFinite("loss gradients".into()));
    }
    Ok((
        grads,
        LossReport {
            hard_loss,
            surrogate_loss,
            selected: fwd.selected.iter().filter(|&&s| s).count(),
            num_frames: f,
        },
    ))
}

/// Smooth-surrogate loss of a sequence (every hard gate replaced by
/// sigmoid(S/tau)), length-normalized. This is the scalar whose exact
/// gradient `loss_gradients` computes.
pub fn surrogate_loss(
    model: &OkfemModel,
    frames: &[Tensor],
    gt: &GroundTruthKeyframes,
    config: &LossConfig,
) -> Result<f64> {
    let fwd = forward_sequence(model, frames)?;
    let f = frames.len();
    let tau = config.ste_temperature as f64;
    let sigma = config.score_scale as f64;
    let mut total = 0.0f64;
    let y0 = if gt.is_keyframe(0) { 0.0 } else { 1.0 };
    let z0 = if fwd.selected[0] { 1.0 } else { 0.0 };
    total += config.alpha as f64 * ((1.0 - y0) * (1.0 - z0) + y0 * z0);
    for t in 1..f {
        let s = fwd.scores[t] as f64;
        let y = if gt.is_keyframe(t) { 0.0 } else { 1.0 };
        let z = smooth_gate(s, tau);
        total += config.alpha as f64 * ((1.0 - y) * (1.0 - z) + y * z)
            - config.beta as f64 * z * (s / sigma).tanh();
    }
    Ok(total / f as f64)
}

/// Optimizer state: one velocity buffer per parameter tensor.
pub struct Velocities(ModelGradients);

impl Velocities {
    pub fn zeros_like(model: &OkfemModel) -> Velocities {
        Velocities(ModelGradients::zeros_like(model))
    }
}

/// Apply one momentum step to every parameter group.
pub fn apply_step(
    model: &mut OkfemModel,
    vel: &mut Velocities,
    grads: &ModelGradients,
    opt: &OptimizerConfig,
    epoch: usize,
) -> Result<()> {
    sgd_momentum_step(&mut model.th.th, &mut vel.0.th, &grads.th, opt, epoch)?;
    let pairs = [
        (
            &mut model.deform.response_kernel,
            &mut vel.0.response,
            &grads.response,
        ),
        (
            &mut model.deform.offset_predictor,
            &mut vel.0.offset,
            &grads.offset,
        ),
        (&mut model.appearance.w, &mut vel.0.appearance, &grads.appearance),
    ];
    for (p, v, g) in pairs {
        sgd_momentum_step(&mut p.weights, &mut v.weights, &g.weights, opt, epoch)?;
        sgd_momentum_step(&mut p.bias, &mut v.bias, &g.bias, opt, epoch)?;
    }
    for ((p, v), g) in model
        .deform
        .backbone
        .iter_mut()
        .zip(&mut vel.0.backbone)
        .zip(&grads.backbone)
    {
        sgd_momentum_step(&mut p.weights, &mut v.weights, &g.weights, opt, epoch)?;
        sgd_momentum_step(&mut p.bias, &mut v.bias, &g.bias, opt, epoch)?;
    }
    Ok(())
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub mean_keyframe_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
}

/// Train the extraction model: per epoch, stream each sequence, compute
/// loss and gradients, and apply one momentum step per sequence. Sequence
/// order is reshuffled per epoch from the seed; the whole run is
/// deterministic given the seed.
pub fn train(
    model: &mut OkfemModel,
    dataset: &[(Vec<Tensor>, GroundTruthKeyframes)],
    opt: &OptimizerConfig,
    loss_cfg: &LossConfig,
    seed: u64,
) -> Result<TrainReport> {
    opt.validate()?;
    loss_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("train on empty dataset".into()));
    }
    let mut vel = Velocities::zeros_like(model);
    let mut epochs = Vec::with_capacity(opt.total_epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..opt.total_epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut ratio_sum = 0.0f64;
        for &i in &order {
            let (frames, gt) = &dataset[i];
            let (grads, report) = loss_gradients(model, frames, gt, loss_cfg)?;
            if !report.hard_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: report.hard_loss as f32,
                });
            }
            apply_step(model, &mut vel, &grads, opt, epoch)?;
            loss_sum += report.hard_loss;
            ratio_sum += report.selected as f64 / report.num_frames as f64;
        }
        epochs.push(EpochMetrics {
            mean_loss: loss_sum / dataset.len() as f64,
            mean_keyframe_ratio: ratio_sum / dataset.len() as f64,
        });
    }
    Ok(TrainReport { epochs })
}

/// Frame-exact F1 of predicted keyframe indices against the ground truth.
pub fn keyframe_f1(predicted: &[usize], gt: &GroundTruthKeyframes) -> f64 {
    if predicted.is_empty() || gt.indices().is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().filter(|&&i| gt.is_keyframe(i)).count() as f64;
    let p = hits / predicted.len() as f64;
    let r = hits / gt.indices().len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Key-shot evaluation protocol used after extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub budget: f64,
    /// None: one segment per 8 frames, clamped to [2, 16].
    pub max_segments: Option<usize>,
    pub penalty: f64,
    pub aggregation: Aggregation,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            budget: 0.15,
            max_segments: None,
            penalty: 1.0,
            aggregation: Aggregation::Mean,
        }
    }
}

impl EvalProtocol {
    pub fn segments_for(&self, num_frames: usize) -> usize {
        self.max_segments
            .unwrap_or((num_frames / 8).clamp(2, 16))
            .min(num_frames)
    }
}

/// Extraction + key-shot conversion + F-score on one sample.
#[derive(Debug, Clone)]
pub struct SampleEval {
    pub f_score: f64,
    pub keyframe_ratio: f64,
    pub keyframes: Vec<usize>,
    pub summary: Summary,
}

/// Evaluate extraction on raw materials: stream the frames, segment the
/// features, build the budgeted summary, and score it against the
/// references.
pub fn evaluate_video(
    model: &OkfemModel,
    frames: &[Tensor],
    features: &crate::summarize::FrameFeatureSeq,
    references: &[Summary],
    protocol: &EvalProtocol,
) -> Result<SampleEval> {
    let records = model.extract(frames)?;
    let keyframes: Vec<usize> = records.iter().map(|r| r.frame_index).collect();
    let f = frames.len();
    let segments = kts_segment(features, protocol.segments_for(f), protocol.penalty)?;
    let summary = keyframes_to_keyshots(&segments, &keyframes, protocol.budget)?;
    let score = f_score(&summary, references, protocol.aggregation)?;
    Ok(SampleEval {
        f_score: score,
        keyframe_ratio: keyframes.len() as f64 / f as f64,
        keyframes,
        summary,
    })
}

pub fn evaluate_on_sample(
    model: &OkfemModel,
    sample: &VideoSample,
    protocol: &EvalProtocol,
) -> Result<SampleEval> {
    evaluate_video(
        model,
        &sample.frames,
        &sample.features,
        std::slice::from_ref(&sample.reference),
        protocol,
    )
}

/// One row of the alpha/beta sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub alpha: f32,
    pub beta: f32,
    pub f_score: f64,
    pub keyframe_ratio: f64,
    pub per_video: Vec<f64>,
}

/// The ten (alpha, beta) pairs of the reference sweep, in table order.
pub fn default_sweep_grid() -> Vec<(f32, f32)> {
    vec![
        (0.2, 0.8),
        (0.4, 0.6),
        (0.5, 0.5),
        (0.5, 0.45),
        (0.55, 0.45),
        (0.6, 0.42),
        (0.6, 0.4),
        (0.62, 0.42),
        (0.64, 0.42),
        (0.8, 0.2),
    ]
}

/// Independent training runs over the grid: every point starts from the
/// same seeded initialization and data order so only alpha/beta vary.
/// Results are returned in grid order.
#[allow(clippy::too_many_arguments)]
pub fn sweep_alpha_beta(
    grid: &[(f32, f32)],
    train_data: &[(Vec<Tensor>, GroundTruthKeyframes)],
    eval_data: &[VideoSample],
    config: &OkfemConfig,
    opt: &OptimizerConfig,
    base: &LossConfig,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<Vec<SweepResult>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("sweep over empty grid".into()));
    }
    let mut results = Vec::with_capacity(grid.len());
    for &(alpha, beta) in grid {
        let loss_cfg = LossConfig {
            alpha,
            beta,
            ..*base
        };
        let mut model = OkfemModel::init(config.clone(), seed)?;
        train(&mut model, train_data, opt, &loss_cfg, seed)?;
        let mut per_video = Vec::with_capacity(eval_data.len());
        let mut ratio_sum = 0.0f64;
        for sample in eval_data {
            let eval = evaluate_on_sample(&model, sample, protocol)?;
            per_video.push(eval.f_score);
            ratio_sum += eval.keyframe_ratio;
        }
        let n = eval_data.len().max(1) as f64;
        results.push(SweepResult {
            alpha,
            beta,
            f_score: per_video.iter().sum::<f64>() / n,
            keyframe_ratio: ratio_sum / n,
            per_video,
        });
    }
    Ok(results)
}

/// Render sweep results as a tab-separated table.
pub fn sweep_table_tsv(results: &[SweepResult]) -> String {
    let mut out = String::from("alpha\tbeta\tf_score\tkeyframe_ratio\n");
    for r in results {
        out.push_str(&format!(
            "{:.2}\t{:.2}\t{:.4}\t{:.4}\n",
            r.alpha, r.beta, r.f_score, r.keyframe_ratio
        ));
    }
    out
}

//! Keyframe classification with a semantic-vector plugin: two fully
//! connected layers refine the class word vector, the refined vector is
//! fed back as input, and train/test both iterate until the predicted
//! label stabilizes for three consecutive rounds (or a hard cap).

use crate::error::{Error, Result};
use crate::io::W2V_DIM;
use crate::stream::KeyframeRecord;
use crate::tensor::{sgd_momentum_step, OptimizerConfig, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

pub const FC1_OUT: usize = 450;
pub const FC2_OUT: usize = W2V_DIM;

/// Per-class semantic word vectors, indexed by class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W2vTable {
    labels: Vec<String>,
    vectors: Vec<Vec<f32>>,
}

impl W2vTable {
    pub fn from_pairs(pairs: Vec<(String, Vec<f32>)>) -> Result<W2vTable> {
        let mut labels = Vec::with_capacity(pairs.len());
        let mut vectors = Vec::with_capacity(pairs.len());
        for (label, values) in pairs {
            if values.len() != W2V_DIM {
                return Err(Error::Schema(format!(
                    "class {label:?}: expected {W2V_DIM} values, got {}",
                    values.len()
                )));
            }
            labels.push(label);
            vectors.push(values);
        }
        if labels.is_empty() {
            return Err(Error::Schema("empty word-vector table".into()));
        }
        Ok(W2vTable { labels, vectors })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, class: usize) -> &str {
        &self.labels[class]
    }

    pub fn class_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn vector(&self, class: usize) -> Result<&[f32]> {
        self.vectors
            .get(class)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingClassVector(format!("class id {class}")))
    }
}

/// Pooled visual descriptor of one video's keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualFeature {
    pub values: Vec<f32>,
}

/// Mean/std statistics of the motion and appearance features, averaged
/// over a video's keyframe records: `[fm_mean, fm_std, fa_mean per
/// channel.., fa_std per channel..]`.
pub fn pool_keyframes(records: &[KeyframeRecord]) -> Result<VisualFeature> {
    let first = records.first().ok_or_else(|| {
        Error::InvalidInput("pool_keyframes on empty record list".into())
    })?;
    let fa_channels = first.k_fa.shape()[0];
    let d = 2 + 2 * fa_channels;
    let mut acc = vec![0.0f64; d];
    for rec in records {
        if rec.k_fa.shape()[0] != fa_channels {
            return Err(Error::shape(
                "pool_keyframes k_fa channels",
                &[fa_channels],
                rec.k_fa.shape(),
            ));
        }
        let (m, s) = mean_std(rec.k_fm.data());
        acc[0] += m;
        acc[1] += s;
        let plane = rec.k_fa.numel() / fa_channels;
        for ch in 0..fa_channels {
            let (m, s) = mean_std(&rec.k_fa.data()[ch * plane..(ch + 1) * plane]);
            acc[2 + ch] += m;
            acc[2 + fa_channels + ch] += s;
        }
    }
    let n = records.len() as f64;
    Ok(VisualFeature {
        values: acc.into_iter().map(|v| (v / n) as f32).collect(),
    })
}

fn mean_std(data: &[f32]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// One dense layer, weights `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    fn init(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> DenseLayer {
        let scale = (1.0 / inp as f32).sqrt();
        DenseLayer {
            weights: Tensor::from_fn(&[out, inp], |_| rng.gen_range(-scale..scale)),
            bias: Tensor::zeros(&[out]),
        }
    }

    fn zeros_like(&self) -> DenseLayer {
        DenseLayer {
            weights: Tensor::zeros(self.weights.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), inp);
        let w = self.weights.data();
        (0..out)
            .map(|o| {
                let row = &w[o * inp..(o + 1) * inp];
                self.bias.data()[o]
                    + row.iter().zip(x).map(|(&a, &b)| a * b).sum::<f32>()
            })
            .collect()
    }

    /// Accumulate parameter grads and return the input grad.
    fn backward(&self, x: &[f32], d_out: &[f32], acc: &mut DenseLayer) -> Vec<f32> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        let w = self.weights.data();
        let gw = acc.weights.data_mut();
        let gb = acc.bias.data_mut();
        let mut d_in = vec![0.0f32; inp];
        for o in 0..out {
            let g = d_out[o];
            gb[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &w[o * inp..(o + 1) * inp];
            let grow = &mut gw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                grow[i] += g * x[i];
                d_in[i] += g * row[i];
            }
        }
        d_in
    }
}

/// The plugin: FC1 + FC2 refining the word vector, and a linear head over
/// the visual feature concatenated with the refined vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginParams {
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
    pub head: DenseLayer,
    pub d_vis: usize,
    pub num_classes: usize,
}

impl PluginParams {
    pub fn init(d_vis: usize, num_classes: usize, seed: u64) -> Result<PluginParams> {
        if d_vis == 0 || num_classes == 0 {
            return Err(Error::InvalidConfig(
                "d_vis and num_classes must be >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PluginParams {
            fc1: DenseLayer::init(&mut rng, FC1_OUT, d_vis + W2V_DIM),
            fc2: DenseLayer::init(&mut rng, FC2_OUT, FC1_OUT),
            head: DenseLayer::init(&mut rng, num_classes, d_vis + W2V_DIM),
            d_vis,
            num_classes,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.fc1.out_dim(), FC1_OUT, "fc1 out"),
            (self.fc1.in_dim(), self.d_vis + W2V_DIM, "fc1 in"),
            (self.fc2.out_dim(), FC2_OUT, "fc2 out"),
            (self.fc2.in_dim(), FC1_OUT, "fc2 in"),
            (self.head.out_dim(), self.num_classes, "head out"),
            (self.head.in_dim(), self.d_vis + W2V_DIM, "head in"),
        ];
        for (got, want, what) in checks {
            if got != want {
                return Err(Error::InvalidConfig(format!(
                    "{what}: expected {want}, got {got}"
                )));
            }
        }
        Ok(())
    }

    /// Order-independent digest of every parameter bit; used to show
    /// test-time purity.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for layer in [&self.fc1, &self.fc2, &self.head] {
            for &v in layer.weights.data().iter().chain(layer.bias.data()) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / sum) as f32).collect()
}

struct PluginTrace {
    input1: Vec<f32>,
    hidden: Vec<f32>,
    refined: Vec<f32>,
    input2: Vec<f32>,
    probs: Vec<f32>,
}

fn plugin_trace(vis: &[f32], w2v: &[f32], params: &PluginParams) -> Result<PluginTrace> {
    if vis.len() != params.d_vis {
        return Err(Error::shape("plugin vis", &[params.d_vis], &[vis.len()]));
    }
    if w2v.len() != W2V_DIM {
        return Err(Error::shape("plugin w2v", &[W2V_DIM], &[w2v.len()]));
    }
    let mut input1 = Vec::with_capacity(vis.len() + w2v.len());
    input1.extend_from_slice(vis);
    input1.extend_from_slice(w2v);
    let mut hidden = params.fc1.forward(&input1);
    for v in &mut hidden {
        *v = v.max(0.0);
    }
    let refined = params.fc2.forward(&hidden);
    let mut input2 = Vec::with_capacity(vis.len() + refined.len());
    input2.extend_from_slice(vis);
    input2.extend_from_slice(&refined);
    let probs = softmax(&params.head.forward(&input2));
    Ok(PluginTrace {
        input1,
        hidden,
        refined,
        input2,
        probs,
    })
}

/// One forward pass: class probabilities and the refined word vector.
pub fn plugin_forward(
    vis: &VisualFeature,
    w2v: &[f32],
    params: &PluginParams,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let t = plugin_trace(&vis.values, w2v, params)?;
    Ok((t.probs, t.refined))
}

struct PluginGrads {
    fc1: DenseLayer,
    fc2: DenseLayer,
    head: DenseLayer,
}

impl PluginGrads {
    fn zeros_like(params: &PluginParams) -> PluginGrads {
        PluginGrads {
            fc1: params.fc1.zeros_like(),
            fc2: params.fc2.zeros_like(),
            head: params.head.zeros_like(),
        }
    }
}

/// Cross-entropy backward through head, fc2, relu, fc1.
fn plugin_backward(
    params: &PluginParams,
    trace: &PluginTrace,
    true_class: usize,
    grads: &mut PluginGrads,
) {
    let mut d_logits = trace.probs.clone();
    d_logits[true_class] -= 1.0;
    let d_input2 = params.head.backward(&trace.input2, &d_logits, &mut grads.head);
    let d_refined = &d_input2[params.d_vis..];
    let mut d_hidden = params.fc2.backward(&trace.hidden, d_refined, &mut grads.fc2);
    for (g, &h) in d_hidden.iter_mut().zip(&trace.hidden) {
        if h <= 0.0 {
            *g = 0.0;
        }
    }
    params.fc1.backward(&trace.input1, &d_hidden, &mut grads.fc1);
}

struct PluginVelocities {
    fc1: DenseLayer,
    fc2: DenseLayer,
    head: DenseLayer,
}

fn apply_plugin_step(
    params: &mut PluginParams,
    vel: &mut PluginVelocities,
    grads: &PluginGrads,
    opt: &OptimizerConfig,
    epoch: usize,
) -> Result<()> {
    for (p, v, g) in [
        (&mut params.fc1, &mut vel.fc1, &grads.fc1),
        (&mut params.fc2, &mut vel.fc2, &grads.fc2),
        (&mut params.head, &mut vel.head, &grads.head),
    ] {
        sgd_momentum_step(&mut p.weights, &mut v.weights, &g.weights, opt, epoch)?;
        sgd_momentum_step(&mut p.bias, &mut v.bias, &g.bias, opt, epoch)?;
    }
    Ok(())
}

/// Iteration cap and the stability-run length for early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IttsConfig {
    pub max_iterations: usize,
    pub stability_run: usize,
}

impl Default for IttsConfig {
    fn default() -> Self {
        IttsConfig {
            max_iterations: 10,
            stability_run: 3,
        }
    }
}

impl IttsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stability_run == 0 || self.max_iterations < self.stability_run {
            return Err(Error::InvalidConfig(format!(
                "need max_iterations >= stability_run >= 1, got {} / {}",
                self.max_iterations, self.stability_run
            )));
        }
        Ok(())
    }
}

fn is_stable(labels: &[usize], run: usize) -> bool {
    labels.len() >= run && labels[labels.len() - run..].windows(2).all(|w| w[0] == w[1])
}

/// One (epoch, sample) entry of the training convergence log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub epoch: usize,
    pub sample: usize,
    pub iterations_used: usize,
    pub converged: bool,
    pub final_label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ConvergenceLog {
    pub entries: Vec<ConvergenceEntry>,
}

impl ConvergenceLog {
    /// Fraction of samples that stopped before the iteration cap in the
    /// given epoch.
    pub fn converged_fraction(&self, epoch: usize) -> f64 {
        let (total, converged) = self
            .entries
            .iter()
            .filter(|e| e.epoch == epoch)
            .fold((0usize, 0usize), |(t, c), e| {
                (t + 1, c + usize::from(e.converged))
            });
        if total == 0 {
            0.0
        } else {
            converged as f64 / total as f64
        }
    }

    pub fn max_iterations_seen(&self) -> usize {
        self.entries.iter().map(|e| e.iterations_used).max().unwrap_or(0)
    }
}

/// Iterative training: per sample, start from the class's table vector,
/// and per iteration run forward, take a cross-entropy gradient step, then
/// replace the working word vector with the refined one. Stops early once
/// the predicted label repeats `stability_run` times. The table itself is
/// never mutated.
pub fn itts_train(
    params: &mut PluginParams,
    dataset: &[(VisualFeature, usize)],
    table: &W2vTable,
    cfg: &IttsConfig,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<ConvergenceLog> {
    cfg.validate()?;
    opt.validate()?;
    params.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("itts_train on empty dataset".into()));
    }
    for (_, class) in dataset {
        table.vector(*class)?;
    }
    let mut vel = PluginVelocities {
        fc1: params.fc1.zeros_like(),
        fc2: params.fc2.zeros_like(),
        head: params.head.zeros_like(),
    };
    let mut log = ConvergenceLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..opt.total_epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        for &si in &order {
            let (vis, class) = &dataset[si];
            let mut w2v = table.vector(*class)?.to_vec();
            let mut labels: Vec<usize> = Vec::with_capacity(cfg.max_iterations);
            let mut converged = false;
            for _ in 0..cfg.max_iterations {
                let trace = plugin_trace(&vis.values, &w2v, params)?;
                let mut grads = PluginGrads::zeros_like(params);
                plugin_backward(params, &trace, *class, &mut grads);
                apply_plugin_step(params, &mut vel, &grads, opt, epoch)?;
                labels.push(argmax(&trace.probs));
                if is_stable(&labels, cfg.stability_run) {
                    converged = true;
                    break;
                }
                w2v = trace.refined;
            }
            log.entries.push(ConvergenceEntry {
                epoch,
                sample: si,
                iterations_used: labels.len(),
                converged,
                final_label: *labels.last().unwrap(),
            });
        }
    }
    Ok(log)
}

fn argmax(values: &[f32]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Result of one per-class test iteration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRun {
    pub class: usize,
    pub label: usize,
    pub probability: f32,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Final prediction for one video, with the per-class runs it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub per_class: Vec<ClassRun>,
    pub final_label: usize,
    pub converged: bool,
}

/// Iterative testing: fuse each class's word vector in turn (no parameter
/// updates), iterating with the refined vector under the same stability
/// rule. Self-consistent runs (predicted label equals the fused class) are
/// preferred; the best probability wins, falling back to the global
/// argmax when no run is self-consistent.
pub fn itts_test(
    params: &PluginParams,
    vis: &VisualFeature,
    table: &W2vTable,
    cfg: &IttsConfig,
) -> Result<PredictionRecord> {
    cfg.validate()?;
    let mut per_class = Vec::with_capacity(table.num_classes());
    for class in 0..table.num_classes() {
        let mut w2v = table.vector(class)?.to_vec();
        let mut labels: Vec<usize> = Vec::with_capacity(cfg.max_iterations);
        let mut last_probs: Vec<f32> = Vec::new();
        let mut converged = false;
        for _ in 0..cfg.max_iterations {
            let (probs, refined) = {
                let t = plugin_trace(&vis.values, &w2v, params)?;
                (t.probs, t.refined)
            };
            labels.push(argmax(&probs));
            last_probs = probs;
            if is_stable(&labels, cfg.stability_run) {
                converged = true;
                break;
            }
            w2v = refined;
        }
        let label = *labels.last().unwrap();
        per_class.push(ClassRun {
            class,
            label,
            probability: last_probs[label],
            iterations_used: labels.len(),
            converged,
        });
    }
    let chosen = per_class
        .iter()
        .filter(|r| r.label == r.class)
        .max_by(|a, b| a.probability.total_cmp(&b.probability))
        .or_else(|| {
            per_class
                .iter()
                .max_by(|a, b| a.probability.total_cmp(&b.probability))
        })
        .expect("at least one class");
    Ok(PredictionRecord {
        final_label: chosen.label,
        converged: chosen.converged,
        per_class,
    })
}

/// Accuracy of the iterative test strategy over a labeled dataset.
pub fn evaluate(
    params: &PluginParams,
    dataset: &[(VisualFeature, usize)],
    table: &W2vTable,
    cfg: &IttsConfig,
) -> Result<(f64, Vec<PredictionRecord>)> {
    let mut records = Vec::with_capacity(dataset.len());
    let mut hits = 0usize;
    for (vis, class) in dataset {
        let rec = itts_test(params, vis, table, cfg)?;
        if rec.final_label == *class {
            hits += 1;
        }
        records.push(rec);
    }
    let acc = if dataset.is_empty() {
        0.0
    } else {
        hits as f64 / dataset.len() as f64
    };
    Ok((acc, records))
}

/// Single forward per class, no iteration: the baseline the iterative
/// strategy is compared against.
pub fn single_pass_evaluate(
    params: &PluginParams,
    dataset: &[(VisualFeature, usize)],
    table: &W2vTable,
) -> Result<(f64, Vec<PredictionRecord>)> {
    let cfg = IttsConfig {
        max_iterations: 1,
        stability_run: 1,
    };
    evaluate(params, dataset, table, &cfg)
}

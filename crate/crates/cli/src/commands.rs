//! Command bodies: each validates its inputs, drives the library, writes
//! outputs atomically, and prints a short report.

use crate::config::RunConfig;
use crate::plot::render_timelines;
use crate::util::{atomic_write, atomic_write_json, extracted_dirs, run_jobs, video_dirs};
use crate::{CliError, ErrorClass, MethodArg};
use okfem_core::io::{
    read_annotations, read_fts_file, read_word_vectors, synth_video, write_fts_file,
    AnnotationDoc, SynthConfig,
};
use okfem_core::recognizer::{
    evaluate, itts_test, itts_train, pool_keyframes, IttsConfig, PluginParams, VisualFeature,
    W2vTable,
};
use okfem_core::stream::{
    appearance, frame_score, gate, init_state, motion_diff, receptive_field, KeyframeRecord,
    OkfemConfig, OkfemModel, ReceptiveFieldMap,
};
use okfem_core::summarize::{
    f_score, importance_to_keyshots, keyframes_to_keyshots, kts_segment, FrameFeatureSeq, Summary,
};
use okfem_core::tensor::Tensor;
use okfem_core::training::{
    default_sweep_grid, sweep_alpha_beta, train, GroundTruthKeyframes,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Index document written next to the keyframe record tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyframesDoc {
    pub num_frames: usize,
    pub keyframe_indices: Vec<usize>,
    /// Score of each emitted record, aligned with keyframe_indices.
    pub scores: Vec<f32>,
    /// S(t) for every frame (frame 0 has no motion evidence and reads 0).
    pub all_scores: Vec<f32>,
    pub keyframe_ratio: f64,
    /// Highest-score frame, kept so zero-keyframe videos still classify.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_index: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierFile {
    params: PluginParams,
    labels: Vec<String>,
}

fn data_err(e: impl std::fmt::Display, path: &Path) -> CliError {
    CliError::data(format!("{path:?}: {e}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(e, path))?;
    serde_json::from_str(&text).map_err(|e| data_err(e, path))
}

fn load_annotations(path: &Path) -> Result<AnnotationDoc, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(e, path))?;
    read_annotations(&text).map_err(|e| data_err(e, path))
}

fn load_summary(path: &Path) -> Result<Summary, CliError> {
    let raw: Summary = read_json(path)?;
    Summary::new(raw.num_frames, raw.shots).map_err(|e| data_err(e, path))
}

/// Stack per-frame tensors into one `[F, ...]` tensor for FTS1 output.
fn stack(frames: &[Tensor], inner_shape: &[usize]) -> Tensor {
    let mut shape = vec![frames.len()];
    shape.extend_from_slice(inner_shape);
    let mut data = Vec::with_capacity(shape.iter().product());
    for f in frames {
        data.extend_from_slice(f.data());
    }
    Tensor::from_vec(&shape, data).expect("stacked shapes are consistent")
}

/// Split a `[F, C, H, W]` tensor into per-frame tensors.
fn split_frames(t: &Tensor) -> Result<Vec<Tensor>, CliError> {
    let shape = t.shape();
    if shape.len() != 4 {
        return Err(CliError::data(format!(
            "expected a [F,C,H,W] frames tensor, got {shape:?}"
        )));
    }
    let inner = &shape[1..];
    let n: usize = inner.iter().product();
    Ok((0..shape[0])
        .map(|i| {
            Tensor::from_vec(inner, t.data()[i * n..(i + 1) * n].to_vec())
                .expect("split preserves length")
        })
        .collect())
}

fn load_frames(path: &Path) -> Result<Vec<Tensor>, CliError> {
    let t = read_fts_file(path).map_err(|e| data_err(e, path))?;
    split_frames(&t)
}

fn load_features(path: &Path) -> Result<FrameFeatureSeq, CliError> {
    let t = read_fts_file(path).map_err(|e| data_err(e, path))?;
    let shape = t.shape();
    if shape.len() != 2 {
        return Err(CliError::data(format!(
            "{path:?}: expected a [F,D] features tensor, got {shape:?}"
        )));
    }
    FrameFeatureSeq::new(shape[1], t.data().to_vec()).map_err(|e| data_err(e, path))
}

fn load_model(path: &Path) -> Result<OkfemModel, CliError> {
    read_json(path)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    cfg: &RunConfig,
    out: &Path,
    videos: usize,
    frames: Option<usize>,
    events: Option<usize>,
    noise: Option<f32>,
    shape: Option<&str>,
) -> Result<(), CliError> {
    let shape = match shape {
        Some(text) => {
            let parts: Vec<usize> = text
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::usage(format!("bad shape {text:?}")))?;
            match parts[..] {
                [c, h, w] => (c, h, w),
                _ => return Err(CliError::usage(format!("bad shape {text:?}"))),
            }
        }
        None => cfg.shape,
    };
    std::fs::create_dir_all(out).map_err(|e| data_err(e, out))?;
    for i in 0..videos {
        let scfg = SynthConfig {
            num_frames: frames.unwrap_or(cfg.frames),
            frame_shape: shape,
            num_events: events.unwrap_or(cfg.events),
            noise_level: noise.unwrap_or(cfg.noise),
            seed: cfg.seed.wrapping_add(i as u64),
        };
        let sample = synth_video(&scfg).map_err(CliError::from)?;
        let dir = out.join(format!("video_{i:03}"));
        std::fs::create_dir_all(&dir).map_err(|e| data_err(e, &dir))?;
        let (c, h, w) = shape;
        write_fts_file(&dir.join("frames.fts"), &stack(&sample.frames, &[c, h, w]))
            .map_err(CliError::from)?;
        let feats = Tensor::from_vec(
            &[sample.features.num_frames(), sample.features.dim()],
            sample.features.data().to_vec(),
        )
        .map_err(CliError::from)?;
        write_fts_file(&dir.join("features.fts"), &feats).map_err(CliError::from)?;
        let ann = AnnotationDoc {
            num_frames: scfg.num_frames,
            keyframe_indices: Some(sample.gt.indices().to_vec()),
            importance_scores: None,
            reference_summaries: Some(vec![sample.reference.shots.clone()]),
            class_label: None,
        };
        atomic_write_json(&dir.join("annotations.json"), &ann)?;
    }
    println!("wrote {videos} videos to {}", out.display());
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Vec<(Vec<Tensor>, GroundTruthKeyframes)>, CliError> {
    let mut out = Vec::new();
    for vdir in video_dirs(dir)? {
        let frames = load_frames(&vdir.join("frames.fts"))?;
        let ann = load_annotations(&vdir.join("annotations.json"))?;
        if ann.num_frames != frames.len() {
            return Err(CliError::data(format!(
                "{vdir:?}: annotations say {} frames, tensor has {}",
                ann.num_frames,
                frames.len()
            )));
        }
        let gt = ann.ground_truth().map_err(|e| data_err(e, &vdir))?;
        out.push((frames, gt));
    }
    Ok(out)
}

pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    metrics: Option<&Path>,
    epochs: Option<usize>,
    learning_rate: Option<f32>,
) -> Result<(), CliError> {
    let dataset = load_dataset(data)?;
    let shape = dataset[0].0[0].shape();
    let config = OkfemConfig {
        input_shape: (shape[0], shape[1], shape[2]),
        ..Default::default()
    };
    let mut opt = cfg.optimizer.clone();
    if let Some(e) = epochs {
        opt.total_epochs = e;
    }
    if let Some(lr) = learning_rate {
        opt.learning_rate = lr;
    }
    let mut model = OkfemModel::init(config, cfg.seed).map_err(CliError::from)?;
    let report = train(&mut model, &dataset, &opt, &cfg.loss, cfg.seed).map_err(CliError::from)?;
    atomic_write_json(out, &model)?;
    if let Some(mpath) = metrics {
        atomic_write_json(mpath, &report)?;
    }
    let last = report.epochs.last().unwrap();
    println!(
        "trained {} epochs on {} sequences: loss {:.4}, keyframe ratio {:.4}",
        opt.total_epochs,
        dataset.len(),
        last.mean_loss,
        last.mean_keyframe_ratio
    );
    Ok(())
}

/// Per-frame pass retaining only O(1) state plus what the CLI reports:
/// all scores, the emitted records, and a best-frame fallback.
struct ExtractionPass {
    records: Vec<KeyframeRecord>,
    all_scores: Vec<f32>,
    fallback: Option<KeyframeRecord>,
    num_frames: usize,
}

fn stream_video(model: &OkfemModel, frames: &[Tensor]) -> Result<ExtractionPass, CliError> {
    let mut state = init_state(&model.config).map_err(CliError::from)?;
    let mut records = Vec::new();
    let mut all_scores = vec![0.0f32; frames.len()];
    let mut best: Option<KeyframeRecord> = None;
    for (t, frame) in frames.iter().enumerate() {
        let d_t = receptive_field(frame, &model.deform, t).map_err(CliError::from)?;
        let y_t = appearance(frame, &d_t, &model.appearance).map_err(CliError::from)?;
        if let (Some(d_prev), Some(y_prev)) = (&state.prev_receptive_field, &state.prev_appearance)
        {
            let r = motion_diff(&d_t, d_prev).map_err(CliError::from)?;
            let score = frame_score(&r, &model.th).map_err(CliError::from)?;
            all_scores[t] = score.total;
            let rec = KeyframeRecord {
                frame_index: t,
                score: score.total,
                k_fa: y_t.add(y_prev).map_err(CliError::from)?,
                k_fm: r.r,
            };
            if gate(&score, t).selected {
                records.push(rec);
            } else if best.as_ref().map_or(true, |b| score.total > b.score) {
                best = Some(rec);
            }
        }
        state.prev_receptive_field = Some(d_t);
        state.prev_appearance = Some(y_t);
        state.frame_index = t + 1;
    }
    Ok(ExtractionPass {
        records,
        all_scores,
        fallback: best,
        num_frames: frames.len(),
    })
}

fn stream_precomputed(model: &OkfemModel, maps: &Tensor) -> Result<ExtractionPass, CliError> {
    let shape = maps.shape();
    if shape.len() != 3 {
        return Err(CliError::data(format!(
            "expected [F,H,W] receptive-field maps, got {shape:?}"
        )));
    }
    let (f, h, w) = (shape[0], shape[1], shape[2]);
    let mut state = init_state(&model.config).map_err(CliError::from)?;
    let mut records = Vec::new();
    let mut all_scores = vec![0.0f32; f];
    let mut best: Option<KeyframeRecord> = None;
    for t in 0..f {
        let map = Tensor::from_vec(&[1, h, w], maps.data()[t * h * w..(t + 1) * h * w].to_vec())
            .map_err(CliError::from)?;
        let d_t = ReceptiveFieldMap {
            map,
            frame_index: t,
        };
        if let Some(d_prev) = &state.prev_receptive_field {
            let r = motion_diff(&d_t, d_prev).map_err(CliError::from)?;
            let score = frame_score(&r, &model.th).map_err(CliError::from)?;
            all_scores[t] = score.total;
            let rec = KeyframeRecord {
                frame_index: t,
                score: score.total,
                k_fa: Tensor::zeros(r.r.shape()),
                k_fm: r.r,
            };
            if gate(&score, t).selected {
                records.push(rec);
            } else if best.as_ref().map_or(true, |b| score.total > b.score) {
                best = Some(rec);
            }
        }
        state.prev_receptive_field = Some(d_t);
        state.frame_index = t + 1;
    }
    Ok(ExtractionPass {
        records,
        all_scores,
        fallback: best,
        num_frames: f,
    })
}

fn parse_sample_mode(text: &str) -> Result<f64, CliError> {
    let rest = text.strip_prefix("random:").ok_or_else(|| {
        CliError::usage(format!("bad --sample {text:?}, expected random:FRACTION"))
    })?;
    let p: f64 = rest
        .parse()
        .map_err(|_| CliError::usage(format!("bad --sample fraction {rest:?}")))?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(CliError::usage(format!(
            "sample fraction must be in (0, 1], got {p}"
        )));
    }
    Ok(p)
}

/// Motion and appearance features of the given frames, gate ignored.
fn records_for_frames(
    model: &OkfemModel,
    frames: &[Tensor],
    chosen: &[usize],
) -> Result<Vec<KeyframeRecord>, CliError> {
    let wanted: std::collections::HashSet<usize> = chosen.iter().copied().collect();
    let mut recs = Vec::with_capacity(chosen.len());
    let mut prev_d: Option<ReceptiveFieldMap> = None;
    let mut prev_y: Option<Tensor> = None;
    for (t, frame) in frames.iter().enumerate() {
        let d_t = receptive_field(frame, &model.deform, t).map_err(CliError::from)?;
        let y_t = appearance(frame, &d_t, &model.appearance).map_err(CliError::from)?;
        if wanted.contains(&t) {
            let d_prev = prev_d.as_ref().expect("frame 0 is never sampled");
            let y_prev = prev_y.as_ref().expect("frame 0 is never sampled");
            let r = motion_diff(&d_t, d_prev).map_err(CliError::from)?;
            let score = frame_score(&r, &model.th).map_err(CliError::from)?;
            recs.push(KeyframeRecord {
                frame_index: t,
                score: score.total,
                k_fa: y_t.add(y_prev).map_err(CliError::from)?,
                k_fm: r.r,
            });
        }
        prev_d = Some(d_t);
        prev_y = Some(y_t);
    }
    Ok(recs)
}

/// Random-frame selection: indices of `floor(p * F)` frames drawn without
/// the threshold gate.
fn sample_records(
    pass: &ExtractionPass,
    p: f64,
    exclude_keyframes: bool,
    seed: u64,
) -> Vec<usize> {
    let f = pass.num_frames;
    let selected: std::collections::HashSet<usize> =
        pass.records.iter().map(|r| r.frame_index).collect();
    // Frame 0 has no motion evidence and is never eligible.
    let mut pool: Vec<usize> = (1..f)
        .filter(|t| !exclude_keyframes || !selected.contains(t))
        .collect();
    let want = ((p * f as f64) + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut take: Vec<usize> = pool.into_iter().take(want).collect();
    take.sort_unstable();
    take
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_extract(
    cfg: &RunConfig,
    model_path: &Path,
    input: &Path,
    out: &Path,
    precomputed: bool,
    sample: Option<&str>,
    exclude_keyframes: bool,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let sample_p = sample.map(parse_sample_mode).transpose()?;
    if exclude_keyframes && sample_p.is_none() {
        return Err(CliError::usage(
            "--exclude-keyframes requires --sample".into(),
        ));
    }
    let inputs: Vec<std::path::PathBuf> = if input.extension().is_some_and(|e| e == "fts") {
        vec![input.to_path_buf()]
    } else if precomputed {
        // Precomputed maps live in maps.fts files.
        let mut dirs: Vec<_> = std::fs::read_dir(input)
            .map_err(|e| data_err(e, input))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.join("maps.fts").is_file())
            .collect();
        dirs.sort();
        if dirs.is_empty() && input.join("maps.fts").is_file() {
            dirs.push(input.to_path_buf());
        }
        if dirs.is_empty() {
            return Err(CliError::data(format!(
                "no maps.fts found under {input:?}"
            )));
        }
        dirs
    } else {
        video_dirs(input)?
    };
    std::fs::create_dir_all(out).map_err(|e| data_err(e, out))?;

    let seed = cfg.seed;
    let work = |item: &(usize, std::path::PathBuf)| -> Result<(String, f64), CliError> {
        let (index, path) = item;
        let name = if path.is_dir() {
            path.file_name().unwrap().to_string_lossy().into_owned()
        } else {
            path.file_stem().unwrap().to_string_lossy().into_owned()
        };
        let pass = if precomputed {
            let maps_path = if path.is_dir() {
                path.join("maps.fts")
            } else {
                path.clone()
            };
            let maps = read_fts_file(&maps_path).map_err(|e| data_err(e, &maps_path))?;
            stream_precomputed(&model, &maps)?
        } else {
            let frames_path = if path.is_dir() {
                path.join("frames.fts")
            } else {
                path.clone()
            };
            let frames = load_frames(&frames_path)?;
            stream_video(&model, &frames)?
        };

        let vdir = out.join(&name);
        std::fs::create_dir_all(&vdir).map_err(|e| data_err(e, &vdir))?;

        // What gets persisted: gate-selected records (with a best-frame
        // fallback for empty videos), or the sampled frames' records when
        // the random-sampling protocol is active.
        let (persisted, indices, fallback_index): (Vec<KeyframeRecord>, Vec<usize>, Option<usize>) =
            match sample_p {
                Some(p) => {
                    let chosen =
                        sample_records(&pass, p, exclude_keyframes, seed ^ *index as u64);
                    let frames_path = if path.is_dir() {
                        path.join("frames.fts")
                    } else {
                        path.clone()
                    };
                    let frames = load_frames(&frames_path)?;
                    let recs = records_for_frames(&model, &frames, &chosen)?;
                    (recs, chosen, None)
                }
                None => {
                    let idx: Vec<usize> = pass.records.iter().map(|r| r.frame_index).collect();
                    if pass.records.is_empty() {
                        let fb = pass.fallback.as_ref().map(|r| r.frame_index);
                        (pass.fallback.iter().cloned().collect(), idx, fb)
                    } else {
                        (pass.records.clone(), idx, None)
                    }
                }
            };

        let kfm: Vec<Tensor> = persisted.iter().map(|r| r.k_fm.clone()).collect();
        let kfa: Vec<Tensor> = persisted.iter().map(|r| r.k_fa.clone()).collect();
        let inner_fm: Vec<usize> = kfm
            .first()
            .map(|t| t.shape().to_vec())
            .unwrap_or_else(|| vec![1, 0, 0]);
        let inner_fa: Vec<usize> = kfa
            .first()
            .map(|t| t.shape().to_vec())
            .unwrap_or_else(|| vec![1, 0, 0]);
        write_fts_file(&vdir.join("kfm.fts"), &stack(&kfm, &inner_fm))
            .map_err(CliError::from)?;
        write_fts_file(&vdir.join("kfa.fts"), &stack(&kfa, &inner_fa))
            .map_err(CliError::from)?;
        let doc = KeyframesDoc {
            num_frames: pass.num_frames,
            keyframe_indices: indices.clone(),
            scores: persisted.iter().map(|r| r.score).collect(),
            all_scores: pass.all_scores.clone(),
            keyframe_ratio: indices.len() as f64 / pass.num_frames as f64,
            fallback_index,
        };
        atomic_write_json(&vdir.join("keyframes.json"), &doc)?;
        if path.is_dir() {
            let ann = path.join("annotations.json");
            if ann.is_file() {
                let bytes = std::fs::read(&ann).map_err(|e| data_err(e, &ann))?;
                atomic_write(&vdir.join("annotations.json"), &bytes)?;
            }
        }
        Ok((name, doc.keyframe_ratio))
    };

    let items: Vec<(usize, std::path::PathBuf)> = inputs.into_iter().enumerate().collect();
    let results = run_jobs(items, cfg.jobs, work);
    let mut total = 0.0f64;
    let mut n = 0usize;
    for r in results {
        let (name, ratio) = r?;
        println!("{name}: keyframe ratio {ratio:.4}");
        total += ratio;
        n += 1;
    }
    println!("mean keyframe ratio: {:.4}", total / n as f64);
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<(f32, f32)>, CliError> {
    text.split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| CliError::usage(format!("bad grid entry {pair:?}")))?;
            let alpha: f32 = a
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad alpha {a:?}")))?;
            let beta: f32 = b
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad beta {b:?}")))?;
            Ok((alpha, beta))
        })
        .collect()
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    train_data: &Path,
    eval_data: &Path,
    grid: Option<&str>,
    out: &Path,
    epochs: Option<usize>,
    learning_rate: Option<f32>,
) -> Result<(), CliError> {
    let grid = match grid {
        Some(text) => parse_grid(text)?,
        None => default_sweep_grid(),
    };
    let dataset = load_dataset(train_data)?;
    let mut eval = Vec::new();
    for vdir in video_dirs(eval_data)? {
        let frames = load_frames(&vdir.join("frames.fts"))?;
        let features = load_features(&vdir.join("features.fts"))?;
        let ann = load_annotations(&vdir.join("annotations.json"))?;
        let references = ann.reference_summaries().map_err(|e| data_err(e, &vdir))?;
        if references.is_empty() {
            return Err(CliError::data(format!(
                "{vdir:?}: eval videos need reference_summaries"
            )));
        }
        let gt = ann.ground_truth().map_err(|e| data_err(e, &vdir))?;
        eval.push(okfem_core::io::VideoSample {
            frames,
            gt,
            reference: Summary::new(references[0].num_frames, references[0].shots.clone())
                .map_err(|e| data_err(e, &vdir))?,
            features,
        });
    }
    let shape = dataset[0].0[0].shape();
    let config = OkfemConfig {
        input_shape: (shape[0], shape[1], shape[2]),
        ..Default::default()
    };
    let mut opt = cfg.optimizer.clone();
    if let Some(e) = epochs {
        opt.total_epochs = e;
    }
    if let Some(lr) = learning_rate {
        opt.learning_rate = lr;
    }
    let results = sweep_alpha_beta(
        &grid,
        &dataset,
        &eval,
        &config,
        &opt,
        &cfg.loss,
        &cfg.eval_protocol(),
        cfg.seed,
    )
    .map_err(CliError::from)?;
    let tsv = okfem_core::training::sweep_table_tsv(&results);
    let tsv_path = out.with_extension("tsv");
    atomic_write(&tsv_path, tsv.as_bytes())?;
    let json_path = out.with_extension("json");
    atomic_write_json(&json_path, &results)?;
    print!("{tsv}");
    println!("wrote {} and {}", tsv_path.display(), json_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_summarize(
    cfg: &RunConfig,
    features: &Path,
    keyframes: Option<&Path>,
    importance: Option<&Path>,
    method: Option<MethodArg>,
    out: &Path,
    max_segments: Option<usize>,
    penalty: Option<f64>,
) -> Result<(), CliError> {
    let feats = load_features(features)?;
    let f = feats.num_frames();
    let protocol = {
        let mut p = cfg.eval_protocol();
        if let Some(m) = max_segments {
            p.max_segments = Some(m);
        }
        if let Some(pen) = penalty {
            p.penalty = pen;
        }
        p
    };
    let segments = kts_segment(&feats, protocol.segments_for(f), protocol.penalty)
        .map_err(CliError::from)?;
    let method = method.unwrap_or(match (keyframes, importance) {
        (Some(_), None) => MethodArg::Greedy,
        (None, Some(_)) => MethodArg::Knapsack,
        _ => {
            return Err(CliError::usage(
                "pass exactly one of --keyframes or --importance (or force --method)".into(),
            ))
        }
    });
    let summary = match method {
        MethodArg::Greedy => {
            let path = keyframes.ok_or_else(|| {
                CliError::usage("greedy summarization needs --keyframes".into())
            })?;
            let doc: KeyframesDoc = read_json(path)?;
            if doc.num_frames != f {
                return Err(CliError::data(format!(
                    "keyframes are for {} frames, features for {f}",
                    doc.num_frames
                )));
            }
            keyframes_to_keyshots(&segments, &doc.keyframe_indices, protocol.budget)
                .map_err(CliError::from)?
        }
        MethodArg::Knapsack => {
            let path = importance.ok_or_else(|| {
                CliError::usage("knapsack summarization needs --importance".into())
            })?;
            let ann = load_annotations(path)?;
            let scores = ann.importance_scores.as_deref().ok_or_else(|| {
                CliError::data(format!("{path:?} has no importance_scores"))
            })?;
            if ann.num_frames != f {
                return Err(CliError::data(format!(
                    "importance scores are for {} frames, features for {f}",
                    ann.num_frames
                )));
            }
            importance_to_keyshots(scores, &segments, protocol.budget).map_err(CliError::from)?
        }
    };
    atomic_write_json(out, &summary)?;
    println!(
        "summary: {} shots, {} of {} frames",
        summary.shots.len(),
        summary.total_selected(),
        f
    );
    Ok(())
}

fn load_references(path: &Path) -> Result<Vec<Summary>, CliError> {
    // Either an annotations document carrying reference summaries, or a
    // bare summary document.
    if let Ok(ann) = load_annotations(path) {
        let refs = ann.reference_summaries().map_err(|e| data_err(e, path))?;
        if !refs.is_empty() {
            return Ok(refs);
        }
        return Err(CliError::data(format!(
            "{path:?} has no reference_summaries"
        )));
    }
    Ok(vec![load_summary(path)?])
}

pub fn cmd_eval_summary(cfg: &RunConfig, pred: &Path, reference: &Path) -> Result<(), CliError> {
    let pred = load_summary(pred)?;
    let refs = load_references(reference)?;
    let score = f_score(&pred, &refs, cfg.aggregation).map_err(CliError::from)?;
    println!("{score:.4}");
    Ok(())
}

fn load_extracted_records(dir: &Path) -> Result<(Vec<KeyframeRecord>, KeyframesDoc), CliError> {
    let doc: KeyframesDoc = read_json(&dir.join("keyframes.json"))?;
    let kfm = read_fts_file(&dir.join("kfm.fts")).map_err(|e| data_err(e, dir))?;
    let kfa = read_fts_file(&dir.join("kfa.fts")).map_err(|e| data_err(e, dir))?;
    let fm_frames = split_frames(&kfm)?;
    let fa_frames = split_frames(&kfa)?;
    if fm_frames.len() != fa_frames.len() {
        return Err(CliError::data(format!(
            "{dir:?}: kfm has {} records, kfa has {}",
            fm_frames.len(),
            fa_frames.len()
        )));
    }
    let indices: Vec<usize> = if !doc.keyframe_indices.is_empty() {
        doc.keyframe_indices.clone()
    } else {
        doc.fallback_index.into_iter().collect()
    };
    if indices.len() != fm_frames.len() {
        return Err(CliError::data(format!(
            "{dir:?}: index count {} does not match record count {}",
            indices.len(),
            fm_frames.len()
        )));
    }
    let records = indices
        .iter()
        .zip(fm_frames.into_iter().zip(fa_frames))
        .enumerate()
        .map(|(i, (&frame_index, (k_fm, k_fa)))| KeyframeRecord {
            frame_index,
            score: doc.scores.get(i).copied().unwrap_or(0.0),
            k_fm,
            k_fa,
        })
        .collect();
    Ok((records, doc))
}

pub fn cmd_train_classifier(
    cfg: &RunConfig,
    data: &Path,
    w2v: &Path,
    out: &Path,
    log: Option<&Path>,
    epochs: Option<usize>,
    learning_rate: Option<f32>,
) -> Result<(), CliError> {
    let table_pairs = read_word_vectors(
        &std::fs::read_to_string(w2v).map_err(|e| data_err(e, w2v))?,
    )
    .map_err(|e| data_err(e, w2v))?;
    let table = W2vTable::from_pairs(table_pairs).map_err(CliError::from)?;
    let mut dataset: Vec<(VisualFeature, usize)> = Vec::new();
    for vdir in extracted_dirs(data)? {
        let (records, _) = load_extracted_records(&vdir)?;
        if records.is_empty() {
            return Err(CliError::data(format!(
                "{vdir:?}: no keyframe records to pool"
            )));
        }
        let ann = load_annotations(&vdir.join("annotations.json"))?;
        let label = ann.class_label.as_deref().ok_or_else(|| {
            CliError::data(format!("{vdir:?}: annotations carry no class_label"))
        })?;
        let class = table.class_of(label).ok_or_else(|| {
            CliError::data(format!("class label {label:?} not in the word-vector table"))
        })?;
        let vis = pool_keyframes(&records).map_err(CliError::from)?;
        dataset.push((vis, class));
    }
    let d_vis = dataset[0].0.values.len();
    let mut params =
        PluginParams::init(d_vis, table.num_classes(), cfg.seed).map_err(CliError::from)?;
    let mut opt = cfg.optimizer.clone();
    if let Some(e) = epochs {
        opt.total_epochs = e;
    }
    if let Some(lr) = learning_rate {
        opt.learning_rate = lr;
    }
    let itts = IttsConfig {
        max_iterations: cfg.max_iter,
        stability_run: cfg.stability_run,
    };
    let convergence =
        itts_train(&mut params, &dataset, &table, &itts, &opt, cfg.seed).map_err(CliError::from)?;
    let labels: Vec<String> = (0..table.num_classes())
        .map(|c| table.label(c).to_string())
        .collect();
    atomic_write_json(out, &ClassifierFile { params: params.clone(), labels })?;
    if let Some(lpath) = log {
        atomic_write_json(lpath, &convergence)?;
    }
    let (acc, _) = evaluate(&params, &dataset, &table, &itts).map_err(CliError::from)?;
    println!(
        "trained on {} videos: final-epoch convergence {:.1}%, training accuracy {:.1}%",
        dataset.len(),
        100.0 * convergence.converged_fraction(opt.total_epochs - 1),
        100.0 * acc
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictionOut {
    video: String,
    label: String,
    class: usize,
    probability: f32,
    converged: bool,
    iterations_used: usize,
}

pub fn cmd_classify(
    cfg: &RunConfig,
    model: &Path,
    input: &Path,
    w2v: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let clf: ClassifierFile = read_json(model)?;
    clf.params.validate().map_err(CliError::from)?;
    let table_pairs = read_word_vectors(
        &std::fs::read_to_string(w2v).map_err(|e| data_err(e, w2v))?,
    )
    .map_err(|e| data_err(e, w2v))?;
    let table = W2vTable::from_pairs(table_pairs).map_err(CliError::from)?;
    if table.num_classes() != clf.params.num_classes {
        return Err(CliError::data(format!(
            "classifier expects {} classes, table has {}",
            clf.params.num_classes,
            table.num_classes()
        )));
    }
    let itts = IttsConfig {
        max_iterations: cfg.max_iter,
        stability_run: cfg.stability_run,
    };
    let mut outputs = Vec::new();
    for vdir in extracted_dirs(input)? {
        let (records, _) = load_extracted_records(&vdir)?;
        if records.is_empty() {
            return Err(CliError::data(format!("{vdir:?}: nothing to classify")));
        }
        let vis = pool_keyframes(&records).map_err(CliError::from)?;
        let rec = itts_test(&clf.params, &vis, &table, &itts).map_err(CliError::from)?;
        let chosen = rec
            .per_class
            .iter()
            .find(|r| r.label == rec.final_label && r.converged == rec.converged)
            .or(rec.per_class.first())
            .unwrap();
        let output = PredictionOut {
            video: vdir.file_name().unwrap().to_string_lossy().into_owned(),
            label: table.label(rec.final_label).to_string(),
            class: rec.final_label,
            probability: chosen.probability,
            converged: rec.converged,
            iterations_used: chosen.iterations_used,
        };
        println!(
            "{}: {} (p={:.3}, {} iterations{})",
            output.video,
            output.label,
            output.probability,
            output.iterations_used,
            if output.converged { "" } else { ", hit cap" }
        );
        outputs.push(output);
    }
    if let Some(opath) = out {
        atomic_write_json(opath, &outputs)?;
    }
    Ok(())
}

pub fn cmd_plot(
    summaries: &str,
    labels: Option<&str>,
    reference: Option<&Path>,
    scores: Option<&Path>,
    keyframes: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let paths: Vec<&str> = summaries.split(',').filter(|s| !s.is_empty()).collect();
    if paths.is_empty() {
        return Err(CliError::usage("--summaries needs at least one path".into()));
    }
    let labels: Vec<String> = match labels {
        Some(text) => {
            let l: Vec<String> = text.split(',').map(|s| s.trim().to_string()).collect();
            if l.len() != paths.len() {
                return Err(CliError::usage(format!(
                    "{} labels for {} summaries",
                    l.len(),
                    paths.len()
                )));
            }
            l
        }
        None => paths
            .iter()
            .map(|p| {
                Path::new(p)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| (*p).to_string())
            })
            .collect(),
    };
    let mut bars = Vec::new();
    for (path, label) in paths.iter().zip(labels) {
        bars.push((label, load_summary(Path::new(path))?));
    }
    if let Some(rpath) = reference {
        for (i, r) in load_references(rpath)?.into_iter().enumerate() {
            let label = if i == 0 {
                "reference".to_string()
            } else {
                format!("reference-{}", i + 1)
            };
            bars.push((label, r));
        }
    }
    let num_frames = bars[0].1.num_frames;
    if let Some((label, bad)) = bars.iter().find(|(_, s)| s.num_frames != num_frames) {
        return Err(CliError {
            class: ErrorClass::Data,
            message: format!(
                "summary {label:?} covers {} frames, expected {num_frames}",
                bad.num_frames
            ),
        });
    }
    let score_values: Option<Vec<f32>> = match scores {
        Some(path) => Some(load_scores(path, num_frames)?),
        None => None,
    };
    let kf_indices: Option<Vec<usize>> = match keyframes {
        Some(path) => {
            let doc: KeyframesDoc = read_json(path)?;
            if doc.num_frames != num_frames {
                return Err(CliError::data(format!(
                    "keyframes cover {} frames, expected {num_frames}",
                    doc.num_frames
                )));
            }
            Some(doc.keyframe_indices)
        }
        None => None,
    };
    let svg = render_timelines(
        &bars,
        score_values.as_deref(),
        kf_indices.as_deref(),
        num_frames,
    );
    atomic_write(out, svg.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn load_scores(path: &Path, num_frames: usize) -> Result<Vec<f32>, CliError> {
    // keyframes.json (all_scores) or annotations.json (importance_scores).
    if let Ok(doc) = read_json::<KeyframesDoc>(path) {
        if doc.num_frames == num_frames && !doc.all_scores.is_empty() {
            return Ok(doc.all_scores);
        }
    }
    let ann = load_annotations(path)?;
    let scores = ann
        .importance_scores
        .ok_or_else(|| CliError::data(format!("{path:?} carries no usable scores")))?;
    if ann.num_frames != num_frames {
        return Err(CliError::data(format!(
            "scores cover {} frames, expected {num_frames}",
            ann.num_frames
        )));
    }
    Ok(scores)
}

//! File formats and the synthetic-video generator: the FTS1 binary tensor
//! format (little-endian, bit-exact round trips), the JSON annotation
//! schema, whitespace word-vector tables, and seeded synthetic sequences
//! with planted content changes.

use crate::error::{Error, Result};
use crate::summarize::{FrameFeatureSeq, Summary};
use crate::tensor::Tensor;
use crate::training::GroundTruthKeyframes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const FTS_MAGIC: [u8; 4] = *b"FTS1";

/// Encode a tensor: magic, u32 ndims, u32 dims, then f32 payload, all
/// little-endian and row-major.
pub fn write_fts(tensor: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * tensor.shape().len() + 4 * tensor.numel());
    buf.extend_from_slice(&FTS_MAGIC);
    buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    if *at + n > bytes.len() {
        return Err(Error::Truncated {
            expected: *at + n,
            actual: bytes.len(),
        });
    }
    let s = &bytes[*at..*at + n];
    *at += n;
    Ok(s)
}

fn read_u32(bytes: &[u8], at: &mut usize) -> Result<u32> {
    let s = take(bytes, at, 4)?;
    Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

/// Decode an FTS1 tensor; bad magic, truncated payloads, and dimension
/// overflow are distinct errors.
pub fn read_fts(bytes: &[u8]) -> Result<Tensor> {
    let mut at = 0usize;
    let magic = take(bytes, &mut at, 4)?;
    if magic != FTS_MAGIC {
        return Err(Error::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let ndims = read_u32(bytes, &mut at)? as usize;
    if ndims == 0 || ndims > 8 {
        return Err(Error::DimsOverflow(format!("ndims = {ndims}")));
    }
    let mut shape = Vec::with_capacity(ndims);
    let mut count: usize = 1;
    for _ in 0..ndims {
        let d = read_u32(bytes, &mut at)? as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::DimsOverflow(format!("dims {shape:?} x {d}")))?;
        shape.push(d);
    }
    count
        .checked_mul(4)
        .ok_or_else(|| Error::DimsOverflow(format!("payload of {count} floats")))?;
    let payload = take(bytes, &mut at, count * 4)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    // Build directly: payloads may legitimately carry any bit pattern the
    // writer produced, and the length is already proven.
    Tensor::from_vec(&shape, data)
}

pub fn write_fts_file(path: &std::path::Path, tensor: &Tensor) -> Result<()> {
    std::fs::write(path, write_fts(tensor))?;
    Ok(())
}

pub fn read_fts_file(path: &std::path::Path) -> Result<Tensor> {
    read_fts(&std::fs::read(path)?)
}

/// Per-video annotation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDoc {
    pub num_frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyframe_indices: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub importance_scores: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_summaries: Option<Vec<Vec<(usize, usize)>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
}

impl AnnotationDoc {
    pub fn validate(&self) -> Result<()> {
        if let Some(kf) = &self.keyframe_indices {
            if let Some(&bad) = kf.iter().find(|&&i| i >= self.num_frames) {
                return Err(Error::Schema(format!(
                    "keyframe_indices: index {bad} out of range for num_frames {}",
                    self.num_frames
                )));
            }
        }
        if let Some(scores) = &self.importance_scores {
            if scores.len() != self.num_frames {
                return Err(Error::Schema(format!(
                    "importance_scores: length {} does not match num_frames {}",
                    scores.len(),
                    self.num_frames
                )));
            }
            if !scores.iter().all(|v| v.is_finite()) {
                return Err(Error::Schema("importance_scores: non-finite value".into()));
            }
        }
        if let Some(refs) = &self.reference_summaries {
            for (i, shots) in refs.iter().enumerate() {
                Summary::new(self.num_frames, shots.clone()).map_err(|e| {
                    Error::Schema(format!("reference_summaries[{i}]: {e}"))
                })?;
            }
        }
        Ok(())
    }

    pub fn reference_summaries(&self) -> Result<Vec<Summary>> {
        self.reference_summaries
            .iter()
            .flatten()
            .map(|shots| Summary::new(self.num_frames, shots.clone()))
            .collect()
    }

    pub fn ground_truth(&self) -> Result<GroundTruthKeyframes> {
        GroundTruthKeyframes::new(
            self.keyframe_indices.clone().unwrap_or_default(),
            self.num_frames,
        )
    }
}

/// Parse and validate an annotation document.
pub fn read_annotations(text: &str) -> Result<AnnotationDoc> {
    let doc: AnnotationDoc =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("annotations: {e}")))?;
    doc.validate()?;
    Ok(doc)
}

pub const W2V_DIM: usize = 300;

/// Parse a word-vector table: one class per line, `label v1 .. v300`,
/// whitespace separated. Blank lines are skipped.
pub fn read_word_vectors(text: &str) -> Result<Vec<(String, Vec<f32>)>> {
    let mut table: Vec<(String, Vec<f32>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != W2V_DIM + 1 {
            return Err(Error::Schema(format!(
                "word vectors line {}: expected {} tokens (label + {} values), got {}",
                lineno + 1,
                W2V_DIM + 1,
                W2V_DIM,
                tokens.len()
            )));
        }
        let label = tokens[0].to_string();
        if table.iter().any(|(l, _)| *l == label) {
            return Err(Error::Schema(format!(
                "word vectors line {}: duplicate label {label:?}",
                lineno + 1
            )));
        }
        let mut values = Vec::with_capacity(W2V_DIM);
        for (i, tok) in tokens[1..].iter().enumerate() {
            let v: f32 = tok.parse().map_err(|_| {
                Error::Schema(format!(
                    "word vectors line {}, value {}: cannot parse {tok:?}",
                    lineno + 1,
                    i + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Schema(format!(
                    "word vectors line {}: non-finite value",
                    lineno + 1
                )));
            }
            values.push(v);
        }
        table.push((label, values));
    }
    if table.is_empty() {
        return Err(Error::Schema("word vectors: no entries".into()));
    }
    Ok(table)
}

/// Configuration of the synthetic-video generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_frames: usize,
    pub frame_shape: (usize, usize, usize),
    pub num_events: usize,
    pub noise_level: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_frames: 64,
            frame_shape: (3, 32, 32),
            num_events: 3,
            noise_level: 0.01,
            seed: 0,
        }
    }
}

/// Minimum spacing between planted events, and from the ends.
const MIN_EVENT_GAP: usize = 4;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.frame_shape;
        if c == 0 || h < 4 || w < 4 {
            return Err(Error::InvalidConfig(format!(
                "frame shape too small: {:?}",
                self.frame_shape
            )));
        }
        if self.num_frames < 2 {
            return Err(Error::InvalidConfig("num_frames must be >= 2".into()));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::InvalidConfig("noise_level must be >= 0".into()));
        }
        // Events need room: a gap before the first, between each pair, and
        // after the last.
        let needed = (self.num_events + 1) * MIN_EVENT_GAP;
        if self.num_events >= self.num_frames || needed > self.num_frames {
            return Err(Error::InvalidConfig(format!(
                "{} events do not fit in {} frames with a minimum gap of {MIN_EVENT_GAP}",
                self.num_events, self.num_frames
            )));
        }
        Ok(())
    }
}

/// A generated sequence with everything downstream stages consume.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub frames: Vec<Tensor>,
    pub gt: GroundTruthKeyframes,
    pub reference: Summary,
    pub features: FrameFeatureSeq,
}

/// Draw sorted event positions with the minimum gap via stars-and-bars.
fn event_positions(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<usize> {
    let e = cfg.num_events;
    if e == 0 {
        return Vec::new();
    }
    let f = cfg.num_frames;
    let slack = f - (e + 1) * MIN_EVENT_GAP;
    // e+1 non-negative extras summing to at most slack.
    let mut extras = vec![0usize; e + 1];
    let mut remaining = slack;
    for x in extras.iter_mut() {
        let take = rng.gen_range(0..=remaining);
        *x = take;
        remaining -= take;
    }
    let mut positions = Vec::with_capacity(e);
    let mut pos = 0usize;
    for (i, x) in extras.iter().enumerate().take(e) {
        pos += MIN_EVENT_GAP + x;
        let _ = i;
        positions.push(pos);
    }
    positions
}

/// Number of frames over which an event's luminance rise is spread.
pub const EVENT_RAMP: usize = 5;

/// Generate one synthetic video.
///
/// Each planted event starts a new regime: the static texture is redrawn
/// at the event frame and the base luminance climbs linearly to the new
/// regime's level over the next `EVENT_RAMP` frames, while a bright blob
/// keeps drifting one pixel per frame. The monotone luminance staircase
/// makes the signed motion score learnable, and the ramp spreads each
/// event's motion energy over several equal steps, so a threshold that
/// catches the events necessarily selects the whole ramp neighborhood.
pub fn synth_video(cfg: &SynthConfig) -> Result<VideoSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c, h, w) = cfg.frame_shape;
    let f = cfg.num_frames;
    let events = event_positions(&mut rng, cfg);
    let regimes = events.len() + 1;

    // Per-regime luminance targets: an even staircase from 0.15 up,
    // jittered slightly, always increasing.
    let span = 0.6f32;
    let step = span / regimes as f32;
    let levels: Vec<f32> = (0..regimes)
        .map(|j| 0.15 + step * j as f32 + rng.gen_range(-0.1..0.1) * step)
        .collect();

    // Per-regime static texture and per-channel tint. The texture has a
    // strong block-scale component (redrawn instantly at each event, so
    // it anchors segmentation at the event frame) plus fine detail.
    let grid = 4usize.min(h).min(w);
    let mut textures = Vec::with_capacity(regimes);
    let mut tints = Vec::with_capacity(regimes);
    for _ in 0..regimes {
        let blocks: Vec<f32> = (0..grid * grid).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let tex: Vec<f32> = (0..h * w)
            .map(|p| {
                let (i, j) = (p / w, p % w);
                let b = (i * grid / h) * grid + (j * grid / w);
                blocks[b] + rng.gen_range(-0.06..0.06)
            })
            .collect();
        textures.push(tex);
        let tint: Vec<f32> = (0..c).map(|_| rng.gen_range(-0.08..0.08)).collect();
        tints.push(tint);
    }
    let blob_r = rng.gen_range(0..h) as f32;
    let blob_c = rng.gen_range(0..w) as f32;
    let noise = Normal::new(0.0f64, cfg.noise_level.max(f32::MIN_POSITIVE) as f64)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut frames = Vec::with_capacity(f);
    let mut regime = 0usize;
    let mut regime_start = 0usize;
    for t in 0..f {
        if regime < events.len() && t == events[regime] {
            regime += 1;
            regime_start = t;
        }
        let level = levels[regime];
        let lum = if regime == 0 {
            level
        } else {
            let rise = level - levels[regime - 1];
            // Linear climb over the ramp, flat afterwards.
            let d = (t - regime_start + 1).min(EVENT_RAMP) as f32;
            levels[regime - 1] + rise * d / EVENT_RAMP as f32
        };
        let tex = &textures[regime];
        let tint = &tints[regime];
        // Drifting bright blob, one pixel per frame, wrapping around.
        let br = (blob_r + t as f32) % h as f32;
        let bc = (blob_c + 2.0 * t as f32) % w as f32;
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let dr = (i as f32 - br).abs().min(h as f32 - (i as f32 - br).abs());
                    let dc = (j as f32 - bc).abs().min(w as f32 - (j as f32 - bc).abs());
                    let blob = 0.1 * (-(dr * dr + dc * dc) / 6.0).exp();
                    let n = if cfg.noise_level > 0.0 {
                        noise.sample(&mut rng) as f32
                    } else {
                        0.0
                    };
                    data.push(lum + tint[ch] + tex[i * w + j] + blob + n);
                }
            }
        }
        frames.push(Tensor::from_vec(&[c, h, w], data)?);
    }

    let gt = GroundTruthKeyframes::new(events.clone(), f)?;

    // Reference summary: shots centered on events, filling at most 15%.
    let reference = reference_from_events(&events, f);

    // Per-frame descriptors: channel means plus a 4x4 grid of luminance
    // block means.
    let mut rows = Vec::with_capacity(f);
    for frame in &frames {
        rows.push(frame_descriptor(frame));
    }
    let features = FrameFeatureSeq::from_rows(&rows)?;

    Ok(VideoSample {
        frames,
        gt,
        reference,
        features,
    })
}

/// Reference shots covering the events, sized so the total stays within
/// 15%. Each shot starts at its event and extends into the event's ramp.
pub fn reference_from_events(events: &[usize], num_frames: usize) -> Summary {
    if events.is_empty() {
        return Summary::empty(num_frames);
    }
    let cap = crate::summarize::budget_frames(0.15, num_frames);
    let per_event = (cap / events.len()).max(1);
    let mut shots: Vec<(usize, usize)> = Vec::new();
    for &e in events {
        let start = e;
        let end = (start + per_event).min(num_frames);
        match shots.last_mut() {
            Some(last) if last.1 > start => last.1 = end.max(last.1),
            _ => shots.push((start, end)),
        }
    }
    // Trim from the tail if merging/clipping overshot the cap.
    let mut total: usize = shots.iter().map(|&(s, e)| e - s).sum();
    while total > cap {
        let last = shots.last_mut().unwrap();
        last.1 -= 1;
        if last.0 == last.1 {
            shots.pop();
        }
        total -= 1;
    }
    Summary::new(num_frames, shots).expect("event shots are sorted and disjoint")
}

/// Mean per channel plus a 4x4 grid of mean-centered block means (the
/// spatial layout with brightness removed). Scaled so within- and
/// between-regime scatter magnitudes sit well against the default
/// segmentation penalty.
const DESCRIPTOR_SCALE: f32 = 4.0;

pub fn frame_descriptor(frame: &Tensor) -> Vec<f32> {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    let mut out = Vec::with_capacity(c + 16);
    for ch in 0..c {
        let plane = &frame.data()[ch * h * w..(ch + 1) * h * w];
        out.push(plane.iter().sum::<f32>() / (h * w) as f32);
    }
    let global_mean = frame.sum() as f32 / frame.numel() as f32;
    let grid = 4usize.min(h).min(w);
    for bi in 0..grid {
        for bj in 0..grid {
            let r0 = bi * h / grid;
            let r1 = ((bi + 1) * h / grid).max(r0 + 1);
            let c0 = bj * w / grid;
            let c1 = ((bj + 1) * w / grid).max(c0 + 1);
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for ch in 0..c {
                let plane = &frame.data()[ch * h * w..(ch + 1) * h * w];
                for i in r0..r1 {
                    for j in c0..c1 {
                        sum += plane[i * w + j] as f64;
                        n += 1;
                    }
                }
            }
            out.push((sum / n as f64) as f32 - global_mean);
        }
    }
    for v in &mut out {
        *v *= DESCRIPTOR_SCALE;
    }
    out
}

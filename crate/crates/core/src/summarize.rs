//! Key-shot machinery: kernel temporal segmentation over a feature Gram
//! matrix, keyframe- and importance-driven shot selection under a duration
//! budget, and the frame-overlap F-score protocol.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-frame feature vectors with a uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSeq {
    dim: usize,
    data: Vec<f32>,
}

impl FrameFeatureSeq {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<FrameFeatureSeq> {
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be >= 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "feature data length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("frame features".into()));
        }
        Ok(FrameFeatureSeq { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<FrameFeatureSeq> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("ragged feature rows".into()));
        }
        FrameFeatureSeq::new(dim, rows.concat())
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// A partition of `[0, F)` into contiguous segments: strictly increasing
/// boundaries `0 = b_0 < b_1 < ... < b_m = F`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    boundaries: Vec<usize>,
}

impl Segments {
    pub fn new(boundaries: Vec<usize>) -> Result<Segments> {
        if boundaries.len() < 2 || boundaries[0] != 0 {
            return Err(Error::InvalidInput(format!(
                "segment boundaries must start at 0 and end at F, got {boundaries:?}"
            )));
        }
        if !boundaries.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(format!(
                "segment boundaries must be strictly increasing, got {boundaries:?}"
            )));
        }
        Ok(Segments { boundaries })
    }

    pub fn num_frames(&self) -> usize {
        *self.boundaries.last().unwrap()
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Half-open interval of segment `i`.
    pub fn bounds(&self, i: usize) -> (usize, usize) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Interior change points (everything but the 0 and F sentinels).
    pub fn change_points(&self) -> &[usize] {
        &self.boundaries[1..self.boundaries.len() - 1]
    }
}

/// A set of selected non-overlapping shots within a video of `num_frames`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub num_frames: usize,
    pub shots: Vec<(usize, usize)>,
}

impl Summary {
    pub fn new(num_frames: usize, shots: Vec<(usize, usize)>) -> Result<Summary> {
        for &(s, e) in &shots {
            if s >= e || e > num_frames {
                return Err(Error::InvalidInput(format!(
                    "shot [{s},{e}) out of range for {num_frames} frames"
                )));
            }
        }
        if !shots.windows(2).all(|w| w[0].1 <= w[1].0) {
            return Err(Error::InvalidInput(format!(
                "shots must be sorted and non-overlapping, got {shots:?}"
            )));
        }
        Ok(Summary { num_frames, shots })
    }

    pub fn empty(num_frames: usize) -> Summary {
        Summary {
            num_frames,
            shots: Vec::new(),
        }
    }

    pub fn total_selected(&self) -> usize {
        self.shots.iter().map(|&(s, e)| e - s).sum()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.shots.iter().any(|&(s, e)| s <= frame && frame < e)
    }
}

/// How to combine per-reference F-scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Max,
}

/// Maximum number of frames a budgeted summary may select.
///
/// A small guard keeps decimal budgets like 0.3 from flooring one frame
/// short of the exact product.
pub fn budget_frames(budget: f64, num_frames: usize) -> usize {
    ((budget * num_frames as f64) + 1e-9).floor() as usize
}

/// Within-segment scatter costs backed by Gram-matrix prefix sums.
struct ScatterTable {
    n: usize,
    prefix: Vec<f64>,
    diag: Vec<f64>,
}

impl ScatterTable {
    fn build(features: &FrameFeatureSeq) -> ScatterTable {
        let n = features.num_frames();
        let mut gram = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let dot: f64 = features
                    .frame(i)
                    .iter()
                    .zip(features.frame(j))
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                gram[i * n + j] = dot;
                gram[j * n + i] = dot;
            }
        }
        let mut prefix = vec![0.0f64; (n + 1) * (n + 1)];
        for i in 0..n {
            for j in 0..n {
                prefix[(i + 1) * (n + 1) + (j + 1)] = gram[i * n + j]
                    + prefix[i * (n + 1) + (j + 1)]
                    + prefix[(i + 1) * (n + 1) + j]
                    - prefix[i * (n + 1) + j];
            }
        }
        let mut diag = vec![0.0f64; n + 1];
        for i in 0..n {
            diag[i + 1] = diag[i] + gram[i * n + i];
        }
        ScatterTable { n, prefix, diag }
    }

    /// Scatter of segment `[start, end)`: sum of self-similarities minus
    /// the block mean of pairwise similarities.
    fn cost(&self, start: usize, end: usize) -> f64 {
        let n1 = self.n + 1;
        let block = self.prefix[end * n1 + end] - self.prefix[start * n1 + end]
            - self.prefix[end * n1 + start]
            + self.prefix[start * n1 + start];
        let len = (end - start) as f64;
        let c = (self.diag[end] - self.diag[start]) - block / len;
        // Exact-arithmetic scatter is non-negative; clip rounding dust.
        if c < 0.0 && c > -1e-9 {
            0.0
        } else {
            c
        }
    }
}

/// Kernel temporal segmentation: dynamic programming over within-segment
/// scatter costs, with the segment count chosen by a penalized criterion
/// `cost + penalty * m * (ln(F/m) + 1)` over `m` change points.
pub fn kts_segment(
    features: &FrameFeatureSeq,
    max_segments: usize,
    penalty: f64,
) -> Result<Segments> {
    let n = features.num_frames();
    if n == 0 {
        return Err(Error::InvalidInput("kts_segment on empty input".into()));
    }
    if max_segments == 0 || max_segments > n {
        return Err(Error::InvalidInput(format!(
            "max_segments must be in [1, {n}], got {max_segments}"
        )));
    }
    if !(penalty >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "penalty must be >= 0, got {penalty}"
        )));
    }
    let table = ScatterTable::build(features);

    // best[s][e]: minimal cost of splitting [0, e) into s non-empty
    // segments; parent[s][e] is the start of the last segment.
    let smax = max_segments;
    let inf = f64::INFINITY;
    let mut best = vec![vec![inf; n + 1]; smax + 1];
    let mut parent = vec![vec![0usize; n + 1]; smax + 1];
    for e in 1..=n {
        best[1][e] = table.cost(0, e);
    }
    for s in 2..=smax {
        for e in s..=n {
            let mut bc = inf;
            let mut bt = s - 1;
            for t in s - 1..e {
                let prev = best[s - 1][t];
                if !prev.is_finite() {
                    continue;
                }
                let c = prev + table.cost(t, e);
                if c < bc {
                    bc = c;
                    bt = t;
                }
            }
            best[s][e] = bc;
            parent[s][e] = bt;
        }
    }

    let mut chosen = 1usize;
    let mut chosen_total = best[1][n];
    for s in 2..=smax {
        if !best[s][n].is_finite() {
            continue;
        }
        let m = (s - 1) as f64;
        let total = best[s][n] + penalty * m * ((n as f64 / m).ln() + 1.0);
        if total < chosen_total {
            chosen_total = total;
            chosen = s;
        }
    }

    let mut boundaries = vec![n];
    let mut e = n;
    for s in (2..=chosen).rev() {
        e = parent[s][e];
        boundaries.push(e);
    }
    boundaries.push(0);
    boundaries.reverse();
    Segments::new(boundaries)
}

/// Scatter cost of one segment, computed by the same primitive the DP
/// minimizes; exposed so exhaustive searches can price alternative
/// boundary placements with identical arithmetic.
pub fn segment_scatter(features: &FrameFeatureSeq, start: usize, end: usize) -> f64 {
    ScatterTable::build(features).cost(start, end)
}

/// DP cost of the optimal split into exactly `num_segments` segments;
/// exposed so optimality can be checked against exhaustive search.
pub fn kts_cost(features: &FrameFeatureSeq, num_segments: usize) -> Result<f64> {
    let segs = kts_segment_exact(features, num_segments)?;
    let table = ScatterTable::build(features);
    Ok((0..segs.num_segments())
        .map(|i| {
            let (s, e) = segs.bounds(i);
            table.cost(s, e)
        })
        .sum())
}

/// KTS with the number of segments fixed (no penalty search).
pub fn kts_segment_exact(features: &FrameFeatureSeq, num_segments: usize) -> Result<Segments> {
    let n = features.num_frames();
    if num_segments == 0 || num_segments > n {
        return Err(Error::InvalidInput(format!(
            "num_segments must be in [1, {n}], got {num_segments}"
        )));
    }
    let table = ScatterTable::build(features);
    let inf = f64::INFINITY;
    let mut best = vec![vec![inf; n + 1]; num_segments + 1];
    let mut parent = vec![vec![0usize; n + 1]; num_segments + 1];
    for e in 1..=n {
        best[1][e] = table.cost(0, e);
    }
    for s in 2..=num_segments {
        for e in s..=n {
            for t in s - 1..e {
                let c = best[s - 1][t] + table.cost(t, e);
                if c < best[s][e] {
                    best[s][e] = c;
                    parent[s][e] = t;
                }
            }
        }
    }
    let mut boundaries = vec![n];
    let mut e = n;
    for s in (2..=num_segments).rev() {
        e = parent[s][e];
        boundaries.push(e);
    }
    boundaries.push(0);
    boundaries.reverse();
    Segments::new(boundaries)
}

/// Keyframe-driven shot selection: rank segments by keyframe density and
/// greedily take them (earlier segment wins ties) while the budget holds.
/// Segments with no keyframes are never selected; segments that do not fit
/// are skipped, not truncated.
pub fn keyframes_to_keyshots(
    segments: &Segments,
    keyframes: &[usize],
    budget: f64,
) -> Result<Summary> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "budget must be in (0, 1], got {budget}"
        )));
    }
    let f = segments.num_frames();
    if let Some(&bad) = keyframes.iter().find(|&&k| k >= f) {
        return Err(Error::InvalidInput(format!(
            "keyframe index {bad} out of range for {f} frames"
        )));
    }
    let cap = budget_frames(budget, f);
    let m = segments.num_segments();
    let mut counts = vec![0usize; m];
    for &k in keyframes {
        // Boundaries are sorted; the segment of k is the last boundary <= k.
        let i = match segments.boundaries().binary_search(&k) {
            Ok(pos) => pos.min(m - 1),
            Err(pos) => pos - 1,
        };
        counts[i] += 1;
    }
    let mut order: Vec<usize> = (0..m).collect();
    let ratio = |i: usize| {
        let (s, e) = segments.bounds(i);
        counts[i] as f64 / (e - s) as f64
    };
    order.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)).then(a.cmp(&b)));

    let mut taken = Vec::new();
    let mut used = 0usize;
    for i in order {
        if counts[i] == 0 {
            break;
        }
        let (s, e) = segments.bounds(i);
        if used + (e - s) <= cap {
            used += e - s;
            taken.push((s, e));
        }
    }
    taken.sort_unstable();
    Summary::new(f, taken)
}

/// Importance-driven shot selection: exact 0/1 knapsack over segments,
/// maximizing summed importance under the frame budget. Ties resolve in
/// favor of earlier segments.
pub fn importance_to_keyshots(
    scores: &[f32],
    segments: &Segments,
    budget: f64,
) -> Result<Summary> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "budget must be in (0, 1], got {budget}"
        )));
    }
    let f = segments.num_frames();
    if scores.len() != f {
        return Err(Error::shape("importance scores", &[f], &[scores.len()]));
    }
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("importance scores".into()));
    }
    let cap = budget_frames(budget, f);
    let m = segments.num_segments();
    let (lens, vals): (Vec<usize>, Vec<f64>) = (0..m)
        .map(|i| {
            let (s, e) = segments.bounds(i);
            let mean: f64 =
                scores[s..e].iter().map(|&v| v as f64).sum::<f64>() / (e - s) as f64;
            (e - s, mean * (e - s) as f64)
        })
        .unzip();

    // dp[i][w]: best value using segments < i with w frames of budget.
    let mut dp = vec![vec![0.0f64; cap + 1]; m + 1];
    for i in 0..m {
        for w in 0..=cap {
            let skip = dp[i][w];
            let take = if lens[i] <= w {
                dp[i][w - lens[i]] + vals[i]
            } else {
                f64::NEG_INFINITY
            };
            // Strict improvement required to take: equal-value solutions
            // keep the earlier segments.
            dp[i + 1][w] = if take > skip { take } else { skip };
        }
    }
    let mut taken = Vec::new();
    let mut w = cap;
    for i in (0..m).rev() {
        if dp[i + 1][w] != dp[i][w] {
            taken.push(segments.bounds(i));
            w -= lens[i];
        }
    }
    taken.sort_unstable();
    Summary::new(f, taken)
}

fn overlap_frames(a: &Summary, b: &Summary) -> usize {
    let mut total = 0usize;
    for &(s1, e1) in &a.shots {
        for &(s2, e2) in &b.shots {
            let lo = s1.max(s2);
            let hi = e1.min(e2);
            if lo < hi {
                total += hi - lo;
            }
        }
    }
    total
}

/// Frame-overlap F-score of a predicted summary against one or more
/// references, aggregated by mean or max.
pub fn f_score(pred: &Summary, refs: &[Summary], aggregation: Aggregation) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::InvalidInput("f_score needs at least one reference".into()));
    }
    if let Some(r) = refs.iter().find(|r| r.num_frames != pred.num_frames) {
        return Err(Error::shape(
            "f_score frame counts",
            &[pred.num_frames],
            &[r.num_frames],
        ));
    }
    let scores = refs.iter().map(|r| {
        let ov = overlap_frames(pred, r) as f64;
        let p_len = pred.total_selected() as f64;
        let r_len = r.total_selected() as f64;
        if p_len == 0.0 || r_len == 0.0 {
            return 0.0;
        }
        let p = ov / p_len;
        let rc = ov / r_len;
        if p + rc == 0.0 {
            0.0
        } else {
            2.0 * p * rc / (p + rc)
        }
    });
    Ok(match aggregation {
        Aggregation::Mean => {
            let (sum, n) = scores.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            sum / n as f64
        }
        Aggregation::Max => scores.fold(0.0f64, f64::max),
    })
}

//! Temporal reduction: adjacent-frame similarity, merge indicators, and
//! merging of redundant tokens along the time axis at fixed patch position.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{TokenIndex, TokenTensor};

/// Norm below which a vector is treated as zero by the cosine metric.
pub const ZERO_NORM: f64 = 1e-12;

/// Cosine threshold that no pair can exceed; selects "never merge".
pub const COSINE_NO_MERGE: f64 = 1.0 + f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMetric {
    /// Summed absolute difference; merge when below the threshold.
    SummationL1,
    /// Cosine similarity; merge when above the threshold.
    Cosine,
}

impl TemporalMetric {
    pub fn name(self) -> &'static str {
        match self {
            TemporalMetric::SummationL1 => "summation_l1",
            TemporalMetric::Cosine => "cosine",
        }
    }

    /// Metric value between two equal-length vectors, unchecked.
    fn eval(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            TemporalMetric::SummationL1 => l1_unchecked(a, b),
            TemporalMetric::Cosine => cosine_unchecked(a, b),
        }
    }

    fn merges(self, value: f64, threshold: f64) -> bool {
        match self {
            TemporalMetric::SummationL1 => value < threshold,
            TemporalMetric::Cosine => value > threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub metric: TemporalMetric,
}

impl Threshold {
    pub fn new(metric: TemporalMetric, value: f64) -> Result<Self> {
        let ok = value.is_finite()
            && match metric {
                TemporalMetric::SummationL1 => value >= 0.0,
                // sentinels just outside [-1, 1] select never/always merge
                TemporalMetric::Cosine => (-1.0 - 1e-9..=1.0 + 1e-9).contains(&value),
            };
        if !ok {
            return Err(Error::InvalidThreshold(format!(
                "{value} is not a valid {} threshold",
                metric.name()
            )));
        }
        Ok(Self { value, metric })
    }

    pub fn l1(value: f64) -> Result<Self> {
        Self::new(TemporalMetric::SummationL1, value)
    }

    pub fn cosine(value: f64) -> Result<Self> {
        Self::new(TemporalMetric::Cosine, value)
    }

    /// A threshold under which no pair merges.
    pub fn no_merge(metric: TemporalMetric) -> Self {
        let value = match metric {
            TemporalMetric::SummationL1 => 0.0,
            TemporalMetric::Cosine => COSINE_NO_MERGE,
        };
        Self { value, metric }
    }
}

fn check_dims(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn l1_unchecked(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .sum()
}

fn cosine_unchecked(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Sum of elementwise absolute differences.
pub fn l1_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(l1_unchecked(a, b))
}

/// Cosine similarity, clamped to `[-1, 1]`; zero when either norm is below
/// [`ZERO_NORM`].
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(cosine_unchecked(a, b))
}

/// Metric between every token and the token at the same patch in the previous
/// frame. Entry `(i - 1) * n_patches + p` holds the value for frame `i >= 1`.
pub fn temporal_metrics(tensor: &TokenTensor, metric: TemporalMetric) -> Vec<f64> {
    let n_patches = tensor.n_patches();
    let pairs = (tensor.n_frames() - 1) * n_patches;
    (0..pairs)
        .into_par_iter()
        .map(|k| {
            let (frame, patch) = (k / n_patches + 1, k % n_patches);
            metric.eval(tensor.token(frame, patch), tensor.token(frame - 1, patch))
        })
        .collect()
}

/// Merge decisions and the resulting group roots for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MergePlan {
    n_frames: usize,
    n_patches: usize,
    indicators: Vec<bool>,
    roots: Vec<TokenIndex>,
    threshold: Threshold,
}

impl MergePlan {
    /// Build a plan from an indicator matrix of shape `(n_frames - 1) x n_patches`.
    pub fn from_indicators(
        n_frames: usize,
        n_patches: usize,
        indicators: Vec<bool>,
        threshold: Threshold,
    ) -> Result<Self> {
        if indicators.len() != n_frames.saturating_sub(1) * n_patches {
            return Err(Error::PlanMismatch(format!(
                "{} indicators for {n_frames}x{n_patches}",
                indicators.len()
            )));
        }
        let mut roots = Vec::with_capacity(n_frames * n_patches);
        roots.extend((0..n_patches).map(|p| TokenIndex::new(0, p)));
        for i in 1..n_frames {
            for p in 0..n_patches {
                let root = if indicators[(i - 1) * n_patches + p] {
                    roots[(i - 1) * n_patches + p]
                } else {
                    TokenIndex::new(i, p)
                };
                roots.push(root);
            }
        }
        Ok(Self {
            n_frames,
            n_patches,
            indicators,
            roots,
            threshold,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn threshold(&self) -> Threshold {
        self.threshold
    }

    /// Row-major `(n_frames - 1) x n_patches` indicator matrix.
    pub fn indicators(&self) -> &[bool] {
        &self.indicators
    }

    /// `M_{frame, patch}`; `None` for frame 0, which has no predecessor.
    pub fn indicator(&self, frame: usize, patch: usize) -> Option<bool> {
        (frame >= 1).then(|| self.indicators[(frame - 1) * self.n_patches + patch])
    }

    pub fn root(&self, ix: TokenIndex) -> TokenIndex {
        self.roots[ix.frame * self.n_patches + ix.patch]
    }

    /// Group root of every position, row-major.
    pub fn roots(&self) -> &[TokenIndex] {
        &self.roots
    }

    pub fn merge_count(&self) -> usize {
        self.indicators.iter().filter(|&&m| m).count()
    }

    pub fn root_count(&self) -> usize {
        self.n_frames * self.n_patches - self.merge_count()
    }
}

/// Compare each token to the same patch in the previous frame and mark it for
/// merging when the metric passes the threshold (strict inequality).
///
/// A run of consecutive merges forms one chain whose root is its earliest frame.
pub fn merge_indicators(
    tensor: &TokenTensor,
    metric: TemporalMetric,
    threshold: Threshold,
) -> Result<MergePlan> {
    if threshold.metric != metric {
        return Err(Error::MetricMismatch {
            metric: metric.name(),
            threshold: threshold.metric.name(),
        });
    }
    let indicators = temporal_metrics(tensor, metric)
        .into_iter()
        .map(|v| metric.merges(v, threshold.value))
        .collect();
    MergePlan::from_indicators(tensor.n_frames(), tensor.n_patches(), indicators, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeSemantics {
    /// Arithmetic mean of all group members.
    #[default]
    Mean,
    /// The root's original vector.
    KeepFirst,
}

/// One representative per merge group.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedToken {
    pub root: TokenIndex,
    pub vector: Vec<f32>,
    /// Group members in frame order; the first is the root.
    pub members: Vec<TokenIndex>,
}

impl MergedToken {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutput {
    /// Representatives ordered by (root frame, patch).
    pub tokens: Vec<MergedToken>,
    /// Frames holding at least one root, ascending.
    pub kept_frames: Vec<usize>,
}

pub fn apply_merge(
    tensor: &TokenTensor,
    plan: &MergePlan,
    semantics: MergeSemantics,
) -> Result<MergeOutput> {
    if plan.n_frames != tensor.n_frames() || plan.n_patches != tensor.n_patches() {
        return Err(Error::PlanMismatch(format!(
            "plan {}x{} vs tensor {}x{}",
            plan.n_frames,
            plan.n_patches,
            tensor.n_frames(),
            tensor.n_patches()
        )));
    }
    let n_patches = plan.n_patches;
    let mut slot = vec![usize::MAX; plan.roots.len()];
    let mut groups: Vec<(TokenIndex, Vec<TokenIndex>)> = Vec::with_capacity(plan.root_count());
    for (flat, root) in plan.roots.iter().enumerate() {
        let ix = TokenIndex::new(flat / n_patches, flat % n_patches);
        let root_flat = root.frame * n_patches + root.patch;
        if root_flat == flat {
            slot[flat] = groups.len();
            groups.push((ix, vec![ix]));
        } else {
            groups[slot[root_flat]].1.push(ix);
        }
    }

    let tokens: Vec<MergedToken> = groups
        .into_par_iter()
        .map(|(root, members)| {
            let vector = match semantics {
                MergeSemantics::KeepFirst => tensor.at(root).to_vec(),
                MergeSemantics::Mean => mean_of(tensor, &members),
            };
            MergedToken {
                root,
                vector,
                members,
            }
        })
        .collect();

    let mut kept_frames: Vec<usize> = tokens.iter().map(|t| t.root.frame).collect();
    kept_frames.dedup();
    Ok(MergeOutput {
        tokens,
        kept_frames,
    })
}

fn mean_of(tensor: &TokenTensor, members: &[TokenIndex]) -> Vec<f32> {
    if let [only] = members {
        return tensor.at(*only).to_vec();
    }
    let mut acc = vec![0.0f64; tensor.dim()];
    for m in members {
        acc.iter_mut()
            .zip(tensor.at(*m))
            .for_each(|(a, v)| *a += f64::from(*v));
    }
    let n = members.len() as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// Outcome of ratio-targeted threshold selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: Threshold,
    pub target_roots: usize,
    pub achieved_roots: usize,
    /// False when the tensor has a single frame and nothing can merge.
    pub reducible: bool,
}

/// Pick the threshold whose root count is the largest value not above
/// `ceil(total / target_ratio)`.
///
/// Merges at a threshold are exactly the adjacent pairs passing it, so the cut
/// is a quantile of the sorted pair metrics. Ties at the cut all merge
/// together, which may overshoot the merge count.
pub fn calibrate_temporal_threshold(
    tensor: &TokenTensor,
    metric: TemporalMetric,
    target_ratio: f64,
) -> Result<Calibration> {
    if !(target_ratio.is_finite() && target_ratio >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "temporal target ratio {target_ratio} must be >= 1"
        )));
    }
    let total = tensor.len();
    if tensor.n_frames() == 1 {
        return Ok(Calibration {
            threshold: Threshold::no_merge(metric),
            target_roots: total,
            achieved_roots: total,
            reducible: false,
        });
    }
    let max = tensor.n_frames() as f64;
    if target_ratio > max * (1.0 + 1e-12) {
        return Err(Error::ImpossibleTarget {
            ratio: target_ratio,
            max,
        });
    }
    let target_roots = ceil_div_ratio(total, target_ratio).max(tensor.n_patches());
    let needed = total - target_roots;

    let mut values = temporal_metrics(tensor, metric);
    let threshold = if needed == 0 {
        Threshold::no_merge(metric)
    } else {
        match metric {
            TemporalMetric::SummationL1 => {
                values.sort_unstable_by(f64::total_cmp);
                let cut = values[needed - 1];
                let above = values.partition_point(|&v| v <= cut);
                let value = values.get(above).copied().unwrap_or_else(|| cut.next_up());
                Threshold::l1(value)?
            }
            TemporalMetric::Cosine => {
                values.sort_unstable_by(|a, b| b.total_cmp(a));
                let cut = values[needed - 1];
                let below = values.partition_point(|&v| v >= cut);
                let value = values
                    .get(below)
                    .copied()
                    .unwrap_or_else(|| cut.next_down());
                Threshold::cosine(value)?
            }
        }
    };
    let merged = temporal_metrics(tensor, metric)
        .into_iter()
        .filter(|&v| metric.merges(v, threshold.value))
        .count();
    Ok(Calibration {
        threshold,
        target_roots,
        achieved_roots: total - merged,
        reducible: true,
    })
}

/// `ceil(total / ratio)`, tolerant of ratios like `sqrt(16)` that land a hair
/// off an exact divisor.
pub(crate) fn ceil_div_ratio(total: usize, ratio: f64) -> usize {
    let exact = total as f64 / ratio;
    ((exact - 1e-9 * exact.max(1.0)).ceil() as usize).max(1)
}

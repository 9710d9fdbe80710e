//! Spatial reduction: text- or topic-conditioned relevance scoring and
//! per-frame top-K retention.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::ZERO_NORM;
use crate::tensor::{TextTokens, TokenIndex, TokenTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Dot,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Relevance summed over the text prompt tokens.
    Text,
    /// Cosine similarity with the frame's [CLS] token.
    Topic,
}

/// How many tokens each frame keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepRule {
    /// Prune fraction `r_p` in `[0, 1)`; keeps `ceil((1 - r_p) * n)`, at least 1.
    Prune(f64),
    /// Fixed count per frame, capped at the frame's token count.
    Fixed(usize),
}

impl KeepRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KeepRule::Prune(r) if !(0.0..1.0).contains(&r) => Err(Error::InvalidConfig(format!(
                "spatial prune ratio {r} outside [0, 1)"
            ))),
            KeepRule::Fixed(0) => Err(Error::InvalidConfig("spatial k must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn kept(&self, n: usize) -> usize {
        match *self {
            KeepRule::Prune(r) => kept_count(n, r),
            KeepRule::Fixed(k) => k.min(n),
        }
    }
}

/// `ceil((1 - r_p) * n)` clamped to `[1, n]`.
pub fn kept_count(n: usize, prune: f64) -> usize {
    let exact = (1.0 - prune) * n as f64;
    let k = (exact - 1e-9 * exact.max(1.0)).ceil() as usize;
    k.clamp(1, n.max(1))
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dim(token: &[f32], dim: usize) -> Result<()> {
    if token.len() != dim {
        return Err(Error::DimMismatch {
            left: token.len(),
            right: dim,
        });
    }
    Ok(())
}

/// `R_p = sum_l phi(z_p, t_l)` over the (optionally masked) text tokens.
///
/// Both kernels are linear in the summed text side, so the text is reduced to
/// one direction first: the plain sum for `Dot`, the sum of unit vectors for
/// `Cosine`. Zero-norm vectors contribute 0 under `Cosine`.
pub fn text_relevance<V: AsRef<[f32]>>(
    tokens: &[V],
    text: &TextTokens,
    kernel: Kernel,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let dim = text.dim();
    if let Some(m) = mask {
        if m.len() != text.len() {
            return Err(Error::Shape(format!(
                "text mask has {} entries for {} text tokens",
                m.len(),
                text.len()
            )));
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::EmptyText);
        }
    }
    let mut direction = vec![0.0f64; dim];
    for (l, t) in text.iter().enumerate() {
        if mask.is_some_and(|m| !m[l]) {
            continue;
        }
        let scale = match kernel {
            Kernel::Dot => 1.0,
            Kernel::Cosine => {
                let n = norm(t);
                if n < ZERO_NORM {
                    continue;
                }
                1.0 / n
            }
        };
        direction
            .iter_mut()
            .zip(t)
            .for_each(|(d, v)| *d += f64::from(*v) * scale);
    }
    tokens
        .iter()
        .map(|z| {
            let z = z.as_ref();
            check_dim(z, dim)?;
            let s: f64 = z
                .iter()
                .zip(&direction)
                .map(|(a, d)| f64::from(*a) * d)
                .sum();
            Ok(match kernel {
                Kernel::Dot => s,
                Kernel::Cosine => {
                    let n = norm(z);
                    if n < ZERO_NORM {
                        0.0
                    } else {
                        s / n
                    }
                }
            })
        })
        .collect()
}

/// Cosine similarity of each token with the frame's [CLS] vector; all zeros
/// when the [CLS] vector has zero norm.
pub fn topic_relevance<V: AsRef<[f32]>>(tokens: &[V], cls: &[f32]) -> Result<Vec<f64>> {
    let cls_norm = norm(cls);
    tokens
        .iter()
        .map(|z| {
            let z = z.as_ref();
            check_dim(z, cls.len())?;
            let n = norm(z);
            if cls_norm < ZERO_NORM || n < ZERO_NORM {
                return Ok(0.0);
            }
            Ok((dot(z, cls) / (n * cls_norm)).clamp(-1.0, 1.0))
        })
        .collect()
}

/// Indices of the `k` largest scores, ties broken toward the lower index,
/// returned in ascending index order.
pub fn top_k_select(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < n {
        order.select_nth_unstable_by(k - 1, rank);
        order.truncate(k);
    }
    order.sort_unstable();
    Ok(order)
}

/// Candidate tokens of one frame, in ascending patch order.
#[derive(Debug, Clone)]
pub struct FrameTokens<'a> {
    pub frame: usize,
    pub positions: Vec<TokenIndex>,
    pub vectors: Vec<&'a [f32]>,
    pub cls: Option<&'a [f32]>,
}

impl<'a> FrameTokens<'a> {
    /// Split a tensor into per-frame candidates; the [CLS] slot, when present,
    /// is carried separately and never a candidate.
    pub fn from_tensor(tensor: &'a TokenTensor) -> Vec<FrameTokens<'a>> {
        let first = tensor.first_content_patch();
        (0..tensor.n_frames())
            .map(|f| FrameTokens {
                frame: f,
                positions: (first..tensor.n_patches())
                    .map(|p| TokenIndex::new(f, p))
                    .collect(),
                vectors: (first..tensor.n_patches())
                    .map(|p| tensor.token(f, p))
                    .collect(),
                cls: tensor.cls(f),
            })
            .collect()
    }
}

/// Scoring inputs shared by all frames.
#[derive(Debug, Clone, Copy)]
pub struct Scoring<'a> {
    pub strategy: Strategy,
    pub kernel: Kernel,
    pub text: Option<&'a TextTokens>,
    pub text_mask: Option<&'a [bool]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceScores {
    pub strategy: Strategy,
    pub kernel: Kernel,
    /// One score vector per frame, aligned with that frame's candidates.
    pub per_frame: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSelection {
    pub frame: usize,
    /// Offsets into the frame's candidate list, ascending.
    pub offsets: Vec<usize>,
    /// Retained positions, ascending by patch.
    pub kept: Vec<TokenIndex>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub frames: Vec<FrameSelection>,
}

impl SelectionResult {
    pub fn kept_counts(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.kept.len()).collect()
    }

    pub fn total_kept(&self) -> usize {
        self.frames.iter().map(|f| f.kept.len()).sum()
    }
}

pub fn score_frames(frames: &[FrameTokens<'_>], scoring: &Scoring<'_>) -> Result<RelevanceScores> {
    let text = match scoring.strategy {
        Strategy::Text => Some(scoring.text.ok_or(Error::MissingText)?),
        Strategy::Topic => None,
    };
    let per_frame = frames
        .par_iter()
        .map(|f| match text {
            Some(text) => text_relevance(&f.vectors, text, scoring.kernel, scoring.text_mask),
            None => topic_relevance(&f.vectors, f.cls.ok_or(Error::MissingCls)?),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelevanceScores {
        strategy: scoring.strategy,
        kernel: scoring.kernel,
        per_frame,
    })
}

/// Score and keep the top tokens of every frame independently.
pub fn spatial_select(
    frames: &[FrameTokens<'_>],
    scoring: &Scoring<'_>,
    rule: KeepRule,
) -> Result<SelectionResult> {
    rule.validate()?;
    if let Some(f) = frames.iter().find(|f| f.vectors.is_empty()) {
        return Err(Error::Shape(format!(
            "frame {} has no candidate tokens",
            f.frame
        )));
    }
    let scores = score_frames(frames, scoring)?;
    let frames = frames
        .par_iter()
        .zip(scores.per_frame.par_iter())
        .map(|(f, s)| {
            let offsets = top_k_select(s, rule.kept(s.len()))?;
            let kept = offsets.iter().map(|&o| f.positions[o]).collect();
            Ok(FrameSelection {
                frame: f.frame,
                offsets,
                kept,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionResult { frames })
}

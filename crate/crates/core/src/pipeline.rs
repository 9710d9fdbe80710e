//! Two-stage compression: temporal merging, then per-frame spatial selection
//! over the surviving representatives.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{spatial_select, FrameTokens, KeepRule, Kernel, Scoring, Strategy};
use crate::temporal::{
    apply_merge, calibrate_temporal_threshold, merge_indicators, MergeSemantics, MergedToken,
    TemporalMetric, Threshold,
};
use crate::tensor::{TextTokens, TokenIndex, TokenTensor};

pub const INDEX_MAP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    #[default]
    Off,
    /// Stage target derived from `overall_ratio`.
    Auto,
    /// Calibrate the threshold to reach this reduction factor (>= 1).
    Ratio(f64),
    /// Fixed threshold value for the configured metric.
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub metric: TemporalMetric,
    pub mode: TemporalMode,
    pub merge: MergeSemantics,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            metric: TemporalMetric::Cosine,
            mode: TemporalMode::Off,
            merge: MergeSemantics::Mean,
        }
    }
}

impl TemporalConfig {
    pub fn enabled(&self) -> bool {
        self.mode != TemporalMode::Off
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialMode {
    /// Stage target derived from `overall_ratio`.
    #[default]
    Auto,
    /// Prune fraction `r_p` in `[0, 1)`, kept count proportional per frame.
    Prune(f64),
    /// Fixed number of tokens kept per frame.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpatialConfig {
    /// `None` disables the spatial stage.
    pub strategy: Option<Strategy>,
    pub mode: SpatialMode,
    pub kernel: Kernel,
    /// Which text tokens count toward relevance; all when absent.
    pub text_mask: Option<Vec<bool>>,
}

impl SpatialConfig {
    pub fn enabled(&self) -> bool {
        self.strategy.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReductionConfig {
    pub temporal: TemporalConfig,
    pub spatial: SpatialConfig,
    /// Combined reduction factor split across the enabled stages.
    pub overall_ratio: Option<f64>,
    /// Forward each retained frame's [CLS] token ahead of its patches.
    pub keep_cls: bool,
}

impl ReductionConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidConfig(m));
        match self.temporal.mode {
            TemporalMode::Ratio(r) if !(r.is_finite() && r >= 1.0) => {
                return invalid(format!("temporal ratio {r} must be >= 1"));
            }
            TemporalMode::Threshold(v) => {
                Threshold::new(self.temporal.metric, v)?;
            }
            _ => {}
        }
        if self.spatial.enabled() {
            match self.spatial.mode {
                SpatialMode::Prune(r) => KeepRule::Prune(r).validate()?,
                SpatialMode::Fixed(k) => KeepRule::Fixed(k).validate()?,
                SpatialMode::Auto => {}
            }
        }
        let temporal_auto = self.temporal.mode == TemporalMode::Auto;
        let spatial_auto = self.spatial.enabled() && self.spatial.mode == SpatialMode::Auto;
        match self.overall_ratio {
            Some(r) => {
                if !(r.is_finite() && r >= 1.0) {
                    return invalid(format!("overall ratio {r} must be >= 1"));
                }
                let temporal_explicit = self.temporal.enabled() && !temporal_auto;
                let spatial_explicit = self.spatial.enabled() && !spatial_auto;
                if temporal_explicit || spatial_explicit {
                    return Err(Error::ConfigConflict(
                        "overall_ratio cannot be combined with explicit stage ratios, thresholds or k"
                            .into(),
                    ));
                }
                if !self.temporal.enabled() && !self.spatial.enabled() && r > 1.0 {
                    return Err(Error::ConfigConflict(
                        "overall_ratio set but both stages are off".into(),
                    ));
                }
            }
            None => {
                if temporal_auto || spatial_auto {
                    return Err(Error::ConfigConflict(
                        "stage mode auto needs overall_ratio".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Concrete temporal stage target after ratio resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalTarget {
    Ratio(f64),
    Threshold(Threshold),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub temporal: Option<TemporalTarget>,
    pub spatial: Option<KeepRule>,
}

/// Turn the user-facing config into per-stage targets for a tensor with
/// `n_frames` frames of `n_patches` content tokens.
///
/// An overall ratio `rho` is split as `sqrt(rho)` per stage when both run. The
/// temporal share is capped at `n_frames`; the spatial stage absorbs the rest.
pub fn resolve_ratios(
    config: &ReductionConfig,
    n_frames: usize,
    n_patches: usize,
) -> Result<StagePlan> {
    config.validate()?;
    let positions = n_frames * n_patches;
    let prune = |s: f64| KeepRule::Prune(1.0 - 1.0 / s);

    let Some(rho) = config.overall_ratio else {
        let temporal = match config.temporal.mode {
            TemporalMode::Off | TemporalMode::Auto => None,
            TemporalMode::Ratio(r) => Some(TemporalTarget::Ratio(r)),
            TemporalMode::Threshold(v) => Some(TemporalTarget::Threshold(Threshold::new(
                config.temporal.metric,
                v,
            )?)),
        };
        let spatial = config.spatial.enabled().then(|| match config.spatial.mode {
            SpatialMode::Prune(r) => KeepRule::Prune(r),
            SpatialMode::Fixed(k) => KeepRule::Fixed(k),
            SpatialMode::Auto => unreachable!("validated"),
        });
        return Ok(StagePlan { temporal, spatial });
    };

    if rho > positions as f64 {
        return Err(Error::ImpossibleRatio {
            ratio: rho,
            positions,
        });
    }
    let (t, s) = match (config.temporal.enabled(), config.spatial.enabled()) {
        (true, true) => {
            let t = rho.sqrt().min(n_frames as f64);
            (Some(t), Some(rho / t))
        }
        (true, false) => {
            if rho > n_frames as f64 {
                return Err(Error::ImpossibleRatio {
                    ratio: rho,
                    positions: n_frames,
                });
            }
            (Some(rho), None)
        }
        (false, true) => {
            if rho > n_patches as f64 {
                return Err(Error::ImpossibleRatio {
                    ratio: rho,
                    positions: n_patches,
                });
            }
            (None, Some(rho))
        }
        (false, false) => (None, None),
    };
    Ok(StagePlan {
        temporal: t.map(TemporalTarget::Ratio),
        spatial: s.map(prune),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsUsed {
    pub temporal_metric: Option<TemporalMetric>,
    pub temporal_threshold: Option<f64>,
    pub temporal_ratio: Option<f64>,
    pub spatial_rule: Option<KeepRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub input_count: usize,
    pub output_count: usize,
    pub achieved_ratio: f64,
    pub temporal_merges: usize,
    pub spatial_dropped: usize,
    pub cls_dropped: usize,
    pub kept_frames: Vec<usize>,
    pub thresholds_used: ThresholdsUsed,
}

/// Compressed token prefix with provenance back to input positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedResult {
    pub dim: usize,
    /// Output tokens ordered by (root frame, patch).
    pub tokens: Vec<Vec<f32>>,
    /// Contributing input positions of each output token, in frame order.
    pub provenance: Vec<Vec<TokenIndex>>,
    /// Input positions absent from every provenance list, ascending.
    pub dropped: Vec<TokenIndex>,
    pub stats: CompressionStats,
}

impl CompressedResult {
    pub fn flat_tokens(&self) -> Vec<f32> {
        self.tokens.concat()
    }
}

/// Merge temporally redundant tokens, then keep the most relevant
/// representatives of each surviving frame.
pub fn joint_compress(
    tensor: &TokenTensor,
    text: Option<&TextTokens>,
    config: &ReductionConfig,
) -> Result<CompressedResult> {
    config.validate()?;
    match config.spatial.strategy {
        Some(Strategy::Text) => {
            let text = text.ok_or(Error::MissingText)?;
            if text.dim() != tensor.dim() {
                return Err(Error::DimMismatch {
                    left: tensor.dim(),
                    right: text.dim(),
                });
            }
        }
        Some(Strategy::Topic) if !tensor.has_cls() => return Err(Error::MissingCls),
        _ => {}
    }

    let offset = tensor.first_content_patch();
    let content: Cow<'_, TokenTensor> = if tensor.has_cls() {
        Cow::Owned(tensor.without_cls())
    } else {
        Cow::Borrowed(tensor)
    };
    let plan = resolve_ratios(config, content.n_frames(), content.n_patches())?;
    let shift = |ix: TokenIndex| TokenIndex::new(ix.frame, ix.patch + offset);

    // temporal stage
    let mut thresholds = ThresholdsUsed {
        temporal_metric: None,
        temporal_threshold: None,
        temporal_ratio: None,
        spatial_rule: plan.spatial,
    };
    let merged: Vec<MergedToken> = match plan.temporal {
        None => (0..content.n_frames())
            .flat_map(|f| (0..content.n_patches()).map(move |p| TokenIndex::new(f, p)))
            .map(|ix| MergedToken {
                root: ix,
                vector: content.at(ix).to_vec(),
                members: vec![ix],
            })
            .collect(),
        Some(target) => {
            let metric = config.temporal.metric;
            let threshold = match target {
                TemporalTarget::Threshold(t) => t,
                TemporalTarget::Ratio(r) => {
                    thresholds.temporal_ratio = Some(r);
                    calibrate_temporal_threshold(&content, metric, r)?.threshold
                }
            };
            thresholds.temporal_metric = Some(metric);
            thresholds.temporal_threshold = Some(threshold.value);
            let plan = merge_indicators(&content, metric, threshold)?;
            apply_merge(&content, &plan, config.temporal.merge)?.tokens
        }
    };
    let temporal_merges = content.len() - merged.len();

    // spatial stage over each retained frame's representatives
    let mut frames: Vec<FrameTokens<'_>> = Vec::new();
    for (slot, tok) in merged.iter().enumerate() {
        let frame = tok.root.frame;
        if frames.last().is_none_or(|f| f.frame != frame) {
            frames.push(FrameTokens {
                frame,
                positions: Vec::new(),
                vectors: Vec::new(),
                cls: tensor.cls(frame),
            });
        }
        let f = frames.last_mut().expect("pushed above");
        // position holds the slot into `merged` so selections map back directly
        f.positions.push(TokenIndex::new(frame, slot));
        f.vectors.push(&tok.vector);
    }
    let mut selected = vec![config.spatial.strategy.is_none(); merged.len()];
    if let (Some(strategy), Some(rule)) = (config.spatial.strategy, plan.spatial) {
        let scoring = Scoring {
            strategy,
            kernel: config.spatial.kernel,
            text,
            text_mask: config.spatial.text_mask.as_deref(),
        };
        let selection = spatial_select(&frames, &scoring, rule)?;
        for ix in selection.frames.iter().flat_map(|f| &f.kept) {
            selected[ix.patch] = true;
        }
    }
    let kept_frames: Vec<usize> = frames.iter().map(|f| f.frame).collect();

    let mut tokens = Vec::new();
    let mut provenance = Vec::new();
    let mut dropped = Vec::new();
    let mut spatial_dropped = 0;
    let mut cls_dropped = 0;
    let emit_cls = |frame: usize, tokens: &mut Vec<Vec<f32>>, provenance: &mut Vec<_>| {
        if let Some(cls) = tensor.cls(frame) {
            if config.keep_cls {
                tokens.push(cls.to_vec());
                provenance.push(vec![TokenIndex::new(frame, 0)]);
            }
        }
    };
    let mut current_frame = None;
    for (tok, keep) in merged.into_iter().zip(selected) {
        let frame = tok.root.frame;
        if current_frame != Some(frame) {
            current_frame = Some(frame);
            emit_cls(frame, &mut tokens, &mut provenance);
        }
        let members: Vec<TokenIndex> = tok.members.into_iter().map(shift).collect();
        if keep {
            tokens.push(tok.vector);
            provenance.push(members);
        } else {
            spatial_dropped += 1;
            dropped.extend(members);
        }
    }
    if tensor.has_cls() {
        for f in 0..tensor.n_frames() {
            let kept = config.keep_cls && kept_frames.binary_search(&f).is_ok();
            if !kept {
                cls_dropped += 1;
                dropped.push(TokenIndex::new(f, 0));
            }
        }
    }
    dropped.sort_unstable();

    let input_count = tensor.len();
    let output_count = tokens.len();
    Ok(CompressedResult {
        dim: tensor.dim(),
        tokens,
        provenance,
        dropped,
        stats: CompressionStats {
            input_count,
            output_count,
            achieved_ratio: input_count as f64 / output_count as f64,
            temporal_merges,
            spatial_dropped,
            cls_dropped,
            kept_frames,
            thresholds_used: thresholds,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub out: usize,
    pub members: Vec<TokenIndex>,
}

/// Serializable provenance map, one entry per output token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMap {
    pub version: u32,
    pub stats: CompressionStats,
    pub tokens: Vec<IndexEntry>,
}

impl IndexMap {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn build_index_map(result: &CompressedResult) -> IndexMap {
    IndexMap {
        version: INDEX_MAP_VERSION,
        stats: result.stats.clone(),
        tokens: result
            .provenance
            .iter()
            .enumerate()
            .map(|(out, members)| IndexEntry {
                out,
                members: members.clone(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gen_synthetic, SyntheticSpec};
    use crate::tensor::ClsPolicy;

    fn both(rho: f64) -> ReductionConfig {
        ReductionConfig {
            temporal: TemporalConfig {
                mode: TemporalMode::Auto,
                ..Default::default()
            },
            spatial: SpatialConfig {
                strategy: Some(Strategy::Text),
                ..Default::default()
            },
            overall_ratio: Some(rho),
            keep_cls: false,
        }
    }

    #[test]
    fn balanced_split() {
        let p = resolve_ratios(&both(16.0), 8, 256).unwrap();
        assert_eq!(p.temporal, Some(TemporalTarget::Ratio(4.0)));
        assert_eq!(p.spatial, Some(KeepRule::Prune(0.75)));
    }

    #[test]
    fn temporal_share_clamped_to_frames() {
        let p = resolve_ratios(&both(16.0), 2, 256).unwrap();
        assert_eq!(p.temporal, Some(TemporalTarget::Ratio(2.0)));
        assert_eq!(p.spatial, Some(KeepRule::Prune(0.875)));
    }

    #[test]
    fn unit_ratio_is_identity_split() {
        let p = resolve_ratios(&both(1.0), 8, 256).unwrap();
        assert_eq!(p.temporal, Some(TemporalTarget::Ratio(1.0)));
        assert_eq!(p.spatial, Some(KeepRule::Prune(0.0)));
    }

    #[test]
    fn ratio_beyond_positions_is_impossible() {
        assert!(matches!(
            resolve_ratios(&both(2049.0), 8, 256),
            Err(Error::ImpossibleRatio { .. })
        ));
    }

    #[test]
    fn conflicting_config() {
        let mut c = both(4.0);
        c.temporal.mode = TemporalMode::Ratio(2.0);
        assert!(matches!(c.validate(), Err(Error::ConfigConflict(_))));
        let mut c = ReductionConfig::default();
        c.temporal.mode = TemporalMode::Auto;
        assert!(matches!(c.validate(), Err(Error::ConfigConflict(_))));
        let c = ReductionConfig {
            overall_ratio: Some(2.0),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::ConfigConflict(_))));
    }

    #[test]
    fn identity_when_both_off() {
        let (t, _) = gen_synthetic(&SyntheticSpec::new(2, 5, 3, 1)).unwrap();
        let r = joint_compress(&t, None, &ReductionConfig::default()).unwrap();
        assert_eq!(r.flat_tokens(), t.as_slice());
        assert!(r.provenance.iter().all(|p| p.len() == 1));
        assert_eq!(r.stats.output_count, 10);
        assert_eq!(r.stats.achieved_ratio, 1.0);
    }

    #[test]
    fn missing_text_is_error() {
        let (t, _) = gen_synthetic(&SyntheticSpec::new(2, 5, 3, 1)).unwrap();
        let mut c = ReductionConfig::default();
        c.spatial.strategy = Some(Strategy::Text);
        c.spatial.mode = SpatialMode::Prune(0.5);
        assert!(matches!(
            joint_compress(&t, None, &c),
            Err(Error::MissingText)
        ));
    }

    #[test]
    fn duplicate_frames_collapse_fully() {
        let frame: Vec<f32> = (0..12).map(|v| (v as f32).sin() + 0.1).collect();
        let data = frame.repeat(5);
        let t = TokenTensor::new(5, 4, 3, data, ClsPolicy::None).unwrap();
        let mut c = ReductionConfig::default();
        c.temporal.mode = TemporalMode::Threshold(0.999);
        let r = joint_compress(&t, None, &c).unwrap();
        assert_eq!(r.stats.output_count, 4);
        assert!(r.provenance.iter().all(|p| p.len() == 5));
        let map = build_index_map(&r);
        assert!(map.tokens.iter().all(|e| e.members.len() == 5));
    }

    #[test]
    fn sixteen_x_on_synthetic() {
        let (t, text) = gen_synthetic(&SyntheticSpec::new(8, 256, 64, 7)).unwrap();
        let mut c = both(16.0);
        c.temporal.metric = TemporalMetric::Cosine;
        let r = joint_compress(&t, Some(&text), &c).unwrap();
        assert!(
            (14.0..=18.0).contains(&r.stats.achieved_ratio),
            "{}",
            r.stats.achieved_ratio
        );
    }

    #[test]
    fn cls_forwarding_and_accounting() {
        let spec = SyntheticSpec::new(3, 9, 4, 2).cls(true);
        let (t, _) = gen_synthetic(&spec).unwrap();
        let mut c = ReductionConfig::default();
        c.spatial.strategy = Some(Strategy::Topic);
        c.spatial.mode = SpatialMode::Fixed(2);
        let dropped = joint_compress(&t, None, &c).unwrap();
        assert_eq!(dropped.stats.output_count, 6);
        assert_eq!(dropped.stats.cls_dropped, 3);
        c.keep_cls = true;
        let kept = joint_compress(&t, None, &c).unwrap();
        assert_eq!(kept.stats.output_count, 9);
        assert_eq!(kept.provenance[0], vec![TokenIndex::new(0, 0)]);
        assert_eq!(kept.provenance[3], vec![TokenIndex::new(1, 0)]);
        assert_eq!(kept.stats.cls_dropped, 0);
    }

    #[test]
    fn index_map_identity_1x2x2() {
        let t = TokenTensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0], ClsPolicy::None).unwrap();
        let r = joint_compress(&t, None, &ReductionConfig::default()).unwrap();
        let map = build_index_map(&r);
        assert_eq!(map.tokens.len(), 2);
        assert_eq!(map.tokens[1].members, vec![TokenIndex::new(0, 1)]);
        let json: serde_json::Value = serde_json::from_str(&map.to_json().unwrap()).unwrap();
        assert_eq!(json["version"], 1);
        assert_eq!(json["tokens"][1]["members"], serde_json::json!([[0, 1]]));
    }
}

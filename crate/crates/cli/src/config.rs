use std::path::PathBuf;

use clap::{Args, ValueEnum};
use vtrim_core::pipeline::{
    ReductionConfig, SpatialConfig, SpatialMode, TemporalConfig, TemporalMode,
};
use vtrim_core::spatial::{Kernel, Strategy};
use vtrim_core::temporal::{MergeSemantics, TemporalMetric};

use crate::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TemporalArg {
    Off,
    /// Cosine similarity between adjacent frames.
    Cs,
    /// Summed absolute (L1) difference between adjacent frames.
    Sd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpatialArg {
    Off,
    Text,
    Topic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MergeArg {
    Mean,
    KeepFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Dot,
    Cosine,
}

/// Reduction flags shared by `compress` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct ReductionArgs {
    /// Visual tokens (LFT).
    #[arg(long)]
    pub input: PathBuf,

    /// Text prompt tokens (LFT), required with `--spatial text`.
    #[arg(long)]
    pub text: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "off")]
    pub temporal: TemporalArg,

    /// Temporal reduction factor; the threshold is calibrated to reach it.
    #[arg(long, conflicts_with = "temporal_threshold")]
    pub temporal_ratio: Option<f64>,

    /// Fixed temporal threshold (tau1 for sd, tau2 for cs).
    #[arg(long)]
    pub temporal_threshold: Option<f64>,

    #[arg(long, value_enum, default_value = "mean")]
    pub merge: MergeArg,

    #[arg(long, value_enum, default_value = "off")]
    pub spatial: SpatialArg,

    /// Spatial reduction factor per frame; keeps ceil(n / factor) tokens.
    #[arg(long, conflicts_with = "spatial_k")]
    pub spatial_ratio: Option<f64>,

    /// Fixed number of tokens kept per frame.
    #[arg(long)]
    pub spatial_k: Option<usize>,

    #[arg(long, value_enum, default_value = "dot")]
    pub kernel: KernelArg,

    /// Comma-separated 0/1 flags selecting which text tokens are scored.
    #[arg(long, value_delimiter = ',')]
    pub text_mask: Option<Vec<u8>>,

    /// Overall reduction factor, split evenly across the enabled stages.
    #[arg(long)]
    pub ratio: Option<f64>,

    /// Forward each retained frame's [CLS] token.
    #[arg(long)]
    pub keep_cls: bool,
}

impl ReductionArgs {
    /// Build the pipeline config from flags. Missing or meaningless flag
    /// combinations are usage errors; range checks are left to the pipeline.
    pub fn to_config(&self) -> Result<ReductionConfig, Usage> {
        let overall = self.ratio.is_some();
        let metric = match self.temporal {
            TemporalArg::Cs | TemporalArg::Off => TemporalMetric::Cosine,
            TemporalArg::Sd => TemporalMetric::SummationL1,
        };
        let temporal_mode = match (self.temporal, self.temporal_ratio, self.temporal_threshold) {
            (TemporalArg::Off, None, None) => TemporalMode::Off,
            (TemporalArg::Off, _, _) => {
                return Err(Usage::new(
                    "--temporal-ratio/--temporal-threshold need --temporal cs|sd",
                ))
            }
            (_, Some(r), _) => TemporalMode::Ratio(r),
            (_, None, Some(v)) => TemporalMode::Threshold(v),
            (_, None, None) if overall => TemporalMode::Auto,
            (_, None, None) => {
                return Err(Usage::new(
                    "--temporal cs|sd needs --temporal-ratio, --temporal-threshold or --ratio",
                ))
            }
        };
        let strategy = match self.spatial {
            SpatialArg::Off => None,
            SpatialArg::Text => Some(Strategy::Text),
            SpatialArg::Topic => Some(Strategy::Topic),
        };
        let spatial_mode = match (strategy, self.spatial_ratio, self.spatial_k) {
            (None, None, None) => SpatialMode::Auto,
            (None, _, _) => {
                return Err(Usage::new(
                    "--spatial-ratio/--spatial-k need --spatial text|topic",
                ))
            }
            (Some(_), Some(f), _) => {
                if !(f.is_finite() && f >= 1.0) {
                    return Err(Usage::new(format!("--spatial-ratio {f} must be >= 1")));
                }
                SpatialMode::Prune(1.0 - 1.0 / f)
            }
            (Some(_), None, Some(k)) => SpatialMode::Fixed(k),
            (Some(_), None, None) if overall => SpatialMode::Auto,
            (Some(_), None, None) => {
                return Err(Usage::new(
                    "--spatial text|topic needs --spatial-ratio, --spatial-k or --ratio",
                ))
            }
        };
        match (strategy, &self.text) {
            (Some(Strategy::Text), None) => {
                return Err(Usage::new("--spatial text requires --text"));
            }
            (s, Some(_)) if s != Some(Strategy::Text) => {
                return Err(Usage::new("--text is only used with --spatial text"));
            }
            _ => {}
        }
        let text_mask = self
            .text_mask
            .as_ref()
            .map(|m| {
                m.iter()
                    .map(|&b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        _ => Err(Usage::new("--text-mask entries must be 0 or 1")),
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        Ok(ReductionConfig {
            temporal: TemporalConfig {
                metric,
                mode: temporal_mode,
                merge: match self.merge {
                    MergeArg::Mean => MergeSemantics::Mean,
                    MergeArg::KeepFirst => MergeSemantics::KeepFirst,
                },
            },
            spatial: SpatialConfig {
                strategy,
                mode: spatial_mode,
                kernel: match self.kernel {
                    KernelArg::Dot => Kernel::Dot,
                    KernelArg::Cosine => Kernel::Cosine,
                },
                text_mask,
            },
            overall_ratio: self.ratio,
            keep_cls: self.keep_cls,
        })
    }
}

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use vtrim_core::format::{self, write_atomic};
use vtrim_core::pipeline::{build_index_map, joint_compress, CompressedResult};
use vtrim_core::synthetic::{gen_synthetic, SyntheticSpec};
use vtrim_core::{ReductionConfig, TextTokens, TokenTensor};

use crate::config::ReductionArgs;
use crate::Usage;

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub reduction: ReductionArgs,

    /// Compressed tokens (LFT, one frame of `output_count` tokens).
    #[arg(long)]
    pub output: PathBuf,

    /// Provenance index map (JSON).
    #[arg(long)]
    pub indices: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub frames: usize,
    /// Patches per frame, including the [CLS] slot with `--cls`.
    #[arg(long)]
    pub patches: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub temporal_redundancy: f64,
    #[arg(long, default_value_t = 4)]
    pub hotspots: usize,
    #[arg(long, default_value_t = 8)]
    pub text_len: usize,
    /// Put a [CLS] token at patch 0 of every frame.
    #[arg(long)]
    pub cls: bool,
    /// Visual token output (LFT).
    #[arg(long)]
    pub output: PathBuf,
    /// Text token output (LFT).
    #[arg(long)]
    pub text_output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub reduction: ReductionArgs,

    #[arg(long, default_value_t = 5)]
    pub runs: usize,

    #[arg(long, value_enum, default_value = "text")]
    pub format: crate::analyze::Format,
}

fn load_inputs(
    args: &ReductionArgs,
    config: &ReductionConfig,
) -> Result<(TokenTensor, Option<TextTokens>)> {
    let tensor = format::load_tokens(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let text = match &args.text {
        Some(p) if config.spatial.enabled() => {
            Some(format::load_text(p).with_context(|| format!("reading {}", p.display()))?)
        }
        _ => None,
    };
    Ok((tensor, text))
}

fn stats_line(r: &CompressedResult) -> String {
    let s = &r.stats;
    let t = &s.thresholds_used;
    let temporal = match (t.temporal_metric, t.temporal_threshold) {
        (Some(m), Some(v)) => format!("{}:{v}", m.name()),
        _ => "off".into(),
    };
    let spatial = match t.spatial_rule {
        Some(vtrim_core::spatial::KeepRule::Prune(r)) => format!("prune:{r}"),
        Some(vtrim_core::spatial::KeepRule::Fixed(k)) => format!("k:{k}"),
        None => "off".into(),
    };
    format!(
        "input={} output={} ratio={:.4} temporal_merges={} spatial_dropped={} cls_dropped={} temporal_threshold={temporal} spatial={spatial}",
        s.input_count,
        s.output_count,
        s.achieved_ratio,
        s.temporal_merges,
        s.spatial_dropped,
        s.cls_dropped,
    )
}

pub fn compress(args: &CompressArgs) -> Result<()> {
    let config = args.reduction.to_config()?;
    let (tensor, text) = load_inputs(&args.reduction, &config)?;
    let result = joint_compress(&tensor, text.as_ref(), &config)?;
    let lft = format::encode_sequence(&result.tokens, result.dim)?;
    let json = build_index_map(&result).to_json()?;
    write_atomic(&args.output, &lft)
        .with_context(|| format!("writing {}", args.output.display()))?;
    write_atomic(&args.indices, json.as_bytes())
        .with_context(|| format!("writing {}", args.indices.display()))?;
    println!("{}", stats_line(&result));
    Ok(())
}

pub fn gen(args: &GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_frames: args.frames,
        n_patches: args.patches,
        dim: args.dim,
        seed: args.seed,
        temporal_redundancy: args.temporal_redundancy,
        relevance_hotspots: args.hotspots,
        text_len: args.text_len,
        with_cls: args.cls,
    };
    spec.validate()?;
    let (tensor, text) = gen_synthetic(&spec)?;
    format::save_tokens(&tensor, &args.output)
        .with_context(|| format!("writing {}", args.output.display()))?;
    format::save_text(&text, &args.text_output)
        .with_context(|| format!("writing {}", args.text_output.display()))?;
    println!("{}", serde_json::to_string(&spec)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchReport {
    runs: usize,
    input_tokens: usize,
    output_tokens: usize,
    achieved_ratio: f64,
    median_ms: f64,
    min_ms: f64,
    max_ms: f64,
    tokens_per_s: f64,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(Usage::new("--runs must be at least 1").into());
    }
    let config = args.reduction.to_config()?;
    let (tensor, text) = load_inputs(&args.reduction, &config)?;
    let mut samples = Vec::with_capacity(args.runs);
    let mut last = None;
    for _ in 0..args.runs {
        let start = Instant::now();
        let r = joint_compress(&tensor, text.as_ref(), &config)?;
        samples.push(start.elapsed().as_secs_f64());
        last = Some(r);
    }
    let last = last.expect("runs >= 1");
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    };
    let report = BenchReport {
        runs: n,
        input_tokens: last.stats.input_count,
        output_tokens: last.stats.output_count,
        achieved_ratio: last.stats.achieved_ratio,
        median_ms: median * 1e3,
        min_ms: samples[0] * 1e3,
        max_ms: samples[n - 1] * 1e3,
        tokens_per_s: last.stats.input_count as f64 / median.max(f64::MIN_POSITIVE),
    };
    match args.format {
        crate::analyze::Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        crate::analyze::Format::Text => println!(
            "runs={} input={} output={} ratio={:.4} median_ms={:.3} min_ms={:.3} max_ms={:.3} tokens_per_s={:.0}",
            report.runs,
            report.input_tokens,
            report.output_tokens,
            report.achieved_ratio,
            report.median_ms,
            report.min_ms,
            report.max_ms,
            report.tokens_per_s
        ),
    }
    Ok(())
}

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use vtrim_core::cost::{
    compare_report, ratio_sweep, Comparison, CostReport, HardwareProfile, ModelProfile,
    Quantization, Scenario, SweepRow,
};

use crate::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantArg {
    Fp16,
    Int4,
}

impl From<QuantArg> for Quantization {
    fn from(q: QuantArg) -> Self {
        match q {
            QuantArg::Fp16 => Quantization::Fp16,
            QuantArg::Int4 => Quantization::Int4,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Model profile JSON; defaults to the built-in Vicuna-7B profile.
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Hardware profile JSON; defaults to the built-in A6000 profile.
    #[arg(long)]
    pub hardware: Option<PathBuf>,

    /// Visual tokens before reduction.
    #[arg(long, default_value_t = 2056)]
    pub visual_tokens: u64,

    /// Text prompt tokens, never reduced.
    #[arg(long, default_value_t = 50)]
    pub text_tokens: u64,

    /// Total prefill tokens before reduction; overrides visual + text.
    #[arg(long, requires = "tokens_after")]
    pub tokens_before: Option<u64>,

    /// Total prefill tokens after reduction.
    #[arg(long, requires = "tokens_before", conflicts_with = "ratio")]
    pub tokens_after: Option<u64>,

    /// Visual token reduction factor for the "after" scenario.
    #[arg(long, default_value_t = 16.0)]
    pub ratio: f64,

    /// Comma-separated visual reduction factors; prints one row per factor.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["tokens_before", "tokens_after"])]
    pub ratio_sweep: Option<Vec<f64>>,

    /// Comma-separated quantization modes.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "fp16")]
    pub quant: Vec<QuantArg>,

    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Serialize)]
struct CompareDoc {
    model: String,
    hardware: String,
    comparisons: Vec<Comparison>,
}

#[derive(Debug, Serialize)]
struct SweepDoc {
    model: String,
    hardware: String,
    text_tokens: u64,
    quantization: Quantization,
    rows: Vec<SweepRow>,
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    if args.quant.is_empty() {
        return Err(Usage::new("--quant needs at least one mode").into());
    }
    if args.ratio_sweep.is_some() && args.quant.len() != 1 {
        return Err(Usage::new("--ratio-sweep takes a single --quant").into());
    }
    let model = match &args.model {
        Some(p) => ModelProfile::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ModelProfile::vicuna_7b(),
    };
    let hw = match &args.hardware {
        Some(p) => HardwareProfile::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => HardwareProfile::a6000(),
    };

    if let Some(ratios) = &args.ratio_sweep {
        let q = args.quant[0].into();
        let base = Scenario::new(args.visual_tokens, args.text_tokens, q);
        let rows = ratio_sweep(&model, &hw, &base, ratios)?;
        let doc = SweepDoc {
            model: model.name.clone(),
            hardware: hw.name.clone(),
            text_tokens: args.text_tokens,
            quantization: q,
            rows,
        };
        match args.format {
            Format::Json => println!("{}", serde_json::to_string_pretty(&doc)?),
            Format::Text => print_sweep(&doc),
        }
        return Ok(());
    }

    let comparisons = args
        .quant
        .iter()
        .map(|&q| {
            let q: Quantization = q.into();
            let (before, after) = match (args.tokens_before, args.tokens_after) {
                (Some(b), Some(a)) => (Scenario::new(b, 0, q), Scenario::new(a, 0, q)),
                _ => {
                    if !(args.ratio.is_finite() && args.ratio >= 1.0) {
                        return Err(vtrim_core::Error::InvalidConfig(format!(
                            "--ratio {} must be >= 1",
                            args.ratio
                        ))
                        .into());
                    }
                    let base = Scenario::new(args.visual_tokens, args.text_tokens, q);
                    (base, base.reduced(args.ratio))
                }
            };
            Ok(compare_report(&model, &hw, &before, &after)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = CompareDoc {
        model: model.name.clone(),
        hardware: hw.name.clone(),
        comparisons,
    };
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&doc)?),
        Format::Text => print_compare(&doc),
    }
    Ok(())
}

const HEADER: &str = "tokens   OPs(T)  prefill(ms)  memory(GB)  activation(GB)  kv(GB)  regime";

fn row(r: &CostReport) -> String {
    format!(
        "{:>6}  {:>7.2}  {:>11.2}  {:>10.2}  {:>14.2}  {:>6.3}  {:?}",
        r.token_count,
        r.total_ops / 1e12,
        r.prefill_time_s * 1e3,
        r.memory_traffic_bytes / 1e9,
        r.activation_bytes / 1e9,
        r.kv_cache_bytes / 1e9,
        r.regime
    )
    .to_lowercase()
}

fn print_compare(doc: &CompareDoc) {
    println!("model={} hardware={}", doc.model, doc.hardware);
    println!("scenario  quant  {HEADER}");
    for c in &doc.comparisons {
        let q = c.before.quantization.name();
        println!("before    {q:<5}  {}", row(&c.before));
        println!("after     {q:<5}  {}", row(&c.after));
        let r = &c.ratios;
        println!(
            "ratio     {q:<5}  {:>6.2}  {:>7.2}  {:>11.2}  {:>10.2}  {:>14.2}  {:>6.2}",
            r.tokens, r.total_ops, r.prefill_time, r.memory_traffic, r.activation, r.kv_cache
        );
    }
}

fn print_sweep(doc: &SweepDoc) {
    println!(
        "model={} hardware={} quant={} text_tokens={}",
        doc.model,
        doc.hardware,
        doc.quantization.name(),
        doc.text_tokens
    );
    println!("ratio  visual  {HEADER}");
    for r in &doc.rows {
        println!(
            "{:>5}  {:>6}  {}",
            format!("{}x", r.ratio),
            r.visual_tokens,
            row(&r.report)
        );
    }
}

//! Roofline model of transformer prefill cost.
//!
//! Operations count two per multiply-accumulate. Prefill time is the larger of
//! the compute bound (`ops / peak_ops`) and the memory bound
//! (`traffic / bandwidth`), evaluated over the whole pass.

use std::fs;
use std::num::NonZeroU64;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per stored activation element (fp16).
pub const ACT_BYTES: f64 = 2.0;

/// Token count of the reference prefill: 8 frames x 257 CLIP tokens + 50 text.
pub const REFERENCE_TOKENS: u64 = 2056 + 50;

/// Stored activation volume of the reference fp16 prefill on a 7B model.
pub const REFERENCE_ACTIVATION_BYTES: f64 = 25.6e9;

/// Activation multiplier `c_act` for a 32-layer, 4096-wide model, chosen so the
/// reference prefill stores [`REFERENCE_ACTIVATION_BYTES`].
pub const DEFAULT_ACTIVATION_FACTOR: f64 =
    REFERENCE_ACTIVATION_BYTES / (32.0 * REFERENCE_TOKENS as f64 * 4096.0 * ACT_BYTES);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantization {
    #[default]
    Fp16,
    Int4,
}

impl Quantization {
    pub fn weight_bytes_per_param(self) -> f64 {
        match self {
            Quantization::Fp16 => 2.0,
            Quantization::Int4 => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantization::Fp16 => "FP16",
            Quantization::Int4 => "INT4",
        }
    }
}

/// Prefill sequence length; at least one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct TokenCount(NonZeroU64);

impl TokenCount {
    pub fn new(n: u64) -> Result<Self> {
        NonZeroU64::new(n).map(Self).ok_or(Error::ZeroTokens)
    }

    pub fn get(self) -> u64 {
        self.0.get()
    }

    fn f(self) -> f64 {
        self.0.get() as f64
    }
}

impl TryFrom<u64> for TokenCount {
    type Error = Error;
    fn try_from(n: u64) -> Result<Self> {
        Self::new(n)
    }
}

impl From<TokenCount> for u64 {
    fn from(t: TokenCount) -> u64 {
        t.get()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub n_params: f64,
    pub n_layers: u64,
    pub d_model: u64,
    pub d_ff: u64,
    pub n_heads: u64,
    /// `c_act`; falls back to [`DEFAULT_ACTIVATION_FACTOR`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_factor: Option<f64>,
}

impl ModelProfile {
    /// Vicuna-7B (LLaMA-7B geometry).
    pub fn vicuna_7b() -> Self {
        Self {
            name: "vicuna-7b".into(),
            n_params: 6_738_415_616.0,
            n_layers: 32,
            d_model: 4096,
            d_ff: 11008,
            n_heads: 32,
            activation_factor: Some(DEFAULT_ACTIVATION_FACTOR),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidProfile(format!("{}: {m}", self.name)));
        if !(self.n_params.is_finite() && self.n_params > 0.0) {
            return bad("n_params must be positive");
        }
        if self.n_layers == 0 || self.d_model == 0 || self.d_ff == 0 || self.n_heads == 0 {
            return bad("n_layers, d_model, d_ff and n_heads must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if let Some(c) = self.activation_factor {
            if !(c.is_finite() && c > 0.0) {
                return bad("activation_factor must be positive");
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn activation_factor(&self) -> f64 {
        self.activation_factor.unwrap_or(DEFAULT_ACTIVATION_FACTOR)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOps {
    pub fp16: f64,
    pub int4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub name: String,
    /// Peak operations per second by compute dtype.
    pub peak_ops: PeakOps,
    /// Memory bandwidth in bytes per second.
    pub bandwidth: f64,
}

impl HardwareProfile {
    /// RTX A6000: dense tensor-core peaks, GDDR6 bandwidth.
    pub fn a6000() -> Self {
        Self {
            name: "nvidia-a6000".into(),
            peak_ops: PeakOps {
                fp16: 154.8e12,
                int4: 619.4e12,
            },
            bandwidth: 768e9,
        }
    }

    pub fn peak(&self, q: Quantization) -> f64 {
        match q {
            Quantization::Fp16 => self.peak_ops.fp16,
            Quantization::Int4 => self.peak_ops.int4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.peak_ops.fp16) && ok(self.peak_ops.int4)) {
            return Err(Error::InvalidProfile(format!(
                "{}: peak_ops must be positive",
                self.name
            )));
        }
        // infinite bandwidth is allowed: it removes the memory bound
        if self.bandwidth.is_nan() || self.bandwidth <= 0.0 {
            return Err(Error::InvalidProfile(format!(
                "{}: bandwidth must be positive",
                self.name
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let h: Self = serde_json::from_str(s)?;
        h.validate()?;
        Ok(h)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ops {
    /// `2 * n_params * T`: every weight multiplies every token once.
    pub linear: f64,
    /// `4 * n_layers * d_model * T^2`: attention scores and value mixing.
    pub attention: f64,
}

impl Ops {
    pub fn total(&self) -> f64 {
        self.linear + self.attention
    }
}

pub fn prefill_ops(model: &ModelProfile, tokens: TokenCount) -> Ops {
    let t = tokens.f();
    Ops {
        linear: 2.0 * model.n_params * t,
        attention: 4.0 * model.n_layers as f64 * model.d_model as f64 * t * t,
    }
}

pub fn prefill_flops(model: &ModelProfile, tokens: TokenCount) -> f64 {
    prefill_ops(model, tokens).total()
}

pub fn weight_bytes(model: &ModelProfile, q: Quantization) -> f64 {
    model.n_params * q.weight_bytes_per_param()
}

/// Keys and values for every layer, fp16.
pub fn kv_cache_bytes(model: &ModelProfile, tokens: TokenCount) -> f64 {
    2.0 * model.n_layers as f64 * tokens.f() * model.d_model as f64 * ACT_BYTES
}

/// `c_act * n_layers * T * d_model * act_bytes`.
pub fn activation_bytes(model: &ModelProfile, tokens: TokenCount) -> f64 {
    model.activation_factor()
        * model.n_layers as f64
        * tokens.f()
        * model.d_model as f64
        * ACT_BYTES
}

/// The `c_act` under which `tokens` store exactly `target_bytes`.
pub fn calibrate_activation_factor(
    model: &ModelProfile,
    tokens: TokenCount,
    target_bytes: f64,
) -> f64 {
    target_bytes / (model.n_layers as f64 * tokens.f() * model.d_model as f64 * ACT_BYTES)
}

/// Weights read once, the KV cache written once, and the stored activations.
/// Quantization only shrinks the weight term.
pub fn memory_traffic(model: &ModelProfile, tokens: TokenCount, q: Quantization) -> f64 {
    weight_bytes(model, q) + kv_cache_bytes(model, tokens) + activation_bytes(model, tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Compute,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefillTime {
    pub seconds: f64,
    pub compute_s: f64,
    pub memory_s: f64,
    pub regime: Regime,
}

pub fn prefill_time(
    model: &ModelProfile,
    hw: &HardwareProfile,
    tokens: TokenCount,
    q: Quantization,
) -> PrefillTime {
    let compute_s = prefill_flops(model, tokens) / hw.peak(q);
    let memory_s = memory_traffic(model, tokens, q) / hw.bandwidth;
    let (seconds, regime) = if compute_s >= memory_s {
        (compute_s, Regime::Compute)
    } else {
        (memory_s, Regime::Memory)
    };
    PrefillTime {
        seconds,
        compute_s,
        memory_s,
        regime,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub visual_tokens: u64,
    pub text_tokens: u64,
    pub quantization: Quantization,
}

impl Scenario {
    pub fn new(visual_tokens: u64, text_tokens: u64, quantization: Quantization) -> Self {
        Self {
            visual_tokens,
            text_tokens,
            quantization,
        }
    }

    pub fn tokens(&self) -> Result<TokenCount> {
        TokenCount::new(self.visual_tokens + self.text_tokens)
    }

    /// Same text, visual tokens divided by `ratio` (rounded up).
    pub fn reduced(&self, ratio: f64) -> Self {
        Self {
            visual_tokens: (self.visual_tokens as f64 / ratio).ceil() as u64,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub token_count: u64,
    pub quantization: Quantization,
    pub total_ops: f64,
    pub linear_ops: f64,
    pub attention_ops: f64,
    pub weight_traffic_bytes: f64,
    pub kv_cache_bytes: f64,
    pub activation_bytes: f64,
    pub memory_traffic_bytes: f64,
    pub prefill_time_s: f64,
    pub compute_time_s: f64,
    pub memory_time_s: f64,
    pub regime: Regime,
}

pub fn cost_report(
    model: &ModelProfile,
    hw: &HardwareProfile,
    tokens: TokenCount,
    q: Quantization,
) -> CostReport {
    let ops = prefill_ops(model, tokens);
    let time = prefill_time(model, hw, tokens, q);
    CostReport {
        token_count: tokens.get(),
        quantization: q,
        total_ops: ops.total(),
        linear_ops: ops.linear,
        attention_ops: ops.attention,
        weight_traffic_bytes: weight_bytes(model, q),
        kv_cache_bytes: kv_cache_bytes(model, tokens),
        activation_bytes: activation_bytes(model, tokens),
        memory_traffic_bytes: memory_traffic(model, tokens, q),
        prefill_time_s: time.seconds,
        compute_time_s: time.compute_s,
        memory_time_s: time.memory_s,
        regime: time.regime,
    }
}

/// Column-wise `before / after`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRatios {
    pub tokens: f64,
    pub total_ops: f64,
    pub memory_traffic: f64,
    pub activation: f64,
    pub kv_cache: f64,
    pub prefill_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model: String,
    pub hardware: String,
    pub before: CostReport,
    pub after: CostReport,
    pub ratios: CostRatios,
}

pub fn compare_report(
    model: &ModelProfile,
    hw: &HardwareProfile,
    before: &Scenario,
    after: &Scenario,
) -> Result<Comparison> {
    let b = cost_report(model, hw, before.tokens()?, before.quantization);
    let a = cost_report(model, hw, after.tokens()?, after.quantization);
    let ratios = CostRatios {
        tokens: b.token_count as f64 / a.token_count as f64,
        total_ops: b.total_ops / a.total_ops,
        memory_traffic: b.memory_traffic_bytes / a.memory_traffic_bytes,
        activation: b.activation_bytes / a.activation_bytes,
        kv_cache: b.kv_cache_bytes / a.kv_cache_bytes,
        prefill_time: b.prefill_time_s / a.prefill_time_s,
    };
    Ok(Comparison {
        model: model.name.clone(),
        hardware: hw.name.clone(),
        before: b,
        after: a,
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub visual_tokens: u64,
    pub report: CostReport,
}

/// Cost at each visual-token reduction ratio, text tokens held fixed.
pub fn ratio_sweep(
    model: &ModelProfile,
    hw: &HardwareProfile,
    base: &Scenario,
    ratios: &[f64],
) -> Result<Vec<SweepRow>> {
    ratios
        .iter()
        .map(|&ratio| {
            if !(ratio.is_finite() && ratio >= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "sweep ratio {ratio} must be >= 1"
                )));
            }
            let s = base.reduced(ratio);
            Ok(SweepRow {
                ratio,
                visual_tokens: s.visual_tokens,
                report: cost_report(model, hw, s.tokens()?, s.quantization),
            })
        })
        .collect()
}

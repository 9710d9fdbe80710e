//! Seeded synthetic token grids with controlled temporal redundancy and
//! text-relevance hotspots, for tests and benchmarks.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ClsPolicy, TextTokens, TokenTensor};

/// Per-element noise bound added to copied (redundant) tokens.
pub const COPY_NOISE: f32 = 5e-4;

/// Hotspot boost along the unit text direction `u/|u|`. A fresh token's dot
/// product with `u` is `N(0, |u|^2)`, so the boost is in standard deviations.
const HOTSPOT_GAIN: f32 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_frames: usize,
    /// Patches per frame, including the [CLS] slot when `with_cls` is set.
    pub n_patches: usize,
    pub dim: usize,
    pub seed: u64,
    /// Fraction of positions in frames `i > 0` that repeat frame `i - 1`.
    pub temporal_redundancy: f64,
    /// Patch positions per frame built to score high against the text.
    pub relevance_hotspots: usize,
    pub text_len: usize,
    pub with_cls: bool,
}

impl SyntheticSpec {
    pub fn new(n_frames: usize, n_patches: usize, dim: usize, seed: u64) -> Self {
        Self {
            n_frames,
            n_patches,
            dim,
            seed,
            temporal_redundancy: 0.5,
            relevance_hotspots: 4,
            text_len: 8,
            with_cls: false,
        }
    }

    pub fn redundancy(mut self, fraction: f64) -> Self {
        self.temporal_redundancy = fraction;
        self
    }

    pub fn hotspots(mut self, count: usize) -> Self {
        self.relevance_hotspots = count;
        self
    }

    pub fn cls(mut self, with_cls: bool) -> Self {
        self.with_cls = with_cls;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_frames == 0 || self.n_patches == 0 || self.dim == 0 || self.text_len == 0 {
            return bad("frames, patches, dim and text_len must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.temporal_redundancy) {
            return bad(format!(
                "temporal_redundancy {} outside [0, 1]",
                self.temporal_redundancy
            ));
        }
        if self.with_cls && self.n_patches < 2 {
            return bad("with_cls needs at least 2 patches".into());
        }
        if self.relevance_hotspots > self.content_patches() {
            return bad(format!(
                "{} hotspots exceed {} content patches",
                self.relevance_hotspots,
                self.content_patches()
            ));
        }
        Ok(())
    }

    fn content_patches(&self) -> usize {
        self.n_patches - usize::from(self.with_cls)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Generate a token grid and a matching text prompt. Pure in `spec`.
///
/// Frame 0 is i.i.d. standard normal. In each later frame exactly
/// `round(temporal_redundancy * content_patches)` positions copy the previous
/// frame's vector plus uniform noise below [`COPY_NOISE`]; the rest are fresh.
/// Hotspot positions are fixed across frames and carry a large component along
/// the summed text direction. With `with_cls`, patch 0 holds the mean of the
/// frame's content tokens.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(TokenTensor, TextTokens)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let first = usize::from(spec.with_cls);
    let content = spec.content_patches();

    let text_data: Vec<f32> = (0..spec.text_len)
        .flat_map(|_| normal_vec(&mut rng, dim))
        .collect();
    let mut direction = vec![0.0f32; dim];
    for t in text_data.chunks_exact(dim) {
        direction.iter_mut().zip(t).for_each(|(d, v)| *d += v);
    }
    let norm = direction
        .iter()
        .map(|v| v * v)
        .sum::<f32>()
        .sqrt()
        .max(1e-6);
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut is_hotspot = vec![false; content];
    for p in index::sample(&mut rng, content, spec.relevance_hotspots) {
        is_hotspot[p] = true;
    }
    let fresh = |rng: &mut ChaCha8Rng, hot: bool| {
        let mut v = normal_vec(rng, dim);
        if hot {
            v.iter_mut()
                .zip(&direction)
                .for_each(|(x, d)| *x += HOTSPOT_GAIN * d);
        }
        v
    };

    let n_copy = (spec.temporal_redundancy * content as f64).round() as usize;
    let frame_len = spec.n_patches * dim;
    let mut data = vec![0.0f32; spec.n_frames * frame_len];
    for f in 0..spec.n_frames {
        let mut copied = vec![false; content];
        if f > 0 {
            for p in index::sample(&mut rng, content, n_copy) {
                copied[p] = true;
            }
        }
        for p in 0..content {
            let at = f * frame_len + (p + first) * dim;
            let v = if copied[p] {
                let prev = at - frame_len;
                (0..dim)
                    .map(|k| data[prev + k] + rng.random_range(-COPY_NOISE..COPY_NOISE))
                    .collect()
            } else {
                fresh(&mut rng, is_hotspot[p])
            };
            data[at..at + dim].copy_from_slice(&v);
        }
        if spec.with_cls {
            let base = f * frame_len;
            for k in 0..dim {
                let sum: f32 = (1..spec.n_patches).map(|p| data[base + p * dim + k]).sum();
                data[base + k] = sum / content as f32;
            }
        }
    }

    let cls_policy = if spec.with_cls {
        ClsPolicy::FirstIndex
    } else {
        ClsPolicy::None
    };
    let tensor = TokenTensor::new(spec.n_frames, spec.n_patches, dim, data, cls_policy)?;
    let text = TextTokens::new(spec.text_len, dim, text_data)?;
    Ok((tensor, text))
}

/// Indices of the hotspot patches, recovered by replaying the generator's
/// draw order. Patch indices include the [CLS] offset when present.
pub fn hotspot_patches(spec: &SyntheticSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.text_len * spec.dim {
        let _: f32 = StandardNormal.sample(&mut rng);
    }
    let first = usize::from(spec.with_cls);
    let mut out: Vec<usize> =
        index::sample(&mut rng, spec.content_patches(), spec.relevance_hotspots)
            .into_iter()
            .map(|p| p + first)
            .collect();
    out.sort_unstable();
    Ok(out)
}

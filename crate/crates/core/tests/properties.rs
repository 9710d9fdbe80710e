use std::collections::BTreeSet;

use proptest::prelude::*;
use vtrim_core::format::{decode_tokens, encode_tokens};
use vtrim_core::pipeline::{
    joint_compress, ReductionConfig, SpatialConfig, SpatialMode, TemporalConfig, TemporalMode,
};
use vtrim_core::spatial::{
    spatial_select, text_relevance, top_k_select, topic_relevance, FrameTokens, KeepRule, Kernel,
    Scoring, Strategy as Selection,
};
use vtrim_core::temporal::{
    apply_merge, merge_indicators, temporal_metrics, MergeSemantics, TemporalMetric, Threshold,
};
use vtrim_core::{ClsPolicy, TextTokens, TokenIndex, TokenTensor};

fn tensor_strategy(max_f: usize, max_p: usize, max_d: usize) -> impl Strategy<Value = TokenTensor> {
    (1..=max_f, 1..=max_p, 1..=max_d).prop_flat_map(|(f, p, d)| {
        prop::collection::vec(-4.0f32..4.0, f * p * d)
            .prop_map(move |data| TokenTensor::new(f, p, d, data, ClsPolicy::None).unwrap())
    })
}

fn multi_frame(max_f: usize, max_p: usize, max_d: usize) -> impl Strategy<Value = TokenTensor> {
    (2..=max_f, 1..=max_p, 1..=max_d).prop_flat_map(|(f, p, d)| {
        prop::collection::vec(-4.0f32..4.0, f * p * d)
            .prop_map(move |data| TokenTensor::new(f, p, d, data, ClsPolicy::None).unwrap())
    })
}

fn metric_strategy() -> impl Strategy<Value = TemporalMetric> {
    prop_oneof![
        Just(TemporalMetric::Cosine),
        Just(TemporalMetric::SummationL1)
    ]
}

/// A threshold halfway between two adjacent distinct metric values, so that
/// small rounding differences cannot flip any comparison.
fn midpoint_threshold(values: &[f64], pick: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() < 2 {
        return None;
    }
    let i = ((v.len() - 1) as f64 * pick) as usize;
    let i = i.min(v.len() - 2);
    let gap = v[i + 1] - v[i];
    (gap > 1e-6 * v[i + 1].abs().max(1.0)).then(|| (v[i] + v[i + 1]) / 2.0)
}

fn distinct_scores() -> impl Strategy<Value = Vec<f64>> {
    (1usize..40).prop_flat_map(|n| {
        Just((0..n).map(|i| i as f64 * 0.37 - 3.0).collect::<Vec<_>>()).prop_shuffle()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cosine_indicators_scale_invariant(
        t in multi_frame(4, 8, 6),
        c in 0.01f32..100.0,
        pick in 0.0f64..1.0,
    ) {
        let values = temporal_metrics(&t, TemporalMetric::Cosine);
        if let Some(tau) = midpoint_threshold(&values, pick) {
            let th = Threshold::cosine(tau).unwrap();
            let a = merge_indicators(&t, TemporalMetric::Cosine, th).unwrap();
            let b = merge_indicators(&t.scaled(c), TemporalMetric::Cosine, th).unwrap();
            prop_assert_eq!(a.indicators(), b.indicators());
        }
    }

    #[test]
    fn cosine_indicators_exact_under_power_of_two_scale(
        t in multi_frame(4, 8, 6),
        k in -8i32..8,
        tau in -1.0f64..1.0,
    ) {
        let th = Threshold::cosine(tau).unwrap();
        let a = merge_indicators(&t, TemporalMetric::Cosine, th).unwrap();
        let b = merge_indicators(&t.scaled(2f32.powi(k)), TemporalMetric::Cosine, th).unwrap();
        prop_assert_eq!(a.indicators(), b.indicators());
    }

    #[test]
    fn l1_indicators_scale_covariant(
        t in multi_frame(4, 8, 6),
        c in 0.01f32..100.0,
        pick in 0.0f64..1.0,
    ) {
        let values = temporal_metrics(&t, TemporalMetric::SummationL1);
        if let Some(tau) = midpoint_threshold(&values, pick) {
            let a = merge_indicators(&t, TemporalMetric::SummationL1, Threshold::l1(tau).unwrap()).unwrap();
            let scaled = Threshold::l1(tau * f64::from(c)).unwrap();
            let b = merge_indicators(&t.scaled(c), TemporalMetric::SummationL1, scaled).unwrap();
            prop_assert_eq!(a.indicators(), b.indicators());
        }
    }

    #[test]
    fn merges_monotone_in_threshold(
        t in tensor_strategy(5, 6, 4),
        a in 0.0f64..20.0,
        b in 0.0f64..20.0,
        ca in -1.0f64..1.0,
        cb in -1.0f64..1.0,
    ) {
        let (lo, hi) = (a.min(b), a.max(b));
        let m = |tau| merge_indicators(&t, TemporalMetric::SummationL1, Threshold::l1(tau).unwrap())
            .unwrap()
            .merge_count();
        prop_assert!(m(hi) >= m(lo));
        let (lo, hi) = (ca.min(cb), ca.max(cb));
        let m = |tau| merge_indicators(&t, TemporalMetric::Cosine, Threshold::cosine(tau).unwrap())
            .unwrap()
            .merge_count();
        prop_assert!(m(lo) >= m(hi));
    }

    #[test]
    fn merge_conserves_members_and_keeps_frame_zero(
        t in tensor_strategy(5, 6, 4),
        metric in metric_strategy(),
        pick in 0.0f64..1.0,
        keep_first in any::<bool>(),
    ) {
        let tau = match metric {
            TemporalMetric::Cosine => pick * 2.0 - 1.0,
            TemporalMetric::SummationL1 => pick * 10.0,
        };
        let plan = merge_indicators(&t, metric, Threshold::new(metric, tau).unwrap()).unwrap();
        let semantics = if keep_first { MergeSemantics::KeepFirst } else { MergeSemantics::Mean };
        let out = apply_merge(&t, &plan, semantics).unwrap();
        let total: usize = out.tokens.iter().map(|m| m.member_count()).sum();
        prop_assert_eq!(total, t.len());
        for p in 0..t.n_patches() {
            let ix = TokenIndex::new(0, p);
            prop_assert_eq!(plan.root(ix), ix);
        }
        for (flat, root) in plan.roots().iter().enumerate() {
            prop_assert_eq!(plan.root(*root), *root);
            prop_assert_eq!(root.patch, flat % t.n_patches());
        }
        prop_assert_eq!(out.tokens.len(), plan.root_count());
    }

    #[test]
    fn batch_mean_equals_running_mean(
        t in tensor_strategy(6, 4, 5),
        tau in 0.0f64..30.0,
    ) {
        let plan = merge_indicators(&t, TemporalMetric::SummationL1, Threshold::l1(tau).unwrap()).unwrap();
        let out = apply_merge(&t, &plan, MergeSemantics::Mean).unwrap();
        for tok in &out.tokens {
            let mut running = vec![0.0f64; t.dim()];
            for (n, m) in tok.members.iter().enumerate() {
                for (r, v) in running.iter_mut().zip(t.at(*m)) {
                    *r += (f64::from(*v) - *r) / (n + 1) as f64;
                }
            }
            for (a, b) in tok.vector.iter().zip(&running) {
                let scale = b.abs().max(1.0);
                prop_assert!((f64::from(*a) - b).abs() <= 1e-5 * scale);
            }
        }
    }

    #[test]
    fn top_k_subset_monotone(scores in distinct_scores(), k in 1usize..40) {
        let n = scores.len();
        let k = k.min(n);
        if k < n {
            let small: BTreeSet<usize> = top_k_select(&scores, k).unwrap().into_iter().collect();
            let big: BTreeSet<usize> = top_k_select(&scores, k + 1).unwrap().into_iter().collect();
            prop_assert!(small.is_subset(&big));
        }
    }

    #[test]
    fn top_k_permutation_equivariant(
        scores in distinct_scores(),
        k in 1usize..40,
        seed in any::<u64>(),
    ) {
        let n = scores.len();
        let k = k.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        // deterministic shuffle from the seed
        let mut s = seed | 1;
        for i in (1..n).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            perm.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let permuted: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let direct: BTreeSet<usize> = top_k_select(&scores, k).unwrap().into_iter().collect();
        let mapped: BTreeSet<usize> = top_k_select(&permuted, k).unwrap().into_iter().map(|j| perm[j]).collect();
        prop_assert_eq!(direct, mapped);
    }

    #[test]
    fn cosine_kernel_ignores_token_rescaling(
        (d, tokens, text) in (1usize..6, 1usize..9).prop_flat_map(|(d, n)| (
            Just(d),
            prop::collection::vec(-3.0f32..3.0, n * d),
            prop::collection::vec(-3.0f32..3.0, 3 * d),
        )),
        scales in prop::collection::vec(0.1f32..10.0, 11),
    ) {
        let text = TextTokens::new(3, d, text).unwrap();
        let tokens: Vec<Vec<f32>> = tokens.chunks(d).map(<[f32]>::to_vec).collect();
        let base = text_relevance(&tokens, &text, Kernel::Cosine, None).unwrap();
        let rescaled_tokens: Vec<Vec<f32>> = tokens
            .iter()
            .zip(&scales)
            .map(|(z, c)| z.iter().map(|v| v * c).collect())
            .collect();
        let rescaled_text: Vec<f32> = text
            .iter()
            .zip(scales.iter().rev())
            .flat_map(|(tl, c)| tl.iter().map(move |v| v * c))
            .collect();
        let rescaled_text = TextTokens::new(3, d, rescaled_text).unwrap();
        let got = text_relevance(&rescaled_tokens, &rescaled_text, Kernel::Cosine, None).unwrap();
        for (a, b) in base.iter().zip(&got) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn dot_ranking_ignores_uniform_text_scale(
        scores_src in prop::collection::vec(-3.0f32..3.0, 6 * 4),
        text in prop::collection::vec(-3.0f32..3.0, 2 * 4),
        c in 0.1f32..10.0,
    ) {
        let tokens: Vec<&[f32]> = scores_src.chunks(4).collect();
        let t1 = TextTokens::new(2, 4, text.clone()).unwrap();
        let t2 = TextTokens::new(2, 4, text.iter().map(|v| v * c).collect()).unwrap();
        let a = text_relevance(&tokens, &t1, Kernel::Dot, None).unwrap();
        let b = text_relevance(&tokens, &t2, Kernel::Dot, None).unwrap();
        let order = |s: &[f64]| {
            let mut ix: Vec<usize> = (0..s.len()).collect();
            ix.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
            ix
        };
        // skip near-ties, where rounding may legitimately swap neighbours
        let mut sorted = a.clone();
        sorted.sort_by(f64::total_cmp);
        let min_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        prop_assume!(min_gap > 1e-4);
        prop_assert_eq!(order(&a), order(&b));
    }

    #[test]
    fn topic_scores_bounded(
        tokens in prop::collection::vec(-5.0f32..5.0, 10 * 3),
        cls in prop::collection::vec(-5.0f32..5.0, 3),
    ) {
        let tokens: Vec<&[f32]> = tokens.chunks(3).collect();
        for s in topic_relevance(&tokens, &cls).unwrap() {
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn lft_round_trip_bit_exact(
        (f, p, d) in (1usize..4, 1usize..5, 1usize..5),
        bits in prop::collection::vec(any::<u32>(), 80),
        cls in any::<bool>(),
    ) {
        let data: Vec<f32> = bits
            .iter()
            .cycle()
            .take(f * p * d)
            .map(|b| {
                let v = f32::from_bits(*b);
                if v.is_finite() { v } else { f32::from_bits(b & 0x807f_ffff) }
            })
            .collect();
        let policy = if cls && p >= 2 { ClsPolicy::FirstIndex } else { ClsPolicy::None };
        let t = TokenTensor::new(f, p, d, data, policy).unwrap();
        let bytes = encode_tokens(&t).unwrap();
        let back = decode_tokens(&bytes).unwrap();
        let a: Vec<u32> = t.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.cls_policy(), policy);
        prop_assert_eq!(encode_tokens(&back).unwrap(), bytes);
    }

    #[test]
    fn pipeline_off_is_identity(t in tensor_strategy(4, 6, 4)) {
        let r = joint_compress(&t, None, &ReductionConfig::default()).unwrap();
        prop_assert_eq!(r.flat_tokens(), t.as_slice().to_vec());
        prop_assert!(r.provenance.iter().all(|p| p.len() == 1));
        prop_assert!(r.dropped.is_empty());
    }

    #[test]
    fn pipeline_provenance_partitions_input(
        (t, text) in tensor_strategy(5, 8, 4).prop_flat_map(|t| {
            let d = t.dim();
            (Just(t), prop::collection::vec(-2.0f32..2.0, 3 * d))
        }),
        metric in metric_strategy(),
        t_pick in 0.0f64..1.0,
        prune in 0.0f64..0.95,
        spatial_on in any::<bool>(),
    ) {
        let text = TextTokens::new(3, t.dim(), text).unwrap();
        let ratio = 1.0 + t_pick * (t.n_frames() as f64 - 1.0);
        let config = ReductionConfig {
            temporal: TemporalConfig { metric, mode: TemporalMode::Ratio(ratio), merge: MergeSemantics::Mean },
            spatial: SpatialConfig {
                strategy: spatial_on.then_some(Selection::Text),
                mode: SpatialMode::Prune(prune),
                ..Default::default()
            },
            overall_ratio: None,
            keep_cls: false,
        };
        let r = joint_compress(&t, Some(&text), &config).unwrap();
        let mut seen: Vec<TokenIndex> = r.provenance.iter().flatten().copied().collect();
        seen.extend(&r.dropped);
        seen.sort_unstable();
        let all: Vec<TokenIndex> = (0..t.n_frames())
            .flat_map(|f| (0..t.n_patches()).map(move |p| TokenIndex::new(f, p)))
            .collect();
        prop_assert_eq!(seen, all);
        // positional order of the output prefix
        let roots: Vec<TokenIndex> = r.provenance.iter().map(|p| p[0]).collect();
        prop_assert!(roots.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(r.stats.achieved_ratio, t.len() as f64 / r.tokens.len() as f64);
        // determinism
        let again = joint_compress(&t, Some(&text), &config).unwrap();
        prop_assert_eq!(r, again);
    }

    #[test]
    fn pipeline_stages_factorize(
        t in multi_frame(4, 8, 4),
        metric in metric_strategy(),
        pick in 0.0f64..1.0,
        k in 1usize..8,
    ) {
        let tau = match metric {
            TemporalMetric::Cosine => pick * 2.0 - 1.0,
            TemporalMetric::SummationL1 => pick * 12.0,
        };
        let temporal_only = ReductionConfig {
            temporal: TemporalConfig { metric, mode: TemporalMode::Threshold(tau), merge: MergeSemantics::Mean },
            ..Default::default()
        };
        let r = joint_compress(&t, None, &temporal_only).unwrap();
        let plan = merge_indicators(&t, metric, Threshold::new(metric, tau).unwrap()).unwrap();
        let merged = apply_merge(&t, &plan, MergeSemantics::Mean).unwrap();
        let expect: Vec<Vec<f32>> = merged.tokens.iter().map(|m| m.vector.clone()).collect();
        prop_assert_eq!(&r.tokens, &expect);

        let d = t.dim();
        let text = TextTokens::new(1, d, t.token(0, 0).to_vec()).unwrap();
        let spatial_only = ReductionConfig {
            spatial: SpatialConfig {
                strategy: Some(Selection::Text),
                mode: SpatialMode::Fixed(k),
                ..Default::default()
            },
            ..Default::default()
        };
        let r = joint_compress(&t, Some(&text), &spatial_only).unwrap();
        let frames = FrameTokens::from_tensor(&t);
        let scoring = Scoring { strategy: Selection::Text, kernel: Kernel::Dot, text: Some(&text), text_mask: None };
        let sel = spatial_select(&frames, &scoring, KeepRule::Fixed(k)).unwrap();
        let expect: Vec<Vec<f32>> = sel
            .frames
            .iter()
            .flat_map(|f| f.kept.iter().map(|ix| t.at(*ix).to_vec()))
            .collect();
        prop_assert_eq!(&r.tokens, &expect);
    }
}

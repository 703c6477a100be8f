//! Property tests for the numeric kernel, the partitioned cache, and the
//! sampling primitives.

use proptest::prelude::*;

use hivekv_core::{
    buzz_evict, interval_sample, local_max_sample, softmax, BuzzConfig, BuzzMode, CacheState,
    KvEntry,
};

fn entry(pos: u64, score: f64) -> KvEntry {
    let mut e = KvEntry::new(vec![pos as f64], vec![pos as f64], pos);
    e.accumulated_score = score;
    e
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(
        scores in prop::collection::vec(-50.0f64..50.0, 1..64),
        scale in 0.01f64..7.0,
    ) {
        // scale * range stays under ~700 nats, inside the regime where
        // exp() cannot underflow any entry to zero
        let p = softmax(&scores, scale).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
        let arg_in = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        let arg_out = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        prop_assert_eq!(arg_in, arg_out);
    }

    #[test]
    fn samplers_preserve_order_and_counts(
        scores in prop::collection::vec(0.0f64..100.0, 0..200),
        stride in 1usize..16,
    ) {
        let n = scores.len();
        let entries: Vec<KvEntry> =
            scores.iter().enumerate().map(|(i, &s)| entry(i as u64, s)).collect();
        let local = local_max_sample(stride, entries.clone()).unwrap();
        let interval = interval_sample(stride, entries).unwrap();
        for kept in [&local, &interval] {
            prop_assert_eq!(kept.len(), n.div_ceil(stride));
            prop_assert!(kept.windows(2).all(|w| w[0].original_position < w[1].original_position));
        }
        // every stride-sized chunk contributes exactly one survivor, so no
        // gap longer than 2*stride - 1 opens up
        for (i, pair) in local.windows(2).enumerate() {
            let gap = pair[1].original_position - pair[0].original_position;
            prop_assert!((gap as usize) < 2 * stride, "chunk {i} gap {gap}");
        }
        // chunk membership: the i-th survivor comes from chunk i
        for (i, e) in local.iter().enumerate() {
            let chunk = e.original_position as usize / stride;
            prop_assert_eq!(chunk, i);
        }
    }

    #[test]
    fn cache_invariants_hold_through_random_runs(
        k in 0usize..5,
        w in 1usize..9,
        s in 3usize..9,
        t_extra in 0usize..40,
        n in 1u64..260,
        score_seed in 0u64..1000,
    ) {
        let t = s + t_extra;
        let config = BuzzConfig::new(k, w, s, t).unwrap();
        let mut cache = CacheState::new(config);
        let mut seen = Vec::new();
        let mut x = score_seed;
        for pos in 0..n {
            seen.push(pos);
            let due = cache.append_token(entry(pos, 0.0)).unwrap();
            // pseudo-random positive weights
            let len = cache.len();
            let weights: Vec<f64> = (0..len)
                .map(|i| {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((x >> 33) as f64 / 2.0_f64.powi(31) + (i as f64) * 1e-9).abs()
                })
                .collect();
            cache.apply_attention(&weights).unwrap();
            prop_assert!(cache.len() <= config.container());
            if due {
                buzz_evict(&mut cache, BuzzMode::Standard).unwrap();
            }
            cache.validate().unwrap();
            // cached positions are a subset of everything seen, in order
            let kept = cache.kept_positions();
            prop_assert!(kept.iter().all(|p| seen.contains(p)));
            prop_assert!(kept.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn eviction_shrinks_buffer_by_stride_factor(
        s in 2usize..10,
        fill in 0usize..60,
    ) {
        let t = 10 + fill;
        let config = BuzzConfig::new(0, 1, s, t).unwrap();
        let mut cache = CacheState::new(config);
        for pos in 0..(t as u64 + 1) {
            cache.append_token(entry(pos, (pos % 3) as f64)).unwrap();
        }
        prop_assert!(cache.eviction_due());
        let buffer_len = cache.occupancy().buffer;
        let outcome = buzz_evict(&mut cache, BuzzMode::Standard).unwrap();
        prop_assert_eq!(outcome.kept_positions.len(), buffer_len.div_ceil(s));
    }
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volo::cost::measured_madds;
use volo::{CostQuery, MixerKind};

// Written out term by term, independently of CostQuery::madds.
fn by_hand(kind: MixerKind, h: u64, w: u64, c: u64, k: u64, n: u64) -> u64 {
    let tokens = h * w;
    match kind {
        MixerKind::Sa => {
            let projections = 4 * tokens * c * c;
            let attention = 2 * tokens * tokens * c;
            projections + attention
        }
        MixerKind::Lsa => {
            let projections = 4 * tokens * c * c;
            let attention = 2 * tokens * (k * k) * c;
            projections + attention
        }
        MixerKind::Oa => {
            let value_and_output = tokens * c * 2 * c;
            let weights = tokens * c * n * k * k * k * k;
            let aggregation = tokens * k * k * c;
            value_and_output + weights + aggregation
        }
        MixerKind::Conv => tokens * k * k * c * c,
    }
}

#[test]
fn twenty_random_tuples_match_hand_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let h = rng.random_range(1..=64u64);
        let w = rng.random_range(1..=64u64);
        let n = rng.random_range(1..=16u64);
        let c = n * rng.random_range(1..=48u64);
        let k = 2 * rng.random_range(0..=3u64) + 1;
        let q = CostQuery::new(h, w, c, k, n).unwrap();
        for kind in MixerKind::ALL {
            assert_eq!(q.madds(kind), by_hand(kind, h, w, c, k, n), "{kind} at {q:?}");
        }
    }
}

#[test]
fn outlook_cheaper_than_local_attention_at_width_384() {
    for h in 1..=64 {
        for w in 1..=64 {
            let q = CostQuery::new(h, w, 384, 3, 6).unwrap();
            assert!(q.madds(MixerKind::Oa) < q.madds(MixerKind::Lsa), "{h}x{w}");
        }
    }
}

#[test]
fn reference_sizes() {
    let q = CostQuery::new(28, 28, 192, 3, 6).unwrap();
    assert_eq!(q.madds(MixerKind::Oa), 132_314_112);
    assert_eq!(q.madds(MixerKind::Lsa), 118_315_008);
    assert_eq!(q.madds(MixerKind::Conv), 260_112_384);
}

#[test]
fn rejects_degenerate_queries() {
    assert!(CostQuery::new(0, 4, 8, 3, 2).is_err());
    assert!(CostQuery::new(4, 4, 8, 2, 2).is_err());
}

#[test]
fn counted_lsa_sa_conv_equal_closed_forms() {
    for (h, w, c, n) in [(5, 7, 8, 2), (6, 6, 12, 3)] {
        let q = CostQuery::new(h, w, c, 3, n).unwrap();
        for kind in [MixerKind::Lsa, MixerKind::Sa, MixerKind::Conv] {
            assert_eq!(measured_madds(kind, &q).unwrap(), q.madds(kind), "{kind}");
        }
    }
}

#[test]
fn counted_outlook_exceeds_closed_form_by_the_aggregation_term() {
    // The implementation multiplies K^2 x K^2 weights by K^2 x C/N values
    // per head (K^4 C per window); the closed form charges K^2 C.
    let (h, w, c, k, n) = (6u64, 5, 12, 3, 3);
    let q = CostQuery::new(h, w, c, k, n).unwrap();
    let counted = measured_madds(MixerKind::Oa, &q).unwrap();
    assert_eq!(counted, q.madds(MixerKind::Oa) + h * w * (k.pow(4) - k * k) * c);
}

proptest! {
    #[test]
    fn costs_scale_linearly_with_tokens_except_global_attention(
        h in 1u64..40, w in 1u64..40, n in 1u64..8, m in 1u64..16, k in 0u64..3,
    ) {
        let c = n * m;
        let k = 2 * k + 1;
        let one = CostQuery::new(h, w, c, k, n).unwrap();
        let two = CostQuery::new(2 * h, w, c, k, n).unwrap();
        for kind in [MixerKind::Oa, MixerKind::Lsa, MixerKind::Conv] {
            prop_assert_eq!(two.madds(kind), 2 * one.madds(kind));
        }
        prop_assert!(two.madds(MixerKind::Sa) > 2 * one.madds(MixerKind::Sa));
    }
}

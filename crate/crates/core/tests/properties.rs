// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use capattn_core::analysis::{change_rates, VisualAttentionProfile};
use capattn_core::config::RunConfig;
use capattn_core::harness::{generate_corpus, PlantedModelSpec};
use capattn_core::intervention::{build_gate, intervened_forward};
use capattn_core::model::{
    forward, masked_row_weights, scaled_scores, CaptureFlags, DecoderWeights, ForwardTrace, InterventionHook,
    ShiftPositions,
};
use capattn_core::probe::{
    rank_heads, train_head_classifier, ClassifierParams, LabeledPoint, ShiftVectorBank,
};
use capattn_core::report::sig9;
use capattn_core::search::{best_query_search, QueryCandidateSet, ShiftMode};
use capattn_core::tensor::{matmul, row_softmax, Matrix, Vector};
use capattn_core::{HeadGrid, HeadId};
use common::{max_abs_diff, random_input, random_model, Lcg};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    -30.0f64..30.0
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.as_slice().iter().map(|x| x.to_bits()).collect()
}

fn same_trace(a: &ForwardTrace, b: &ForwardTrace) -> bool {
    let (ha, hb) = (a.hidden_states().unwrap(), b.hidden_states().unwrap());
    ha.iter().zip(hb).all(|(x, y)| bits(x) == bits(y))
        && a.answer_logit().to_bits() == b.answer_logit().to_bits()
        && a.attention()
            .unwrap()
            .iter()
            .all(|(id, m)| bits(m) == bits(b.attention().unwrap().get(id)))
}

fn tokens(vocab: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..vocab, 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(row in prop::collection::vec(finite(), 1..12), c in finite()) {
        let m = Matrix::from_rows(std::slice::from_ref(&row)).unwrap();
        let p = row_softmax(&m).unwrap();
        prop_assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.row(0).iter().all(|x| (0.0..=1.0).contains(x)));
        let shifted: Vec<f64> = row.iter().map(|x| x + c).collect();
        let q = row_softmax(&Matrix::from_rows(&[shifted]).unwrap()).unwrap();
        prop_assert!(max_abs_diff(p.row(0), q.row(0)) <= 1e-12);
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), n in 1usize..5, k in 1usize..5, j in 1usize..5) {
        let mut g = Lcg(seed);
        let (a, b, c) = (g.matrix(n, k, 1.0), g.matrix(k, j, 1.0), g.matrix(j, 3, 1.0));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(max_abs_diff(left.as_slice(), right.as_slice()) <= 1e-9);
    }

    #[test]
    fn attention_is_causal_and_stochastic(seed in any::<u64>(), m in 1usize..5, toks in tokens(6)) {
        let w = random_model(2, 2, 3, 6, seed);
        let input = random_input(&w, m, toks, seed ^ 1);
        let tr = forward(&w, &input, CaptureFlags::ATTENTION, None).unwrap();
        for (_, a) in tr.attention().unwrap().iter() {
            for i in 0..a.rows() {
                prop_assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(a.row(i)[i + 1..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn doubling_width_scales_scores_by_root_two(seed in any::<u64>(), t in 1usize..5, d in 1usize..5) {
        let mut g = Lcg(seed);
        let (q, k) = (g.matrix(t, d, 1.0), g.matrix(t, d, 1.0));
        let pad = |m: &Matrix| {
            let rows: Vec<Vec<f64>> = (0..t).map(|r| {
                let mut row = m.row(r).to_vec();
                row.resize(2 * d, 0.0);
                row
            }).collect();
            Matrix::from_rows(&rows).unwrap()
        };
        let narrow = scaled_scores(&q, &k, false).unwrap();
        let wide = scaled_scores(&pad(&q), &pad(&k), false).unwrap();
        for (a, b) in narrow.as_slice().iter().zip(wide.as_slice()) {
            prop_assert!((a / std::f64::consts::SQRT_2 - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_alpha_and_empty_gate_are_identities(seed in any::<u64>(), m in 1usize..4, toks in tokens(6), all in any::<bool>()) {
        let w = random_model(2, 2, 3, 6, seed);
        let input = random_input(&w, m, toks, seed ^ 2);
        let base = forward(&w, &input, CaptureFlags::ALL, None).unwrap();
        let mut g = Lcg(seed ^ 3);
        let acc = HeadGrid::from_fn(2, 2, |_| g.next());
        let bank = ShiftVectorBank::new("x".into(), acc.map(|_, _| Vector::from(g.vec(3, 2.0)))).unwrap();
        let positions = if all { ShiftPositions::AllPositions } else { ShiftPositions::LastToken };
        for (k, alpha) in [(4, 0.0), (0, 1.5)] {
            let ranking = rank_heads(&acc, k).unwrap().with_model_hash("x");
            let gate = build_gate(&ranking, &bank, alpha).unwrap().with_positions(positions);
            let tuned = intervened_forward(&w, &input, &gate, CaptureFlags::ALL).unwrap();
            prop_assert!(same_trace(&base, &tuned));
        }
    }

    #[test]
    fn hook_leaves_lower_layers_untouched(seed in any::<u64>(), layer in 0usize..3, head in 0usize..2, alpha in -3.0f64..3.0) {
        let w = random_model(3, 2, 3, 6, seed);
        let input = random_input(&w, 2, vec![1, 3, 5], seed ^ 4);
        let s = Lcg(seed ^ 5).vec(3, 1.0);
        let hook = InterventionHook {
            alpha,
            positions: ShiftPositions::AllPositions,
            shifts: vec![(HeadId::new(layer, head), &s)],
        };
        let cap = CaptureFlags { hidden_states: true, ..CaptureFlags::NONE };
        let base = forward(&w, &input, cap, None).unwrap();
        let tuned = forward(&w, &input, cap, Some(&hook)).unwrap();
        // hidden_states()[l] is the input to layer l.
        for l in 0..=layer {
            prop_assert_eq!(bits(&base.hidden_states().unwrap()[l]), bits(&tuned.hidden_states().unwrap()[l]));
        }
    }

    #[test]
    fn masked_row_puts_no_mass_on_text(scores in prop::collection::vec(finite(), 2..10), m in 1usize..10) {
        let m = m.min(scores.len());
        let p = masked_row_weights(&scores, m).unwrap();
        prop_assert!(p[m..].iter().all(|&x| x == 0.0));
        prop_assert!((p[..m].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rate_numerators_flip_sign(seed in any::<u64>()) {
        let mut g = Lcg(seed);
        let mut grid = || HeadGrid::from_fn(3, 4, |_| g.next().abs() * 5.0);
        let (a, b) = (
            VisualAttentionProfile::from_sums(grid(), 5),
            VisualAttentionProfile::from_sums(grid(), 5),
        );
        let (ab, ba) = (change_rates(&a, &b).unwrap(), change_rates(&b, &a).unwrap());
        for (id, d) in ab.deltas().iter() {
            prop_assert_eq!(*d, -*ba.deltas().get(id));
        }
        prop_assert!((0.0..=1.0).contains(&ab.fraction_enhanced()));
        for l in 0..3 {
            let num: f64 = (0..4).map(|h| a.sums().get(HeadId::new(l, h)) - b.sums().get(HeadId::new(l, h))).sum();
            let den: f64 = (0..4).map(|h| *b.sums().get(HeadId::new(l, h))).sum();
            prop_assert!((ab.layer_rates()[l].unwrap() - num / den).abs() <= 1e-12);
        }
    }

    #[test]
    fn profile_merge_is_order_free(seed in any::<u64>()) {
        let mut g = Lcg(seed);
        let parts: Vec<VisualAttentionProfile> = (0..3)
            .map(|i| VisualAttentionProfile::from_sums(HeadGrid::from_fn(2, 3, |_| g.next()), i + 1))
            .collect();
        let mut left = parts[0].clone();
        left.merge(&parts[1]).unwrap();
        left.merge(&parts[2]).unwrap();
        let mut right = parts[2].clone();
        let mut inner = parts[1].clone();
        inner.merge(&parts[0]).unwrap();
        right.merge(&inner).unwrap();
        prop_assert_eq!(left.sample_count(), right.sample_count());
        prop_assert!(max_abs_diff(left.sums().values(), right.sums().values()) <= 1e-12);
    }

    #[test]
    fn sig9_keeps_nine_digits(x in prop::num::f64::NORMAL) {
        let back: f64 = sig9(x).parse().unwrap();
        prop_assert!(((back - x) / x).abs() <= 5e-9, "{} -> {}", x, sig9(x));
    }

    #[test]
    fn head_keys_round_trip(layer in 0usize..10_000, head in 0usize..10_000) {
        let id = HeadId::new(layer, head);
        prop_assert_eq!(id.to_string().parse::<HeadId>().unwrap(), id);
    }

    #[test]
    fn grid_iterates_in_head_order(nl in 1usize..6, nh in 1usize..6) {
        let g = HeadGrid::from_fn(nl, nh, |id| id);
        let ids: Vec<HeadId> = g.iter().map(|(id, _)| id).collect();
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(g.iter().all(|(id, v)| id == *v));
    }

    #[test]
    fn ranking_is_sorted_and_sized(seed in any::<u64>(), k in 0i64..30) {
        let mut g = Lcg(seed);
        let acc = HeadGrid::from_fn(3, 4, |_| (g.next() * 3.0).round() / 3.0);
        let r = rank_heads(&acc, k).unwrap();
        prop_assert_eq!(r.k(), (k as usize).min(12));
        for w in r.order().windows(2) {
            let (a, b) = (acc.get(w[0]), acc.get(w[1]));
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn search_is_permutation_equivariant(seed in any::<u64>(), rot in 1usize..4) {
        let w = random_model(2, 2, 3, 8, seed);
        let mut g = Lcg(seed ^ 6);
        let images: Vec<Matrix> = (0..2).map(|_| g.matrix(3, 6, 1.0)).collect();
        let questions = vec![vec![1, 2], vec![3]];
        let cands: Vec<Vec<usize>> = vec![vec![0], vec![4, 5], vec![6], vec![7, 1]];
        let labels: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let mut perm: Vec<usize> = (0..4).collect();
        perm.rotate_left(rot);
        let set = QueryCandidateSet::new(cands.clone(), labels.clone()).unwrap();
        let pset = QueryCandidateSet::new(
            perm.iter().map(|&i| cands[i].clone()).collect(),
            perm.iter().map(|&i| labels[i].clone()).collect(),
        ).unwrap();
        let (best, s) = best_query_search(&w, &images, &questions, &set, ShiftMode::L1).unwrap();
        let (pbest, ps) = best_query_search(&w, &images, &questions, &pset, ShiftMode::L1).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(ps.aggregate()[j], s.aggregate()[i]);
        }
        prop_assert!(s.aggregate().iter().all(|&x| x >= 0.0));
        // Ties aside, the winner is the same candidate.
        prop_assert_eq!(s.aggregate()[perm[pbest]], s.aggregate()[best]);

        let halves: Vec<f64> = (0..2)
            .map(|b| best_query_search(&w, &images[b..=b], &questions[b..=b], &set, ShiftMode::L1).unwrap().1.aggregate()[0])
            .collect();
        prop_assert!((halves[0] + halves[1] - s.aggregate()[0]).abs() <= 1e-12);
    }

    #[test]
    fn identical_queries_have_zero_shift(seed in any::<u64>()) {
        let w = random_model(2, 2, 3, 8, seed);
        let images = vec![Lcg(seed).matrix(3, 6, 1.0)];
        let questions = vec![vec![2, 3]];
        let set = QueryCandidateSet::new(vec![vec![2, 3]], vec!["same".into()]).unwrap();
        let (_, s) = best_query_search(&w, &images, &questions, &set, ShiftMode::L1).unwrap();
        prop_assert_eq!(s.aggregate()[0], 0.0);
    }

    #[test]
    fn cross_validation_is_deterministic(seed in any::<u64>()) {
        let mut g = Lcg(seed);
        let points: Vec<LabeledPoint> = (0..40)
            .map(|i| LabeledPoint { features: g.vec(3, 1.0), label: i % 2 == 0, group: i / 2 })
            .collect();
        let params = ClassifierParams { seed, ..ClassifierParams::default() };
        let a = train_head_classifier(&points, &params).unwrap();
        let b = train_head_classifier(&points, &params).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn corpus_is_seeded_and_balanced(seed in any::<u64>(), n in 1usize..40) {
        let spec = PlantedModelSpec::default();
        let a = generate_corpus(seed, n, &spec).unwrap();
        prop_assert_eq!(&a, &generate_corpus(seed, n, &spec).unwrap());
        let yes = a.iter().filter(|e| e.query.gold.is_yes()).count();
        prop_assert_eq!(yes, n.div_ceil(2));
        for e in &a {
            let object = spec.vocab.token_object(e.query.non_caption[2]).unwrap();
            prop_assert_eq!(e.scene.contains(object), e.query.gold.is_yes());
        }
    }

    #[test]
    fn weights_json_round_trips_exactly(seed in any::<u64>()) {
        let w = random_model(2, 3, 2, 5, seed);
        let back = DecoderWeights::from_json_slice(&w.to_json_bytes()).unwrap();
        prop_assert_eq!(back.model_hash(), w.model_hash());
        prop_assert_eq!(back, w);
    }

    #[test]
    fn config_json_round_trips(seed in any::<u64>(), alpha in -5.0f64..5.0, k in prop::option::of(0i64..48)) {
        let mut cfg = RunConfig::with_seed(seed);
        cfg.alpha = alpha;
        cfg.top_k = k;
        let back = RunConfig::from_json_slice(&cfg.to_json_bytes()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

use pillar_rerank_core::baselines::{expand_query, jaccard_distance, QeConfig, QeVariant};
use pillar_rerank_core::data::{rank_row, Direction, EntityId, GroundTruth, Modality, SimilarityStore};
use pillar_rerank_core::graph::{learned_affinity, neighbor_affinity, propagate, rerank_query, Neighborhood};
use pillar_rerank_core::loss::{contrastive_loss, kl_divergence, mma_loss, triplet_loss};
use pillar_rerank_core::matrix::{dot, norm};
use pillar_rerank_core::metrics::recall_at_k;
use pillar_rerank_core::params::ReRankerParams;
use pillar_rerank_core::synthetic::{generate, SynthConfig};
use pillar_rerank_core::{Matrix, ModelConfig, RankIndex};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_store(seed: u64) -> SimilarityStore {
    generate(&SynthConfig {
        concepts: 4,
        images_per_concept: 3,
        texts_per_image: 2,
        dim: 6,
        noise_sigma: 0.5,
        cross_noise_sigma: 0.2,
        seed,
    })
    .unwrap()
    .store
}

fn small_cfg(l: usize, k: usize) -> ModelConfig {
    ModelConfig {
        l,
        k_i2t: k,
        k_t2i: k,
        c: 4,
        hidden: 5,
        hidden_mid: 6,
        ..ModelConfig::default()
    }
}

fn assert_stochastic(m: &Matrix) {
    for i in 0..m.rows() {
        let row = m.row(i);
        assert!(row.iter().all(|&v| v >= 0.0), "negative entry in row {i}");
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6, "row {i} sums to {}", row.iter().sum::<f64>());
    }
}

#[test]
fn affinities_are_row_stochastic_on_random_neighborhoods() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stores: Vec<SimilarityStore> = (0..10).map(small_store).collect();
    for trial in 0..1000 {
        let store = &stores[trial % stores.len()];
        let l = rng.random_range(1..=4);
        let k = rng.random_range(1..=5);
        let mut cfg = small_cfg(l, k);
        cfg.lambda = rng.random_range(0.0..2.0);
        let query = if rng.random_bool(0.5) {
            EntityId::image(rng.random_range(0..store.num_images()))
        } else {
            EntityId::text(rng.random_range(0..store.num_texts()))
        };
        let neighbors = store.top_cross(query, k);
        let hood = Neighborhood::build(query, neighbors, store, None, &cfg, trial as u64).unwrap();
        let params = ReRankerParams::init(&cfg, &mut rng);
        let learned = learned_affinity(&hood.features, &params.layers[0]).values;
        let mut blended = hood.affinity.clone();
        blended.add_assign(&learned);
        blended.scale_assign(0.5);
        assert_stochastic(&hood.affinity);
        assert_stochastic(&learned);
        assert_stochastic(&blended);
    }
}

#[test]
fn zero_output_layer_is_residual_identity_and_freezes_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let store = small_store(3);
    let index = RankIndex::build(&store, 8);
    for trial in 0..100 {
        let cfg = small_cfg(rng.random_range(1..=4), rng.random_range(1..=5));
        let mut params = ReRankerParams::init(&cfg, &mut rng);
        params.zero_transform_output();
        let query = if trial % 2 == 0 {
            EntityId::image(rng.random_range(0..store.num_images()))
        } else {
            EntityId::text(rng.random_range(0..store.num_texts()))
        };
        let k = cfg.k(Direction::of_query(query.modality));
        let hood = Neighborhood::build(query, store.top_cross(query, k), &store, Some(&index), &cfg, 0).unwrap();
        let refined = propagate(&hood.features, &hood.affinity, &params, &cfg).unwrap();
        assert_eq!(refined, hood.features);

        let out = rerank_query(query, &store, Some(&index), &params, &cfg, 0).unwrap();
        let base = store.ranking(query, query.modality.other());
        let f = &hood.features;
        let cos: Vec<f64> = (1..f.rows())
            .map(|r| {
                let (a, b) = (norm(f.row(0)), norm(f.row(r)));
                if a == 0.0 || b == 0.0 { -1.0 } else { dot(f.row(0), f.row(r)) / (a * b) }
            })
            .collect();
        let expected = rank_row(query, &cos, &hood.neighbors).unwrap();
        assert_eq!(&out.list.items[..k], &expected.items[..]);
        assert_eq!(&out.list.items[k..], &base.items[k..]);
        let tail_bits = |s: &[f64]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(tail_bits(&out.list.scores[k..]), tail_bits(&base.scores[k..]));
        assert!(out.list.is_sorted());
    }
}

#[test]
fn recall_matches_brute_force_on_micro_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let nq = rng.random_range(1..=10);
        let ni = rng.random_range(1..=20);
        let pairs: Vec<(usize, usize)> = (0..nq)
            .flat_map(|q| (0..ni).map(move |t| (q, t)))
            .filter(|_| rng.random_bool(0.15))
            .collect();
        let truth = GroundTruth::new(nq, ni, pairs.iter().copied()).unwrap();
        let ids: Vec<EntityId> = (0..ni).map(EntityId::text).collect();
        let rankings: Vec<_> = (0..nq)
            .map(|q| {
                let scores: Vec<f64> = (0..ni).map(|_| rng.random_range(0..5) as f64).collect();
                rank_row(EntityId::image(q), &scores, &ids).unwrap()
            })
            .collect();
        for k in [1, 5, 10] {
            let r = recall_at_k(&rankings, &truth, k).unwrap();
            let mut hits = 0;
            let mut evaluated = 0;
            for (q, list) in rankings.iter().enumerate() {
                let rel: Vec<usize> = pairs.iter().filter(|p| p.0 == q).map(|p| p.1).collect();
                if rel.is_empty() {
                    continue;
                }
                evaluated += 1;
                if list.items.iter().take(k).any(|e| rel.contains(&e.index)) {
                    hits += 1;
                }
            }
            assert_eq!(r.evaluated, evaluated);
            assert_eq!(r.excluded, nq - evaluated);
            let expected = if evaluated == 0 { 0.0 } else { 100.0 * hits as f64 / evaluated as f64 };
            assert_eq!(r.percent, expected);
        }
    }
}

fn sorted_set(v: Vec<(bool, usize)>) -> Vec<EntityId> {
    let mut out: Vec<EntityId> = v
        .into_iter()
        .map(|(img, i)| EntityId::new(if img { Modality::Image } else { Modality::Text }, i))
        .collect();
    out.sort();
    out.dedup();
    out
}

fn set_strategy() -> impl Strategy<Value = Vec<EntityId>> {
    prop::collection::vec((any::<bool>(), 0usize..12), 0..10).prop_map(sorted_set)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn jaccard_bounds_symmetry_identity(a in set_strategy(), b in set_strategy()) {
        let d = jaccard_distance(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, jaccard_distance(&b, &a));
        if !a.is_empty() {
            prop_assert_eq!(jaccard_distance(&a, &a), 0.0);
        }
    }
}

proptest! {
    #[test]
    fn rank_row_is_a_sorted_permutation(scores in prop::collection::vec(-3i32..3, 1..30)) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let ids: Vec<EntityId> = (0..scores.len()).map(EntityId::text).collect();
        let r = rank_row(EntityId::image(0), &scores, &ids).unwrap();
        let mut seen: Vec<usize> = r.items.iter().map(|e| e.index).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
        prop_assert!(r.is_sorted());
        for w in r.items.windows(2).zip(r.scores.windows(2)) {
            if w.1[0] == w.1[1] {
                prop_assert!(w.0[0].index < w.0[1].index);
            }
        }
    }

    #[test]
    fn recall_is_monotone_in_k(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = GroundTruth::new(4, 15, (0..4).map(|q| (q, rng.random_range(0..15)))).unwrap();
        let ids: Vec<EntityId> = (0..15).map(EntityId::text).collect();
        let rankings: Vec<_> = (0..4)
            .map(|q| {
                let s: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
                rank_row(EntityId::image(q), &s, &ids).unwrap()
            })
            .collect();
        let mut prev = 0.0;
        for k in 1..=15 {
            let r = recall_at_k(&rankings, &truth, k).unwrap().percent;
            prop_assert!(r >= prev);
            prev = r;
        }
        prop_assert_eq!(prev, 100.0);
    }

    #[test]
    fn raising_lambda_only_removes_edges(seed in 0u64..200, lo in 0.0f64..1.5, step in 0.0f64..1.5) {
        let store = small_store(seed % 7);
        let cfg = small_cfg(2, 4);
        let q = EntityId::text((seed as usize) % store.num_texts());
        let hood = Neighborhood::build(q, store.top_cross(q, 4), &store, None, &cfg, 0).unwrap();
        let sets: Vec<Vec<EntityId>> = std::iter::once(q)
            .chain(hood.neighbors.iter().copied())
            .map(|e| pillar_rerank_core::graph::merged_neighbor_set(e, &store, None, cfg.c))
            .collect();
        let a = neighbor_affinity(&sets, lo).values;
        let b = neighbor_affinity(&sets, lo + step).values;
        for i in 0..a.rows() {
            let fallback = b[(i, i)] == 1.0;
            for j in 0..a.cols() {
                if a[(i, j)] == 0.0 && !(i == j && fallback) {
                    prop_assert_eq!(b[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn losses_are_shift_invariant(
        raw in prop::collection::vec((-1.0f64..1.0, any::<bool>()), 2..12),
        shift in -5.0f64..5.0,
    ) {
        let (s, mut mask): (Vec<f64>, Vec<bool>) = raw.into_iter().unzip();
        mask[0] = true;
        let shifted: Vec<f64> = s.iter().map(|x| x + shift).collect();
        let c0 = contrastive_loss(&s, &mask, 1.0).unwrap();
        let c1 = contrastive_loss(&shifted, &mask, 1.0).unwrap();
        prop_assert!((c0 - c1).abs() < 1e-9);
        prop_assert!(c0 >= -1e-12);
        let t0 = triplet_loss(&s, &mask, 0.2).unwrap();
        let t1 = triplet_loss(&shifted, &mask, 0.2).unwrap();
        prop_assert!((t0 - t1).abs() < 1e-9);
        let other: Vec<f64> = s.iter().rev().copied().collect();
        let m0 = mma_loss(&s, &other, 1.0);
        let m1 = mma_loss(&shifted, &other, 1.0);
        prop_assert!((m0 - m1).abs() < 1e-9);
        prop_assert!(m0 >= -1e-12);
        prop_assert!(mma_loss(&s, &s, 1.0).abs() < 1e-15);
    }

    #[test]
    fn kl_is_nonnegative(p in prop::collection::vec(0.01f64..1.0, 3), q in prop::collection::vec(0.01f64..1.0, 3)) {
        let norm1 = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
        prop_assert!(kl_divergence(&norm1(p), &norm1(q)) >= -1e-15);
    }

    #[test]
    fn expanded_queries_have_unit_norm(
        q in prop::collection::vec(-1.0f64..1.0, 4),
        nb in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 4), -1.0f64..1.0), 0..6),
        n in 0usize..8,
        alpha in 0.0f64..5.0,
        v in 0usize..3,
    ) {
        prop_assume!(norm(&q) > 1e-3);
        let variant = [QeVariant::Aqe, QeVariant::AqeWd, QeVariant::AlphaQe][v];
        let unit = |x: &[f64]| { let n = norm(x); x.iter().map(|y| y / n).collect::<Vec<_>>() };
        let q = unit(&q);
        let nb: Vec<(Vec<f64>, f64)> = nb.into_iter().filter(|(x, _)| norm(x) > 1e-3).map(|(x, s)| (unit(&x), s)).collect();
        let refs: Vec<(&[f64], f64)> = nb.iter().map(|(x, s)| (x.as_slice(), *s)).collect();
        let out = expand_query(&q, &refs, &QeConfig { n_expand: n, alpha, variant });
        let len = norm(&out);
        prop_assert!(len == 0.0 || (len - 1.0).abs() < 1e-12);
        let aqe = expand_query(&q, &refs, &QeConfig { n_expand: n, alpha: 0.0, variant: QeVariant::Aqe });
        let alpha0 = expand_query(&q, &refs, &QeConfig { n_expand: n, alpha: 0.0, variant: QeVariant::AlphaQe });
        for (a, b) in aqe.iter().zip(&alpha0) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

//! Neighborhood graph reasoning: neighbor-based and learned affinities,
//! feature propagation, refined scores, and per-query re-ranking.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::data::{top_indices, EntityId, Modality, RankingList, SimilarityStore};
use crate::error::{Error, Result};
use crate::index::RankIndex;
use crate::matrix::Matrix;
use crate::params::{LayerParams, ReRankerParams};
use crate::pillar::{build_feature_matrix, select_pillars, PillarSet};

/// Which affinity a matrix holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffinityKind {
    NeighborBased,
    Learned,
    Blended,
}

/// Row-stochastic `(1+K) × (1+K)` edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    pub values: Matrix,
    pub kind: AffinityKind,
}

/// First `n` entries of `e`'s ranking over `target`, from the index when it
/// is deep enough.
fn ranked_head(
    e: EntityId,
    target: Modality,
    n: usize,
    store: &SimilarityStore,
    index: Option<&RankIndex>,
) -> Vec<EntityId> {
    match index {
        Some(ix) if ix.available(e, target) >= n.min(store.size(target)) => {
            ix.top(e, target, n).collect()
        }
        _ => top_indices(&store.scores(e, target), n)
            .into_iter()
            .map(|i| EntityId::new(target, i))
            .collect(),
    }
}

/// Union of the top-`c` intra-modal and top-`c` cross-modal entities of
/// `node`, sorted ascending. `c` is truncated to the database sizes.
pub fn merged_neighbor_set(
    node: EntityId,
    store: &SimilarityStore,
    index: Option<&RankIndex>,
    c: usize,
) -> Vec<EntityId> {
    let mut set = ranked_head(node, node.modality, c, store, index);
    set.extend(ranked_head(node, node.modality.other(), c, store, index));
    set.sort_unstable();
    set.dedup();
    set
}

fn intersection_size(a: &[EntityId], b: &[EntityId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Common-neighbor affinity over sorted neighbor sets (query first).
///
/// Raw weights are overlap counts normalized per row (the self term
/// included), entries `<= lambda / (1 + K)` are dropped, and rows are
/// renormalized. A row left empty falls back to a self-loop.
pub fn neighbor_affinity(sets: &[Vec<EntityId>], lambda: f64) -> AffinityMatrix {
    let n = sets.len();
    let threshold = lambda / n as f64;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        let counts: Vec<usize> = (0..n).map(|j| intersection_size(&sets[i], &sets[j])).collect();
        let total: usize = counts.iter().sum();
        let row = m.row_mut(i);
        if total > 0 {
            for (slot, &c) in row.iter_mut().zip(&counts) {
                let w = c as f64 / total as f64;
                *slot = if w > threshold { w } else { 0.0 };
            }
        }
        let kept: f64 = row.iter().sum();
        if kept > 0.0 {
            row.iter_mut().for_each(|v| *v /= kept);
        } else {
            row[i] = 1.0;
        }
    }
    AffinityMatrix {
        values: m,
        kind: AffinityKind::NeighborBased,
    }
}

/// A query, its top-K window, and the parameter-independent inputs of the
/// reasoner: pillar features and the neighbor-based affinity.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub query: EntityId,
    pub neighbors: Vec<EntityId>,
    pub pillars: PillarSet,
    pub features: Matrix,
    pub affinity: Matrix,
}

impl Neighborhood {
    pub fn build(
        query: EntityId,
        neighbors: Vec<EntityId>,
        store: &SimilarityStore,
        index: Option<&RankIndex>,
        cfg: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        let pillars = select_pillars(query, store, index, cfg.l, cfg.pillar_strategy, seed)?;
        let features = build_feature_matrix(query, &neighbors, &pillars, store)?;
        let sets: Vec<Vec<EntityId>> = core::iter::once(&query)
            .chain(&neighbors)
            .map(|&e| merged_neighbor_set(e, store, index, cfg.c))
            .collect();
        let affinity = neighbor_affinity(&sets, cfg.lambda).values;
        Ok(Self {
            query,
            neighbors,
            pillars,
            features,
            affinity,
        })
    }
}

/// Tape handles of one layer's tensors.
#[derive(Clone, Copy)]
pub struct LayerVars {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// Records every tensor of `params` as a tape leaf, in tensor order.
pub fn record_params(tape: &mut Tape, params: &ReRankerParams) -> Vec<LayerVars> {
    params
        .layers
        .iter()
        .map(|l: &LayerParams| LayerVars {
            wq: tape.leaf(l.wq.clone()),
            bq: tape.leaf(l.bq.clone()),
            wk: tape.leaf(l.wk.clone()),
            bk: tape.leaf(l.bk.clone()),
            wv: tape.leaf(l.wv.clone()),
            bv: tape.leaf(l.bv.clone()),
            w1: tape.leaf(l.w1.clone()),
            b1: tape.leaf(l.b1.clone()),
            w2: tape.leaf(l.w2.clone()),
            b2: tape.leaf(l.b2.clone()),
        })
        .collect()
}

/// Leaves of [`record_params`] flattened in tensor order.
pub fn layer_var_list(vars: &[LayerVars]) -> Vec<Var> {
    vars.iter()
        .flat_map(|v| [v.wq, v.bq, v.wk, v.bk, v.wv, v.bv, v.w1, v.b1, v.w2, v.b2])
        .collect()
}

/// `softmax((F·Wq + bq)(F·Wk + bk)ᵀ)` on the tape.
fn record_learned_affinity(tape: &mut Tape, f: Var, l: &LayerVars) -> Var {
    let q = tape.linear(f, l.wq, l.bq);
    let k = tape.linear(f, l.wk, l.bk);
    let logits = tape.matmul_t(q, k);
    tape.row_softmax(logits)
}

/// Records the propagation layers on `tape` and returns the refined
/// features `F*`.
pub fn record_propagation(
    tape: &mut Tape,
    features: Var,
    neighbor_affinity: Var,
    layers: &[LayerVars],
    cfg: &ModelConfig,
) -> Var {
    let n = tape.value(features).rows();
    let mut f = features;
    for l in layers {
        let a = match (cfg.use_neighbor_affinity, cfg.use_learned_affinity) {
            (true, true) => {
                let learned = record_learned_affinity(tape, f, l);
                let sum = tape.add(neighbor_affinity, learned);
                tape.scale(sum, 0.5)
            }
            (true, false) => neighbor_affinity,
            (false, true) => record_learned_affinity(tape, f, l),
            (false, false) => tape.leaf(Matrix::identity(n)),
        };
        let v = tape.linear(f, l.wv, l.bv);
        let mixed = tape.matmul(a, v);
        let h = tape.linear(mixed, l.w1, l.b1);
        let h = tape.relu(h);
        let g = tape.linear(h, l.w2, l.b2);
        f = tape.add(g, f);
    }
    f
}

/// Records the full submodel on `tape` and returns the `1 × K` refined
/// scores.
pub fn record_scores(
    tape: &mut Tape,
    hood: &Neighborhood,
    layers: &[LayerVars],
    cfg: &ModelConfig,
) -> Var {
    let f = tape.leaf(hood.features.clone());
    let a = tape.leaf(hood.affinity.clone());
    let refined = record_propagation(tape, f, a, layers, cfg);
    tape.query_cosine(refined)
}

fn check_shapes(features: &Matrix, params: &ReRankerParams, cfg: &ModelConfig) -> Result<()> {
    params.check(cfg)?;
    if features.cols() != cfg.feature_dim() {
        return Err(Error::Shape(alloc::format!(
            "features have {} columns, config expects {}",
            features.cols(),
            cfg.feature_dim()
        )));
    }
    Ok(())
}

/// The learned affinity of one layer for features `f`.
pub fn learned_affinity(f: &Matrix, layer: &LayerParams) -> AffinityMatrix {
    let mut t = Tape::new();
    let fv = t.leaf(f.clone());
    let vars = record_params(
        &mut t,
        &ReRankerParams {
            layers: alloc::vec![layer.clone()],
        },
    );
    let a = record_learned_affinity(&mut t, fv, &vars[0]);
    AffinityMatrix {
        values: t.value(a).clone(),
        kind: AffinityKind::Learned,
    }
}

/// Runs every layer on `features` with fixed neighbor affinity and returns
/// `F*`.
pub fn propagate(
    features: &Matrix,
    neighbor_affinity: &Matrix,
    params: &ReRankerParams,
    cfg: &ModelConfig,
) -> Result<Matrix> {
    check_shapes(features, params, cfg)?;
    let n = features.rows();
    if neighbor_affinity.shape() != (n, n) {
        return Err(Error::Shape(alloc::format!(
            "affinity is {:?}, expected ({n}, {n})",
            neighbor_affinity.shape()
        )));
    }
    let mut t = Tape::new();
    let f = t.leaf(features.clone());
    let a = t.leaf(neighbor_affinity.clone());
    let vars = record_params(&mut t, params);
    let out = record_propagation(&mut t, f, a, &vars, cfg);
    Ok(t.value(out).clone())
}

/// Cosine of the query row against each neighbor row of refined features.
/// Returns the scores and how many rows were degenerate (zero norm, scored
/// −1).
pub fn refined_scores(refined: &Matrix) -> (Vec<f64>, usize) {
    let mut t = Tape::new();
    let f = t.leaf(refined.clone());
    let s = t.query_cosine(f);
    (t.value(s).row(0).to_vec(), t.degenerate_rows())
}

/// A re-ranked list plus the refined scores of its window (in output order).
#[derive(Clone, Debug, PartialEq)]
pub struct Reranked {
    pub list: RankingList,
    pub refined: Vec<f64>,
    pub degenerate_rows: usize,
}

/// Reorders the top-K window of `query`'s base ranking by refined scores.
///
/// Items below the window keep their base order and scores. Window items
/// are reported with score `boundary + 1 + refined`, where `boundary` is the
/// base score just below the window, so the list stays non-increasing.
pub fn rerank_query(
    query: EntityId,
    store: &SimilarityStore,
    index: Option<&RankIndex>,
    params: &ReRankerParams,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<Reranked> {
    store.check(query)?;
    let base = store.ranking(query, query.modality.other());
    rerank_list(&base, store, index, params, cfg, seed)
}

/// [`rerank_query`] on an already computed base ranking.
pub fn rerank_list(
    base: &RankingList,
    store: &SimilarityStore,
    index: Option<&RankIndex>,
    params: &ReRankerParams,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<Reranked> {
    let dir = crate::data::Direction::of_query(base.query.modality);
    let k = cfg.k(dir).min(base.len());
    let hood = Neighborhood::build(base.query, base.items[..k].to_vec(), store, index, cfg, seed)?;
    check_shapes(&hood.features, params, cfg)?;
    let mut t = Tape::new();
    let vars = record_params(&mut t, params);
    let s = record_scores(&mut t, &hood, &vars, cfg);
    let scores = t.value(s).row(0).to_vec();
    Ok(apply_window(base, &scores, t.degenerate_rows()))
}

/// Sorts the first `scores.len()` items of `base` by `scores` (descending,
/// ascending index on ties) and leaves the rest untouched.
pub fn apply_window(base: &RankingList, scores: &[f64], degenerate_rows: usize) -> Reranked {
    let k = scores.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(base.items[a].cmp(&base.items[b]))
    });
    let boundary = if k < base.len() {
        base.scores[k]
    } else {
        base.scores[..k].iter().copied().fold(f64::INFINITY, f64::min)
    };
    let boundary = if boundary.is_finite() { boundary } else { 0.0 };
    let mut items = Vec::with_capacity(base.len());
    let mut out_scores = Vec::with_capacity(base.len());
    let mut refined = Vec::with_capacity(k);
    for &i in &order {
        items.push(base.items[i]);
        out_scores.push(boundary + (1.0 + scores[i]));
        refined.push(scores[i]);
    }
    items.extend_from_slice(&base.items[k..]);
    out_scores.extend_from_slice(&base.scores[k..]);
    Reranked {
        list: RankingList {
            query: base.query,
            items,
            scores: out_scores,
        },
        refined,
        degenerate_rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ids(v: &[(Modality, usize)]) -> Vec<EntityId> {
        let mut out: Vec<EntityId> = v.iter().map(|&(m, i)| EntityId::new(m, i)).collect();
        out.sort();
        out
    }

    /// Brute-force oracle for the neighbor affinity.
    fn oracle(sets: &[Vec<EntityId>], lambda: f64) -> Matrix {
        let n = sets.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            let counts: Vec<f64> = (0..n)
                .map(|j| sets[i].iter().filter(|e| sets[j].contains(e)).count() as f64)
                .collect();
            let total: f64 = counts.iter().sum();
            let mut row: Vec<f64> = counts
                .iter()
                .map(|c| c / total)
                .map(|w| if w > lambda / n as f64 { w } else { 0.0 })
                .collect();
            let s: f64 = row.iter().sum();
            if s == 0.0 {
                row[i] = 1.0;
            } else {
                row.iter_mut().for_each(|v| *v /= s);
            }
            m.row_mut(i).copy_from_slice(&row);
        }
        m
    }

    #[test]
    fn worked_three_node_example() {
        use Modality::Text as T;
        // a..e as texts 0..4
        let sets = vec![
            ids(&[(T, 0), (T, 1), (T, 2)]),
            ids(&[(T, 0), (T, 1), (T, 3)]),
            ids(&[(T, 3), (T, 4)]),
        ];
        let a = neighbor_affinity(&sets, 0.8).values;
        assert_eq!(a, oracle(&sets, 0.8));
        let expect = [[0.6, 0.4, 0.0], [0.4, 0.6, 0.0], [0.0, 1.0 / 3.0, 2.0 / 3.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[(i, j)] - expect[i][j]).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn disjoint_sets_give_identity_and_identical_sets_uniform() {
        use Modality::Image as I;
        let disjoint = vec![ids(&[(I, 0)]), ids(&[(I, 1)]), ids(&[(I, 2), (I, 3)])];
        assert_eq!(neighbor_affinity(&disjoint, 0.8).values, Matrix::identity(3));
        let same = vec![ids(&[(I, 0), (I, 1)]); 4];
        let a = neighbor_affinity(&same, 0.8).values;
        assert!(a.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn merged_set_unions_both_lists() {
        let cross = Matrix::from_rows(&[&[0.1, 0.2, 0.9, 0.3], &[0.5, 0.6, 0.7, 0.8]]);
        let ii = Matrix::from_rows(&[&[1.0, 0.2], &[0.2, 1.0]]);
        let tt = Matrix::identity(4);
        let s = SimilarityStore::new(cross, ii, tt, "t").unwrap();
        let set = merged_neighbor_set(EntityId::image(0), &s, None, 2);
        assert_eq!(
            set,
            vec![EntityId::image(0), EntityId::image(1), EntityId::text(2), EntityId::text(3)]
        );
        let one = merged_neighbor_set(EntityId::image(0), &s, None, 1);
        assert_eq!(one, vec![EntityId::image(0), EntityId::text(2)]);
        let ix = RankIndex::build(&s, 2);
        assert_eq!(merged_neighbor_set(EntityId::image(0), &s, Some(&ix), 2), set);
        // truncation
        assert_eq!(merged_neighbor_set(EntityId::image(0), &s, None, 10).len(), 6);
    }

    #[test]
    fn learned_affinity_zero_weights_is_uniform() {
        let cfg = ModelConfig {
            l: 1,
            hidden: 2,
            hidden_mid: 2,
            layers: 1,
            ..ModelConfig::default()
        };
        let p = ReRankerParams::zeros(&cfg);
        let f = Matrix::from_rows(&[&[0.3, 0.1], &[0.2, 0.5], &[0.9, 0.4]]);
        let a = learned_affinity(&f, &p.layers[0]).values;
        assert!(a.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn learned_affinity_scalar_softmax() {
        // logits row 0 = [ln 3, 0]: q0 = 1, k = (ln 3, 0)
        let cfg = ModelConfig {
            l: 1,
            hidden: 1,
            hidden_mid: 1,
            layers: 1,
            ..ModelConfig::default()
        };
        let mut p = ReRankerParams::zeros(&cfg);
        let layer = &mut p.layers[0];
        layer.wq = Matrix::from_rows(&[&[1.0], &[0.0]]);
        layer.wk = Matrix::from_rows(&[&[1.0], &[0.0]]);
        // q0 = k0 = sqrt(ln 3), k1 = 0, so logits row 0 = [ln 3, 0]
        let f = Matrix::from_rows(&[&[3f64.ln().sqrt(), 0.0], &[0.0, 0.0]]);
        let a = learned_affinity(&f, &p.layers[0]).values;
        assert!((a[(0, 0)] - 0.75).abs() < 1e-12);
        assert!((a[(0, 1)] - 0.25).abs() < 1e-12);
        assert!((a.row_sums()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn propagation_matches_hand_computation() {
        // two nodes, L = 1, hidden = 2, one layer, neighbor affinity only
        let cfg = ModelConfig {
            l: 1,
            hidden: 2,
            hidden_mid: 2,
            layers: 1,
            use_learned_affinity: false,
            ..ModelConfig::default()
        };
        let mut p = ReRankerParams::zeros(&cfg);
        let l = &mut p.layers[0];
        l.wv = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        l.bv = Matrix::from_rows(&[&[0.5, -1.0]]);
        l.w1 = Matrix::identity(2);
        l.b1 = Matrix::from_rows(&[&[0.0, 0.0]]);
        l.w2 = Matrix::from_rows(&[&[1.0, 1.0], &[-1.0, 0.5]]);
        l.b2 = Matrix::from_rows(&[&[0.1, 0.2]]);
        let f = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let a = Matrix::from_rows(&[&[0.5, 0.5], &[0.25, 0.75]]);
        let out = propagate(&f, &a, &p, &cfg).unwrap();
        // matrix-multiply oracle
        // V = F·Wv + bv = [[1.5, 3], [3.5, -3]]
        // A·V = [[2.5, 0], [3.0, -1.5]]
        // relu -> [[2.5, 0], [3.0, 0]]
        // ·W2 + b2 = [[2.6, 2.7], [3.1, 3.2]]
        // + F = [[3.6, 4.7], [6.1, 2.2]]
        let expect = Matrix::from_rows(&[&[3.6, 4.7], &[6.1, 2.2]]);
        for (x, y) in out.as_slice().iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let cfg = ModelConfig {
            l: 2,
            hidden: 4,
            hidden_mid: 3,
            layers: 2,
            ..ModelConfig::default()
        };
        let mut p = crate::params::Model::init(&cfg, 3).i2t;
        p.zero_transform_output();
        let f = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.1 - 0.5);
        let a = Matrix::from_fn(3, 3, |_, _| 1.0 / 3.0);
        assert_eq!(propagate(&f, &a, &p, &cfg).unwrap(), f);
        // single node
        let f1 = Matrix::from_rows(&[&[0.2, 0.1, -0.3, 0.4]]);
        assert_eq!(propagate(&f1, &Matrix::identity(1), &p, &cfg).unwrap(), f1);
    }

    #[test]
    fn single_node_reduces_to_transform() {
        let cfg = ModelConfig {
            l: 1,
            hidden: 3,
            hidden_mid: 3,
            layers: 1,
            ..ModelConfig::default()
        };
        let p = crate::params::Model::init(&cfg, 5).i2t;
        let f = Matrix::from_rows(&[&[0.4, -0.7]]);
        let out = propagate(&f, &Matrix::identity(1), &p, &cfg).unwrap();
        let l = &p.layers[0];
        let mut v = f.matmul(&l.wv);
        v.add_assign(&l.bv);
        let mut h = v.matmul(&l.w1);
        h.add_assign(&l.b1);
        let h = h.map(|x| x.max(0.0));
        let mut g = h.matmul(&l.w2);
        g.add_assign(&l.b2);
        g.add_assign(&f);
        for (x, y) in out.as_slice().iter().zip(g.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = ModelConfig {
            l: 2,
            hidden: 2,
            hidden_mid: 2,
            layers: 1,
            ..ModelConfig::default()
        };
        let p = ReRankerParams::zeros(&cfg);
        let f = Matrix::zeros(2, 3);
        assert!(matches!(
            propagate(&f, &Matrix::identity(2), &p, &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn refined_score_examples() {
        let f = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]]);
        let (s, bad) = refined_scores(&f);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert_eq!(s[3], -1.0);
        assert_eq!(bad, 1);
    }

    #[test]
    fn window_is_reordered_and_tail_frozen() {
        let base = RankingList {
            query: EntityId::image(0),
            items: (0..5).map(EntityId::text).collect(),
            scores: vec![0.9, 0.8, 0.7, 0.6, 0.5],
        };
        let r = apply_window(&base, &[0.1, 0.5, 0.5], 0);
        assert_eq!(
            r.list.items,
            vec![
                EntityId::text(1),
                EntityId::text(2),
                EntityId::text(0),
                EntityId::text(3),
                EntityId::text(4)
            ]
        );
        assert_eq!(&r.list.scores[3..], &base.scores[3..]);
        assert!(r.list.is_sorted());
        assert_eq!(r.refined, vec![0.5, 0.5, 0.1]);
    }
}

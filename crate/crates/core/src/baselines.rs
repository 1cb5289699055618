//! Classic re-ranking comparators: average query expansion and its
//! weighted variants, database-side augmentation, and k-reciprocal
//! Jaccard re-ranking.
//!
//! Expansion baselines need embeddings; they only apply to bundles that
//! carry them (two-tower style backbones).

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::{
    rank_row, top_indices, DatasetBundle, Direction, EmbeddingSet,
    EntityId, Modality, RankingList, SimilarityStore,
};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::graph::apply_window;
use crate::index::RankIndex;
use crate::matrix::{dot, norm, powf, Matrix};

/// Neighbor weighting of a query expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QeVariant {
    /// Unweighted mean.
    Aqe,
    /// Linearly decaying weights `(n − i) / n`.
    AqeWd,
    /// Weights `max(score, 0)^alpha`.
    AlphaQe,
}

impl QeVariant {
    pub fn name(self) -> &'static str {
        match self {
            QeVariant::Aqe => "aqe",
            QeVariant::AqeWd => "aqewd",
            QeVariant::AlphaQe => "alphaqe",
        }
    }
}

impl fmt::Display for QeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "aqe" => QeVariant::Aqe,
            "aqewd" => QeVariant::AqeWd,
            "alphaqe" => QeVariant::AlphaQe,
            other => return Err(Error::Config(format!("unknown expansion variant `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QeConfig {
    pub n_expand: usize,
    pub alpha: f64,
    pub variant: QeVariant,
}

impl QeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }

    fn weight(&self, i: usize, n: usize, score: f64) -> f64 {
        match self.variant {
            QeVariant::Aqe => 1.0,
            QeVariant::AqeWd => (n - i) as f64 / n as f64,
            QeVariant::AlphaQe => powf(score.max(0.0), self.alpha),
        }
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.into_iter().map(|x| x / n).collect()
    } else {
        v
    }
}

/// Expands `query` with its ranked `neighbors` (embedding, score) and
/// returns the unit-length result. The query itself has weight 1.
pub fn expand_query(query: &[f64], neighbors: &[(&[f64], f64)], cfg: &QeConfig) -> Vec<f64> {
    let n = cfg.n_expand.min(neighbors.len());
    let mut acc = query.to_vec();
    let mut total = 1.0;
    for (i, &(x, s)) in neighbors[..n].iter().enumerate() {
        debug_assert_eq!(x.len(), acc.len());
        let w = cfg.weight(i, n, s);
        total += w;
        for (a, &xi) in acc.iter_mut().zip(x) {
            *a += w * xi;
        }
    }
    normalized(acc.into_iter().map(|a| a / total).collect())
}

fn embeddings(bundle: &DatasetBundle, m: Modality) -> Result<&EmbeddingSet> {
    bundle.embeddings(m).ok_or_else(|| {
        Error::Capability(format!(
            "expansion baselines need {} embeddings in the bundle",
            m.tag()
        ))
    })
}

fn unit_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let n = norm(out.row(i));
        if n > 0.0 {
            out.row_mut(i).iter_mut().for_each(|x| *x /= n);
        }
    }
    out
}

fn rank_by_cosine(query: EntityId, q: &[f64], db: &Matrix, target: Modality) -> RankingList {
    let qn = norm(q);
    let scores: Vec<f64> = (0..db.rows())
        .map(|j| {
            let dn = norm(db.row(j));
            if qn == 0.0 || dn == 0.0 {
                0.0
            } else {
                dot(q, db.row(j)) / (qn * dn)
            }
        })
        .collect();
    let ids: Vec<EntityId> = (0..db.rows()).map(|j| EntityId::new(target, j)).collect();
    rank_row(query, &scores, &ids).expect("cosine scores are finite")
}

/// Query expansion against the base ranking, then re-retrieval by cosine.
/// `n_expand = 0` returns the base ranking unchanged.
pub fn qe_rankings<E: Executor>(
    bundle: &DatasetBundle,
    queries: &[EntityId],
    cfg: &QeConfig,
    exec: &E,
) -> Result<Vec<RankingList>> {
    cfg.validate()?;
    let store = &bundle.store;
    if cfg.n_expand == 0 {
        return Ok(exec.map(queries.len(), |i| {
            store.ranking(queries[i], queries[i].modality.other())
        }));
    }
    for m in [Modality::Image, Modality::Text] {
        embeddings(bundle, m)?;
    }
    Ok(exec.map(queries.len(), |i| {
        let q = queries[i];
        let target = q.modality.other();
        let qe = embeddings(bundle, q.modality).unwrap();
        let db = embeddings(bundle, target).unwrap();
        let base = store.ranking(q, target);
        let nbrs: Vec<(&[f64], f64)> = base
            .items
            .iter()
            .zip(&base.scores)
            .take(cfg.n_expand)
            .map(|(e, &s)| (db.rows.row(e.index), s))
            .collect();
        let expanded = expand_query(qe.rows.row(q.index), &nbrs, cfg);
        rank_by_cosine(q, &expanded, &db.rows, target)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DbaPipeline {
    /// Augment the database, then expand queries against it.
    Sequential,
    /// Augment queries and database together in one pool.
    Joint,
}

/// Database-side augmentation. `variant` selects the weighting of both the
/// database and the query expansion (ADBA/AQE, ADBAwD/AQEwD, αDBA/αQE).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DbaMode {
    pub variant: QeVariant,
    pub pipeline: DbaPipeline,
}

/// Expands every row of `pool` with its top-`n` other rows by cosine.
fn augment_pool(pool: &Matrix, cfg: &QeConfig) -> Matrix {
    let unit = unit_rows(pool);
    let sims = unit.matmul_transposed(&unit);
    let mut out = Matrix::zeros(pool.rows(), pool.cols());
    for i in 0..pool.rows() {
        let mut scores = sims.row(i).to_vec();
        scores[i] = f64::NEG_INFINITY;
        let nbrs: Vec<(&[f64], f64)> = top_indices(&scores, cfg.n_expand.min(pool.rows() - 1))
            .into_iter()
            .map(|j| (unit.row(j), sims[(i, j)]))
            .collect();
        out.row_mut(i).copy_from_slice(&expand_query(unit.row(i), &nbrs, cfg));
    }
    out
}

/// Augmented database rows and query rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub database: Matrix,
    pub queries: Matrix,
}

/// Database-side augmentation of `database` with `queries` handled per
/// `mode.pipeline`.
pub fn dba_augment(database: &Matrix, queries: &Matrix, mode: DbaMode, cfg: &QeConfig) -> Result<Augmented> {
    cfg.validate()?;
    if database.cols() != queries.cols() {
        return Err(Error::Shape("query and database embeddings differ in dimension".into()));
    }
    let cfg = QeConfig {
        variant: mode.variant,
        ..*cfg
    };
    match mode.pipeline {
        DbaPipeline::Sequential => {
            let db = if database.rows() > 0 {
                augment_pool(database, &cfg)
            } else {
                database.clone()
            };
            let mut qs = Matrix::zeros(queries.rows(), queries.cols());
            for i in 0..queries.rows() {
                let q = queries.row(i);
                let qn = norm(q);
                let scores: Vec<f64> = (0..db.rows())
                    .map(|j| if qn == 0.0 { 0.0 } else { dot(q, db.row(j)) / qn })
                    .collect();
                let nbrs: Vec<(&[f64], f64)> = top_indices(&scores, cfg.n_expand)
                    .into_iter()
                    .map(|j| (db.row(j), scores[j]))
                    .collect();
                qs.row_mut(i).copy_from_slice(&expand_query(q, &nbrs, &cfg));
            }
            Ok(Augmented {
                database: db,
                queries: qs,
            })
        }
        DbaPipeline::Joint => {
            let mut data = queries.as_slice().to_vec();
            data.extend_from_slice(database.as_slice());
            let pool = Matrix::from_vec(queries.rows() + database.rows(), queries.cols(), data)
                .expect("pool shape");
            let aug = if pool.rows() > 0 { augment_pool(&pool, &cfg) } else { pool };
            let (q, d) = aug.as_slice().split_at(queries.rows() * queries.cols());
            Ok(Augmented {
                queries: Matrix::from_vec(queries.rows(), queries.cols(), q.to_vec()).unwrap(),
                database: Matrix::from_vec(database.rows(), database.cols(), d.to_vec()).unwrap(),
            })
        }
    }
}

/// Rankings of `queries` (all of one direction) after database-side
/// augmentation.
pub fn dba_rankings<E: Executor>(
    bundle: &DatasetBundle,
    dir: Direction,
    queries: &[usize],
    mode: DbaMode,
    cfg: &QeConfig,
    exec: &E,
) -> Result<Vec<RankingList>> {
    let qe = embeddings(bundle, dir.query_modality())?;
    let db = embeddings(bundle, dir.item_modality())?;
    let mut qrows = Matrix::zeros(queries.len(), qe.dim());
    for (r, &q) in queries.iter().enumerate() {
        bundle.store.check(EntityId::new(dir.query_modality(), q))?;
        qrows.row_mut(r).copy_from_slice(qe.rows.row(q));
    }
    let aug = dba_augment(&db.rows, &qrows, mode, cfg)?;
    Ok(exec.map(queries.len(), |r| {
        rank_by_cosine(
            EntityId::new(dir.query_modality(), queries[r]),
            aug.queries.row(r),
            &aug.database,
            dir.item_modality(),
        )
    }))
}

/// Jaccard distance between two sorted sets; 1 when both are empty.
pub fn jaccard_distance(a: &[EntityId], b: &[EntityId]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

fn in_top(e: EntityId, of: EntityId, k1: usize, store: &SimilarityStore, index: &RankIndex) -> bool {
    if index.available(of, e.modality) >= k1.min(store.size(e.modality)) {
        index.top(of, e.modality, k1).any(|x| x == e)
    } else {
        top_indices(&store.scores(of, e.modality), k1).contains(&e.index)
    }
}

/// k-reciprocal set of `e` over both its intra- and cross-modal lists:
/// entities in `e`'s top-`k1` whose own top-`k1` over `e`'s modality
/// contains `e`. Sorted ascending.
pub fn reciprocal_set(e: EntityId, k1: usize, store: &SimilarityStore, index: &RankIndex) -> Vec<EntityId> {
    let mut out = Vec::new();
    for target in [e.modality, e.modality.other()] {
        let head: Vec<EntityId> = if index.available(e, target) >= k1.min(store.size(target)) {
            index.top(e, target, k1).collect()
        } else {
            top_indices(&store.scores(e, target), k1)
                .into_iter()
                .map(|i| EntityId::new(target, i))
                .collect()
        };
        out.extend(head.into_iter().filter(|&x| in_top(e, x, k1, store, index)));
    }
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KReciprocalConfig {
    pub k1: usize,
    /// Weight of the original-score term, in `[0, 1]`.
    pub blend: f64,
    /// Re-ranked window size.
    pub window: usize,
}

impl Default for KReciprocalConfig {
    fn default() -> Self {
        Self {
            k1: 10,
            blend: 0.3,
            window: 10,
        }
    }
}

/// Re-ranks the top window of `query`'s base ranking by a blend of Jaccard
/// distance between reciprocal sets and the min-max normalized base score.
pub fn k_reciprocal_rerank(
    query: EntityId,
    store: &SimilarityStore,
    index: &RankIndex,
    cfg: &KReciprocalConfig,
) -> Result<RankingList> {
    if !(0.0..=1.0).contains(&cfg.blend) {
        return Err(Error::Config(format!("blend must lie in [0, 1], got {}", cfg.blend)));
    }
    if cfg.k1 == 0 {
        return Err(Error::Config("k1 must be positive".into()));
    }
    store.check(query)?;
    let base = store.ranking(query, query.modality.other());
    let k = cfg.window.min(base.len());
    let window = &base.scores[..k];
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let rq = reciprocal_set(query, cfg.k1, store, index);
    let neg_dist: Vec<f64> = (0..k)
        .map(|i| {
            let ri = reciprocal_set(base.items[i], cfg.k1, store, index);
            let dj = jaccard_distance(&rq, &ri);
            let norm_score = if hi > lo { (base.scores[i] - lo) / (hi - lo) } else { 1.0 };
            -((1.0 - cfg.blend) * dj + cfg.blend * (1.0 - norm_score))
        })
        .collect();
    Ok(apply_window(&base, &neg_dist, 0).list)
}

//! Pillar selection and pillar-space encoding.
//!
//! A query's pillars are `L` entities of the opposite modality (the inter
//! block) and `L` of its own modality (the intra block). Every entity in the
//! query's neighborhood is then described by its similarities to those `2L`
//! pillars, so the query and its neighbors share one coordinate system.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{bottom_indices, top_indices, EntityId, Modality, SimilarityStore};
use crate::error::{Error, Result};
use crate::index::RankIndex;
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum PillarStrategy {
    #[default]
    TopRanked,
    BottomRanked,
    Random,
    /// Inter-modal pillars only; the intra block is zero.
    InterOnly,
    /// Intra-modal pillars only; the inter block is zero.
    IntraOnly,
}

impl PillarStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PillarStrategy::TopRanked => "top",
            PillarStrategy::BottomRanked => "bottom",
            PillarStrategy::Random => "random",
            PillarStrategy::InterOnly => "inter-only",
            PillarStrategy::IntraOnly => "intra-only",
        }
    }
}

impl fmt::Display for PillarStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PillarStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "top" => PillarStrategy::TopRanked,
            "bottom" => PillarStrategy::BottomRanked,
            "random" => PillarStrategy::Random,
            "inter-only" => PillarStrategy::InterOnly,
            "intra-only" => PillarStrategy::IntraOnly,
            other => return Err(Error::Config(format!("unknown pillar strategy `{other}`"))),
        })
    }
}

/// The pillars of one query. Columns `0..L` of an encoding refer to `inter`,
/// columns `L..2L` to `intra`; an empty block encodes as zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PillarSet {
    pub width: usize,
    pub inter: Vec<EntityId>,
    pub intra: Vec<EntityId>,
    pub strategy: PillarStrategy,
}

impl PillarSet {
    pub fn dim(&self) -> usize {
        2 * self.width
    }
}

fn seed_for(seed: u64, query: EntityId) -> u64 {
    let tag = match query.modality {
        Modality::Image => 0x1u64,
        Modality::Text => 0x2u64,
    };
    seed ^ (query.index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag.rotate_left(56)
}

/// Chooses `l` inter- and `l` intra-modal pillars for `query`.
///
/// The query itself is eligible as an intra pillar; under `TopRanked` with a
/// cosine-derived intra matrix it is normally the first one.
pub fn select_pillars(
    query: EntityId,
    store: &SimilarityStore,
    index: Option<&RankIndex>,
    l: usize,
    strategy: PillarStrategy,
    seed: u64,
) -> Result<PillarSet> {
    store.check(query)?;
    if l == 0 {
        return Err(Error::Config("pillar count L must be positive".into()));
    }
    let same = query.modality;
    let other = same.other();
    for m in [same, other] {
        if l > store.size(m) {
            return Err(Error::Config(format!(
                "L = {l} exceeds the {} database size {}",
                m.tag(),
                store.size(m)
            )));
        }
    }

    let head = |target: Modality| -> Vec<EntityId> {
        match index {
            Some(ix) if ix.available(query, target) >= l => ix.top(query, target, l).collect(),
            _ => top_indices(&store.scores(query, target), l)
                .into_iter()
                .map(|i| EntityId::new(target, i))
                .collect(),
        }
    };
    let tail = |target: Modality| -> Vec<EntityId> {
        match index {
            Some(ix) if ix.available(query, target) >= l => ix.bottom(query, target, l).collect(),
            _ => bottom_indices(&store.scores(query, target), l)
                .into_iter()
                .map(|i| EntityId::new(target, i))
                .collect(),
        }
    };

    let (inter, intra) = match strategy {
        PillarStrategy::TopRanked => (head(other), head(same)),
        PillarStrategy::BottomRanked => (tail(other), tail(same)),
        PillarStrategy::InterOnly => (head(other), Vec::new()),
        PillarStrategy::IntraOnly => (Vec::new(), head(same)),
        PillarStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_for(seed, query));
            let mut draw = |target: Modality| -> Vec<EntityId> {
                rand::seq::index::sample(&mut rng, store.size(target), l)
                    .into_iter()
                    .map(|i| EntityId::new(target, i))
                    .collect()
            };
            let inter = draw(other);
            let intra = draw(same);
            (inter, intra)
        }
    };
    Ok(PillarSet {
        width: l,
        inter,
        intra,
        strategy,
    })
}

/// Similarities of `e` to every pillar, `2L` coordinates.
pub fn encode_entity(e: EntityId, pillars: &PillarSet, store: &SimilarityStore) -> Vec<f64> {
    let mut out = alloc::vec![0.0; pillars.dim()];
    encode_into(e, pillars, store, &mut out);
    out
}

fn encode_into(e: EntityId, pillars: &PillarSet, store: &SimilarityStore, out: &mut [f64]) {
    let (inter_cols, intra_cols) = out.split_at_mut(pillars.width);
    for (slot, &p) in inter_cols.iter_mut().zip(&pillars.inter) {
        *slot = store.sim(e, p);
    }
    for (slot, &p) in intra_cols.iter_mut().zip(&pillars.intra) {
        *slot = store.sim(e, p);
    }
}

/// Stacks the encodings of `query` (row 0) and `neighbors` (rows 1..=K).
pub fn build_feature_matrix(
    query: EntityId,
    neighbors: &[EntityId],
    pillars: &PillarSet,
    store: &SimilarityStore,
) -> Result<Matrix> {
    let mut f = Matrix::zeros(1 + neighbors.len(), pillars.dim());
    for (r, &e) in core::iter::once(&query).chain(neighbors).enumerate() {
        store.check(e)?;
        encode_into(e, pillars, store, f.row_mut(r));
    }
    Ok(f)
}

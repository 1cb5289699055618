//! Entity identity, similarity storage and ranking primitives.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Image => "img",
            Modality::Text => "txt",
        }
    }
}

/// An image or a text, addressed by its position in its modality's database.
///
/// Ordering is modality first, then index, so that sorting a list of ids of
/// one modality orders them by index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    pub modality: Modality,
    pub index: usize,
}

impl EntityId {
    pub const fn image(index: usize) -> Self {
        Self {
            modality: Modality::Image,
            index,
        }
    }

    pub const fn text(index: usize) -> Self {
        Self {
            modality: Modality::Text,
            index,
        }
    }

    pub const fn new(modality: Modality, index: usize) -> Self {
        Self { modality, index }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.modality.tag(), self.index)
    }
}

/// Retrieval direction. Each direction has its own re-ranking submodel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    I2T,
    T2I,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::I2T, Direction::T2I];

    pub fn query_modality(self) -> Modality {
        match self {
            Direction::I2T => Modality::Image,
            Direction::T2I => Modality::Text,
        }
    }

    pub fn item_modality(self) -> Modality {
        self.query_modality().other()
    }

    pub fn of_query(modality: Modality) -> Self {
        match modality {
            Modality::Image => Direction::I2T,
            Modality::Text => Direction::T2I,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::I2T => Direction::T2I,
            Direction::T2I => Direction::I2T,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::I2T => "i2t",
            Direction::T2I => "t2i",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::I2T => 0,
            Direction::T2I => 1,
        }
    }
}

/// The similarity views the engine consumes: cross-modal scores plus one
/// intra-modal matrix per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityStore {
    cross: Matrix,
    intra_image: Matrix,
    intra_text: Matrix,
    pub source_tag: String,
}

/// Tolerance for the symmetry check on intra-modal matrices.
pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

impl SimilarityStore {
    /// Validates shapes, finiteness and symmetry of the intra-modal views.
    pub fn new(
        cross: Matrix,
        intra_image: Matrix,
        intra_text: Matrix,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        let (m, n) = cross.shape();
        if intra_image.shape() != (m, m) {
            return Err(Error::Shape(format!(
                "image intra matrix is {:?}, expected ({m}, {m})",
                intra_image.shape()
            )));
        }
        if intra_text.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "text intra matrix is {:?}, expected ({n}, {n})",
                intra_text.shape()
            )));
        }
        for (name, mat) in [
            ("cross", &cross),
            ("intra_image", &intra_image),
            ("intra_text", &intra_text),
        ] {
            if !mat.is_finite() {
                return Err(Error::RejectedInput(format!("{name} matrix has non-finite entries")));
            }
        }
        for (name, mat) in [("intra_image", &intra_image), ("intra_text", &intra_text)] {
            let k = mat.rows();
            for i in 0..k {
                for j in (i + 1)..k {
                    if crate::matrix::abs(mat[(i, j)] - mat[(j, i)]) > SYMMETRY_TOLERANCE {
                        return Err(Error::RejectedInput(format!(
                            "{name} matrix is not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            cross,
            intra_image,
            intra_text,
            source_tag: source_tag.into(),
        })
    }

    /// Derives both intra-modal matrices as cosine similarities of the
    /// supplied embeddings.
    pub fn from_embeddings(
        cross: Matrix,
        images: &EmbeddingSet,
        texts: &EmbeddingSet,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        let intra_image = cosine_similarity_matrix(images, images)?;
        let intra_text = cosine_similarity_matrix(texts, texts)?;
        Self::new(cross, intra_image, intra_text, source_tag)
    }

    pub fn num_images(&self) -> usize {
        self.cross.rows()
    }

    pub fn num_texts(&self) -> usize {
        self.cross.cols()
    }

    pub fn size(&self, modality: Modality) -> usize {
        match modality {
            Modality::Image => self.num_images(),
            Modality::Text => self.num_texts(),
        }
    }

    pub fn cross(&self) -> &Matrix {
        &self.cross
    }

    pub fn intra(&self, modality: Modality) -> &Matrix {
        match modality {
            Modality::Image => &self.intra_image,
            Modality::Text => &self.intra_text,
        }
    }

    pub fn contains(&self, e: EntityId) -> bool {
        e.index < self.size(e.modality)
    }

    pub fn check(&self, e: EntityId) -> Result<()> {
        if self.contains(e) {
            Ok(())
        } else {
            Err(Error::OutOfRange(e))
        }
    }

    /// Similarity between any two entities: the cross-modal score when the
    /// modalities differ, the intra-modal score when they match.
    #[inline]
    pub fn sim(&self, a: EntityId, b: EntityId) -> f64 {
        match (a.modality, b.modality) {
            (Modality::Image, Modality::Text) => self.cross[(a.index, b.index)],
            (Modality::Text, Modality::Image) => self.cross[(b.index, a.index)],
            (m, _) => self.intra(m)[(a.index, b.index)],
        }
    }

    /// Scores of `e` against every entity of `target` modality.
    pub fn scores(&self, e: EntityId, target: Modality) -> Vec<f64> {
        match (e.modality, target) {
            (Modality::Image, Modality::Text) => self.cross.row(e.index).to_vec(),
            (Modality::Text, Modality::Image) => {
                (0..self.num_images()).map(|i| self.cross[(i, e.index)]).collect()
            }
            (m, _) => self.intra(m).row(e.index).to_vec(),
        }
    }

    /// Full descending ranking of `target`-modality entities for `e`.
    pub fn ranking(&self, e: EntityId, target: Modality) -> RankingList {
        let scores = self.scores(e, target);
        let ids: Vec<EntityId> = (0..scores.len()).map(|i| EntityId::new(target, i)).collect();
        rank_row(e, &scores, &ids).expect("store scores are finite by construction")
    }

    /// Top-K cross-modal neighbors of `query` from its base ranking.
    pub fn top_cross(&self, query: EntityId, k: usize) -> Vec<EntityId> {
        let target = query.modality.other();
        let scores = self.scores(query, target);
        top_indices(&scores, k)
            .into_iter()
            .map(|i| EntityId::new(target, i))
            .collect()
    }
}

/// Descending-by-score comparison with ascending-index tie break. Scores are
/// assumed finite.
#[inline]
pub(crate) fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `k` best scores in rank order.
pub(crate) fn top_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    idx
}

/// Indices of the `k` worst scores, listed in rank order (best of them first).
pub(crate) fn bottom_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let n = scores.len();
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < n {
        idx.select_nth_unstable_by(n - k, |&a, &b| rank_order(scores, a, b));
        idx.drain(..n - k);
    }
    idx.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    idx
}

/// Embeddings of one modality's database.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub modality: Modality,
    pub rows: Matrix,
}

impl EmbeddingSet {
    pub fn new(modality: Modality, rows: Matrix) -> Result<Self> {
        if rows.cols() == 0 {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        if !rows.is_finite() {
            return Err(Error::RejectedInput("embeddings contain non-finite values".into()));
        }
        Ok(Self { modality, rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cosine similarity between every row of `a` and every row of `b`.
pub fn cosine_similarity_matrix(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<Matrix> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let norms = |set: &EmbeddingSet, what: &'static str| -> Result<Vec<f64>> {
        (0..set.len())
            .map(|i| {
                let n = norm(set.rows.row(i));
                if n == 0.0 {
                    Err(Error::DegenerateEmbedding { what, row: i })
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let na = norms(a, a.modality.tag())?;
    let nb = norms(b, b.modality.tag())?;
    Ok(Matrix::from_fn(a.len(), b.len(), |i, j| {
        (dot(a.rows.row(i), b.rows.row(j)) / (na[i] * nb[j])).clamp(-1.0, 1.0)
    }))
}

/// A query's ranked items with their (non-increasing) scores.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingList {
    pub query: EntityId,
    pub items: Vec<EntityId>,
    pub scores: Vec<f64>,
}

impl RankingList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.scores.windows(2).all(|w| w[0] >= w[1])
    }
}

/// Sorts `ids` by descending score, equal scores by ascending id.
pub fn rank_row(query: EntityId, scores: &[f64], ids: &[EntityId]) -> Result<RankingList> {
    if scores.len() != ids.len() {
        return Err(Error::RejectedInput(format!(
            "{} scores for {} ids",
            scores.len(),
            ids.len()
        )));
    }
    if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::RejectedInput(format!("non-finite score at position {pos}")));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    Ok(RankingList {
        query,
        items: order.iter().map(|&i| ids[i]).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
    })
}

/// Image-text relevance pairs with per-entity lookup tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    by_image: Vec<Vec<usize>>,
    by_text: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn new(
        num_images: usize,
        num_texts: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, t) in pairs {
            if i >= num_images {
                return Err(Error::OutOfRange(EntityId::image(i)));
            }
            if t >= num_texts {
                return Err(Error::OutOfRange(EntityId::text(t)));
            }
            set.insert((i, t));
        }
        let mut by_image = alloc::vec![Vec::new(); num_images];
        let mut by_text = alloc::vec![Vec::new(); num_texts];
        for (i, t) in set {
            by_image[i].push(t);
            by_text[t].push(i);
        }
        by_text.iter_mut().for_each(|v| v.sort_unstable());
        Ok(Self { by_image, by_text })
    }

    pub fn num_images(&self) -> usize {
        self.by_image.len()
    }

    pub fn num_texts(&self) -> usize {
        self.by_text.len()
    }

    /// Ground-truth matches of `e` in the other modality, ascending.
    pub fn positives(&self, e: EntityId) -> &[usize] {
        match e.modality {
            Modality::Image => self.by_image.get(e.index).map_or(&[], Vec::as_slice),
            Modality::Text => self.by_text.get(e.index).map_or(&[], Vec::as_slice),
        }
    }

    pub fn is_relevant(&self, query: EntityId, item: EntityId) -> bool {
        query.modality != item.modality && self.positives(query).binary_search(&item.index).is_ok()
    }

    /// All pairs in ascending (image, text) order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.by_image
            .iter()
            .enumerate()
            .flat_map(|(i, ts)| ts.iter().map(move |&t| (i, t)))
    }

    pub fn len(&self) -> usize {
        self.by_image.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Query index sets per split and direction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    sets: [[Vec<usize>; 2]; 3],
}

impl Splits {
    pub fn get(&self, split: Split, dir: Direction) -> &[usize] {
        &self.sets[split.index()][dir.index()]
    }

    pub fn set(&mut self, split: Split, dir: Direction, queries: Vec<usize>) {
        self.sets[split.index()][dir.index()] = queries;
    }

    pub fn queries(&self, split: Split, dir: Direction) -> impl Iterator<Item = EntityId> + '_ {
        let m = dir.query_modality();
        self.get(split, dir).iter().map(move |&i| EntityId::new(m, i))
    }
}

/// Similarity store, ground truth, splits and optional embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub store: SimilarityStore,
    pub truth: GroundTruth,
    pub splits: Splits,
    pub image_embeddings: Option<EmbeddingSet>,
    pub text_embeddings: Option<EmbeddingSet>,
}

impl DatasetBundle {
    /// Checks cross-component consistency: truth and embedding sizes, valid
    /// and pairwise-disjoint split ids.
    pub fn new(
        store: SimilarityStore,
        truth: GroundTruth,
        splits: Splits,
        image_embeddings: Option<EmbeddingSet>,
        text_embeddings: Option<EmbeddingSet>,
    ) -> Result<Self> {
        if truth.num_images() != store.num_images() || truth.num_texts() != store.num_texts() {
            return Err(Error::Shape("ground truth does not match the store size".into()));
        }
        for (emb, m) in [
            (&image_embeddings, Modality::Image),
            (&text_embeddings, Modality::Text),
        ] {
            if let Some(e) = emb {
                if e.modality != m || e.len() != store.size(m) {
                    return Err(Error::Shape(format!(
                        "{} embeddings have {} rows, store has {}",
                        m.tag(),
                        e.len(),
                        store.size(m)
                    )));
                }
            }
        }
        for dir in Direction::BOTH {
            let mut seen = BTreeSet::new();
            for split in Split::ALL {
                for &q in splits.get(split, dir) {
                    let id = EntityId::new(dir.query_modality(), q);
                    store.check(id)?;
                    if !seen.insert(q) {
                        return Err(Error::RejectedInput(format!(
                            "{id} appears twice in the {} splits",
                            dir.name()
                        )));
                    }
                }
            }
        }
        Ok(Self {
            store,
            truth,
            splits,
            image_embeddings,
            text_embeddings,
        })
    }

    pub fn embeddings(&self, m: Modality) -> Option<&EmbeddingSet> {
        match m {
            Modality::Image => self.image_embeddings.as_ref(),
            Modality::Text => self.text_embeddings.as_ref(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn texts(n: usize) -> Vec<EntityId> {
        (0..n).map(EntityId::text).collect()
    }

    #[test]
    fn rank_row_sorts_descending() {
        let r = rank_row(EntityId::image(0), &[0.2, 0.9, 0.5], &texts(3)).unwrap();
        // comparison-sort oracle
        let mut oracle = [(0.2, 0), (0.9, 1), (0.5, 2)];
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let expect: Vec<_> = oracle.iter().map(|&(_, i)| EntityId::text(i)).collect();
        assert_eq!(r.items, expect);
        assert_eq!(r.items, vec![EntityId::text(1), EntityId::text(2), EntityId::text(0)]);
        assert!(r.is_sorted());
    }

    #[test]
    fn rank_row_ties_and_empty() {
        let r = rank_row(EntityId::image(0), &[0.1, 0.1], &texts(2)).unwrap();
        assert_eq!(r.items, texts(2));
        let e = rank_row(EntityId::image(0), &[], &[]).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn rank_row_rejects_nan_and_length_mismatch() {
        assert!(matches!(
            rank_row(EntityId::image(0), &[0.1, f64::NAN], &texts(2)),
            Err(Error::RejectedInput(_))
        ));
        assert!(rank_row(EntityId::image(0), &[0.1], &texts(2)).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = EmbeddingSet::new(Modality::Image, Matrix::from_rows(&[&[1.0, 0.0]])).unwrap();
        let b = EmbeddingSet::new(
            Modality::Text,
            Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]),
        )
        .unwrap();
        let c = cosine_similarity_matrix(&a, &b).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(0, 1)], 0.0);
        assert!((c[(0, 2)] - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9 * 10.0);
        assert!((c[(0, 2)] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_row_is_named() {
        let a = EmbeddingSet::new(Modality::Image, Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]))
            .unwrap();
        assert_eq!(
            cosine_similarity_matrix(&a, &a),
            Err(Error::DegenerateEmbedding { what: "img", row: 1 })
        );
    }

    #[test]
    fn top_and_bottom_indices() {
        let s = [0.3, 0.9, 0.1, 0.5, 0.5];
        assert_eq!(top_indices(&s, 3), vec![1, 3, 4]);
        assert_eq!(bottom_indices(&s, 2), vec![0, 2]);
        assert_eq!(top_indices(&s, 10), vec![1, 3, 4, 0, 2]);
        assert!(top_indices(&s, 0).is_empty());
    }

    #[test]
    fn store_rejects_asymmetric_intra() {
        let cross = Matrix::zeros(2, 1);
        let ii = Matrix::from_rows(&[&[1.0, 0.5], &[0.4, 1.0]]);
        let tt = Matrix::identity(1);
        assert!(SimilarityStore::new(cross, ii, tt, "x").is_err());
    }

    #[test]
    fn sim_dispatches_by_modality() {
        let cross = Matrix::from_rows(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let ii = Matrix::from_rows(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let tt = Matrix::from_rows(&[&[1.0, 0.7], &[0.7, 1.0]]);
        let s = SimilarityStore::new(cross, ii, tt, "x").unwrap();
        assert_eq!(s.sim(EntityId::image(1), EntityId::text(0)), 0.3);
        assert_eq!(s.sim(EntityId::text(0), EntityId::image(1)), 0.3);
        assert_eq!(s.sim(EntityId::text(0), EntityId::text(1)), 0.7);
        assert_eq!(s.sim(EntityId::image(0), EntityId::image(1)), 0.5);
        assert_eq!(s.top_cross(EntityId::text(1), 2), vec![EntityId::image(1), EntityId::image(0)]);
    }

    #[test]
    fn truth_lookup() {
        let t = GroundTruth::new(2, 3, [(0, 1), (0, 0), (1, 2)]).unwrap();
        assert_eq!(t.positives(EntityId::image(0)), &[0, 1]);
        assert_eq!(t.positives(EntityId::text(2)), &[1]);
        assert!(t.is_relevant(EntityId::text(1), EntityId::image(0)));
        assert!(!t.is_relevant(EntityId::text(1), EntityId::image(1)));
        assert!(GroundTruth::new(2, 3, [(2, 0)]).is_err());
    }
}

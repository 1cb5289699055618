//! Precomputed truncated rankings for every entity of a store.

use alloc::vec::Vec;

use crate::data::{bottom_indices, top_indices, EntityId, Modality, SimilarityStore};

/// Head and tail of every entity's intra- and cross-modal ranking, cut at
/// `depth` entries.
#[derive(Clone, Debug)]
pub struct RankIndex {
    depth: usize,
    // [query modality][target is same modality?] -> flattened rows of width <= depth
    top: [[Lists; 2]; 2],
    bottom: [[Lists; 2]; 2],
}

#[derive(Clone, Debug, Default)]
struct Lists {
    width: usize,
    data: Vec<u32>,
}

impl Lists {
    fn row(&self, i: usize) -> &[u32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

fn slot(m: Modality) -> usize {
    match m {
        Modality::Image => 0,
        Modality::Text => 1,
    }
}

impl RankIndex {
    pub fn build(store: &SimilarityStore, depth: usize) -> Self {
        let mut top: [[Lists; 2]; 2] = Default::default();
        let mut bottom: [[Lists; 2]; 2] = Default::default();
        for qm in [Modality::Image, Modality::Text] {
            for target in [qm, qm.other()] {
                let width = depth.min(store.size(target));
                let mut t = Lists {
                    width,
                    data: Vec::with_capacity(store.size(qm) * width),
                };
                let mut b = t.clone();
                for i in 0..store.size(qm) {
                    let scores = store.scores(EntityId::new(qm, i), target);
                    t.data.extend(top_indices(&scores, width).into_iter().map(|x| x as u32));
                    b.data.extend(bottom_indices(&scores, width).into_iter().map(|x| x as u32));
                }
                let same = usize::from(target == qm);
                top[slot(qm)][same] = t;
                bottom[slot(qm)][same] = b;
            }
        }
        Self { depth, top, bottom }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn lists(table: &[[Lists; 2]; 2], e: EntityId, target: Modality) -> &Lists {
        &table[slot(e.modality)][usize::from(target == e.modality)]
    }

    /// The first `n` entries (or fewer, if the index is shallower) of `e`'s
    /// ranking over `target`.
    pub fn top(&self, e: EntityId, target: Modality, n: usize) -> impl Iterator<Item = EntityId> + '_ {
        let row = Self::lists(&self.top, e, target).row(e.index);
        row[..n.min(row.len())]
            .iter()
            .map(move |&i| EntityId::new(target, i as usize))
    }

    /// The last `n` entries of `e`'s ranking over `target`, in rank order.
    pub fn bottom(&self, e: EntityId, target: Modality, n: usize) -> impl Iterator<Item = EntityId> + '_ {
        let row = Self::lists(&self.bottom, e, target).row(e.index);
        row[row.len() - n.min(row.len())..]
            .iter()
            .map(move |&i| EntityId::new(target, i as usize))
    }

    /// Width of the stored head for `target` lists (`depth` capped by the
    /// database size).
    pub fn available(&self, e: EntityId, target: Modality) -> usize {
        Self::lists(&self.top, e, target).width
    }
}

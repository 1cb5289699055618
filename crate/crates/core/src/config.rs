//! Model and training hyperparameters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Direction, SimilarityStore};
use crate::error::{Error, Result};
use crate::pillar::PillarStrategy;

/// Everything that shapes the re-ranker and its optimization.
///
/// `Default` holds the published settings: 64+64 pillars, top-32 (I2T) and
/// top-8 (T2I) windows, sparse factor 0.8, two propagation layers of width
/// 768, margin 0.2, temperature 1.0, SGD with momentum 0.9, batch 512, 30
/// epochs at learning rate 0.01.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Pillars per block; encodings have `2 * l` coordinates.
    pub l: usize,
    pub k_i2t: usize,
    pub k_t2i: usize,
    /// Depth of the intra- and cross-modal lists merged into neighbor sets.
    pub c: usize,
    /// Sparse factor; affinities at or below `lambda / (1 + K)` are dropped.
    pub lambda: f64,
    pub layers: usize,
    /// Width of the query/key/value projections.
    pub hidden: usize,
    /// Inner width of the feature-transform perceptron.
    pub hidden_mid: usize,
    pub tau: f64,
    pub margin: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    pub pillar_strategy: PillarStrategy,
    pub use_neighbor_affinity: bool,
    pub use_learned_affinity: bool,
    pub use_contrastive: bool,
    pub use_triplet: bool,
    pub use_mma: bool,
    /// Directions that contribute training samples.
    pub directions: Vec<Direction>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            l: 64,
            k_i2t: 32,
            k_t2i: 8,
            c: 10,
            lambda: 0.8,
            layers: 2,
            hidden: 768,
            hidden_mid: 768,
            tau: 1.0,
            margin: 0.2,
            lr: 0.01,
            momentum: 0.9,
            batch: 512,
            epochs: 30,
            pillar_strategy: PillarStrategy::TopRanked,
            use_neighbor_affinity: true,
            use_learned_affinity: true,
            use_contrastive: true,
            use_triplet: true,
            use_mma: true,
            directions: Direction::BOTH.to_vec(),
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration used by the synthetic end-to-end run. The
    /// batch is smaller than the published one so that a few hundred
    /// training queries still give several updates per epoch.
    pub fn scaled() -> Self {
        Self {
            batch: 64,
            l: 16,
            hidden: 64,
            hidden_mid: 64,
            k_i2t: 10,
            k_t2i: 5,
            epochs: 15,
            ..Self::default()
        }
    }

    pub fn k(&self, dir: Direction) -> usize {
        match dir {
            Direction::I2T => self.k_i2t,
            Direction::T2I => self.k_t2i,
        }
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.l
    }

    /// Structural checks that do not depend on data.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l", self.l),
            ("k_i2t", self.k_i2t),
            ("k_t2i", self.k_t2i),
            ("c", self.c),
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("hidden_mid", self.hidden_mid),
            ("batch", self.batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("tau", self.tau), ("lr", self.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be non-negative, got {}", self.margin)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        let kmax = self.k_i2t.max(self.k_t2i);
        if !(self.lambda >= 0.0 && self.lambda <= (1 + kmax) as f64) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1 + K], got {}",
                self.lambda
            )));
        }
        if self.directions.is_empty() {
            return Err(Error::Config("at least one training direction is required".into()));
        }
        Ok(())
    }

    /// Checks sizes against a store. Returns non-fatal notes, currently the
    /// truncation of `c` to a smaller database.
    pub fn validate_for(&self, store: &SimilarityStore) -> Result<Vec<String>> {
        self.validate()?;
        let (m, n) = (store.num_images(), store.num_texts());
        if self.l > m.min(n) {
            return Err(Error::Config(format!(
                "L = {} exceeds the smaller database size {}",
                self.l,
                m.min(n)
            )));
        }
        if self.k_i2t > n {
            return Err(Error::Config(format!("K_i2t = {} exceeds {n} texts", self.k_i2t)));
        }
        if self.k_t2i > m {
            return Err(Error::Config(format!("K_t2i = {} exceeds {m} images", self.k_t2i)));
        }
        let mut notes = Vec::new();
        if self.c > m.min(n) {
            notes.push(format!(
                "C = {} exceeds a database size; neighbor sets are truncated to {} images / {} texts",
                self.c, m, n
            ));
        }
        Ok(notes)
    }

    /// Ranking depth needed by pillar selection, windows, and neighbor sets.
    pub fn index_depth(&self) -> usize {
        self.l.max(self.c).max(self.k_i2t).max(self.k_t2i)
    }
}

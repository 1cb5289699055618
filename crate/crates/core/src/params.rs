//! Parameters of the graph reasoner.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::Direction;
use crate::error::{Error, Result};
use crate::matrix::{sqrt, Matrix};

/// Names of the per-layer tensors, in storage order.
pub const LAYER_TENSORS: [&str; 10] = ["wq", "bq", "wk", "bk", "wv", "bv", "w1", "b1", "w2", "b2"];

/// One propagation layer: query/key/value projections and the two-layer
/// feature transform `g(x) = relu(x·w1 + b1)·w2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl LayerParams {
    fn shapes(dim: usize, hidden: usize, mid: usize) -> [(usize, usize); 10] {
        [
            (dim, hidden),
            (1, hidden),
            (dim, hidden),
            (1, hidden),
            (dim, hidden),
            (1, hidden),
            (hidden, mid),
            (1, mid),
            (mid, dim),
            (1, dim),
        ]
    }

    fn from_tensors(mut t: Vec<Matrix>) -> Self {
        debug_assert_eq!(t.len(), 10);
        let mut next = || t.remove(0);
        Self {
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        }
    }

    pub fn tensors(&self) -> [&Matrix; 10] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.w1, &self.b1,
            &self.w2, &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 10] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// The parameters of one direction's submodel.
#[derive(Clone, Debug, PartialEq)]
pub struct ReRankerParams {
    pub layers: Vec<LayerParams>,
}

impl ReRankerParams {
    /// All-zero parameters shaped for `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let shapes = LayerParams::shapes(cfg.feature_dim(), cfg.hidden, cfg.hidden_mid);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams::from_tensors(shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect()))
            .collect();
        Self { layers }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(cfg);
        for layer in &mut p.layers {
            for (i, t) in layer.tensors_mut().into_iter().enumerate() {
                if i % 2 == 1 {
                    continue;
                }
                let bound = 1.0 / sqrt(t.rows() as f64);
                for v in t.as_mut_slice() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        p
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| l.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = String> + '_ {
        (0..self.layers.len())
            .flat_map(|l| LAYER_TENSORS.iter().map(move |t| format!("layer{l}.{t}")))
    }

    /// Zeroes the output layer of every feature transform, which turns
    /// propagation into the identity.
    pub fn zero_transform_output(&mut self) {
        for l in &mut self.layers {
            l.w2.as_mut_slice().fill(0.0);
            l.b2.as_mut_slice().fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().map(|t| t.as_slice().len()).sum()
    }

    /// Checks shapes against `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers.len() != cfg.layers {
            return Err(Error::Shape(format!(
                "{} layers, config expects {}",
                self.layers.len(),
                cfg.layers
            )));
        }
        let shapes = LayerParams::shapes(cfg.feature_dim(), cfg.hidden, cfg.hidden_mid);
        for (l, layer) in self.layers.iter().enumerate() {
            for ((t, &shape), name) in layer.tensors().iter().zip(&shapes).zip(LAYER_TENSORS) {
                if t.shape() != shape {
                    return Err(Error::Shape(format!(
                        "layer{l}.{name} is {:?}, expected {:?}",
                        t.shape(),
                        shape
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rebuilds parameters from tensors in [`Self::tensors`] order.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Matrix>) -> Result<Self> {
        if tensors.len() != cfg.layers * LAYER_TENSORS.len() {
            return Err(Error::Shape(format!(
                "{} tensors for {} layers",
                tensors.len(),
                cfg.layers
            )));
        }
        let mut it = tensors.into_iter();
        let layers = (0..cfg.layers)
            .map(|_| LayerParams::from_tensors(it.by_ref().take(LAYER_TENSORS.len()).collect()))
            .collect();
        let p = Self { layers };
        p.check(cfg)?;
        Ok(p)
    }
}

/// Both submodels. Also used as the container for their gradients and
/// optimizer velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub i2t: ReRankerParams,
    pub t2i: ReRankerParams,
}

impl Model {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            i2t: ReRankerParams::zeros(cfg),
            t2i: ReRankerParams::zeros(cfg),
        }
    }

    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i2t = ReRankerParams::init(cfg, &mut rng);
        let t2i = ReRankerParams::init(cfg, &mut rng);
        Self { i2t, t2i }
    }

    pub fn get(&self, dir: Direction) -> &ReRankerParams {
        match dir {
            Direction::I2T => &self.i2t,
            Direction::T2I => &self.t2i,
        }
    }

    pub fn get_mut(&mut self, dir: Direction) -> &mut ReRankerParams {
        match dir {
            Direction::I2T => &mut self.i2t,
            Direction::T2I => &mut self.t2i,
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.i2t.tensors().chain(self.t2i.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.i2t.tensors_mut().chain(self.t2i.tensors_mut())
    }

    /// Fully qualified tensor names, e.g. `i2t.layer0.wq`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for dir in Direction::BOTH {
            names.extend(self.get(dir).tensor_names().map(|n| format!("{}.{n}", dir.name())));
        }
        names
    }

    pub fn add_assign(&mut self, other: &Model) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale_assign(s);
        }
    }

    pub fn from_tensors(cfg: &ModelConfig, mut tensors: Vec<Matrix>) -> Result<Self> {
        let half = cfg.layers * LAYER_TENSORS.len();
        if tensors.len() != 2 * half {
            return Err(Error::Shape(format!("{} tensors, expected {}", tensors.len(), 2 * half)));
        }
        let t2i = tensors.split_off(half);
        Ok(Self {
            i2t: ReRankerParams::from_tensors(cfg, tensors)?,
            t2i: ReRankerParams::from_tensors(cfg, t2i)?,
        })
    }
}

//! Joint training of the two directional submodels.
//!
//! One sample is one query neighborhood. Its loss is the contrastive term,
//! the hardest-positive triplet term, and the alignment term that compares
//! the query's score distribution with the mirrored distribution obtained by
//! swapping every entity for a sampled ground-truth match and scoring it
//! with the opposite submodel. A batch's loss is the mean over its samples.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::data::{DatasetBundle, Direction, EntityId, GroundTruth, RankingList, Split};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::graph::{layer_var_list, record_params, record_scores, rerank_list, Neighborhood};
use crate::index::RankIndex;
use crate::metrics::{DirectionRecall, EvalReport};
use crate::optim::{sgd_step, OptimizerState};
use crate::params::Model;

/// A training neighborhood with its ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodSample {
    pub direction: Direction,
    pub hood: Neighborhood,
    pub positive_mask: Vec<bool>,
}

impl NeighborhoodSample {
    pub fn query(&self) -> EntityId {
        self.hood.query
    }

    pub fn neighbors(&self) -> &[EntityId] {
        &self.hood.neighbors
    }
}

/// Uniformly picks one cross-modal ground-truth match of `e`.
pub fn sample_positive(e: EntityId, truth: &GroundTruth, rng: &mut impl Rng) -> Option<EntityId> {
    let pos = truth.positives(e);
    if pos.is_empty() {
        return None;
    }
    Some(EntityId::new(e.modality.other(), pos[rng.random_range(0..pos.len())]))
}

/// Store, rank index, configuration and seed shared by all samples.
pub struct TrainContext<'a> {
    pub bundle: &'a DatasetBundle,
    pub index: RankIndex,
    pub cfg: &'a ModelConfig,
    pub seed: u64,
}

impl<'a> TrainContext<'a> {
    pub fn new(bundle: &'a DatasetBundle, cfg: &'a ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate_for(&bundle.store)?;
        let index = RankIndex::build(&bundle.store, cfg.index_depth());
        Ok(Self {
            bundle,
            index,
            cfg,
            seed,
        })
    }

    /// Neighborhood of `query` over its top-K base window.
    pub fn neighborhood(&self, query: EntityId) -> Result<Neighborhood> {
        let dir = Direction::of_query(query.modality);
        let neighbors = self.bundle.store.top_cross(query, self.cfg.k(dir));
        Neighborhood::build(query, neighbors, &self.bundle.store, Some(&self.index), self.cfg, self.seed)
    }

    /// Training sample for `query`, or `None` when its window holds no
    /// ground-truth match.
    pub fn sample(&self, query: EntityId) -> Result<Option<NeighborhoodSample>> {
        let hood = self.neighborhood(query)?;
        let mask: Vec<bool> = hood
            .neighbors
            .iter()
            .map(|&n| self.bundle.truth.is_relevant(query, n))
            .collect();
        if !mask.iter().any(|&p| p) {
            return Ok(None);
        }
        Ok(Some(NeighborhoodSample {
            direction: Direction::of_query(query.modality),
            hood,
            positive_mask: mask,
        }))
    }

    /// Samples for every listed query; the second value counts queries
    /// skipped for lack of positives.
    pub fn samples(&self, queries: impl IntoIterator<Item = EntityId>) -> Result<(Vec<NeighborhoodSample>, usize)> {
        let mut out = Vec::new();
        let mut skipped = 0;
        for q in queries {
            match self.sample(q)? {
                Some(s) => out.push(s),
                None => skipped += 1,
            }
        }
        Ok((out, skipped))
    }

    /// Mirrored neighborhood: every entity replaced by a sampled match.
    fn mirror(&self, sample: &NeighborhoodSample, rng: &mut ChaCha8Rng) -> Result<Option<Neighborhood>> {
        let truth = &self.bundle.truth;
        let Some(query) = sample_positive(sample.query(), truth, rng) else {
            return Ok(None);
        };
        let mut neighbors = Vec::with_capacity(sample.neighbors().len());
        for &n in sample.neighbors() {
            match sample_positive(n, truth, rng) {
                Some(m) => neighbors.push(m),
                None => return Ok(None),
            }
        }
        Neighborhood::build(query, neighbors, &self.bundle.store, Some(&self.index), self.cfg, self.seed)
            .map(Some)
    }
}

/// Loss components of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub contrastive: f64,
    pub triplet: f64,
    pub mma: f64,
    /// The alignment term was dropped (some entity had no match).
    pub mma_skipped: bool,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.contrastive + self.triplet + self.mma
    }
}

/// Seed of the positive-sampling stream for one sample in one epoch.
pub fn sample_stream_seed(seed: u64, epoch: u64, sample: u64) -> u64 {
    let mut z = seed ^ epoch.wrapping_mul(0xA24B_AED4_963E_E407) ^ sample.wrapping_mul(0x9FB2_1C65_1E98_DF25);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Loss and gradient of a single sample.
pub fn sample_gradient(
    ctx: &TrainContext<'_>,
    model: &Model,
    sample: &NeighborhoodSample,
    stream_seed: u64,
) -> Result<(LossParts, Model)> {
    let cfg = ctx.cfg;
    let dir = sample.direction;
    let mut tape = Tape::new();
    let own = record_params(&mut tape, model.get(dir));
    let s = record_scores(&mut tape, &sample.hood, &own, cfg);

    let mut parts = LossParts::default();
    let mut terms: Vec<Var> = Vec::new();
    if cfg.use_contrastive {
        let c = tape
            .contrastive(s, &sample.positive_mask, cfg.tau)
            .ok_or_else(|| Error::RejectedInput(format!("{} has no positives", sample.query())))?;
        parts.contrastive = tape.scalar(c);
        terms.push(c);
    }
    if cfg.use_triplet {
        let t = tape
            .triplet(s, &sample.positive_mask, cfg.margin)
            .ok_or_else(|| Error::RejectedInput(format!("{} has no positives", sample.query())))?;
        parts.triplet = tape.scalar(t);
        terms.push(t);
    }
    let mut other_vars = None;
    if cfg.use_mma {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        match ctx.mirror(sample, &mut rng)? {
            Some(mirror) => {
                let other = record_params(&mut tape, model.get(dir.opposite()));
                let s2 = record_scores(&mut tape, &mirror, &other, cfg);
                let kl = tape.kl(s, s2, cfg.tau);
                parts.mma = tape.scalar(kl);
                terms.push(kl);
                other_vars = Some(other);
            }
            None => parts.mma_skipped = true,
        }
    }
    let total = tape.sum(&terms);
    let mut grads = tape.backward(total);

    let mut out = Model::zeros(cfg);
    let mut fill = |d: Direction, vars: &[crate::graph::LayerVars]| {
        for (slot, v) in out.get_mut(d).tensors_mut().zip(layer_var_list(vars)) {
            if let Some(g) = grads.take(v) {
                *slot = g;
            }
        }
    };
    fill(dir, &own);
    if let Some(other) = &other_vars {
        fill(dir.opposite(), other);
    }
    check_finite(&out)?;
    Ok((parts, out))
}

fn check_finite(grads: &Model) -> Result<()> {
    for (name, t) in grads.tensor_names().into_iter().zip(grads.tensors()) {
        if !t.is_finite() {
            return Err(Error::NonFiniteGradient { tensor: name });
        }
    }
    Ok(())
}

/// Mean loss components and mean gradient of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub loss: LossParts,
    pub grads: Model,
    pub samples: usize,
    pub mma_skipped: usize,
}

impl BatchResult {
    pub fn total(&self) -> f64 {
        self.loss.total()
    }
}

/// Batch mean of per-sample losses and gradients. `ids` gives each sample's
/// stable index for its sampling stream. Reduction runs in batch order.
pub fn batch_gradient<E: Executor>(
    ctx: &TrainContext<'_>,
    model: &Model,
    samples: &[&NeighborhoodSample],
    ids: &[usize],
    epoch: u64,
    exec: &E,
) -> Result<Option<BatchResult>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let results = exec.map(samples.len(), |i| {
        sample_gradient(ctx, model, samples[i], sample_stream_seed(ctx.seed, epoch, ids[i] as u64))
    });
    let mut grads = Model::zeros(ctx.cfg);
    let mut loss = LossParts::default();
    let mut mma_skipped = 0;
    for r in results {
        let (parts, g) = r?;
        grads.add_assign(&g);
        loss.contrastive += parts.contrastive;
        loss.triplet += parts.triplet;
        loss.mma += parts.mma;
        mma_skipped += usize::from(parts.mma_skipped);
    }
    let n = samples.len() as f64;
    grads.scale_assign(1.0 / n);
    loss.contrastive /= n;
    loss.triplet /= n;
    loss.mma /= n;
    Ok(Some(BatchResult {
        loss,
        grads,
        samples: samples.len(),
        mma_skipped,
    }))
}

/// Total (batch-mean) loss of `samples` under `model`.
pub fn total_loss<E: Executor>(
    ctx: &TrainContext<'_>,
    model: &Model,
    samples: &[&NeighborhoodSample],
    ids: &[usize],
    epoch: u64,
    exec: &E,
) -> Result<Option<f64>> {
    Ok(batch_gradient(ctx, model, samples, ids, epoch, exec)?.map(|b| b.total()))
}

/// Model snapshot chosen by validation rSum.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub config: ModelConfig,
    pub best_val_rsum: f64,
    pub epoch: usize,
    pub seed: u64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub contrastive: f64,
    pub triplet: f64,
    pub mma: f64,
    pub val_rsum: f64,
    pub processed: usize,
    /// Train queries without a positive in their window.
    pub skipped: usize,
    pub mma_skipped: usize,
    pub best_val_rsum: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "epoch={} contrastive={:.6} triplet={:.6} mma={:.6} val_rsum={:.4} best_val_rsum={:.4} processed={} skipped={} mma_skipped={}",
            self.epoch,
            self.contrastive,
            self.triplet,
            self.mma,
            self.val_rsum,
            self.best_val_rsum,
            self.processed,
            self.skipped,
            self.mma_skipped
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Validation report of the initialization.
    pub initial_val: EvalReport,
    pub train_samples: usize,
    /// Parameters after the last epoch, whether or not they scored best.
    pub last: Model,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged {
        epoch: usize,
        last_good: Box<Checkpoint>,
        log: Vec<EpochLog>,
    },
}

/// Rankings for `queries`: re-ranked with `model` for directions in
/// `cfg.directions`, base rankings otherwise.
pub fn rerank_queries<E: Executor>(
    ctx: &TrainContext<'_>,
    model: &Model,
    queries: &[EntityId],
    exec: &E,
) -> Result<Vec<RankingList>> {
    let store = &ctx.bundle.store;
    exec.map(queries.len(), |i| {
        let q = queries[i];
        let base = store.ranking(q, q.modality.other());
        let dir = Direction::of_query(q.modality);
        if ctx.cfg.directions.contains(&dir) {
            rerank_list(&base, store, Some(&ctx.index), model.get(dir), ctx.cfg, ctx.seed).map(|r| r.list)
        } else {
            Ok(base)
        }
    })
    .into_iter()
    .collect()
}

/// Recall report of `split` after re-ranking with `model`.
pub fn evaluate_split<E: Executor>(
    ctx: &TrainContext<'_>,
    model: &Model,
    split: Split,
    exec: &E,
) -> Result<EvalReport> {
    let mut per_dir = [DirectionRecall::default(); 2];
    for dir in Direction::BOTH {
        let queries: Vec<EntityId> = ctx.bundle.splits.queries(split, dir).collect();
        let lists = rerank_queries(ctx, model, &queries, exec)?;
        per_dir[dir.index()] = DirectionRecall::evaluate(&lists, &ctx.bundle.truth)?;
    }
    Ok(EvalReport::new(per_dir[0], per_dir[1]))
}

/// Recall report of `split` on the base rankings.
pub fn base_report<E: Executor>(bundle: &DatasetBundle, split: Split, exec: &E) -> Result<EvalReport> {
    let mut per_dir = [DirectionRecall::default(); 2];
    for dir in Direction::BOTH {
        let queries: Vec<EntityId> = bundle.splits.queries(split, dir).collect();
        let lists = exec.map(queries.len(), |i| {
            bundle.store.ranking(queries[i], dir.item_modality())
        });
        per_dir[dir.index()] = DirectionRecall::evaluate(&lists, &bundle.truth)?;
    }
    Ok(EvalReport::new(per_dir[0], per_dir[1]))
}

/// Alternates the two lists one-for-one, then appends what remains.
fn interleave(a: Vec<usize>, b: Vec<usize>) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut ia, mut ib) = (a.into_iter(), b.into_iter());
    loop {
        match (ia.next(), ib.next()) {
            (None, None) => break,
            (x, y) => out.extend(x.into_iter().chain(y)),
        }
    }
    out
}

/// Trains both submodels on the train split and returns the checkpoint with
/// the highest validation rSum (the initialization counts as epoch 0).
pub fn train<E: Executor>(
    bundle: &DatasetBundle,
    cfg: &ModelConfig,
    seed: u64,
    exec: &E,
    mut on_epoch: impl FnMut(&EpochLog),
) -> core::result::Result<TrainOutcome, TrainError> {
    let ctx = TrainContext::new(bundle, cfg, seed)?;
    let mut queries = Vec::new();
    for &dir in &cfg.directions {
        queries.extend(bundle.splits.queries(Split::Train, dir));
    }
    if queries.is_empty() {
        return Err(Error::Config("train split is empty".into()).into());
    }
    if Direction::BOTH
        .iter()
        .all(|&d| bundle.splits.get(Split::Val, d).is_empty())
    {
        return Err(Error::Config("validation split is empty".into()).into());
    }
    let (samples, skipped) = ctx.samples(queries.iter().copied())?;

    let mut model = Model::init(cfg, seed);
    let mut opt = OptimizerState::new(&model, cfg.lr, cfg.momentum);
    let initial_val = evaluate_split(&ctx, &model, Split::Val, exec)?;
    let mut best = Checkpoint {
        model: model.clone(),
        config: cfg.clone(),
        best_val_rsum: initial_val.rsum,
        epoch: 0,
        seed,
    };
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let first = EpochLog {
        epoch: 0,
        contrastive: 0.0,
        triplet: 0.0,
        mma: 0.0,
        val_rsum: initial_val.rsum,
        processed: 0,
        skipped,
        mma_skipped: 0,
        best_val_rsum: best.best_val_rsum,
    };
    on_epoch(&first);
    log.push(first);

    let (i2t_ids, t2i_ids): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| samples[i].direction == Direction::I2T);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED_5EED_5EED);

    for epoch in 1..=cfg.epochs {
        let mut a = i2t_ids.clone();
        let mut b = t2i_ids.clone();
        a.shuffle(&mut shuffle_rng);
        b.shuffle(&mut shuffle_rng);
        let order = interleave(a, b);

        let mut sums = LossParts::default();
        let mut processed = 0;
        let mut mma_skipped = 0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&NeighborhoodSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let Some(res) = batch_gradient(&ctx, &model, &batch, chunk, epoch as u64, exec)? else {
                continue;
            };
            if !res.total().is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    last_good: Box::new(best),
                    log,
                });
            }
            let n = res.samples as f64;
            sums.contrastive += res.loss.contrastive * n;
            sums.triplet += res.loss.triplet * n;
            sums.mma += res.loss.mma * n;
            processed += res.samples;
            mma_skipped += res.mma_skipped;
            sgd_step(&mut model, &res.grads, &mut opt);
        }

        let val = evaluate_split(&ctx, &model, Split::Val, exec)?;
        if val.rsum > best.best_val_rsum {
            best = Checkpoint {
                model: model.clone(),
                config: cfg.clone(),
                best_val_rsum: val.rsum,
                epoch,
                seed,
            };
        }
        let denom = processed.max(1) as f64;
        let entry = EpochLog {
            epoch,
            contrastive: sums.contrastive / denom,
            triplet: sums.triplet / denom,
            mma: sums.mma / denom,
            val_rsum: val.rsum,
            processed,
            skipped,
            mma_skipped,
            best_val_rsum: best.best_val_rsum,
        };
        on_epoch(&entry);
        log.push(entry);
    }

    Ok(TrainOutcome {
        checkpoint: best,
        log,
        initial_val,
        train_samples: queries.len(),
        last: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::synthetic::{generate, SynthConfig};

    fn tiny_bundle() -> DatasetBundle {
        generate(&SynthConfig {
            concepts: 5,
            images_per_concept: 2,
            texts_per_image: 3,
            dim: 8,
            ..SynthConfig::s1()
        })
        .unwrap()
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            l: 3,
            k_i2t: 4,
            k_t2i: 3,
            c: 3,
            hidden: 4,
            hidden_mid: 4,
            batch: 8,
            epochs: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn interleave_alternates() {
        assert_eq!(interleave(vec![1, 3, 5, 7], vec![2, 4]), vec![1, 2, 3, 4, 5, 7]);
        assert_eq!(interleave(vec![], vec![2]), vec![2]);
    }

    #[test]
    fn sample_positive_singleton_and_determinism() {
        let t = GroundTruth::new(2, 6, (0..6).map(|x| (x / 3, x))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_positive(EntityId::text(4), &t, &mut rng), Some(EntityId::image(1)));
        let draw = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..20)
                .map(|_| sample_positive(EntityId::image(0), &t, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        let empty = GroundTruth::new(1, 1, []).unwrap();
        assert_eq!(sample_positive(EntityId::image(0), &empty, &mut rng), None);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let b = tiny_bundle();
        let cfg = ModelConfig { epochs: 0, ..tiny_cfg() };
        let out = train(&b, &cfg, 5, &Sequential, |_| {}).unwrap();
        assert_eq!(out.checkpoint.model, Model::init(&cfg, 5));
        assert_eq!(out.checkpoint.epoch, 0);
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn training_is_deterministic_and_accounts_for_skips() {
        let b = tiny_bundle();
        let cfg = tiny_cfg();
        let a = train(&b, &cfg, 9, &Sequential, |_| {}).unwrap();
        let c = train(&b, &cfg, 9, &Sequential, |_| {}).unwrap();
        assert_eq!(a.checkpoint, c.checkpoint);
        assert_eq!(a.log, c.log);
        for e in &a.log[1..] {
            assert_eq!(e.processed + e.skipped, a.train_samples);
        }
        let best: Vec<f64> = a.log.iter().map(|e| e.best_val_rsum).collect();
        assert!(best.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn batch_mean_of_two_samples() {
        let b = tiny_bundle();
        let cfg = tiny_cfg();
        let ctx = TrainContext::new(&b, &cfg, 1).unwrap();
        let q: Vec<EntityId> = b.splits.queries(Split::Train, Direction::I2T).take(2).collect();
        let (s, _) = ctx.samples(q).unwrap();
        let model = Model::init(&cfg, 2);
        let refs: Vec<&NeighborhoodSample> = s.iter().collect();
        let both = total_loss(&ctx, &model, &refs, &[0, 1], 1, &Sequential).unwrap().unwrap();
        let one = total_loss(&ctx, &model, &refs[..1], &[0], 1, &Sequential).unwrap().unwrap();
        let two = total_loss(&ctx, &model, &refs[1..], &[1], 1, &Sequential).unwrap().unwrap();
        assert!((both - (one + two) / 2.0).abs() < 1e-12);
        assert_eq!(total_loss(&ctx, &model, &[], &[], 1, &Sequential).unwrap(), None);
    }
}

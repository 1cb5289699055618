//! Analytic gradients of every loss term against central finite differences.

use pillar_rerank_core::data::{Direction, Split};
use pillar_rerank_core::synthetic::{generate, SynthConfig};
use pillar_rerank_core::train::{sample_gradient, NeighborhoodSample, TrainContext};
use pillar_rerank_core::{DatasetBundle, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

/// Relative error with a small floor so that near-zero gradients compare
/// by absolute difference.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

fn bundle(seed: u64) -> DatasetBundle {
    generate(&SynthConfig {
        concepts: 4,
        images_per_concept: 2,
        texts_per_image: 3,
        dim: 6,
        noise_sigma: 0.4,
        cross_noise_sigma: 0.2,
        seed,
    })
    .unwrap()
}

#[derive(Clone, Copy, Debug)]
enum Term {
    Contrastive,
    Triplet,
    Alignment,
    Total,
}

fn with_term(cfg: &ModelConfig, term: Term) -> ModelConfig {
    let (c, t, a) = match term {
        Term::Contrastive => (true, false, false),
        Term::Triplet => (false, true, false),
        Term::Alignment => (false, false, true),
        Term::Total => (true, true, true),
    };
    ModelConfig {
        use_contrastive: c,
        use_triplet: t,
        use_mma: a,
        ..cfg.clone()
    }
}

fn first_sample(ctx: &TrainContext<'_>, dir: Direction) -> Option<NeighborhoodSample> {
    ctx.bundle
        .splits
        .queries(Split::Train, dir)
        .find_map(|q| ctx.sample(q).unwrap())
}

/// Returns the worst relative error over six random coordinates per tensor,
/// or over all coordinates when `rng` is `None`.
fn check(ctx: &TrainContext<'_>, model: &Model, sample: &NeighborhoodSample, mut rng: Option<&mut ChaCha8Rng>) -> f64 {
    let stream = 17;
    let (_, grads) = sample_gradient(ctx, model, sample, stream).unwrap();
    let loss = |m: &Model| sample_gradient(ctx, m, sample, stream).unwrap().0.total();
    let mut worst: f64 = 0.0;
    let grad_tensors: Vec<Vec<f64>> = grads.tensors().map(|t| t.as_slice().to_vec()).collect();
    for (ti, g) in grad_tensors.iter().enumerate() {
        let picks: Vec<usize> = match rng.as_deref_mut() {
            Some(rng) if g.len() > 6 => (0..6).map(|_| rng.random_range(0..g.len())).collect(),
            _ => (0..g.len()).collect(),
        };
        for j in picks {
            let mut plus = model.clone();
            plus.tensors_mut().nth(ti).unwrap().as_mut_slice()[j] += H;
            let mut minus = model.clone();
            minus.tensors_mut().nth(ti).unwrap().as_mut_slice()[j] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(g[j], numeric));
        }
    }
    worst
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut configs = 0;
    let mut worst: f64 = 0.0;
    for case in 0..24u64 {
        let l = [2, 4, 8][rng.random_range(0..3)];
        let k = [2, 3, 5][rng.random_range(0..3)];
        let h = [4, 8][rng.random_range(0..2)];
        let cfg = ModelConfig {
            l,
            k_i2t: k,
            k_t2i: k,
            c: 3,
            hidden: h,
            hidden_mid: h,
            layers: 2,
            ..ModelConfig::default()
        };
        let b = bundle(100 + case);
        let dir = if case % 2 == 0 { Direction::I2T } else { Direction::T2I };
        let model = Model::init(&cfg, case);
        for term in [Term::Contrastive, Term::Triplet, Term::Alignment, Term::Total] {
            let tcfg = with_term(&cfg, term);
            let ctx = TrainContext::new(&b, &tcfg, case).unwrap();
            let Some(sample) = first_sample(&ctx, dir) else {
                continue;
            };
            let err = check(&ctx, &model, &sample, Some(&mut rng));
            assert!(
                err < TOLERANCE,
                "case {case} {term:?} L={l} K={k} H={h}: relative error {err:e}"
            );
            worst = worst.max(err);
        }
        configs += 1;
    }
    assert!(configs >= 20, "only {configs} configurations checked");
    assert!(start.elapsed().as_secs() < 60);
    println!("{configs} configurations, worst relative error {worst:e}");
}

/// Every coordinate of every tensor for one mid-sized configuration.
#[test]
fn every_coordinate_of_a_fixed_configuration() {
    let cfg = ModelConfig {
        l: 4,
        k_i2t: 3,
        k_t2i: 3,
        c: 3,
        hidden: 8,
        hidden_mid: 8,
        layers: 2,
        ..ModelConfig::default()
    };
    let b = bundle(7);
    let model = Model::init(&cfg, 7);
    let ctx = TrainContext::new(&b, &cfg, 7).unwrap();
    for dir in Direction::BOTH {
        let sample = first_sample(&ctx, dir).expect("a training query with a positive in its window");
        let err = check(&ctx, &model, &sample, None);
        assert!(err < TOLERANCE, "{dir:?}: relative error {err:e}");
    }
}

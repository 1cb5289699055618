//! Experiment configuration: built-in defaults, then a `key=value` file,
//! then command-line flags, each layer overriding the previous one.
//!
//! Model keys: `preset` (`scaled` or `published`), `l`, `k_i2t`, `k_t2i`,
//! `c`, `lambda`, `layers`, `hidden`, `hidden_mid`, `tau`, `margin`, `lr`,
//! `momentum`, `batch`, `epochs`, `pillar_strategy`, `direction`, and the
//! ablation switches `disable_neighbor_affinity`,
//! `disable_learned_affinity`, `disable_contrastive`, `disable_triplet`,
//! `disable_mma`. Run keys: `seed`, `threads`, `bundle`, `eval_bundle`,
//! `out`. Anything else is rejected.

use std::path::PathBuf;
use std::str::FromStr;

use pillar_rerank_core::synthetic::SynthConfig;
use pillar_rerank_core::{Direction, ModelConfig, PillarStrategy};

use crate::textio::KeyValues;

pub const MODEL_KEYS: [&str; 21] = [
    "l",
    "k_i2t",
    "k_t2i",
    "c",
    "lambda",
    "layers",
    "hidden",
    "hidden_mid",
    "tau",
    "margin",
    "lr",
    "momentum",
    "batch",
    "epochs",
    "pillar_strategy",
    "direction",
    "disable_neighbor_affinity",
    "disable_learned_affinity",
    "disable_contrastive",
    "disable_triplet",
    "disable_mma",
];

pub const RUN_KEYS: [&str; 5] = ["seed", "threads", "bundle", "eval_bundle", "out"];

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
}

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

pub fn parse_directions(value: &str) -> Result<Vec<Direction>, ConfigError> {
    match value {
        "i2t" => Ok(vec![Direction::I2T]),
        "t2i" => Ok(vec![Direction::T2I]),
        "both" => Ok(Direction::BOTH.to_vec()),
        _ => Err(bad("direction", value, "expected i2t, t2i or both")),
    }
}

pub fn directions_name(dirs: &[Direction]) -> &'static str {
    match dirs {
        [Direction::I2T] => "i2t",
        [Direction::T2I] => "t2i",
        _ => "both",
    }
}

pub fn preset(name: &str) -> Result<ModelConfig, ConfigError> {
    match name {
        "scaled" => Ok(ModelConfig::scaled()),
        "published" => Ok(ModelConfig::default()),
        _ => Err(bad("preset", name, "expected scaled or published")),
    }
}

/// Sets one model key; `Ok(false)` when `key` is not a model key.
pub fn apply_model_key(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<bool, ConfigError> {
    match key {
        "l" => cfg.l = parse(key, value)?,
        "k_i2t" => cfg.k_i2t = parse(key, value)?,
        "k_t2i" => cfg.k_t2i = parse(key, value)?,
        "c" => cfg.c = parse(key, value)?,
        "lambda" => cfg.lambda = parse(key, value)?,
        "layers" => cfg.layers = parse(key, value)?,
        "hidden" => cfg.hidden = parse(key, value)?,
        "hidden_mid" => cfg.hidden_mid = parse(key, value)?,
        "tau" => cfg.tau = parse(key, value)?,
        "margin" => cfg.margin = parse(key, value)?,
        "lr" => cfg.lr = parse(key, value)?,
        "momentum" => cfg.momentum = parse(key, value)?,
        "batch" => cfg.batch = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "pillar_strategy" => cfg.pillar_strategy = parse::<PillarStrategy>(key, value)?,
        "direction" => cfg.directions = parse_directions(value)?,
        "disable_neighbor_affinity" => cfg.use_neighbor_affinity = !parse_bool(key, value)?,
        "disable_learned_affinity" => cfg.use_learned_affinity = !parse_bool(key, value)?,
        "disable_contrastive" => cfg.use_contrastive = !parse_bool(key, value)?,
        "disable_triplet" => cfg.use_triplet = !parse_bool(key, value)?,
        "disable_mma" => cfg.use_mma = !parse_bool(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Every model key with its value; floats in shortest round-trip form.
pub fn model_entries(cfg: &ModelConfig) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("l", cfg.l);
    kv.set("k_i2t", cfg.k_i2t);
    kv.set("k_t2i", cfg.k_t2i);
    kv.set("c", cfg.c);
    kv.set("lambda", format!("{:?}", cfg.lambda));
    kv.set("layers", cfg.layers);
    kv.set("hidden", cfg.hidden);
    kv.set("hidden_mid", cfg.hidden_mid);
    kv.set("tau", format!("{:?}", cfg.tau));
    kv.set("margin", format!("{:?}", cfg.margin));
    kv.set("lr", format!("{:?}", cfg.lr));
    kv.set("momentum", format!("{:?}", cfg.momentum));
    kv.set("batch", cfg.batch);
    kv.set("epochs", cfg.epochs);
    kv.set("pillar_strategy", cfg.pillar_strategy.name());
    kv.set("direction", directions_name(&cfg.directions));
    kv.set("disable_neighbor_affinity", !cfg.use_neighbor_affinity);
    kv.set("disable_learned_affinity", !cfg.use_learned_affinity);
    kv.set("disable_contrastive", !cfg.use_contrastive);
    kv.set("disable_triplet", !cfg.use_triplet);
    kv.set("disable_mma", !cfg.use_mma);
    kv
}

/// Rebuilds a model configuration from [`model_entries`] output (missing
/// keys keep the published defaults).
pub fn model_from_entries(kv: &KeyValues) -> Result<ModelConfig, ConfigError> {
    let mut cfg = ModelConfig::default();
    for (k, v) in kv.iter() {
        if !apply_model_key(&mut cfg, k, v)? {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
    }
    Ok(cfg)
}

/// Fully resolved settings of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub seed: u64,
    /// Worker cap; 0 means one per core.
    pub threads: usize,
    pub bundle: Option<PathBuf>,
    pub eval_bundle: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::scaled(),
            seed: DEFAULT_SEED,
            threads: 0,
            bundle: None,
            eval_bundle: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    /// Applies `layers` in order on top of the defaults.
    pub fn resolve(layers: &[&KeyValues]) -> Result<Self, ConfigError> {
        Self::resolve_from(ModelConfig::scaled(), layers)
    }

    /// Like [`resolve`](Self::resolve) with `model` as the starting point,
    /// e.g. the configuration stored in a checkpoint.
    pub fn resolve_from(model: ModelConfig, layers: &[&KeyValues]) -> Result<Self, ConfigError> {
        let mut merged = KeyValues::new();
        for l in layers {
            merged.merge(l);
        }
        let mut out = Self {
            model,
            ..Self::default()
        };
        if let Some(p) = merged.remove("preset") {
            out.model = preset(&p)?;
        }
        for (k, v) in merged.iter() {
            if apply_model_key(&mut out.model, k, v)? {
                continue;
            }
            match k {
                "seed" => out.seed = parse(k, v)?,
                "threads" => out.threads = parse(k, v)?,
                "bundle" => out.bundle = Some(PathBuf::from(v)),
                "eval_bundle" => out.eval_bundle = Some(PathBuf::from(v)),
                "out" => out.out = Some(PathBuf::from(v)),
                _ => return Err(ConfigError::UnknownKey(k.to_string())),
            }
        }
        Ok(out)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed);
        kv.set("threads", self.threads);
        for (k, p) in [
            ("bundle", &self.bundle),
            ("eval_bundle", &self.eval_bundle),
            ("out", &self.out),
        ] {
            if let Some(p) = p {
                kv.set(k, p.display());
            }
        }
        kv.merge(&model_entries(&self.model));
        kv
    }
}

/// Generator settings: `concepts`, `images_per_concept`, `texts_per_image`,
/// `dim`, `noise_sigma`, `cross_noise_sigma`, `seed`, plus `out` and
/// `threads`. Defaults are the pinned reference bundle.
pub fn resolve_synth(layers: &[&KeyValues]) -> Result<(SynthConfig, Option<PathBuf>), ConfigError> {
    let mut merged = KeyValues::new();
    for l in layers {
        merged.merge(l);
    }
    let mut cfg = SynthConfig::s1();
    let mut out = None;
    for (k, v) in merged.iter() {
        match k {
            "concepts" => cfg.concepts = parse(k, v)?,
            "images_per_concept" => cfg.images_per_concept = parse(k, v)?,
            "texts_per_image" => cfg.texts_per_image = parse(k, v)?,
            "dim" => cfg.dim = parse(k, v)?,
            "noise_sigma" => cfg.noise_sigma = parse(k, v)?,
            "cross_noise_sigma" => cfg.cross_noise_sigma = parse(k, v)?,
            "seed" => cfg.seed = parse(k, v)?,
            "out" => out = Some(PathBuf::from(v)),
            "threads" => {
                parse::<usize>(k, v)?;
            }
            _ => return Err(ConfigError::UnknownKey(k.to_string())),
        }
    }
    Ok((cfg, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(s: &str) -> KeyValues {
        KeyValues::parse(s).unwrap()
    }

    #[test]
    fn precedence() {
        let file = kv("epochs=3\nlr=0.5\nseed=4");
        let flags = kv("epochs=7");
        let c = ExperimentConfig::resolve(&[&file, &flags]).unwrap();
        assert_eq!(c.model.epochs, 7);
        assert_eq!(c.model.lr, 0.5);
        assert_eq!(c.seed, 4);
        assert_eq!(c.model.l, 16);
        let d = ExperimentConfig::resolve(&[]).unwrap();
        assert_eq!(d, ExperimentConfig::default());
    }

    #[test]
    fn unknown_and_bad_values() {
        assert_eq!(
            ExperimentConfig::resolve(&[&kv("epoch=3")]),
            Err(ConfigError::UnknownKey("epoch".into()))
        );
        assert!(matches!(
            ExperimentConfig::resolve(&[&kv("lr=fast")]),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(ExperimentConfig::resolve(&[&kv("direction=up")]).is_err());
    }

    #[test]
    fn switches_and_round_trip() {
        let c = ExperimentConfig::resolve(&[&kv(
            "preset=published\ndisable_mma=true\npillar_strategy=bottom\ndirection=t2i",
        )])
        .unwrap();
        assert!(!c.model.use_mma && c.model.use_triplet);
        assert_eq!(c.model.pillar_strategy, PillarStrategy::BottomRanked);
        assert_eq!(c.model.directions, vec![Direction::T2I]);
        assert_eq!(c.model.l, 64);
        let back = ExperimentConfig::resolve(&[&c.to_key_values()]).unwrap();
        assert_eq!(back, c);
        let m = model_entries(&c.model);
        assert_eq!(m.len(), MODEL_KEYS.len());
        assert!(MODEL_KEYS.iter().all(|k| m.get(k).is_some()));
        assert_eq!(model_from_entries(&m).unwrap(), c.model);
    }

    #[test]
    fn synth_keys() {
        let (c, out) = resolve_synth(&[&kv("dim=4\nout=x")]).unwrap();
        assert_eq!(c.dim, 4);
        assert_eq!(c.concepts, 50);
        assert_eq!(out, Some(PathBuf::from("x")));
        assert!(resolve_synth(&[&kv("l=3")]).is_err());
    }
}

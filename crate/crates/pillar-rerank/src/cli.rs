//! Command-line front end: `gen`, `train`, `rerank`, `eval`, `baseline`.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pillar_rerank_core::baselines::{
    dba_rankings, k_reciprocal_rerank, qe_rankings, DbaMode, DbaPipeline, KReciprocalConfig, QeConfig,
    QeVariant,
};
use pillar_rerank_core::exec::Executor;
use pillar_rerank_core::metrics::comparison_table;
use pillar_rerank_core::synthetic::generate;
use pillar_rerank_core::train::{
    base_report, evaluate_split, rerank_queries, train, Checkpoint, TrainContext, TrainError,
};
use pillar_rerank_core::{
    DatasetBundle, Direction, EntityId, EvalReport, ModelConfig, Modality, RankIndex, RankingList, Split,
};

use crate::bundle_io::{load_bundle, save_bundle};
use crate::checkpoint_io::{load_checkpoint, save_checkpoint};
use crate::error::{self, Error, Result};
use crate::exec::PoolExecutor;
use crate::report_io::{write_report, write_sweep, sweep_table};
use crate::settings::{resolve_synth, ExperimentConfig};
use crate::textio::{self, KeyValues};

pub const RESOLVED_CONFIG: &str = "resolved.config";

#[derive(Parser, Debug)]
#[command(name = "pillar-rerank", version, about = "Similarity-only cross-modal re-ranking experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic bundle.
    Gen(GenArgs),
    /// Train both submodels and save the best checkpoint.
    Train(TrainArgs),
    /// Write re-ranked lists for one split.
    Rerank(RerankArgs),
    /// Report base and re-ranked recall side by side.
    Eval(EvalArgs),
    /// Run a query-expansion, database-augmentation or k-reciprocal baseline.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Bundle directory or manifest file.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_parser = ["i2t", "t2i", "both"])]
    pub direction: Option<String>,
    /// Extra configuration entry; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Ablations {
    #[arg(long, value_parser = ["top", "bottom", "random", "inter-only", "intra-only"])]
    pub pillar_strategy: Option<String>,
    #[arg(long)]
    pub disable_neighbor_affinity: bool,
    #[arg(long)]
    pub disable_learned_affinity: bool,
    #[arg(long)]
    pub disable_contrastive: bool,
    #[arg(long)]
    pub disable_triplet: bool,
    #[arg(long)]
    pub disable_mma: bool,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub concepts: Option<usize>,
    #[arg(long)]
    pub images_per_concept: Option<usize>,
    #[arg(long)]
    pub texts_per_image: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub cross_noise_sigma: Option<f64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub ablations: Ablations,
    /// Second bundle evaluated with the trained model (transfer runs).
    #[arg(long)]
    pub eval_bundle: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct RerankArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub ablations: Ablations,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub ablations: Ablations,
    /// Re-rank with this checkpoint.
    #[arg(long, conflicts_with = "rankings")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate ranking files instead (as written by `rerank`).
    #[arg(long)]
    pub rankings: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Aqe,
    Aqewd,
    Alphaqe,
    Dba,
    Kreciprocal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PipelineArg {
    Sequential,
    Joint,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Weighting used by `dba`.
    #[arg(long, value_enum, default_value = "aqe")]
    pub variant: Method,
    #[arg(long, value_enum, default_value = "sequential")]
    pub pipeline: PipelineArg,
    #[arg(long, default_value_t = 2)]
    pub n_expand: usize,
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub k1: usize,
    #[arg(long, default_value_t = 0.3)]
    pub blend: f64,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    /// Comma-separated expansion sizes; one report row per value.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<usize>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

fn parse_sets(sets: &[String]) -> Result<KeyValues> {
    let mut kv = KeyValues::new();
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

fn file_layer(path: &Option<PathBuf>) -> Result<KeyValues> {
    match path {
        Some(p) => KeyValues::parse(&error::read_to_string(p)?).map_err(|source| Error::Parse {
            path: p.clone(),
            source,
        }),
        None => Ok(KeyValues::new()),
    }
}

impl Common {
    fn flag_layer(&self, ablations: Option<&Ablations>) -> Result<KeyValues> {
        let mut kv = KeyValues::new();
        if let Some(b) = &self.bundle {
            kv.set("bundle", b.display());
        }
        if let Some(s) = self.seed {
            kv.set("seed", s);
        }
        if let Some(o) = &self.out {
            kv.set("out", o.display());
        }
        if let Some(t) = self.threads {
            kv.set("threads", t);
        }
        if let Some(d) = &self.direction {
            kv.set("direction", d);
        }
        if let Some(a) = ablations {
            if let Some(p) = &a.pillar_strategy {
                kv.set("pillar_strategy", p);
            }
            for (on, key) in [
                (a.disable_neighbor_affinity, "disable_neighbor_affinity"),
                (a.disable_learned_affinity, "disable_learned_affinity"),
                (a.disable_contrastive, "disable_contrastive"),
                (a.disable_triplet, "disable_triplet"),
                (a.disable_mma, "disable_mma"),
            ] {
                if on {
                    kv.set(key, true);
                }
            }
        }
        kv.merge(&parse_sets(&self.set)?);
        Ok(kv)
    }

    /// Defaults (or `base`) < config file < flags.
    fn resolve(&self, ablations: Option<&Ablations>, base: Option<(ModelConfig, u64)>) -> Result<ExperimentConfig> {
        let file = file_layer(&self.config)?;
        let flags = self.flag_layer(ablations)?;
        Ok(match base {
            Some((model, seed)) => {
                let mut seed_layer = KeyValues::new();
                seed_layer.set("seed", seed);
                ExperimentConfig::resolve_from(model, &[&seed_layer, &file, &flags])?
            }
            None => ExperimentConfig::resolve(&[&file, &flags])?,
        })
    }
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Usage(format!("--{flag} is required")))
}

/// Prints the resolved configuration and writes it next to the outputs.
fn announce(out: &Path, kv: &KeyValues) -> Result<()> {
    eprint!("# resolved configuration\n{}", kv.render());
    error::write(&out.join(RESOLVED_CONFIG), kv.render())
}

fn executor(threads: usize) -> Result<PoolExecutor> {
    PoolExecutor::new(threads).map_err(|e| Error::Usage(format!("cannot start {threads} threads: {e}")))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Rerank(a) => cmd_rerank(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Baseline(a) => cmd_baseline(&a),
    }
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let file = file_layer(&a.config)?;
    let mut flags = KeyValues::new();
    if let Some(s) = a.seed {
        flags.set("seed", s);
    }
    if let Some(o) = &a.out {
        flags.set("out", o.display());
    }
    if let Some(t) = a.threads {
        flags.set("threads", t);
    }
    for (k, v) in [
        ("concepts", a.concepts.map(|v| v.to_string())),
        ("images_per_concept", a.images_per_concept.map(|v| v.to_string())),
        ("texts_per_image", a.texts_per_image.map(|v| v.to_string())),
        ("dim", a.dim.map(|v| v.to_string())),
        ("noise_sigma", a.noise_sigma.map(|v| format!("{v:?}"))),
        ("cross_noise_sigma", a.cross_noise_sigma.map(|v| format!("{v:?}"))),
    ] {
        if let Some(v) = v {
            flags.set(k, v);
        }
    }
    flags.merge(&parse_sets(&a.set)?);
    let (cfg, out) = resolve_synth(&[&file, &flags])?;
    let out = require(&out, "out")?;
    let mut provenance = KeyValues::new();
    for (k, v) in cfg.entries() {
        provenance.set(format!("synth.{k}"), v);
    }
    let mut resolved = provenance.clone();
    resolved.set("out", out.display());
    eprint!("# resolved configuration\n{}", resolved.render());
    let bundle = generate(&cfg)?;
    save_bundle(out, &bundle, &provenance)?;
    println!(
        "wrote {} ({} images, {} texts)",
        out.display(),
        bundle.store.num_images(),
        bundle.store.num_texts()
    );
    Ok(())
}

fn split_is_empty(bundle: &DatasetBundle, split: Split) -> bool {
    Direction::BOTH.iter().all(|&d| bundle.splits.get(split, d).is_empty())
}

/// Base and re-ranked reports of `split`, written as `<prefix>base`,
/// `<prefix>reranked` and `<prefix>comparison.txt`.
fn compare_and_write<E: Executor>(
    out: &Path,
    prefix: &str,
    bundle: &DatasetBundle,
    cfg: &ExperimentConfig,
    model: &pillar_rerank_core::Model,
    split: Split,
    exec: &E,
) -> Result<(EvalReport, EvalReport)> {
    let ctx = TrainContext::new(bundle, &cfg.model, cfg.seed)?;
    let base = base_report(bundle, split, exec)?;
    let reranked = evaluate_split(&ctx, model, split, exec)?;
    write_report(out, &format!("{prefix}base"), &base)?;
    write_report(out, &format!("{prefix}reranked"), &reranked)?;
    let table = comparison_table(&base, &reranked);
    error::write(&out.join(format!("{prefix}comparison.txt")), &table)?;
    Ok((base, reranked))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.common.resolve(Some(&a.ablations), None)?;
    if let Some(b) = &a.eval_bundle {
        cfg.eval_bundle = Some(b.clone());
    }
    let bundle_path = require(&cfg.bundle, "bundle")?.clone();
    let out = require(&cfg.out, "out")?.clone();
    announce(&out, &cfg.to_key_values())?;
    let bundle = load_bundle(&bundle_path)?;
    for note in cfg.model.validate_for(&bundle.store)? {
        eprintln!("note: {note}");
    }
    let exec = executor(cfg.threads)?;

    let log_path = out.join("train.log");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log_err = None;
    let result = train(&bundle, &cfg.model, cfg.seed, &exec, |e| {
        let line = e.line();
        eprintln!("{line}");
        if let Err(err) = writeln!(log, "{line}") {
            log_err.get_or_insert(err);
        }
    });
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, last_good, .. }) => {
            save_checkpoint(&out.join("checkpoint"), &last_good)?;
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch}; last good checkpoint (epoch {}) saved",
                last_good.epoch
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let ckpt: &Checkpoint = &outcome.checkpoint;
    let digest = save_checkpoint(&out.join("checkpoint"), ckpt)?;
    write_report(&out, "val_initial", &outcome.initial_val)?;
    println!(
        "best epoch {} val rSum {:.2} (epoch 0: {:.2}) digest {digest}",
        ckpt.epoch, ckpt.best_val_rsum, outcome.initial_val.rsum
    );

    if !split_is_empty(&bundle, Split::Test) {
        let (base, reranked) = compare_and_write(&out, "test_", &bundle, &cfg, &ckpt.model, Split::Test, &exec)?;
        print!("test split\n{}", comparison_table(&base, &reranked));
    }
    if let Some(p) = &cfg.eval_bundle {
        let other = load_bundle(p)?;
        let (base, reranked) =
            compare_and_write(&out, "transfer_", &other, &cfg, &ckpt.model, Split::Test, &exec)?;
        print!("transfer to {}\n{}", p.display(), comparison_table(&base, &reranked));
    }
    Ok(())
}

/// Loads a checkpoint and resolves flags on top of its configuration.
/// Settings that change tensor shapes must match the checkpoint.
fn checkpoint_config(common: &Common, ablations: &Ablations, path: &Path) -> Result<(Checkpoint, ExperimentConfig)> {
    let ckpt = load_checkpoint(path)?;
    let cfg = common.resolve(Some(ablations), Some((ckpt.config.clone(), ckpt.seed)))?;
    let (m, c) = (&cfg.model, &ckpt.config);
    if (m.l, m.layers, m.hidden, m.hidden_mid) != (c.l, c.layers, c.hidden, c.hidden_mid) {
        return Err(Error::Usage(
            "l, layers, hidden and hidden_mid are fixed by the checkpoint".into(),
        ));
    }
    Ok((ckpt, cfg))
}

pub fn cmd_rerank(a: &RerankArgs) -> Result<()> {
    let (ckpt, cfg) = checkpoint_config(&a.common, &a.ablations, &a.checkpoint)?;
    let out = require(&cfg.out, "out")?.clone();
    let mut kv = cfg.to_key_values();
    kv.set("checkpoint", a.checkpoint.display());
    kv.set("split", Split::from(a.split).name());
    announce(&out, &kv)?;
    let bundle = load_bundle(require(&cfg.bundle, "bundle")?)?;
    let exec = executor(cfg.threads)?;
    let ctx = TrainContext::new(&bundle, &cfg.model, cfg.seed)?;
    for &dir in &cfg.model.directions {
        let queries: Vec<EntityId> = bundle.splits.queries(a.split.into(), dir).collect();
        let lists = rerank_queries(&ctx, &ckpt.model, &queries, &exec)?;
        let path = out.join(format!("rankings_{}.txt", dir.name()));
        error::write(&path, textio::render_rankings(&lists))?;
        println!("wrote {} ({} queries)", path.display(), lists.len());
    }
    Ok(())
}

fn by_direction(lists: Vec<RankingList>) -> (Vec<RankingList>, Vec<RankingList>) {
    lists.into_iter().partition(|r| r.query.modality == Modality::Image)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let split: Split = a.split.into();
    let (ckpt, cfg) = match &a.checkpoint {
        Some(p) => {
            let (c, cfg) = checkpoint_config(&a.common, &a.ablations, p)?;
            (Some(c), cfg)
        }
        None => (None, a.common.resolve(Some(&a.ablations), None)?),
    };
    let out = require(&cfg.out, "out")?.clone();
    let mut kv = cfg.to_key_values();
    kv.set("split", split.name());
    if let Some(p) = &a.checkpoint {
        kv.set("checkpoint", p.display());
    }
    for (i, p) in a.rankings.iter().enumerate() {
        kv.set(format!("rankings.{i}"), p.display());
    }
    announce(&out, &kv)?;
    let bundle = load_bundle(require(&cfg.bundle, "bundle")?)?;
    let exec = executor(cfg.threads)?;
    let base = base_report(&bundle, split, &exec)?;
    write_report(&out, "base", &base)?;

    let reranked = if let Some(c) = &ckpt {
        let ctx = TrainContext::new(&bundle, &cfg.model, cfg.seed)?;
        Some(evaluate_split(&ctx, &c.model, split, &exec)?)
    } else if !a.rankings.is_empty() {
        let mut lists = Vec::new();
        for p in &a.rankings {
            lists.extend(textio::parse_rankings(&error::read_to_string(p)?).map_err(|source| Error::Parse {
                path: p.clone(),
                source,
            })?);
        }
        let (i2t, t2i) = by_direction(lists);
        Some(EvalReport::evaluate(&i2t, &t2i, &bundle.truth)?)
    } else {
        None
    };
    match reranked {
        Some(r) => {
            write_report(&out, "reranked", &r)?;
            let table = comparison_table(&base, &r);
            error::write(&out.join("comparison.txt"), &table)?;
            print!("{table}");
        }
        None => print!("{}", base.to_table()),
    }
    Ok(())
}

fn qe_variant(m: Method) -> Result<QeVariant> {
    match m {
        Method::Aqe => Ok(QeVariant::Aqe),
        Method::Aqewd => Ok(QeVariant::AqeWd),
        Method::Alphaqe => Ok(QeVariant::AlphaQe),
        _ => Err(Error::Usage(format!("{m:?} is not a query-expansion weighting"))),
    }
}

/// Rankings of every query of `split` under one baseline setting.
pub fn baseline_rankings<E: Executor>(
    bundle: &DatasetBundle,
    a: &BaselineArgs,
    n_expand: usize,
    split: Split,
    dirs: &[Direction],
    exec: &E,
) -> Result<Vec<RankingList>> {
    let mut out = Vec::new();
    for &dir in dirs {
        let queries: Vec<EntityId> = bundle.splits.queries(split, dir).collect();
        let lists = match a.method {
            Method::Aqe | Method::Aqewd | Method::Alphaqe => {
                let cfg = QeConfig {
                    n_expand,
                    alpha: a.alpha,
                    variant: qe_variant(a.method)?,
                };
                qe_rankings(bundle, &queries, &cfg, exec)?
            }
            Method::Dba => {
                let cfg = QeConfig {
                    n_expand,
                    alpha: a.alpha,
                    variant: qe_variant(a.variant)?,
                };
                let mode = DbaMode {
                    variant: cfg.variant,
                    pipeline: match a.pipeline {
                        PipelineArg::Sequential => DbaPipeline::Sequential,
                        PipelineArg::Joint => DbaPipeline::Joint,
                    },
                };
                let ix: Vec<usize> = queries.iter().map(|q| q.index).collect();
                dba_rankings(bundle, dir, &ix, mode, &cfg, exec)?
            }
            Method::Kreciprocal => {
                let cfg = KReciprocalConfig {
                    k1: a.k1,
                    blend: a.blend,
                    window: a.window,
                };
                let index = RankIndex::build(&bundle.store, a.k1.max(a.window));
                exec.map(queries.len(), |i| k_reciprocal_rerank(queries[i], &bundle.store, &index, &cfg))
                    .into_iter()
                    .collect::<pillar_rerank_core::Result<Vec<_>>>()?
            }
        };
        out.extend(lists);
    }
    Ok(out)
}

pub fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let cfg = a.common.resolve(None, None)?;
    let split: Split = a.split.into();
    let out = require(&cfg.out, "out")?.clone();
    let mut kv = cfg.to_key_values();
    kv.set("split", split.name());
    kv.set("baseline.method", format!("{:?}", a.method).to_lowercase());
    kv.set("baseline.variant", format!("{:?}", a.variant).to_lowercase());
    kv.set("baseline.pipeline", format!("{:?}", a.pipeline).to_lowercase());
    kv.set("baseline.n_expand", a.n_expand);
    kv.set("baseline.alpha", format!("{:?}", a.alpha));
    kv.set("baseline.k1", a.k1);
    kv.set("baseline.blend", format!("{:?}", a.blend));
    kv.set("baseline.window", a.window);
    if !a.sweep.is_empty() {
        let s: Vec<String> = a.sweep.iter().map(|n| n.to_string()).collect();
        kv.set("baseline.sweep", s.join(","));
    }
    announce(&out, &kv)?;
    let bundle = load_bundle(require(&cfg.bundle, "bundle")?)?;
    let exec = executor(cfg.threads)?;
    let dirs = &cfg.model.directions;
    let base = base_report(&bundle, split, &exec)?;
    write_report(&out, "base", &base)?;

    let evaluate = |lists: Vec<RankingList>| -> Result<EvalReport> {
        let (i2t, t2i) = by_direction(lists);
        Ok(EvalReport::evaluate(&i2t, &t2i, &bundle.truth)?)
    };
    if !a.sweep.is_empty() {
        if a.method == Method::Kreciprocal {
            return Err(Error::Usage("--sweep applies to expansion methods only".into()));
        }
        let mut rows = Vec::new();
        for &n in &a.sweep {
            let lists = baseline_rankings(&bundle, a, n, split, dirs, &exec)?;
            rows.push((n, evaluate(lists)?));
        }
        write_sweep(&out, &rows)?;
        print!("base rSum {:.1}\n{}", base.rsum, sweep_table(&rows));
        return Ok(());
    }
    let lists = baseline_rankings(&bundle, a, a.n_expand, split, dirs, &exec)?;
    for &dir in dirs {
        let mine: Vec<RankingList> = lists
            .iter()
            .filter(|r| r.query.modality == dir.query_modality())
            .cloned()
            .collect();
        error::write(
            &out.join(format!("rankings_{}.txt", dir.name())),
            textio::render_rankings(&mine),
        )?;
    }
    let report = evaluate(lists)?;
    write_report(&out, "baseline", &report)?;
    let table = comparison_table(&base, &report);
    error::write(&out.join("comparison.txt"), &table)?;
    print!("{table}");
    Ok(())
}

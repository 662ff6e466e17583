//! Ablation harness. Each experiment pre-trains cross-domain networks on
//! source scenes, trains target networks (fine-tuned or from scratch) for
//! every seed, and reports final accuracies plus full curves.
//!
//! Independent runs execute in parallel. Every run owns its RNG streams
//! (split stream from the seed, training stream derived from it), so the
//! reports do not depend on the thread count.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

pub use config::{Condition, DomainSource, ExperimentConfig, ExperimentId, NetworkTemplate, Optim};
pub use report::{
    aggregate, rows_from_csv, rows_to_csv, ConditionSummary, ExperimentOutput, ReportRow, SavedNet, Summary,
};

use crate::data::{normalize_bands, DomainDataset, Split};
use crate::network::{build_backbone, build_cross_domain, load_checkpoint, load_cross_domain, transfer_shared};
use crate::network::{CrossDomainNetwork, Network};
use crate::trainer::{evaluate, train_cross_domain, train_single, two_step_train, EvalSplit, TrainMetrics, TrainOptions};
use crate::{rng_from_seed, Error, Result, Rng};

/// Training stream of a target run; kept apart from the split stream.
fn run_rng(seed: u64) -> Rng {
    rng_from_seed(seed ^ 0x7275_6e00_0000_0000)
}

fn load_sources(cfg: &ExperimentConfig) -> Result<Vec<DomainDataset>> {
    cfg.sources
        .iter()
        .map(|s| {
            let mut d = s.load()?;
            d.use_all_for_training();
            if cfg.normalize {
                normalize_bands(d)
            } else {
                Ok(d)
            }
        })
        .collect()
}

/// The target scene split for `seed`, standardised with its train split.
pub fn prepare_target(cfg: &ExperimentConfig, scene: &DomainDataset, seed: u64) -> Result<DomainDataset> {
    let mut d = scene.clone();
    d.split(cfg.train_per_class, &mut rng_from_seed(seed))?;
    if cfg.normalize {
        normalize_bands(d)
    } else {
        Ok(d)
    }
}

/// Result of pre-training one cross-domain network.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub net: CrossDomainNetwork<f32>,
    pub rng: Rng,
    /// Step I metrics when the two-step procedure ran.
    pub step1: Option<TrainMetrics>,
    pub metrics: TrainMetrics,
    pub names: Vec<String>,
    pub pixels: u64,
}

pub fn pretrain(cfg: &ExperimentConfig, sources: &[DomainDataset], residual_modules: usize, seed: u64) -> Result<Pretrained> {
    let spec = cfg.network.cross_domain(sources, residual_modules);
    let mut rng = rng_from_seed(seed);
    let mut net = build_cross_domain(&spec, &mut rng)?;
    let opts = TrainOptions {
        eval_every: cfg.eval_every,
        augment: cfg.augment,
        eval_accuracy: false,
        ..Default::default()
    };
    let s2 = cfg.optim.schedule(cfg.pretrain_schedule);
    let (step1, metrics) = match cfg.two_step {
        Some(pair) => {
            let m = two_step_train(&mut net, sources, &cfg.optim.schedule(pair), &s2, &opts, &mut rng)?;
            (Some(m.step1), m.step2)
        }
        None => (None, train_cross_domain(&mut net, sources, &s2, &opts, &mut rng)?),
    };
    Ok(Pretrained {
        net,
        rng,
        step1,
        metrics,
        names: sources.iter().map(|d| d.name.clone()).collect(),
        pixels: sources.iter().map(|d| d.train_idx.len() as u64).sum(),
    })
}

impl Pretrained {
    fn curves(&self, experiment: &str, seed: u64, condition: &str) -> Vec<ReportRow> {
        let mut out = Vec::new();
        let stages = self.step1.iter().map(|m| ("step1_loss", m)).chain([("loss", &self.metrics)]);
        for (prefix, m) in stages {
            for p in &m.points {
                out.push(ReportRow {
                    experiment: experiment.into(),
                    seed,
                    condition: condition.into(),
                    iteration: p.iteration,
                    metric: format!("{prefix}:{}", self.names[p.domain]),
                    value: p.loss,
                });
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Start<'a> {
    Scratch,
    Transfer(&'a CrossDomainNetwork<f32>),
}

/// A trained target network and its metrics.
#[derive(Clone, Debug)]
pub struct TargetRun {
    pub net: Network<f32>,
    pub rng: Rng,
    pub metrics: TrainMetrics,
}

fn train_target(
    cfg: &ExperimentConfig,
    target: &DomainDataset,
    start: Start<'_>,
    residual_modules: usize,
    pair: (u64, u64),
    seed: u64,
) -> Result<TargetRun> {
    let spec = cfg.network.spec(target.bands(), target.classes, residual_modules);
    let mut rng = run_rng(seed);
    let mut net = match start {
        Start::Scratch => build_backbone(&spec, &mut rng)?,
        Start::Transfer(pre) => transfer_shared(pre, &spec, &mut rng)?,
    };
    let opts = TrainOptions {
        eval_every: cfg.eval_every,
        augment: cfg.augment,
        eval_accuracy: true,
        eval_split: EvalSplit::Test,
        ..Default::default()
    };
    let metrics = train_single(&mut net, target, &cfg.optim.schedule(pair), &opts, &mut rng)?;
    Ok(TargetRun { net, rng, metrics })
}

/// Trains a network from scratch on the target for `seed`.
pub fn scratch_run(cfg: &ExperimentConfig, scene: &DomainDataset, pair: (u64, u64), seed: u64) -> Result<TargetRun> {
    let target = prepare_target(cfg, scene, seed)?;
    train_target(cfg, &target, Start::Scratch, cfg.network.residual_modules, pair, seed)
}

/// Fine-tunes the transferred trunk of `pre` on the target for `seed`. The
/// front and head layers draw the same initial values as [`scratch_run`].
pub fn finetune_run(
    cfg: &ExperimentConfig,
    scene: &DomainDataset,
    pre: &CrossDomainNetwork<f32>,
    pair: (u64, u64),
    seed: u64,
) -> Result<TargetRun> {
    let target = prepare_target(cfg, scene, seed)?;
    train_target(cfg, &target, Start::Transfer(pre), pre.spec.residual_modules(), pair, seed)
}

/// One condition of an experiment: how target networks start and train.
struct Cond<'a> {
    label: String,
    start: Start<'a>,
    residual_modules: usize,
    pair: (u64, u64),
    metadata: BTreeMap<String, u64>,
}

struct Harness<'a> {
    cfg: &'a ExperimentConfig,
    experiment: String,
    scene: DomainDataset,
    curves: Vec<ReportRow>,
    checkpoints: Vec<(String, SavedNet, Rng)>,
}

impl<'a> Harness<'a> {
    fn new(cfg: &'a ExperimentConfig, experiment: &str) -> Result<Self> {
        Ok(Self {
            cfg,
            experiment: experiment.into(),
            scene: cfg.target.load()?,
            curves: Vec::new(),
            checkpoints: Vec::new(),
        })
    }

    fn row(&self, seed: u64, condition: &str, iteration: u64, metric: &str, value: f64) -> ReportRow {
        ReportRow {
            experiment: self.experiment.clone(),
            seed,
            condition: condition.into(),
            iteration,
            metric: metric.into(),
            value,
        }
    }

    /// Runs every (condition, seed) pair and assembles the output. Rows and
    /// curves are ordered by (condition, seed, iteration).
    fn run(mut self, conds: &[Cond<'_>], save: Option<&str>) -> Result<ExperimentOutput> {
        let cfg = self.cfg;
        let jobs: Vec<(usize, u64)> = (0..conds.len())
            .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
            .collect();
        let scene = &self.scene;
        let runs: Vec<TargetRun> = jobs
            .par_iter()
            .map(|&(c, seed)| {
                let cond = &conds[c];
                let target = prepare_target(cfg, scene, seed)?;
                log::info!("{} {} seed {seed}", self.experiment, cond.label);
                train_target(cfg, &target, cond.start, cond.residual_modules, cond.pair, seed)
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        let mut reached: Vec<Vec<Option<u64>>> = vec![Vec::new(); conds.len()];
        let mut curves = Vec::new();
        for (&(c, seed), run) in jobs.iter().zip(&runs) {
            let label = &conds[c].label;
            let m = &run.metrics;
            let last = m.points.last().ok_or_else(|| Error::Data("run produced no metrics".into()))?;
            let acc = last.accuracy.expect("target runs measure accuracy");
            rows.push((c, self.row(seed, label, last.iteration, "accuracy", acc)));
            reached[c].push(m.first_reaching(0, cfg.threshold));
            for p in &m.points {
                curves.push((c, self.row(seed, label, p.iteration, "loss", p.loss)));
                if let Some(a) = p.accuracy {
                    curves.push((c, self.row(seed, label, p.iteration, "accuracy", a)));
                }
            }
        }
        let key = |(c, r): &(usize, ReportRow)| (*c, r.seed, r.iteration);
        rows.sort_by_key(key);
        curves.sort_by_key(key);
        let rows: Vec<ReportRow> = rows.into_iter().map(|(_, r)| r).collect();
        self.curves.extend(curves.into_iter().map(|(_, r)| r));
        if let Some(prefix) = save {
            for (&(c, seed), run) in jobs.iter().zip(runs) {
                let name = match conds.len() {
                    1 => format!("{prefix}_seed{seed}.ckpt"),
                    _ => format!("{prefix}_{c}_seed{seed}.ckpt"),
                };
                self.checkpoints.push((name, SavedNet::Single(run.net), run.rng));
            }
        }
        let mut summaries = aggregate(&rows);
        for s in &mut summaries {
            if let Some(c) = conds.iter().position(|c| c.label == s.condition) {
                s.metadata = conds[c].metadata.clone();
                s.first_reaching = reached[c].clone();
            }
        }
        Ok(ExperimentOutput {
            rows,
            curves: self.curves,
            summary: Summary {
                experiment: self.experiment,
                threshold: cfg.threshold,
                conditions: summaries,
            },
            checkpoints: self.checkpoints,
        })
    }
}

fn schedule_meta(pair: (u64, u64)) -> BTreeMap<String, u64> {
    BTreeMap::from([("step_size".to_string(), pair.0), ("max_iter".to_string(), pair.1)])
}

fn in_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs experiment `id` in memory. Use [`ExperimentOutput::write`] to
/// persist the reports.
pub fn run_experiment(cfg: &ExperimentConfig, id: ExperimentId) -> Result<ExperimentOutput> {
    cfg.validate(id)?;
    in_pool(cfg.threads, || match id {
        ExperimentId::ScheduleSweep => schedule_sweep(cfg),
        ExperimentId::DepthSweep => depth_sweep(cfg),
        ExperimentId::SourceSize | ExperimentId::SensorAblation | ExperimentId::SingleVsMulti => {
            source_conditions(cfg, id)
        }
        ExperimentId::Pretrain => pretrain_only(cfg),
        ExperimentId::Finetune => finetune_only(cfg),
    })?
}

fn schedule_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let name = ExperimentId::ScheduleSweep.name();
    let mut h = Harness::new(cfg, name)?;
    let pre = match &cfg.checkpoint {
        Some(p) => load_cross_domain::<f32>(p)?.net,
        None => {
            let sources = load_sources(cfg)?;
            let pre = pretrain(cfg, &sources, cfg.network.residual_modules, cfg.pretrain_seed)?;
            h.curves.extend(pre.curves(name, cfg.pretrain_seed, "pretrain"));
            h.checkpoints.push(("pretrained.ckpt".into(), SavedNet::CrossDomain(pre.net.clone()), pre.rng.clone()));
            pre.net
        }
    };
    let rm = pre.spec.residual_modules();
    let mut conds = Vec::new();
    for &pair in &cfg.schedules {
        let label = cfg.optim.schedule(pair).label();
        conds.push(Cond {
            label: format!("finetune {label}"),
            start: Start::Transfer(&pre),
            residual_modules: rm,
            pair,
            metadata: schedule_meta(pair),
        });
        conds.push(Cond {
            label: format!("scratch {label}"),
            start: Start::Scratch,
            residual_modules: rm,
            pair,
            metadata: schedule_meta(pair),
        });
    }
    h.run(&conds, None)
}

fn depth_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let name = ExperimentId::DepthSweep.name();
    let mut h = Harness::new(cfg, name)?;
    let sources = load_sources(cfg)?;
    let pres: Vec<Pretrained> = cfg
        .depths
        .par_iter()
        .map(|&rm| pretrain(cfg, &sources, rm, cfg.pretrain_seed))
        .collect::<Result<_>>()?;
    let pair = cfg.schedules[0];
    let mut conds = Vec::new();
    for (&rm, pre) in cfg.depths.iter().zip(&pres) {
        let layers = pre.net.spec.branches[0].weighted_layers();
        h.curves.extend(pre.curves(name, cfg.pretrain_seed, &format!("pretrain {layers}-layer")));
        let mut meta = schedule_meta(pair);
        meta.insert("residual_modules".into(), rm as u64);
        meta.insert("layers".into(), layers as u64);
        conds.push(Cond {
            label: format!("finetune {layers}-layer"),
            start: Start::Transfer(&pre.net),
            residual_modules: rm,
            pair,
            metadata: meta.clone(),
        });
        conds.push(Cond {
            label: format!("scratch {layers}-layer"),
            start: Start::Scratch,
            residual_modules: rm,
            pair,
            metadata: meta,
        });
    }
    h.run(&conds, None)
}

fn source_conditions(cfg: &ExperimentConfig, id: ExperimentId) -> Result<ExperimentOutput> {
    let mut h = Harness::new(cfg, id.name())?;
    let sources = load_sources(cfg)?;
    let spec = cfg.effective_conditions();
    let rm = cfg.network.residual_modules;
    let pres: Vec<Pretrained> = spec
        .par_iter()
        .map(|c| {
            let subset: Vec<DomainDataset> = c.sources.iter().map(|&i| sources[i].clone()).collect();
            pretrain(cfg, &subset, rm, cfg.pretrain_seed)
        })
        .collect::<Result<_>>()?;
    let pair = cfg.schedules[0];
    let mut conds = Vec::new();
    for (c, pre) in spec.iter().zip(&pres) {
        h.curves.extend(pre.curves(id.name(), cfg.pretrain_seed, &format!("pretrain {}", c.label)));
        let mut meta = schedule_meta(pair);
        meta.insert("source_pixels".into(), pre.pixels);
        meta.insert("sources".into(), c.sources.len() as u64);
        conds.push(Cond {
            label: c.label.clone(),
            start: Start::Transfer(&pre.net),
            residual_modules: rm,
            pair,
            metadata: meta,
        });
    }
    h.run(&conds, None)
}

fn pretrain_only(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let name = ExperimentId::Pretrain.name();
    let sources = load_sources(cfg)?;
    let pres: Vec<Pretrained> = cfg
        .seeds
        .par_iter()
        .map(|&seed| pretrain(cfg, &sources, cfg.network.residual_modules, seed))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut checkpoints = Vec::new();
    for (&seed, pre) in cfg.seeds.iter().zip(pres) {
        for p in pre.metrics.points.iter().filter(|p| p.iteration == pre.net.iteration) {
            rows.push(ReportRow {
                experiment: name.into(),
                seed,
                condition: "pretrain".into(),
                iteration: p.iteration,
                metric: format!("loss:{}", pre.names[p.domain]),
                value: p.loss,
            });
        }
        curves.extend(pre.curves(name, seed, "pretrain"));
        checkpoints.push((format!("pretrained_seed{seed}.ckpt"), SavedNet::CrossDomain(pre.net), pre.rng));
    }
    let mut conditions = aggregate(&rows);
    let pixels = sources.iter().map(|d| d.train_idx.len() as u64).sum();
    for c in &mut conditions {
        c.metadata = schedule_meta(cfg.pretrain_schedule);
        c.metadata.insert("source_pixels".into(), pixels);
    }
    Ok(ExperimentOutput {
        rows,
        curves,
        summary: Summary {
            experiment: name.into(),
            threshold: cfg.threshold,
            conditions,
        },
        checkpoints,
    })
}

fn finetune_only(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let path = cfg.checkpoint.as_ref().expect("validated");
    let pre = load_cross_domain::<f32>(path)?.net;
    let pair = cfg.schedules[0];
    let cond = Cond {
        label: "finetune".into(),
        start: Start::Transfer(&pre),
        residual_modules: pre.spec.residual_modules(),
        pair,
        metadata: schedule_meta(pair),
    };
    Harness::new(cfg, ExperimentId::Finetune.name())?.run(&[cond], Some("finetuned"))
}

/// Trains target networks from scratch for every seed (the baseline arm of
/// the sweeps, also usable on its own).
pub fn train_scratch(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate_common()?;
    in_pool(cfg.threads, || {
        let pair = cfg.schedules[0];
        let cond = Cond {
            label: "scratch".into(),
            start: Start::Scratch,
            residual_modules: cfg.network.residual_modules,
            pair,
            metadata: schedule_meta(pair),
        };
        Harness::new(cfg, "train_scratch")?.run(&[cond], Some("scratch"))
    })?
}

/// Test accuracy of a single-network checkpoint on the target split of
/// every seed.
pub fn eval_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<ExperimentOutput> {
    cfg.validate_common()?;
    let net = load_checkpoint::<f32>(path)?.net;
    let scene = cfg.target.load()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let target = prepare_target(cfg, &scene, seed)?;
        let acc = evaluate(net.view(), &target, Split::Test)?;
        rows.push(ReportRow {
            experiment: "eval".into(),
            seed,
            condition: "eval".into(),
            iteration: net.iteration,
            metric: "accuracy".into(),
            value: acc,
        });
    }
    let conditions = aggregate(&rows);
    Ok(ExperimentOutput {
        rows,
        curves: Vec::new(),
        summary: Summary {
            experiment: "eval".into(),
            threshold: cfg.threshold,
            conditions,
        },
        checkpoints: Vec::new(),
    })
}

#[cfg(test)]
mod tests;

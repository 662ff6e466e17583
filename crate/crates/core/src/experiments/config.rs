use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{synth_generate, DatasetManifest, DomainDataset, Sensor, SynthConfig};
use crate::network::{CrossDomainSpec, NetworkSpec};
use crate::trainer::TrainSchedule;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    ScheduleSweep,
    DepthSweep,
    SourceSize,
    SensorAblation,
    SingleVsMulti,
    Pretrain,
    Finetune,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::ScheduleSweep,
        ExperimentId::DepthSweep,
        ExperimentId::SourceSize,
        ExperimentId::SensorAblation,
        ExperimentId::SingleVsMulti,
        ExperimentId::Pretrain,
        ExperimentId::Finetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::ScheduleSweep => "schedule_sweep",
            ExperimentId::DepthSweep => "depth_sweep",
            ExperimentId::SourceSize => "source_size",
            ExperimentId::SensorAblation => "sensor_ablation",
            ExperimentId::SingleVsMulti => "single_vs_multi",
            ExperimentId::Pretrain => "pretrain",
            ExperimentId::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == s)
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a scene comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSource {
    Synth(SynthConfig),
    /// Path to a dataset manifest JSON.
    Manifest(PathBuf),
}

impl DomainSource {
    /// Loads the scene with empty train/test indices.
    pub fn load(&self) -> Result<DomainDataset> {
        match self {
            DomainSource::Synth(c) => synth_generate(c),
            DomainSource::Manifest(p) => DatasetManifest::read(p)?.load(),
        }
    }
}

/// Layer widths shared by every branch; bands and classes come from data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkTemplate {
    pub filters: usize,
    pub patch: usize,
    pub residual_modules: usize,
    pub dropout_rate: f64,
}

impl Default for NetworkTemplate {
    fn default() -> Self {
        Self {
            filters: 16,
            patch: 5,
            residual_modules: 2,
            dropout_rate: 0.0,
        }
    }
}

impl NetworkTemplate {
    pub fn spec(&self, bands: usize, classes: usize, residual_modules: usize) -> NetworkSpec {
        NetworkSpec::new(bands, classes)
            .with_filters(self.filters)
            .with_patch(self.patch)
            .with_residual_modules(residual_modules)
            .with_dropout(self.dropout_rate)
    }

    pub fn cross_domain(&self, sources: &[DomainDataset], residual_modules: usize) -> CrossDomainSpec {
        CrossDomainSpec::new(
            sources
                .iter()
                .map(|d| self.spec(d.bands(), d.classes, residual_modules))
                .collect(),
        )
    }
}

/// Optimiser settings common to every schedule of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Optim {
    pub base_lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for Optim {
    fn default() -> Self {
        Self {
            base_lr: 0.003,
            gamma: 0.1,
            batch: 32,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

impl Optim {
    pub fn schedule(&self, (step_size, max_iter): (u64, u64)) -> TrainSchedule {
        TrainSchedule {
            base_lr: self.base_lr,
            gamma: self.gamma,
            step_size,
            max_iter,
            batch: self.batch,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// A named subset of `sources` used for pre-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    pub sources: Vec<usize>,
}

/// Everything an experiment run needs. Missing fields take desk-scale
/// synthetic defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentId>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub network: NetworkTemplate,
    pub optim: Optim,
    pub target: DomainSource,
    pub train_per_class: usize,
    pub sources: Vec<DomainSource>,
    pub conditions: Vec<Condition>,
    /// `(step_size, max_iter)` pairs for target training.
    pub schedules: Vec<(u64, u64)>,
    pub pretrain_schedule: (u64, u64),
    /// Step I schedule; when set, pre-training runs the two-step procedure
    /// with `pretrain_schedule` as Step II.
    pub two_step: Option<(u64, u64)>,
    pub depths: Vec<usize>,
    /// Pre-trained cross-domain checkpoint (required by `finetune`, optional
    /// for `schedule_sweep`).
    pub checkpoint: Option<PathBuf>,
    pub pretrain_seed: u64,
    pub eval_every: u64,
    pub augment: bool,
    /// Standardise bands with training-split statistics.
    pub normalize: bool,
    /// Accuracy threshold reported per run in `summary.json`.
    pub threshold: f64,
    /// Worker threads for independent runs; `None` uses all cores.
    pub threads: Option<usize>,
}

/// Bands of the desk-scale synthetic sources. All share one material
/// library, so they differ only in how the sensor samples it.
const SOURCE_BANDS: [(usize, usize, Sensor); 3] = [(48, 8, Sensor::Aviris), (24, 6, Sensor::Rosis), (40, 7, Sensor::Hyperion)];
const MATERIALS: u64 = 7;

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sources = SOURCE_BANDS
            .iter()
            .enumerate()
            .map(|(i, &(bands, classes, sensor))| {
                DomainSource::Synth(SynthConfig {
                    name: format!("source-{}", (b'a' + i as u8) as char),
                    sensor,
                    classes,
                    bands,
                    height: 48,
                    width: 48,
                    signature_seed: MATERIALS,
                    blob_scale: 16.0,
                    seed: 101 + i as u64,
                    ..Default::default()
                })
            })
            .collect();
        Self {
            experiment: None,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("out"),
            network: NetworkTemplate::default(),
            optim: Optim::default(),
            target: DomainSource::Synth(SynthConfig {
                name: "target".into(),
                classes: 6,
                bands: 32,
                height: 64,
                width: 64,
                signature_seed: MATERIALS,
                blob_scale: 16.0,
                seed: 200,
                ..Default::default()
            }),
            train_per_class: 20,
            sources,
            conditions: Vec::new(),
            schedules: vec![(400, 500)],
            pretrain_schedule: (1500, 1500),
            two_step: None,
            depths: vec![2, 3, 4, 5],
            checkpoint: None,
            pretrain_seed: 0,
            eval_every: 25,
            augment: true,
            normalize: true,
            threshold: 0.9,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative manifest and checkpoint paths resolve
    /// against the config file's directory; `out_dir` stays relative to the
    /// working directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for src in cfg.sources.iter_mut().chain(std::iter::once(&mut cfg.target)) {
            if let DomainSource::Manifest(p) = src {
                fix(p);
            }
        }
        if let Some(p) = cfg.checkpoint.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }

    /// Conditions of the source-combination experiments; when none are
    /// configured, every single source plus all of them together.
    pub fn effective_conditions(&self) -> Vec<Condition> {
        if !self.conditions.is_empty() {
            return self.conditions.clone();
        }
        let mut out: Vec<Condition> = (0..self.sources.len())
            .map(|i| Condition {
                label: format!("S{i}"),
                sources: vec![i],
            })
            .collect();
        if self.sources.len() > 1 {
            out.push(Condition {
                label: format!("P{}", self.sources.len()),
                sources: (0..self.sources.len()).collect(),
            });
        }
        out
    }

    /// Checks shared by every run: seeds, schedules, network template.
    pub fn validate_common(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if self.train_per_class == 0 {
            return fail("train_per_class must be >= 1".into());
        }
        if self.schedules.is_empty() {
            return fail("schedules must not be empty".into());
        }
        for &pair in self.schedules.iter().chain([&self.pretrain_schedule]).chain(self.two_step.iter()) {
            self.optim.schedule(pair).validate()?;
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return fail(format!("threshold must lie in (0, 1], got {}", self.threshold));
        }
        if self.threads == Some(0) {
            return fail("threads must be >= 1".into());
        }
        self.network.spec(1, 2, self.network.residual_modules).validate()
    }

    pub fn validate(&self, id: ExperimentId) -> Result<()> {
        self.validate_common()?;
        let fail = |m: String| Err(Error::Config(m));
        let needs_sources = !matches!(id, ExperimentId::Finetune)
            && !(id == ExperimentId::ScheduleSweep && self.checkpoint.is_some());
        if needs_sources && self.sources.is_empty() {
            return fail(format!("{id} needs at least one source"));
        }
        match id {
            ExperimentId::Finetune => match &self.checkpoint {
                None => return fail("finetune needs `checkpoint`".into()),
                Some(p) if !p.exists() => return fail(format!("checkpoint {} does not exist", p.display())),
                Some(_) => {}
            },
            ExperimentId::ScheduleSweep => {
                if let Some(p) = &self.checkpoint {
                    if !p.exists() {
                        return fail(format!("checkpoint {} does not exist", p.display()));
                    }
                }
            }
            ExperimentId::DepthSweep => {
                if self.depths.is_empty() {
                    return fail("depths must not be empty".into());
                }
                for &rm in &self.depths {
                    self.network.spec(1, 2, rm).validate()?;
                }
            }
            ExperimentId::SourceSize | ExperimentId::SensorAblation | ExperimentId::SingleVsMulti => {
                let conds = self.effective_conditions();
                for c in &conds {
                    if c.sources.is_empty() {
                        return fail(format!("condition {} has no sources", c.label));
                    }
                    if let Some(&bad) = c.sources.iter().find(|&&i| i >= self.sources.len()) {
                        return fail(format!(
                            "condition {} refers to source {bad}, only {} configured",
                            c.label,
                            self.sources.len()
                        ));
                    }
                }
                let mut labels: Vec<&str> = conds.iter().map(|c| c.label.as_str()).collect();
                labels.sort_unstable();
                if labels.windows(2).any(|w| w[0] == w[1]) {
                    return fail("condition labels must be distinct".into());
                }
                match id {
                    ExperimentId::SourceSize if conds.len() < 2 => {
                        return fail("source_size needs >= 2 conditions".into())
                    }
                    ExperimentId::SensorAblation if conds.len() != 2 => {
                        return fail(format!("sensor_ablation needs exactly 2 conditions, got {}", conds.len()))
                    }
                    ExperimentId::SingleVsMulti
                        if !(conds.iter().any(|c| c.sources.len() == 1) && conds.iter().any(|c| c.sources.len() > 1)) =>
                    {
                        return fail("single_vs_multi needs a single-source and a multi-source condition".into())
                    }
                    _ => {}
                }
            }
            ExperimentId::Pretrain => {}
        }
        Ok(())
    }
}

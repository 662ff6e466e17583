//! SGD training loops: single domain, cross-domain with the shared-layer
//! learning-rate rule, and the two-step schedule for imbalanced sources.

mod metrics;

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{d4_apply, DomainDataset, Split};
use crate::network::{BranchMut, BranchRef, CrossDomainNetwork, Network};
use crate::tensor::{sgd_step, softmax_cross_entropy, SgdHyper, Shape4, Tensor4};
use crate::{Error, Result};

pub use metrics::{EvalPoint, LrRecord, TrainMetrics};

/// Step-decay SGD schedule: `lr = base_lr · gamma^floor(iter / step_size)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub base_lr: f64,
    pub gamma: f64,
    pub step_size: u64,
    pub max_iter: u64,
    pub batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            gamma: 0.1,
            step_size: 4000,
            max_iter: 5000,
            batch: 128,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

impl TrainSchedule {
    pub fn new(step_size: u64, max_iter: u64) -> Self {
        Self {
            step_size,
            max_iter,
            ..Self::default()
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_base_lr(mut self, lr: f64) -> Self {
        self.base_lr = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.step_size == 0 || self.step_size > self.max_iter {
            return bad(format!(
                "step_size must satisfy 1 <= step_size <= max_iter, got {}/{}",
                self.step_size, self.max_iter
            ));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: u64) -> f64 {
        self.base_lr * self.gamma.powi((iter / self.step_size) as i32)
    }

    /// Short label such as `4K/5K` or `400/500`.
    pub fn label(&self) -> String {
        fn k(v: u64) -> String {
            if v >= 1000 && v % 1000 == 0 {
                format!("{}K", v / 1000)
            } else {
                v.to_string()
            }
        }
        format!("{}/{}", k(self.step_size), k(self.max_iter))
    }
}

/// Knobs that do not change the optimisation problem itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    /// Metrics are recorded every this many completed iterations and at the end.
    pub eval_every: u64,
    /// Random D4 element per sample.
    pub augment: bool,
    /// Measure target accuracy at every metrics point (single-domain runs).
    pub eval_accuracy: bool,
    /// Split used for accuracy points.
    pub eval_split: EvalSplit,
    /// Keep a per-domain, per-iteration record of learning rates.
    pub record_lr: bool,
    /// Pause after this many completed iterations (the counter is kept, so a
    /// later call resumes).
    pub stop_at: Option<u64>,
    /// Log progress lines.
    pub progress: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Test,
}

impl From<EvalSplit> for Split {
    fn from(s: EvalSplit) -> Split {
        match s {
            EvalSplit::Train => Split::Train,
            EvalSplit::Test => Split::Test,
        }
    }
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            eval_every: 100,
            augment: true,
            eval_accuracy: true,
            eval_split: EvalSplit::Test,
            record_lr: false,
            stop_at: None,
            progress: false,
        }
    }
}

/// Assemble a batch of `idx.len()` patches, each transformed by its D4
/// element.
fn assemble(ds: &DomainDataset, patch: usize, picks: &[(usize, usize)]) -> Tensor4<f32> {
    let per = ds.bands() * patch * patch;
    let mut x = Tensor4::zeros(Shape4::new(picks.len(), ds.bands(), patch, patch));
    let mut tmp = vec![0f32; per];
    for (slot, &(idx, k)) in x.data_mut().chunks_exact_mut(per).zip(picks) {
        if k == 0 {
            ds.patch_into(idx, patch, slot);
        } else {
            ds.patch_into(idx, patch, &mut tmp);
            d4_apply(k, &tmp, slot, patch);
        }
    }
    x
}

fn draw_batch(ds: &DomainDataset, batch: usize, augment: bool, rng: &mut crate::Rng) -> Result<(Vec<(usize, usize)>, Vec<usize>)> {
    if ds.train_idx.is_empty() {
        return Err(Error::Data(format!("{}: training split is empty", ds.name)));
    }
    let mut picks = Vec::with_capacity(batch);
    let mut labels = Vec::with_capacity(batch);
    for _ in 0..batch {
        let idx = ds.train_idx[rng.random_range(0..ds.train_idx.len())];
        let k = if augment { rng.random_range(0..8) } else { 0 };
        picks.push((idx, k));
        labels.push(ds.class_of(idx));
    }
    Ok((picks, labels))
}

/// Learning rates for the private and shared parameter groups.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRates {
    pub private: f64,
    pub shared: f64,
}

/// Apply one SGD update to every parameter reachable from `view` using the
/// gradients left by the last backward pass. Weight decay is skipped on
/// biases.
pub fn apply_sgd(view: &mut BranchMut<'_, f32>, rates: GroupRates, s: &TrainSchedule, iteration: u64) -> Result<()> {
    view.visit_params(&mut |info, p| {
        let hyper = SgdHyper {
            lr: if info.shared() { rates.shared } else { rates.private },
            momentum: s.momentum,
            weight_decay: if info.kind.decays() { s.weight_decay } else { 0.0 },
        };
        sgd_step(p, hyper).map_err(|i| Error::NonFinite {
            what: format!("gradient of {}[{i}]", info.name()),
            iteration,
        })
    })
}

/// One forward/backward/update on a fresh batch; returns the batch loss.
fn step(
    mut view: BranchMut<'_, f32>,
    ds: &DomainDataset,
    s: &TrainSchedule,
    rates: GroupRates,
    augment: bool,
    iteration: u64,
    rng: &mut crate::Rng,
) -> Result<f64> {
    let patch = view.spec().patch;
    if view.spec().bands != ds.bands() {
        return Err(Error::Data(format!(
            "{} has {} bands, network branch expects {}",
            ds.name,
            ds.bands(),
            view.spec().bands
        )));
    }
    let (picks, labels) = draw_batch(ds, s.batch, augment, rng)?;
    let x = assemble(ds, patch, &picks);
    let (logits, tape) = view.forward_train(&x, rng)?;
    let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: format!("loss on {}", ds.name),
            iteration,
        });
    }
    view.backward(&tape, &grad, false)?;
    apply_sgd(&mut view, rates, s, iteration)?;
    Ok(loss)
}

/// Predicted class of every pixel in `indices` (eval mode, no augmentation).
pub fn predict(net: BranchRef<'_, f32>, ds: &DomainDataset, indices: &[usize]) -> Result<Vec<usize>> {
    const CHUNK: usize = 256;
    let patch = net.spec().patch;
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(CHUNK) {
        let picks: Vec<(usize, usize)> = chunk.iter().map(|&i| (i, 0)).collect();
        let logits = net.forward_eval(&assemble(ds, patch, &picks))?;
        let k = logits.shape().c;
        for row in logits.data().chunks_exact(k) {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Overall accuracy on a split.
pub fn evaluate(net: BranchRef<'_, f32>, ds: &DomainDataset, split: Split) -> Result<f64> {
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(Error::Data(format!("{}: {split:?} split is empty", ds.name)));
    }
    let pred = predict(net, ds, idx)?;
    let correct = pred.iter().zip(idx).filter(|(p, &i)| **p == ds.class_of(i)).count();
    Ok(correct as f64 / idx.len() as f64)
}

fn stop_iter(s: &TrainSchedule, opts: &TrainOptions) -> u64 {
    opts.stop_at.map_or(s.max_iter, |a| a.min(s.max_iter))
}

fn is_point(done: u64, s: &TrainSchedule, opts: &TrainOptions) -> bool {
    done == s.max_iter || (opts.eval_every > 0 && done % opts.eval_every == 0)
}

/// Train a single network (from scratch or after transfer) on one dataset.
/// Runs from `net.iteration` up to `max_iter` (or `opts.stop_at`).
pub fn train_single(
    net: &mut Network<f32>,
    ds: &DomainDataset,
    s: &TrainSchedule,
    opts: &TrainOptions,
    rng: &mut crate::Rng,
) -> Result<TrainMetrics> {
    s.validate()?;
    let mut m = TrainMetrics::new(1);
    let end = stop_iter(s, opts);
    let started = Instant::now();
    let first = net.iteration;
    let mut window = Vec::new();
    while net.iteration < end {
        let it = net.iteration;
        let lr = s.lr_at(it);
        let rates = GroupRates { private: lr, shared: lr };
        let loss = step(net.view_mut(), ds, s, rates, opts.augment, it, rng)?;
        if opts.record_lr {
            m.lr_log.push(LrRecord::new(it, 0, rates));
        }
        m.loss_trace[0].push(loss);
        window.push(loss);
        net.iteration += 1;
        let done = net.iteration;
        if is_point(done, s, opts) {
            let accuracy = if opts.eval_accuracy {
                Some(evaluate(net.view(), ds, opts.eval_split.into())?)
            } else {
                None
            };
            let loss = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            m.points.push(EvalPoint {
                iteration: done,
                domain: 0,
                loss,
                accuracy,
            });
            if opts.progress {
                match accuracy {
                    Some(a) => log::info!("{} iter {done}/{}: loss {loss:.4} acc {a:.4}", ds.name, s.max_iter),
                    None => log::info!("{} iter {done}/{}: loss {loss:.4}", ds.name, s.max_iter),
                }
            }
        }
    }
    m.set_timing(started.elapsed(), net.iteration - first);
    Ok(m)
}

fn check_domains(cdn: &CrossDomainNetwork<f32>, datasets: &[DomainDataset]) -> Result<()> {
    if datasets.len() != cdn.len() {
        return Err(Error::Config(format!(
            "{} datasets for a network with {} branches",
            datasets.len(),
            cdn.len()
        )));
    }
    Ok(())
}

/// Cross-domain loop over a subset of branches with a given shared-layer
/// multiplier. Metrics are indexed by branch.
fn run_domains(
    cdn: &mut CrossDomainNetwork<f32>,
    datasets: &[DomainDataset],
    branches: &[usize],
    shared_mult: f64,
    s: &TrainSchedule,
    opts: &TrainOptions,
    rng: &mut crate::Rng,
) -> Result<TrainMetrics> {
    s.validate()?;
    let mut m = TrainMetrics::new(cdn.len());
    let end = stop_iter(s, opts);
    let started = Instant::now();
    let first = cdn.iteration;
    let mut windows = vec![Vec::new(); cdn.len()];
    while cdn.iteration < end {
        let it = cdn.iteration;
        let lr = s.lr_at(it);
        let rates = GroupRates {
            private: lr,
            shared: lr * shared_mult,
        };
        for &d in branches {
            let loss = step(cdn.branch_mut(d), &datasets[d], s, rates, opts.augment, it, rng)?;
            if opts.record_lr {
                m.lr_log.push(LrRecord::new(it, d, rates));
            }
            m.loss_trace[d].push(loss);
            windows[d].push(loss);
        }
        cdn.iteration += 1;
        let done = cdn.iteration;
        if is_point(done, s, opts) {
            for &d in branches {
                let w = &mut windows[d];
                let loss = w.iter().sum::<f64>() / w.len() as f64;
                w.clear();
                m.points.push(EvalPoint {
                    iteration: done,
                    domain: d,
                    loss,
                    accuracy: None,
                });
            }
            if opts.progress {
                let msg: Vec<String> = m.points[m.points.len() - branches.len()..]
                    .iter()
                    .map(|p| format!("{} {:.4}", datasets[p.domain].name, p.loss))
                    .collect();
                log::info!("iter {done}/{}: {}", s.max_iter, msg.join(", "));
            }
        }
    }
    m.set_timing(started.elapsed(), cdn.iteration - first);
    Ok(m)
}

/// Joint training of every branch on its own dataset. Within an iteration
/// domains are visited in order and each applies its update immediately;
/// shared parameters use `lr / N`.
pub fn train_cross_domain(
    cdn: &mut CrossDomainNetwork<f32>,
    datasets: &[DomainDataset],
    s: &TrainSchedule,
    opts: &TrainOptions,
    rng: &mut crate::Rng,
) -> Result<TrainMetrics> {
    check_domains(cdn, datasets)?;
    let all: Vec<usize> = (0..cdn.len()).collect();
    run_domains(cdn, datasets, &all, 1.0 / cdn.len() as f64, s, opts, rng)
}

/// Index of the dataset with the most training pixels; ties go to the
/// earliest.
pub fn largest_dataset(datasets: &[DomainDataset]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, ds) in datasets.iter().enumerate() {
        if best.is_none_or(|b| ds.train_idx.len() > datasets[b].train_idx.len()) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoStepMetrics {
    pub largest: usize,
    pub step1: TrainMetrics,
    pub step2: TrainMetrics,
}

/// Step I trains only the branch of the largest dataset (shared multiplier
/// 1) under `s1`; Step II trains all branches jointly under `s2`, whose
/// iteration counter starts again from 0.
pub fn two_step_train(
    cdn: &mut CrossDomainNetwork<f32>,
    datasets: &[DomainDataset],
    s1: &TrainSchedule,
    s2: &TrainSchedule,
    opts: &TrainOptions,
    rng: &mut crate::Rng,
) -> Result<TwoStepMetrics> {
    check_domains(cdn, datasets)?;
    s1.validate()?;
    s2.validate()?;
    let largest = largest_dataset(datasets).ok_or_else(|| Error::Config("two-step training needs datasets".into()))?;
    let opts = TrainOptions {
        stop_at: None,
        ..opts.clone()
    };
    cdn.iteration = 0;
    let step1 = run_domains(cdn, datasets, &[largest], 1.0, s1, &opts, rng)?;
    cdn.iteration = 0;
    let all: Vec<usize> = (0..cdn.len()).collect();
    let step2 = run_domains(cdn, datasets, &all, 1.0 / cdn.len() as f64, s2, &opts, rng)?;
    Ok(TwoStepMetrics { largest, step1, step2 })
}

//! Acceptance suite: one pass/fail line per criterion. Runs without the
//! libtest harness so every line is printed; exits non-zero if any
//! criterion fails.
//!
//! Criterion 10 (full-scale accuracies on user-supplied real scenes) needs
//! external data and is not run here.

use std::time::Instant;

use rand::Rng as _;
use xdcnn::data::*;
use xdcnn::experiments::{rows_to_csv, run_experiment, ExperimentConfig, ExperimentId};
use xdcnn::network::gradcheck::oracle_suite;
use xdcnn::network::*;
use xdcnn::trainer::*;
use xdcnn::{rng_from_seed, Result};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn synth(name: &str, bands: usize, classes: usize, side: usize, seed: u64) -> DomainDataset {
    synth_generate(&SynthConfig {
        name: name.into(),
        bands,
        classes,
        height: side,
        width: side,
        blob_scale: 6.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn source(name: &str, bands: usize, classes: usize, side: usize, seed: u64) -> DomainDataset {
    let mut d = synth(name, bands, classes, side, seed);
    d.use_all_for_training();
    normalize_bands(d).unwrap()
}

/// 1. Finite-difference oracle over every layer and the 9-layer backbone.
fn gradient_oracle() -> Result<Outcome> {
    let t = Instant::now();
    let entries = oracle_suite(0..10)?;
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<String> = entries
        .iter()
        .filter(|e| !e.report.pass)
        .map(|e| format!("{}@{}", e.fragment, e.seed))
        .collect();
    let worst = entries.iter().map(|e| e.report.worst_rel()).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && secs < 120.0,
        format!(
            "{} checks over 10 seeds, worst rel {worst:.1e}, {secs:.1}s, failures {failed:?}",
            entries.len()
        ),
    )
}

/// Trainable parameters counted by hand from the layer list.
fn closed_form(bands: usize, classes: usize, f: usize, rm: usize) -> usize {
    let conv_bn = |out: usize, inp: usize, k: usize| out * inp * k * k + out + 2 * out;
    let bank = conv_bn(f, bands, 1) + conv_bn(f, bands, 3) + conv_bn(f, bands, 5);
    bank + conv_bn(f, 3 * f, 1) + rm * 2 * conv_bn(f, f, 1) + 2 * conv_bn(f, f, 1) + classes * f + classes
}

/// 2. Layer-count law and exact parameter counts.
fn architecture_laws() -> Result<Outcome> {
    let mut rng = rng_from_seed(2);
    let mut layers = Vec::new();
    let mut ok = true;
    for rm in 2..=5 {
        let spec = NetworkSpec::new(200, 8).with_filters(8).with_residual_modules(rm);
        let net: Network<f32> = build_backbone(&spec, &mut rng)?;
        let stored: usize = net
            .state()
            .iter()
            .filter(|t| !t.name.contains("running") && !t.name.ends_with("velocity"))
            .map(|t| t.data.len())
            .sum();
        let expect = closed_form(200, 8, 8, rm);
        ok &= net.weighted_layers() == 5 + 2 * rm && spec.param_count() == expect && stored == expect;
        layers.push(net.weighted_layers());
    }
    let cds = CrossDomainSpec::new(vec![
        NetworkSpec::new(48, 8).with_filters(8),
        NetworkSpec::new(24, 6).with_filters(8),
        NetworkSpec::new(40, 7).with_filters(8),
    ]);
    let cdn: CrossDomainNetwork<f32> = build_cross_domain(&cds, &mut rng)?;
    let trunk = 2 * 2 * (8 * 8 + 3 * 8);
    let physical: usize = [(48, 8), (24, 6), (40, 7)]
        .iter()
        .map(|&(b, c)| closed_form(b, c, 8, 2) - trunk)
        .sum::<usize>()
        + trunk;
    ok &= layers == [9, 11, 13, 15] && cdn.physical_param_count() == physical;
    outcome(ok, format!("layers {layers:?}, cross-domain physical params {physical}"))
}

/// 3. Shared trunk identical through every branch; shared lr = base/3.
fn sharing_identity() -> Result<Outcome> {
    let mut rng = rng_from_seed(3);
    let sources = vec![
        source("a", 48, 4, 16, 1),
        source("b", 24, 3, 16, 2),
        source("c", 40, 5, 16, 3),
    ];
    let spec = CrossDomainSpec::new(sources.iter().map(|d| NetworkSpec::new(d.bands(), d.classes).with_filters(8)).collect());
    let mut cdn: CrossDomainNetwork<f32> = build_cross_domain(&spec, &mut rng)?;
    let s = TrainSchedule::new(150, 200).with_batch(8).with_base_lr(0.01);
    let opts = TrainOptions {
        record_lr: true,
        ..Default::default()
    };
    let m = train_cross_domain(&mut cdn, &sources, &s, &opts, &mut rng)?;
    let bytes = |d: usize| -> Vec<u8> {
        cdn.shared_state_via(d)
            .iter()
            .flat_map(|t| t.data.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    };
    let same = bytes(0) == bytes(1) && bytes(1) == bytes(2) && !bytes(0).is_empty();
    let mut rule = m.lr_log.len() == 600;
    for r in &m.lr_log {
        let lr = s.lr_at(r.iteration);
        rule &= r.private_lr == lr && (r.shared_lr - lr / 3.0).abs() <= 1e-15 * lr;
    }
    let decayed = m.lr_log.iter().filter(|r| r.iteration >= 150).all(|r| r.private_lr < s.base_lr);
    outcome(
        same && rule && decayed,
        format!("{} optimizer records, shared trunk byte-identical across 3 branches: {same}", m.lr_log.len()),
    )
}

fn sample_std(v: &[f32]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    (v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// 4. Transfer from a saved and reloaded pre-trained checkpoint.
fn transfer_contract() -> Result<Outcome> {
    let mut rng = rng_from_seed(4);
    let sources = vec![source("a", 48, 4, 16, 1), source("b", 24, 3, 16, 2)];
    let spec = CrossDomainSpec::new(sources.iter().map(|d| NetworkSpec::new(d.bands(), d.classes).with_filters(32)).collect());
    let mut cdn: CrossDomainNetwork<f32> = build_cross_domain(&spec, &mut rng)?;
    let s = TrainSchedule::new(20, 30).with_batch(8).with_base_lr(0.01);
    train_cross_domain(&mut cdn, &sources, &s, &TrainOptions::default(), &mut rng)?;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pre.ckpt");
    save_cross_domain(&cdn, Some(&rng), &path)?;
    let loaded = load_cross_domain::<f32>(&path)?.net;
    let target = NetworkSpec::new(64, 16).with_filters(32);
    let net = transfer_shared(&loaded, &target, &mut rng_from_seed(40))?;
    let pre: std::collections::BTreeMap<String, Vec<f32>> =
        loaded.shared_state_via(0).into_iter().map(|t| (t.name, t.data)).collect();
    let (mut copied, mut reset, mut stds, mut ok) = (0, 0, Vec::new(), true);
    for t in net.state() {
        if t.name.ends_with("velocity") {
            ok &= t.data.iter().all(|&v| v == 0.0);
        } else if t.name.starts_with("res") {
            if t.name.ends_with("running_mean") {
                ok &= t.data.iter().all(|&v| v == 0.0);
                reset += 1;
            } else if t.name.ends_with("running_var") {
                ok &= t.data.iter().all(|&v| v == 1.0);
                reset += 1;
            } else {
                let src = pre.get(&format!("shared.{}", t.name));
                let same_bits = src.is_some_and(|p| p.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()) && p.len() == t.data.len());
                ok &= same_bits;
                copied += 1;
            }
        } else if t.name.ends_with(".weight") {
            let want = if ["c7", "c8"].iter().any(|p| t.name.starts_with(p)) { 0.005 } else { 0.01 };
            let got = sample_std(&t.data);
            ok &= (got / want - 1.0).abs() <= 0.10;
            stds.push(format!("{} {got:.4}", t.name.trim_end_matches(".weight")));
        }
    }
    ok &= copied == 16 && reset == 8;
    outcome(ok, format!("{copied} trunk tensors bit-exact, {reset} BN stats reset, momentum zero, fresh stds [{}]", stds.join(", ")))
}

/// 5. A 2-class, 50-pixel target is memorised.
fn overfit_fixture() -> Result<Outcome> {
    let t = Instant::now();
    let mut reached = Vec::new();
    for seed in 0..3u64 {
        let mut ds = synth("tiny", 16, 2, 32, 50 + seed);
        ds.split(25, &mut rng_from_seed(seed))?;
        let ds = normalize_bands(ds)?;
        let mut rng = rng_from_seed(500 + seed);
        let mut net: Network<f32> = build_backbone(&NetworkSpec::new(16, 2).with_filters(16), &mut rng)?;
        let s = TrainSchedule::new(1500, 2000).with_batch(16).with_base_lr(0.01);
        let mut hit = None;
        // train in slices and stop at the first slice that memorises the set
        for stop in (50..=2000).step_by(50) {
            let opts = TrainOptions {
                eval_every: 0,
                eval_accuracy: false,
                stop_at: Some(stop),
                ..Default::default()
            };
            train_single(&mut net, &ds, &s, &opts, &mut rng)?;
            if evaluate(net.view(), &ds, Split::Train)? >= 0.99 {
                hit = Some(stop);
                break;
            }
        }
        reached.push(hit);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        reached.iter().all(Option::is_some) && secs < 180.0,
        format!("train accuracy >= 0.99 first at iterations {reached:?}, {secs:.1}s"),
    )
}

/// 6. Fine-tuned networks reach 0.90 no later than scratch ones, with
/// comparable final accuracy.
fn convergence_trend() -> Result<Outcome> {
    let t = Instant::now();
    let cfg = ExperimentConfig::default();
    let out = run_experiment(&cfg, ExperimentId::ScheduleSweep)?;
    let cond = |prefix: &str| {
        out.summary
            .conditions
            .iter()
            .find(|c| c.condition.starts_with(prefix))
            .expect("both arms present")
    };
    let (ft, sc) = (cond("finetune"), cond("scratch"));
    let finals = |label: &str| -> Vec<f64> { out.rows.iter().filter(|r| r.condition == label).map(|r| r.value).collect() };
    let (f_acc, s_acc) = (finals(&ft.condition), finals(&sc.condition));
    let faster = ft
        .first_reaching
        .iter()
        .zip(&sc.first_reaching)
        .filter(|(f, s)| match (f, s) {
            (Some(f), Some(s)) => f <= s,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    let close = f_acc.iter().zip(&s_acc).filter(|(a, b)| (*a - *b).abs() <= 0.03).count();
    let show = |v: &[Option<u64>]| v.iter().map(|x| x.map_or("-".into(), |i| i.to_string())).collect::<Vec<String>>().join(" ");
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        faster >= 4 && close >= 3,
        format!(
            "reach 0.90 finetune [{}] scratch [{}] -> {faster}/5 no later; finals finetune [{}] scratch [{}] -> {close}/5 within 0.03; {:.0}s",
            show(&ft.first_reaching),
            show(&sc.first_reaching),
            fmt(&f_acc),
            fmt(&s_acc),
            t.elapsed().as_secs_f64()
        ),
    )
}

/// 7. Two-step schedule with one source ten times larger than the others.
fn two_step_schedule() -> Result<Outcome> {
    let sources = vec![
        source("small-a", 12, 3, 10, 1),
        source("large", 20, 4, 32, 2),
        source("small-b", 16, 3, 10, 3),
    ];
    let ratio = sources[1].train_idx.len() as f64 / sources[0].train_idx.len() as f64;
    let spec = CrossDomainSpec::new(sources.iter().map(|d| NetworkSpec::new(d.bands(), d.classes).with_filters(8)).collect());
    let mut rng = rng_from_seed(7);
    let mut cdn: CrossDomainNetwork<f32> = build_cross_domain(&spec, &mut rng)?;
    let s1 = TrainSchedule::new(30, 40).with_batch(4).with_base_lr(0.01);
    let s2 = TrainSchedule::new(10, 25).with_batch(4).with_base_lr(0.004);
    let opts = TrainOptions {
        record_lr: true,
        eval_every: 10,
        ..Default::default()
    };
    let m = two_step_train(&mut cdn, &sources, &s1, &s2, &opts, &mut rng)?;
    let mut ok = m.largest == 1 && ratio >= 10.0;
    // Step I: only the large branch, full rate on shared layers, own schedule
    ok &= m.step1.lr_log.len() == 40;
    for (i, r) in m.step1.lr_log.iter().enumerate() {
        ok &= r.iteration == i as u64 && r.domain == 1 && r.private_lr == s1.lr_at(r.iteration) && r.shared_lr == r.private_lr;
    }
    ok &= m.step1.loss_trace[0].is_empty() && m.step1.loss_trace[2].is_empty() && m.step1.loss_trace[1].len() == 40;
    // Step II: counter restarts at 0, all branches in order, shared rate / 3
    ok &= m.step2.lr_log.len() == 75;
    for (i, r) in m.step2.lr_log.iter().enumerate() {
        let lr = s2.lr_at(r.iteration);
        ok &= r.iteration == (i / 3) as u64 && r.domain == i % 3;
        ok &= r.private_lr == lr && (r.shared_lr - lr / 3.0).abs() <= 1e-15 * lr;
    }
    ok &= m.step2.lr_log[0].private_lr == s2.base_lr && cdn.iteration == 25;
    outcome(
        ok,
        format!(
            "largest source {:.1}x the others; Step I 40 records on branch 1, Step II 25 iterations x 3 branches from iteration 0",
            ratio
        ),
    )
}

/// 8. Split arithmetic, D4 group law and ENVI round trips.
fn data_layer() -> Result<Outcome> {
    let counts = [1428usize, 830, 483, 730, 478, 972, 2455, 1128];
    let (h, w) = (145, 145);
    let mut labels = vec![0u16; h * w];
    let mut rng = rng_from_seed(8);
    let mut free: Vec<usize> = (0..h * w).collect();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let i = rng.random_range(0..free.len());
            labels[free.swap_remove(i)] = c as u16 + 1;
        }
    }
    let cube = HyperCube::new(1, h, w, vec![0.0; h * w])?;
    let mut ds = DomainDataset::new("ip".into(), Sensor::Aviris, 8, cube, LabelRaster::new(h, w, labels)?)?;
    ds.split(200, &mut rng)?;
    let mut per_class = [0usize; 8];
    ds.train_idx.iter().for_each(|&i| per_class[ds.class_of(i)] += 1);
    let split_ok = ds.train_idx.len() == 1600 && ds.test_idx.len() == 6904 && per_class == [200; 8];

    let mut group_ok = true;
    for a in 0..8 {
        let inverses = (0..8).filter(|&b| d4_compose(a, b) == 0).count();
        group_ok &= d4_compose(0, a) == a && d4_compose(a, 0) == a && inverses == 1;
        for b in 0..8 {
            for c in 0..8 {
                group_ok &= d4_compose(d4_compose(a, b), c) == d4_compose(a, d4_compose(b, c));
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let mut envi_ok = 0;
    for il in Interleave::ALL {
        for dt in [EnviDataType::I16, EnviDataType::U16, EnviDataType::F32, EnviDataType::F64] {
            for order in [ByteOrder::Little, ByteOrder::Big] {
                let data: Vec<f32> = (0..3 * 4 * 5)
                    .map(|i| match dt {
                        EnviDataType::I16 => (i as f32 - 30.0) * 1000.0,
                        EnviDataType::U16 => i as f32 * 1000.0,
                        _ => (i as f32 - 30.0) * 0.37,
                    })
                    .collect();
                let cube = HyperCube::new(3, 4, 5, data)?;
                let (hdr, img) = (dir.path().join("c.hdr"), dir.path().join("c.img"));
                write_envi(&cube, &hdr, &img, dt, il, order)?;
                envi_ok += (load_envi(&hdr, &img)?.data == cube.data) as usize;
            }
        }
    }
    outcome(
        split_ok && group_ok && envi_ok == 24,
        format!("split 1600/6904 with 200 per class: {split_ok}; D4 group laws: {group_ok}; ENVI lossless {envi_ok}/24"),
    )
}

/// 9. Same config and seed, byte-identical checkpoints and reports.
fn determinism() -> Result<Outcome> {
    let cfg = ExperimentConfig {
        seeds: vec![3],
        sources: ExperimentConfig::default().sources.into_iter().take(2).collect(),
        pretrain_schedule: (40, 60),
        schedules: vec![(40, 60)],
        eval_every: 20,
        ..Default::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (i, d) in dirs.iter().enumerate() {
        let c = ExperimentConfig {
            threads: Some(i + 1),
            ..cfg.clone()
        };
        run_experiment(&c, ExperimentId::ScheduleSweep)?.write(d.path())?;
    }
    let mut same = Vec::new();
    for f in ["pretrained.ckpt", "report.csv", "curves.csv", "summary.json"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        same.push((f, a == b && !a.is_empty()));
    }
    // a single training run with a checkpoint in the middle
    let ds = {
        let mut d = synth("det", 12, 3, 16, 9);
        d.split(10, &mut rng_from_seed(9))?;
        normalize_bands(d)?
    };
    let train = || -> Result<(Vec<u8>, String)> {
        let mut rng = rng_from_seed(90);
        let mut net: Network<f32> = build_backbone(&NetworkSpec::new(12, 3).with_filters(8), &mut rng)?;
        let s = TrainSchedule::new(20, 30).with_batch(8).with_base_lr(0.01);
        let m = train_single(&mut net, &ds, &s, &TrainOptions { eval_every: 10, ..Default::default() }, &mut rng)?;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.ckpt");
        save_checkpoint(&net, Some(&rng), &p)?;
        Ok((std::fs::read(&p).unwrap(), m.to_csv()?))
    };
    let (a, b) = (train()?, train()?);
    same.push(("single-run checkpoint+csv", a == b));
    let rows_equal = rows_to_csv(&[])? == rows_to_csv(&[])?;
    outcome(same.iter().all(|s| s.1) && rows_equal, format!("{same:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 9] = [
        ("gradient oracle", gradient_oracle),
        ("architecture laws", architecture_laws),
        ("sharing identity", sharing_identity),
        ("transfer contract", transfer_contract),
        ("overfit fixture", overfit_fixture),
        ("convergence trend", convergence_trend),
        ("two-step schedule", two_step_schedule),
        ("data layer", data_layer),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == (i + 1).to_string()) {
            continue;
        }
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as usize;
        println!("{id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    }
    println!("criterion 10 full-scale real data: not run (needs user-supplied scenes)");
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

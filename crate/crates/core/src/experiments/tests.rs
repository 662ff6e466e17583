use super::*;
use crate::data::SynthConfig;

fn scene(name: &str, bands: usize, classes: usize, side: usize, seed: u64) -> DomainSource {
    DomainSource::Synth(SynthConfig {
        name: name.into(),
        bands,
        classes,
        height: side,
        width: side,
        blob_scale: 4.0,
        seed,
        ..Default::default()
    })
}

fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![0, 1],
        network: NetworkTemplate {
            filters: 4,
            ..Default::default()
        },
        optim: Optim {
            batch: 4,
            ..Default::default()
        },
        target: scene("t", 6, 3, 12, 1),
        train_per_class: 3,
        sources: vec![scene("a", 8, 2, 10, 2), scene("b", 5, 3, 10, 3)],
        schedules: vec![(3, 4), (4, 6)],
        pretrain_schedule: (3, 4),
        depths: vec![2, 3],
        eval_every: 2,
        threads: Some(1),
        ..Default::default()
    }
}

#[test]
fn schedule_sweep_emits_two_rows_per_schedule_and_seed() {
    let cfg = tiny();
    let out = run_experiment(&cfg, ExperimentId::ScheduleSweep).unwrap();
    assert_eq!(out.rows.len(), 2 * cfg.schedules.len() * cfg.seeds.len());
    let labels: Vec<&str> = out.rows.iter().map(|r| r.condition.as_str()).collect();
    assert_eq!(
        labels,
        ["finetune 3/4", "finetune 3/4", "scratch 3/4", "scratch 3/4", "finetune 4/6", "finetune 4/6", "scratch 4/6", "scratch 4/6"]
    );
    assert!(out.rows.iter().all(|r| r.metric == "accuracy"));
    assert_eq!(out.rows[4].iteration, 6);
    let meta = &out.summary.conditions[2].metadata;
    assert_eq!((meta["step_size"], meta["max_iter"]), (4, 6));
    assert_eq!(out.checkpoints.len(), 1);
    assert!(out.curves.iter().any(|r| r.metric == "loss:a"));
}

#[test]
fn depth_sweep_labels_layers() {
    let cfg = tiny();
    let out = run_experiment(&cfg, ExperimentId::DepthSweep).unwrap();
    assert_eq!(out.rows.len(), cfg.depths.len() * 2 * cfg.seeds.len());
    let conds: Vec<&str> = out.summary.conditions.iter().map(|c| c.condition.as_str()).collect();
    assert_eq!(conds, ["finetune 9-layer", "scratch 9-layer", "finetune 11-layer", "scratch 11-layer"]);
    assert_eq!(out.summary.conditions[2].metadata["residual_modules"], 3);
}

#[test]
fn source_conditions_record_pixel_counts() {
    let mut cfg = tiny();
    cfg.schedules.truncate(1);
    let out = run_experiment(&cfg, ExperimentId::SingleVsMulti).unwrap();
    // default conditions: each source alone plus all together
    let conds: Vec<&str> = out.summary.conditions.iter().map(|c| c.condition.as_str()).collect();
    assert_eq!(conds, ["S0", "S1", "P2"]);
    let px: Vec<u64> = out.summary.conditions.iter().map(|c| c.metadata["source_pixels"]).collect();
    assert_eq!(px, [100, 100, 200]);
    assert_eq!(out.rows.len(), 3 * cfg.seeds.len());
}

#[test]
fn sensor_ablation_needs_exactly_two_conditions() {
    let mut cfg = tiny();
    assert!(matches!(cfg.validate(ExperimentId::SensorAblation), Err(Error::Config(_))));
    cfg.conditions = vec![
        Condition {
            label: "same".into(),
            sources: vec![0],
        },
        Condition {
            label: "other".into(),
            sources: vec![1],
        },
    ];
    cfg.validate(ExperimentId::SensorAblation).unwrap();
    cfg.conditions[1].sources = vec![5];
    assert!(matches!(cfg.validate(ExperimentId::SensorAblation), Err(Error::Config(_))));
}

#[test]
fn single_vs_multi_needs_both_kinds() {
    let mut cfg = tiny();
    cfg.conditions = vec![Condition {
        label: "one".into(),
        sources: vec![0],
    }];
    assert!(matches!(cfg.validate(ExperimentId::SingleVsMulti), Err(Error::Config(_))));
}

#[test]
fn config_errors() {
    let mut cfg = tiny();
    cfg.seeds.clear();
    assert!(matches!(cfg.validate(ExperimentId::Pretrain), Err(Error::Config(_))));
    let cfg = tiny();
    assert!(matches!(cfg.validate(ExperimentId::Finetune), Err(Error::Config(_))));
    let cfg = ExperimentConfig {
        checkpoint: Some("/nonexistent/ckpt".into()),
        ..tiny()
    };
    assert!(matches!(cfg.validate(ExperimentId::Finetune), Err(Error::Config(_))));
    let cfg = ExperimentConfig {
        schedules: vec![(10, 5)],
        ..tiny()
    };
    assert!(matches!(cfg.validate(ExperimentId::Pretrain), Err(Error::Config(_))));
    assert!(matches!(run_experiment(&cfg, ExperimentId::Pretrain), Err(Error::Config(_))));
}

#[test]
fn summary_matches_recomputation_from_csv() {
    let mut cfg = tiny();
    cfg.schedules.truncate(1);
    let out = run_experiment(&cfg, ExperimentId::ScheduleSweep).unwrap();
    let parsed = rows_from_csv(&rows_to_csv(&out.rows).unwrap()).unwrap();
    let again = aggregate(&parsed);
    assert_eq!(again.len(), out.summary.conditions.len());
    for (a, b) in again.iter().zip(&out.summary.conditions) {
        assert_eq!((&a.condition, a.mean, a.min, a.max), (&b.condition, b.mean, b.min, b.max));
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let mut cfg = tiny();
    cfg.schedules.truncate(1);
    let one = run_experiment(&cfg, ExperimentId::ScheduleSweep).unwrap();
    cfg.threads = Some(3);
    let three = run_experiment(&cfg, ExperimentId::ScheduleSweep).unwrap();
    assert_eq!(rows_to_csv(&one.rows).unwrap(), rows_to_csv(&three.rows).unwrap());
    assert_eq!(rows_to_csv(&one.curves).unwrap(), rows_to_csv(&three.curves).unwrap());
}

#[test]
fn scratch_and_finetune_share_front_and_head_init() {
    let cfg = tiny();
    let sources = load_sources(&cfg).unwrap();
    let pre = pretrain(&cfg, &sources, 2, 0).unwrap();
    let scene = cfg.target.load().unwrap();
    let zero = ExperimentConfig {
        schedules: vec![(1, 1)],
        ..cfg.clone()
    };
    let target = prepare_target(&zero, &scene, 4).unwrap();
    let spec = cfg.network.spec(target.bands(), target.classes, 2);
    let a: Network<f32> = build_backbone(&spec, &mut run_rng(4)).unwrap();
    let b = transfer_shared(&pre.net, &spec, &mut run_rng(4)).unwrap();
    let (sa, sb) = (a.state(), b.state());
    for (x, y) in sa.iter().zip(&sb) {
        assert_eq!(x.name, y.name);
        if x.name.starts_with("res") {
            if x.name.ends_with("weight") {
                assert_ne!(x.data, y.data, "{}", x.name);
            }
        } else {
            assert_eq!(x.data, y.data, "{}", x.name);
        }
    }
}

#[test]
fn config_json_round_trip_and_path_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.target = DomainSource::Manifest("scenes/target.json".into());
    cfg.checkpoint = Some("pre.ckpt".into());
    cfg.experiment = Some(ExperimentId::DepthSweep);
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    assert!(text.contains("\"depth_sweep\""));
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, &text).unwrap();
    let back = ExperimentConfig::read(&path).unwrap();
    assert_eq!(back.target, DomainSource::Manifest(dir.path().join("scenes/target.json")));
    assert_eq!(back.checkpoint, Some(dir.path().join("pre.ckpt")));
    assert_eq!(back.schedules, cfg.schedules);
    let partial: ExperimentConfig = serde_json::from_str(r#"{"seeds": [7], "schedules": [[40, 50]]}"#).unwrap();
    assert_eq!(partial.seeds, [7]);
    assert_eq!(partial.sources.len(), 3);
    std::fs::write(&path, r#"{"seeds": "x"}"#).unwrap();
    assert!(matches!(ExperimentConfig::read(&path), Err(Error::Config(_))));
}

#[test]
fn experiment_ids_parse() {
    for id in ExperimentId::ALL {
        assert_eq!(ExperimentId::parse(id.name()), Some(id));
    }
    assert_eq!(ExperimentId::parse("nope"), None);
}

use super::gradcheck::{oracle_suite, tiny_backbone_spec, BackboneFragment};
use super::*;
use crate::rng_from_seed;
use crate::tensor::gradcheck::{grad_check, GradCheckConfig};
use crate::tensor::{Shape4, Tensor4};

fn small(bands: usize, classes: usize) -> NetworkSpec {
    NetworkSpec::new(bands, classes).with_filters(4)
}

#[test]
fn indian_pines_shaped_backbone() {
    let spec = NetworkSpec::new(200, 8);
    let mut net: Network<f32> = Network::zeros(&spec).unwrap();
    assert_eq!(net.weighted_layers(), 9);
    let x = Tensor4::zeros(Shape4::new(2, 200, 5, 5));
    let logits = net.forward(&x, Mode::Eval, &mut rng_from_seed(0)).unwrap();
    assert_eq!(logits.shape(), Shape4::new(2, 8, 1, 1));
}

#[test]
fn depth_grows_by_two_per_module() {
    for (rm, layers) in [(2, 9), (3, 11), (4, 13), (5, 15)] {
        let net: Network<f32> =
            build_backbone(&small(3, 3).with_residual_modules(rm), &mut rng_from_seed(0)).unwrap();
        assert_eq!(net.weighted_layers(), layers);
    }
}

#[test]
fn parameter_count_matches_closed_form() {
    let spec = NetworkSpec::new(2, 3).with_filters(4);
    let net: Network<f32> = Network::zeros(&spec).unwrap();
    // hand sum over layer shapes: o·i·k² + o (+ 2o BN affine)
    let bank = (4 * 2 + 4 + 8) + (4 * 2 * 9 + 4 + 8) + (4 * 2 * 25 + 4 + 8);
    let c2 = 4 * 12 + 4 + 8;
    let res = 4 * (4 * 4 + 4 + 8);
    let c78 = 2 * (4 * 4 + 4 + 8);
    let c9 = 3 * 4 + 3;
    assert_eq!(net.param_count(), bank + c2 + res + c78 + c9);
    assert_eq!(spec.param_count(), net.param_count());
}

#[test]
fn band_mismatch_names_both_counts() {
    let mut net: Network<f32> = build_backbone(&small(6, 3), &mut rng_from_seed(0)).unwrap();
    let x = Tensor4::zeros(Shape4::new(1, 5, 5, 5));
    let err = net.forward(&x, Mode::Eval, &mut rng_from_seed(0)).unwrap_err().to_string();
    assert!(err.contains("6 bands") && err.contains("5 bands"), "{err}");
}

#[test]
fn init_follows_layer_std() {
    let spec = NetworkSpec::new(8, 3).with_filters(128);
    let net: Network<f32> = build_backbone(&spec, &mut rng_from_seed(4)).unwrap();
    let std = |v: &[f32]| {
        let n = v.len() as f64;
        let m = v.iter().map(|&x| x as f64).sum::<f64>() / n;
        (v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    let c2 = &net.branch.c2.conv.weight.value;
    assert!(c2.len() >= 10_000);
    assert!((std(c2) - 0.01).abs() <= 0.001);
    let res = &net.trunk[0].conv1.conv.weight.value;
    assert!(res.len() >= 10_000);
    assert!((std(res) - 0.005).abs() <= 0.0005);
    for l in net.layers() {
        assert!(l.conv.bias.value.iter().all(|&b| b == 0.0));
        if let Some(bn) = &l.bn {
            assert!(bn.scale.value.iter().all(|&s| s == 1.0));
            assert!(bn.running_var.iter().all(|&s| s == 1.0));
        }
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let mut rng = rng_from_seed(1);
    let mut net: Network<f32> = build_backbone(&small(3, 4), &mut rng).unwrap();
    let x = Tensor4::randn(Shape4::new(3, 3, 5, 5), 1.0, &mut rng);
    let a = net.forward(&x, Mode::Eval, &mut rng).unwrap();
    let b = net.forward(&x, Mode::Eval, &mut rng).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn zero_input_zero_weights_give_uniform_logits() {
    let net: Network<f64> = Network::zeros(&small(3, 4)).unwrap();
    let x = Tensor4::zeros(Shape4::new(2, 3, 5, 5));
    let logits = net.view().forward_eval(&x).unwrap();
    let first = logits.data()[0];
    assert!(logits.data().iter().all(|&v| v == first));
}

#[test]
fn full_backbone_passes_gradient_oracle() {
    for seed in 0..3 {
        let mut f = BackboneFragment::random(&tiny_backbone_spec(), 4, seed).unwrap();
        let r = grad_check(&mut f, GradCheckConfig::default()).unwrap();
        assert!(r.pass, "seed {seed}: {:?}", r.params.iter().filter(|p| !p.pass).collect::<Vec<_>>());
    }
    let spec = NetworkSpec::new(8, 3).with_filters(4);
    let mut f = BackboneFragment::random(&spec, 4, 99).unwrap();
    let r = grad_check(&mut f, GradCheckConfig::default()).unwrap();
    assert!(r.pass);
    assert!(r.skipped_fraction() < 0.15, "too many kink crossings: {}", r.skipped_fraction());
}

#[test]
fn suite_reports_every_fragment() {
    let entries = oracle_suite([5]).unwrap();
    assert_eq!(entries.len(), 8);
    assert!(entries.iter().all(|e| e.report.pass), "{entries:?}");
}

fn three_domain_spec() -> CrossDomainSpec {
    CrossDomainSpec::new(vec![small(5, 3), small(7, 4), small(4, 2)])
}

#[test]
fn shared_trunk_is_one_physical_store() {
    let mut cdn: CrossDomainNetwork<f32> =
        build_cross_domain(&three_domain_spec(), &mut rng_from_seed(2)).unwrap();
    cdn.branch_mut(0).trunk[0].conv1.conv.weight.value[0] = 1.25;
    assert_eq!(cdn.branch(1).trunk[0].conv1.conv.weight.value[0], 1.25);
    assert_eq!(cdn.shared_state_via(0), cdn.shared_state_via(2));
}

#[test]
fn table_one_sources_build() {
    let branches = [(204, 17), (102, 10), (103, 10), (176, 14), (145, 15)]
        .iter()
        .map(|&(b, c)| NetworkSpec::new(b, c).with_filters(8))
        .collect();
    let spec = CrossDomainSpec::new(branches);
    let cdn: CrossDomainNetwork<f32> = CrossDomainNetwork::zeros(&spec).unwrap();
    assert_eq!(cdn.len(), 5);
    assert_eq!(cdn.physical_param_count(), spec.physical_param_count());
}

#[test]
fn physical_count_is_private_sum_plus_one_trunk() {
    let spec = three_domain_spec();
    let cdn: CrossDomainNetwork<f32> = CrossDomainNetwork::zeros(&spec).unwrap();
    let private: usize = spec.branches.iter().map(|b| b.private_param_count()).sum();
    assert_eq!(cdn.physical_param_count(), private + spec.branches[0].shared_param_count());
    let separate: usize = spec.branches.iter().map(|b| b.param_count()).sum();
    assert_eq!(separate - cdn.physical_param_count(), 2 * spec.branches[0].shared_param_count());
}

#[test]
fn transfer_copies_trunk_and_reinitialises_the_rest() {
    let src_spec = CrossDomainSpec::new(vec![
        NetworkSpec::new(6, 3).with_filters(64),
        NetworkSpec::new(9, 5).with_filters(64),
    ]);
    let mut cdn: CrossDomainNetwork<f32> = build_cross_domain(&src_spec, &mut rng_from_seed(7)).unwrap();
    for m in &mut cdn.trunk {
        for l in m.layers_mut() {
            l.bn.as_mut().unwrap().running_mean.fill(3.0);
            l.bn.as_mut().unwrap().scale.value[0] = 2.0;
            l.conv.weight.velocity.fill(0.1);
        }
    }
    let target = NetworkSpec::new(12, 4).with_filters(64);
    let net = transfer_shared(&cdn, &target, &mut rng_from_seed(8)).unwrap();
    for (dst, src) in net.trunk.iter().zip(&cdn.trunk) {
        for (d, s) in dst.layers().into_iter().zip(src.layers()) {
            assert_eq!(d.conv.weight.value, s.conv.weight.value);
            assert_eq!(d.conv.bias.value, s.conv.bias.value);
            let (db, sb) = (d.bn.as_ref().unwrap(), s.bn.as_ref().unwrap());
            assert_eq!(db.scale.value, sb.scale.value);
            assert!(db.running_mean.iter().all(|&v| v == 0.0));
            assert!(db.running_var.iter().all(|&v| v == 1.0));
            assert!(d.conv.weight.velocity.iter().all(|&v| v == 0.0));
        }
    }
    assert_ne!(net.branch.c2.conv.weight.value, cdn.branches[0].c2.conv.weight.value);
}

#[test]
fn transfer_rejects_depth_or_width_mismatch() {
    let cdn: CrossDomainNetwork<f32> =
        build_cross_domain(&three_domain_spec(), &mut rng_from_seed(0)).unwrap();
    let deeper = small(5, 3).with_residual_modules(4);
    assert!(matches!(
        transfer_shared(&cdn, &deeper, &mut rng_from_seed(0)),
        Err(crate::Error::Transfer(_))
    ));
    let wider = small(5, 3).with_filters(8);
    assert!(matches!(
        transfer_shared(&cdn, &wider, &mut rng_from_seed(0)),
        Err(crate::Error::Transfer(_))
    ));
}

#[test]
fn identity_residual_module_leaves_logits_unchanged() {
    let mut rng = rng_from_seed(12);
    let base: Network<f64> = build_backbone(&small(3, 4), &mut rng).unwrap();
    let mut deeper: Network<f64> =
        build_backbone(&small(3, 4).with_residual_modules(3), &mut rng).unwrap();
    let deeper_spec = deeper.branch.spec.clone();
    deeper.branch = base.branch.clone();
    deeper.branch.spec = deeper_spec;
    deeper.trunk[0] = base.trunk[0].clone();
    deeper.trunk[1] = base.trunk[1].clone();
    let extra = &mut deeper.trunk[2].conv2;
    extra.conv.weight.value.fill(0.0);
    extra.conv.bias.value.fill(0.0);
    let bn = extra.bn.as_mut().unwrap();
    bn.reset_running_stats();
    bn.scale.value.fill(1.0);
    bn.shift.value.fill(0.0);

    let x = Tensor4::randn(Shape4::new(4, 3, 5, 5), 1.0, &mut rng);
    let a = base.view().forward_eval(&x).unwrap();
    let b = deeper.view().forward_eval(&x).unwrap();
    assert_eq!(a, b);
}

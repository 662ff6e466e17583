//! Finite-difference check of a whole backbone, plus the suite run by the
//! `gradcheck` command.

use rand::Rng as _;

use super::{build_backbone, LayerName, Network, NetworkSpec, ParamKind};
use crate::tensor::gradcheck::{grad_check, layer_fragments, GradCheckConfig, GradCheckReport, GradCheckable};
use crate::tensor::{softmax_cross_entropy, Param, Shape4, Tensor4};
use crate::{rng_from_seed, Result};

/// Full backbone (training mode, fixed dropout masks) under softmax
/// cross-entropy. The input batch is exposed as parameter 0.
pub struct BackboneFragment {
    pub net: Network<f64>,
    pub input: Tensor4<f64>,
    pub labels: Vec<usize>,
    mask_seed: u64,
    pattern: Option<Vec<bool>>,
}

impl BackboneFragment {
    /// Weights are redrawn so that finite differences are well conditioned.
    /// Batch norm makes the function invariant to the scale of the conv
    /// weights feeding it, so those are drawn large: a fixed nudge then moves
    /// the normalised activations very little. The input is scaled likewise.
    pub fn random(spec: &NetworkSpec, n: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let mut net: Network<f64> = build_backbone(spec, &mut rng)?;
        net.view_mut().visit_params(&mut |info, p: &mut Param<f64>| {
            let (mean, std) = match info.kind {
                ParamKind::Weight if info.layer == LayerName::C9 => (0.0, 0.5),
                ParamKind::Weight => (0.0, 5.0),
                ParamKind::Bias => (0.0, 0.5),
                ParamKind::BnScale => (1.0, 0.3),
                ParamKind::BnShift => (0.0, 0.3),
            };
            let t = Tensor4::<f64>::randn(Shape4::new(1, 1, 1, p.len()), std, &mut rng);
            p.value = t.data().iter().map(|v| v + mean).collect();
            Ok(())
        })?;
        let input = Tensor4::randn(Shape4::new(n, spec.bands, spec.patch, spec.patch), 5.0, &mut rng);
        let labels = (0..n).map(|_| rng.random_range(0..spec.classes)).collect();
        Ok(Self {
            net,
            input,
            labels,
            mask_seed: seed.wrapping_mul(31).wrapping_add(7),
            pattern: None,
        })
    }

    fn with_param<R>(&mut self, index: usize, f: impl FnOnce(&mut Param<f64>) -> R) -> R {
        let mut f = Some(f);
        let mut out = None;
        let mut i = 0;
        self.net
            .view_mut()
            .visit_params(&mut |_, p| {
                if i == index {
                    out = Some((f.take().unwrap())(p));
                }
                i += 1;
                Ok(())
            })
            .expect("visitor never fails");
        out.expect("parameter index in range")
    }

    fn names(&mut self) -> Vec<String> {
        let mut names = vec!["input".to_string()];
        self.net
            .view_mut()
            .visit_params(&mut |info, _| {
                names.push(info.name());
                Ok(())
            })
            .expect("visitor never fails");
        names
    }
}

impl GradCheckable for BackboneFragment {
    fn param_names(&self) -> Vec<String> {
        // visit_params needs &mut; names do not depend on state
        self.clone_names()
    }

    fn param_len(&self, param: usize) -> usize {
        if param == 0 {
            return self.input.data().len();
        }
        let mut net = self.net.clone();
        let mut i = 0;
        let mut len = 0;
        net.view_mut()
            .visit_params(&mut |_, p| {
                if i + 1 == param {
                    len = p.len();
                }
                i += 1;
                Ok(())
            })
            .expect("visitor never fails");
        len
    }

    fn nudge(&mut self, param: usize, index: usize, delta: f64) {
        if param == 0 {
            self.input.data_mut()[index] += delta;
        } else {
            self.with_param(param - 1, |p| p.value[index] += delta);
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let mut rng = rng_from_seed(self.mask_seed);
        let (logits, tape) = self.net.view_mut().forward_train(&self.input, &mut rng)?;
        self.pattern = Some(tape.relu_signs());
        Ok(softmax_cross_entropy(&logits, &self.labels)?.0)
    }

    fn relu_pattern(&self) -> Option<Vec<bool>> {
        self.pattern.clone()
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        let mut rng = rng_from_seed(self.mask_seed);
        let mut view = self.net.view_mut();
        let (logits, tape) = view.forward_train(&self.input, &mut rng)?;
        let (_, grad) = softmax_cross_entropy(&logits, &self.labels)?;
        let gx = view.backward(&tape, &grad, true)?.expect("input gradient requested");
        let mut out = vec![gx.into_data()];
        self.net.view_mut().visit_params(&mut |_, p| {
            out.push(p.grad.clone());
            Ok(())
        })?;
        Ok(out)
    }
}

impl BackboneFragment {
    fn clone_names(&self) -> Vec<String> {
        let mut copy = Self {
            net: self.net.clone(),
            input: self.input.clone(),
            labels: self.labels.clone(),
            mask_seed: self.mask_seed,
            pattern: None,
        };
        copy.names()
    }
}

/// The spec of the small backbone used by the oracle suite.
pub fn tiny_backbone_spec() -> NetworkSpec {
    NetworkSpec::new(3, 3).with_filters(4).with_patch(5)
}

/// One labelled report per fragment and seed.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub fragment: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Every layer fragment plus the full 9-layer backbone for each seed.
pub fn oracle_suite(seeds: impl IntoIterator<Item = u64>) -> Result<Vec<SuiteEntry>> {
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();
    for seed in seeds {
        let mut frags = layer_fragments(seed);
        frags.push((
            "backbone9".into(),
            Box::new(BackboneFragment::random(&tiny_backbone_spec(), 4, seed)?),
        ));
        for (name, mut f) in frags {
            let report = grad_check(f.as_mut(), cfg)?;
            out.push(SuiteEntry {
                fragment: name,
                seed,
                report,
            });
        }
    }
    Ok(out)
}

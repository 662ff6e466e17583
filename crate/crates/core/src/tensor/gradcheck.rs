//! Central finite-difference gradient oracle.
//!
//! A [`GradCheckable`] exposes named `f64` parameter buffers, a scalar loss
//! and analytic gradients. [`grad_check`] perturbs every element by ±step and
//! compares `(L(w+h) − L(w−h)) / 2h` against the analytic value.

use super::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, dropout,
    dropout_backward, relu, relu_backward, softmax_cross_entropy, BatchNormParams, ConvParams,
    Shape4, Tensor4,
};
use crate::{rng_from_seed, Result};

pub trait GradCheckable {
    fn param_names(&self) -> Vec<String>;
    fn param_len(&self, param: usize) -> usize;
    fn nudge(&mut self, param: usize, index: usize, delta: f64);
    fn loss(&mut self) -> Result<f64>;
    /// Sign pattern of every ReLU input seen by the last [`loss`] call.
    /// Fragments with kinks return it so that stencils straddling a kink are
    /// excluded instead of misreported.
    ///
    /// [`loss`]: GradCheckable::loss
    fn relu_pattern(&self) -> Option<Vec<bool>> {
        None
    }
    /// Analytic gradients, one buffer per parameter in `param_names` order.
    fn analytic(&mut self) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel_tol: 1e-3,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub name: String,
    /// Worst relative error among elements whose absolute error exceeds the
    /// floor (0 when there are none).
    pub max_rel: f64,
    pub max_abs: f64,
    /// Elements checked.
    pub checked: usize,
    /// Elements whose stencil crossed a ReLU kink and were not compared.
    pub skipped: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst_rel(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel).fold(0.0, f64::max)
    }

    /// Fraction of elements excluded for straddling a kink.
    pub fn skipped_fraction(&self) -> f64 {
        let skipped: usize = self.params.iter().map(|p| p.skipped).sum();
        let total: usize = self.params.iter().map(|p| p.checked + p.skipped).sum();
        if total == 0 {
            0.0
        } else {
            skipped as f64 / total as f64
        }
    }
}

pub fn grad_check(f: &mut dyn GradCheckable, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let analytic = f.analytic()?;
    f.loss()?;
    let centre_pattern = f.relu_pattern();
    let mut params = Vec::new();
    for (p, name) in f.param_names().into_iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let (mut checked, mut skipped) = (0, 0);
        for i in 0..f.param_len(p) {
            f.nudge(p, i, cfg.step);
            let plus = f.loss()?;
            let plus_pattern = f.relu_pattern();
            f.nudge(p, i, -2.0 * cfg.step);
            let minus = f.loss()?;
            let minus_pattern = f.relu_pattern();
            f.nudge(p, i, cfg.step);
            if plus_pattern != centre_pattern || minus_pattern != centre_pattern {
                skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[p][i];
            let abs = (a - numeric).abs();
            max_abs = max_abs.max(abs);
            if abs > cfg.abs_floor {
                max_rel = max_rel.max(abs / a.abs().max(numeric.abs()));
            }
        }
        params.push(ParamReport {
            name,
            max_rel,
            max_abs,
            checked,
            skipped,
            pass: max_rel <= cfg.rel_tol,
        });
    }
    let pass = params.iter().all(|p| p.pass);
    Ok(GradCheckReport { params, pass })
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Single convolution under the loss `Σ output² / 2`.
pub struct ConvFragment {
    pub input: Tensor4<f64>,
    pub params: ConvParams<f64>,
}

impl ConvFragment {
    pub fn random(input: Shape4, out_c: usize, k: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let x = Tensor4::randn(input, 1.0, &mut rng);
        let w = Tensor4::randn(Shape4::new(out_c, input.c, k, k), 0.5, &mut rng);
        let b = Tensor4::randn(Shape4::new(1, 1, 1, out_c), 0.5, &mut rng).into_data();
        Self {
            input: x,
            params: ConvParams::from_values(w, b).expect("valid kernel"),
        }
    }
}

impl GradCheckable for ConvFragment {
    fn param_names(&self) -> Vec<String> {
        vec!["input".into(), "weight".into(), "bias".into()]
    }

    fn param_len(&self, param: usize) -> usize {
        [self.input.data().len(), self.params.weight.len(), self.params.bias.len()][param]
    }

    fn nudge(&mut self, param: usize, index: usize, delta: f64) {
        match param {
            0 => self.input.data_mut()[index] += delta,
            1 => self.params.weight.value[index] += delta,
            _ => self.params.bias.value[index] += delta,
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let out = conv2d_forward(&self.input, &self.params)?;
        Ok(dot(&out, &out) / 2.0)
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        let out = conv2d_forward(&self.input, &self.params)?;
        let g = conv2d_backward(&self.input, &self.params, &out, true)?;
        Ok(vec![g.input.unwrap().into_data(), g.weight, g.bias])
    }
}

/// Training-mode batch norm under a fixed random projection `Σ r·output`
/// (`Σ output²` would be nearly constant after normalization).
pub struct BatchNormFragment {
    pub input: Tensor4<f64>,
    pub params: BatchNormParams<f64>,
    pub projection: Tensor4<f64>,
}

impl BatchNormFragment {
    pub fn random(input: Shape4, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let x = Tensor4::randn(input, 2.0, &mut rng);
        let mut params = BatchNormParams::new(input.c);
        params.scale.value = Tensor4::randn(Shape4::new(1, 1, 1, input.c), 1.0, &mut rng).into_data();
        params.shift.value = Tensor4::randn(Shape4::new(1, 1, 1, input.c), 1.0, &mut rng).into_data();
        let projection = Tensor4::randn(input, 1.0, &mut rng);
        Self {
            input: x,
            params,
            projection,
        }
    }
}

impl GradCheckable for BatchNormFragment {
    fn param_names(&self) -> Vec<String> {
        vec!["input".into(), "scale".into(), "shift".into()]
    }

    fn param_len(&self, param: usize) -> usize {
        [self.input.data().len(), self.params.channels(), self.params.channels()][param]
    }

    fn nudge(&mut self, param: usize, index: usize, delta: f64) {
        match param {
            0 => self.input.data_mut()[index] += delta,
            1 => self.params.scale.value[index] += delta,
            _ => self.params.shift.value[index] += delta,
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let (out, _) = batchnorm_forward(&self.input, &mut self.params, true)?;
        Ok(dot(&out, &self.projection))
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        let (_, cache) = batchnorm_forward(&self.input, &mut self.params, true)?;
        let g = batchnorm_backward(&cache.expect("training cache"), &self.params, &self.projection)?;
        Ok(vec![g.input.into_data(), g.scale, g.shift])
    }
}

/// ReLU under a random projection. Inputs are kept at least `4·step` away
/// from the kink so the central difference never straddles it.
pub struct ReluFragment {
    pub input: Tensor4<f64>,
    pub projection: Tensor4<f64>,
}

impl ReluFragment {
    pub fn random(input: Shape4, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let x = Tensor4::<f64>::randn(input, 1.0, &mut rng).map(|v| {
            if v.abs() < 4e-3 {
                v.signum() * 4e-3 + v
            } else {
                v
            }
        });
        let projection = Tensor4::randn(input, 1.0, &mut rng);
        Self {
            input: x,
            projection,
        }
    }
}

impl GradCheckable for ReluFragment {
    fn param_names(&self) -> Vec<String> {
        vec!["input".into()]
    }

    fn param_len(&self, _param: usize) -> usize {
        self.input.data().len()
    }

    fn nudge(&mut self, _param: usize, index: usize, delta: f64) {
        self.input.data_mut()[index] += delta;
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(dot(&relu(&self.input), &self.projection))
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        Ok(vec![relu_backward(&self.input, &self.projection)?.into_data()])
    }
}

/// Training-mode dropout with a mask drawn from a fixed seed on every
/// evaluation, under a random projection.
pub struct DropoutFragment {
    pub input: Tensor4<f64>,
    pub projection: Tensor4<f64>,
    pub rate: f64,
    pub mask_seed: u64,
}

impl DropoutFragment {
    pub fn random(input: Shape4, rate: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        Self {
            input: Tensor4::randn(input, 1.0, &mut rng),
            projection: Tensor4::randn(input, 1.0, &mut rng),
            rate,
            mask_seed: seed ^ 0x5eed,
        }
    }

    fn run(&self) -> Result<(Tensor4<f64>, Option<Vec<f64>>)> {
        dropout(&self.input, self.rate, true, &mut rng_from_seed(self.mask_seed))
    }
}

impl GradCheckable for DropoutFragment {
    fn param_names(&self) -> Vec<String> {
        vec!["input".into()]
    }

    fn param_len(&self, _param: usize) -> usize {
        self.input.data().len()
    }

    fn nudge(&mut self, _param: usize, index: usize, delta: f64) {
        self.input.data_mut()[index] += delta;
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(dot(&self.run()?.0, &self.projection))
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        let (_, mask) = self.run()?;
        Ok(vec![dropout_backward(mask.as_deref(), &self.projection)?.into_data()])
    }
}

/// Softmax cross-entropy with respect to the logits.
pub struct SoftmaxFragment {
    pub logits: Tensor4<f64>,
    pub labels: Vec<usize>,
}

impl SoftmaxFragment {
    pub fn random(n: usize, classes: usize, seed: u64) -> Self {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let logits = Tensor4::randn(Shape4::new(n, classes, 1, 1), 2.0, &mut rng);
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Self { logits, labels }
    }
}

impl GradCheckable for SoftmaxFragment {
    fn param_names(&self) -> Vec<String> {
        vec!["logits".into()]
    }

    fn param_len(&self, _param: usize) -> usize {
        self.logits.data().len()
    }

    fn nudge(&mut self, _param: usize, index: usize, delta: f64) {
        self.logits.data_mut()[index] += delta;
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(softmax_cross_entropy(&self.logits, &self.labels)?.0)
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        Ok(vec![softmax_cross_entropy(&self.logits, &self.labels)?.1.into_data()])
    }
}

/// Every layer-level fragment for one seed, labelled for reporting.
pub fn layer_fragments(seed: u64) -> Vec<(String, Box<dyn GradCheckable>)> {
    let shape = Shape4::new(2, 3, 5, 5);
    vec![
        ("conv1x1".into(), Box::new(ConvFragment::random(shape, 4, 1, seed)) as Box<dyn GradCheckable>),
        ("conv3x3".into(), Box::new(ConvFragment::random(shape, 4, 3, seed))),
        ("conv5x5".into(), Box::new(ConvFragment::random(shape, 4, 5, seed))),
        ("batchnorm".into(), Box::new(BatchNormFragment::random(Shape4::new(4, 2, 3, 3), seed))),
        ("relu".into(), Box::new(ReluFragment::random(shape, seed))),
        ("dropout".into(), Box::new(DropoutFragment::random(shape, 0.5, seed))),
        ("softmax_ce".into(), Box::new(SoftmaxFragment::random(8, 5, seed))),
    ]
}

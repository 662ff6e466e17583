use super::{Param, Real, Shape4, Tensor4};
use crate::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization state.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub scale: Param<T>,
    pub shift: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    /// Weight of the newest batch in the running-statistics EMA.
    pub momentum: f64,
}

impl<T: Real> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Param::new(vec![T::one(); channels]),
            shift: Param::zeros(channels),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Resets running statistics to mean 0, variance 1.
    pub fn reset_running_stats(&mut self) {
        self.running_mean.fill(T::zero());
        self.running_var.fill(T::one());
    }

    pub fn cast<U: Real>(&self) -> BatchNormParams<U> {
        BatchNormParams {
            scale: self.scale.cast(),
            shift: self.shift.cast(),
            running_mean: self.running_mean.iter().map(|v| U::of(v.f64())).collect(),
            running_var: self.running_var.iter().map(|v| U::of(v.f64())).collect(),
            epsilon: self.epsilon,
            momentum: self.momentum,
        }
    }
}

/// Values saved by a training-mode forward for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor4<T>,
    pub inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor4<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

fn check(s: Shape4, p: &BatchNormParams<impl Real>) -> Result<()> {
    if s.c != p.channels() {
        return Err(Error::shape(
            "batchnorm",
            format!("{} channels", p.channels()),
            s,
        ));
    }
    Ok(())
}

/// Eval-mode normalization with the running statistics.
pub fn batchnorm_eval<T: Real>(input: &Tensor4<T>, p: &BatchNormParams<T>) -> Result<Tensor4<T>> {
    let s = input.shape();
    check(s, p)?;
    let plane = s.plane();
    let mut out = Tensor4::zeros(s);
    for c in 0..s.c {
        let inv = 1.0 / (p.running_var[c].f64() + p.epsilon).sqrt();
        let mean = p.running_mean[c].f64();
        let (g, b) = (p.scale.value[c].f64(), p.shift.value[c].f64());
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for i in base..base + plane {
                out.data_mut()[i] = T::of(g * (input.data()[i].f64() - mean) * inv + b);
            }
        }
    }
    Ok(out)
}

/// Training mode normalizes with the batch statistics over `(n, h, w)` and
/// folds them into the running statistics (unbiased variance); eval mode
/// uses the running statistics. The cache is returned in training mode only.
pub fn batchnorm_forward<T: Real>(
    input: &Tensor4<T>,
    p: &mut BatchNormParams<T>,
    training: bool,
) -> Result<(Tensor4<T>, Option<BatchNormCache<T>>)> {
    let s = input.shape();
    check(s, p)?;
    let plane = s.plane();
    let m = s.n * plane;
    let mut out = Tensor4::zeros(s);

    if !training {
        return Ok((batchnorm_eval(input, p)?, None));
    }

    if m < 2 {
        return Err(Error::Degenerate(format!(
            "training-mode batch norm needs n·h·w ≥ 2, got input {s}"
        )));
    }
    let mut normalized = Tensor4::zeros(s);
    let mut inv_std = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut sum = 0.0f64;
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            sum += input.data()[base..base + plane].iter().map(|v| v.f64()).sum::<f64>();
        }
        let mean = sum / m as f64;
        let mut sq = 0.0f64;
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            sq += input.data()[base..base + plane]
                .iter()
                .map(|v| (v.f64() - mean).powi(2))
                .sum::<f64>();
        }
        let var = sq / m as f64;
        let inv = 1.0 / (var + p.epsilon).sqrt();
        inv_std.push(inv);
        let (g, b) = (p.scale.value[c].f64(), p.shift.value[c].f64());
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for i in base..base + plane {
                let xh = (input.data()[i].f64() - mean) * inv;
                normalized.data_mut()[i] = T::of(xh);
                out.data_mut()[i] = T::of(g * xh + b);
            }
        }
        let unbiased = var * m as f64 / (m - 1) as f64;
        let mom = p.momentum;
        p.running_mean[c] = T::of((1.0 - mom) * p.running_mean[c].f64() + mom * mean);
        p.running_var[c] = T::of((1.0 - mom) * p.running_var[c].f64() + mom * unbiased);
    }
    Ok((out, Some(BatchNormCache { normalized, inv_std })))
}

/// Gradient of the training-mode forward:
/// `dx = scale·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))`.
pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    p: &BatchNormParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<BatchNormGrads<T>> {
    let s = cache.normalized.shape();
    check(s, p)?;
    if grad_out.shape() != s {
        return Err(Error::shape("batchnorm_backward", s, grad_out.shape()));
    }
    let plane = s.plane();
    let m = (s.n * plane) as f64;
    let mut gi = Tensor4::zeros(s);
    let mut gscale = Vec::with_capacity(s.c);
    let mut gshift = Vec::with_capacity(s.c);
    let xh = cache.normalized.data();
    let dy = grad_out.data();
    for c in 0..s.c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xh = 0.0f64;
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for i in base..base + plane {
                sum_dy += dy[i].f64();
                sum_dy_xh += dy[i].f64() * xh[i].f64();
            }
        }
        gscale.push(T::of(sum_dy_xh));
        gshift.push(T::of(sum_dy));
        let k = p.scale.value[c].f64() * cache.inv_std[c] / m;
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for i in base..base + plane {
                gi.data_mut()[i] =
                    T::of(k * (m * dy[i].f64() - sum_dy - xh[i].f64() * sum_dy_xh));
            }
        }
    }
    Ok(BatchNormGrads {
        input: gi,
        scale: gscale,
        shift: gshift,
    })
}

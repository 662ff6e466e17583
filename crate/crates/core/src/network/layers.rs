use std::collections::BTreeMap;

use super::{LayerName, NamedTensor, ParamInfo, ParamKind};
use crate::tensor::{
    batchnorm_backward, batchnorm_eval, batchnorm_forward, conv2d_backward, conv2d_forward, relu,
    relu_backward, BatchNormCache, BatchNormParams, ConvParams, Param, Real, Tensor4,
};
use crate::{Error, Result};

pub type ParamVisitor<'f, T> = dyn FnMut(ParamInfo, &mut Param<T>) -> Result<()> + 'f;

/// Convolution optionally followed by batch norm and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn<T> {
    pub name: LayerName,
    pub conv: ConvParams<T>,
    pub bn: Option<BatchNormParams<T>>,
    pub activate: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct ConvBnTape<T> {
    input: Tensor4<T>,
    bn: Option<BatchNormCache<T>>,
    pre_act: Option<Tensor4<T>>,
}

impl<T: Real> ConvBnTape<T> {
    pub(crate) fn relu_signs(&self, out: &mut Vec<bool>) {
        if let Some(pre) = &self.pre_act {
            out.extend(pre.data().iter().map(|v| *v > T::zero()));
        }
    }
}

impl<T: Real> ResTape<T> {
    pub(crate) fn relu_signs(&self, out: &mut Vec<bool>) {
        self.conv1.relu_signs(out);
        out.extend(self.sum.data().iter().map(|v| *v > T::zero()));
    }
}

impl<T: Real> ConvBn<T> {
    pub(crate) fn new(
        name: LayerName,
        out_c: usize,
        in_c: usize,
        k: usize,
        bn: bool,
        activate: bool,
    ) -> Result<Self> {
        Ok(Self {
            name,
            conv: ConvParams::zeros(out_c, in_c, k)?,
            bn: bn.then(|| BatchNormParams::new(out_c)),
            activate,
        })
    }

    /// Gaussian weights with the layer's init std, zero biases, fresh BN.
    pub(crate) fn init(&mut self, rng: &mut crate::Rng) {
        let w = Tensor4::<T>::randn(self.conv.weight_shape(), self.name.init_std(), rng);
        self.conv.weight.reset(w.into_data());
        self.conv.bias.reset(vec![T::zero(); self.conv.out_c]);
        if let Some(bn) = &mut self.bn {
            *bn = BatchNormParams::new(self.conv.out_c);
        }
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, ConvBnTape<T>)> {
        let mut h = conv2d_forward(x, &self.conv)?;
        let mut cache = None;
        if let Some(bn) = &mut self.bn {
            let (out, c) = batchnorm_forward(&h, bn, true)?;
            h = out;
            cache = c;
        }
        let (out, pre_act) = if self.activate {
            (relu(&h), Some(h))
        } else {
            (h, None)
        };
        Ok((
            out,
            ConvBnTape {
                input: x.clone(),
                bn: cache,
                pre_act,
            },
        ))
    }

    pub(crate) fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut h = conv2d_forward(x, &self.conv)?;
        if let Some(bn) = &self.bn {
            h = batchnorm_eval(&h, bn)?;
        }
        Ok(if self.activate { relu(&h) } else { h })
    }

    /// Writes parameter gradients and returns the input gradient when asked.
    pub(crate) fn backward(
        &mut self,
        tape: &ConvBnTape<T>,
        grad_out: &Tensor4<T>,
        need_input: bool,
    ) -> Result<Option<Tensor4<T>>> {
        let mut g = match &tape.pre_act {
            Some(pre) => relu_backward(pre, grad_out)?,
            None => grad_out.clone(),
        };
        if let Some(bn) = &mut self.bn {
            let cache = tape
                .bn
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{}: missing batch-norm tape", self.name)))?;
            let bg = batchnorm_backward(cache, bn, &g)?;
            bn.scale.grad = bg.scale;
            bn.shift.grad = bg.shift;
            g = bg.input;
        }
        let cg = conv2d_backward(&tape.input, &self.conv, &g, need_input)?;
        self.conv.weight.grad = cg.weight;
        self.conv.bias.grad = cg.bias;
        Ok(cg.input)
    }

    pub(crate) fn visit_params(&mut self, f: &mut ParamVisitor<'_, T>) -> Result<()> {
        let layer = self.name;
        f(ParamInfo { layer, kind: ParamKind::Weight }, &mut self.conv.weight)?;
        f(ParamInfo { layer, kind: ParamKind::Bias }, &mut self.conv.bias)?;
        if let Some(bn) = &mut self.bn {
            f(ParamInfo { layer, kind: ParamKind::BnScale }, &mut bn.scale)?;
            f(ParamInfo { layer, kind: ParamKind::BnShift }, &mut bn.shift)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.as_ref().map_or(0, |b| 2 * b.channels())
    }

    /// Copies weights, biases and BN affine parameters (not running stats or
    /// momentum) from a layer of identical shape.
    pub(crate) fn copy_trainable_from(&mut self, other: &Self) -> Result<()> {
        if self.conv.weight_shape() != other.conv.weight_shape() {
            return Err(Error::Transfer(format!(
                "{}: weight shape {} vs {}",
                self.name,
                self.conv.weight_shape(),
                other.conv.weight_shape()
            )));
        }
        self.conv.weight.reset(other.conv.weight.value.clone());
        self.conv.bias.reset(other.conv.bias.value.clone());
        if let (Some(dst), Some(src)) = (&mut self.bn, &other.bn) {
            dst.scale.reset(src.scale.value.clone());
            dst.shift.reset(src.shift.value.clone());
            dst.reset_running_stats();
        }
        Ok(())
    }

    pub(crate) fn state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        let base = format!("{prefix}{}", self.name);
        let s = self.conv.weight_shape();
        let wshape = vec![s.n, s.c, s.h, s.w];
        let c = vec![self.conv.out_c];
        let mut push = |suffix: &str, shape: &[usize], p: &Param<T>| {
            out.push(NamedTensor::new(format!("{base}.{suffix}"), shape.to_vec(), p.value.clone()));
            out.push(NamedTensor::new(
                format!("{base}.{suffix}.velocity"),
                shape.to_vec(),
                p.velocity.clone(),
            ));
        };
        push("weight", &wshape, &self.conv.weight);
        push("bias", &c, &self.conv.bias);
        if let Some(bn) = &self.bn {
            push("bn.scale", &c, &bn.scale);
            push("bn.shift", &c, &bn.shift);
            out.push(NamedTensor::new(format!("{base}.bn.running_mean"), c.clone(), bn.running_mean.clone()));
            out.push(NamedTensor::new(format!("{base}.bn.running_var"), c, bn.running_var.clone()));
        }
    }

    pub(crate) fn load_state(
        &mut self,
        prefix: &str,
        map: &mut BTreeMap<String, NamedTensor<T>>,
    ) -> Result<()> {
        let base = format!("{prefix}{}", self.name);
        let mut take = |suffix: &str, len: usize| -> Result<Vec<T>> {
            let name = format!("{base}.{suffix}");
            let t = map
                .remove(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor `{name}`")))?;
            if t.data.len() != len {
                return Err(Error::Data(format!(
                    "tensor `{name}` has {} elements, expected {len}",
                    t.data.len()
                )));
            }
            Ok(t.data)
        };
        let (wl, c) = (self.conv.weight.len(), self.conv.out_c);
        self.conv.weight.value = take("weight", wl)?;
        self.conv.weight.velocity = take("weight.velocity", wl)?;
        self.conv.bias.value = take("bias", c)?;
        self.conv.bias.velocity = take("bias.velocity", c)?;
        if let Some(bn) = &mut self.bn {
            bn.scale.value = take("bn.scale", c)?;
            bn.scale.velocity = take("bn.scale.velocity", c)?;
            bn.shift.value = take("bn.shift", c)?;
            bn.shift.velocity = take("bn.shift.velocity", c)?;
            bn.running_mean = take("bn.running_mean", c)?;
            bn.running_var = take("bn.running_var", c)?;
        }
        Ok(())
    }

    pub(crate) fn cast<U: Real>(&self) -> ConvBn<U> {
        ConvBn {
            name: self.name,
            conv: self.conv.cast(),
            bn: self.bn.as_ref().map(BatchNormParams::cast),
            activate: self.activate,
        }
    }
}

/// `relu(x + conv2(conv1(x)))` where conv1 carries BN+ReLU and conv2 BN only.
#[derive(Clone, Debug, PartialEq)]
pub struct ResModule<T> {
    pub conv1: ConvBn<T>,
    pub conv2: ConvBn<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct ResTape<T> {
    conv1: ConvBnTape<T>,
    conv2: ConvBnTape<T>,
    sum: Tensor4<T>,
}

impl<T: Real> ResModule<T> {
    /// `module` is 1-based.
    pub(crate) fn new(module: usize, filters: usize) -> Result<Self> {
        Ok(Self {
            conv1: ConvBn::new(LayerName::Res { module, conv: 1 }, filters, filters, 1, true, true)?,
            conv2: ConvBn::new(LayerName::Res { module, conv: 2 }, filters, filters, 1, true, false)?,
        })
    }

    pub(crate) fn init(&mut self, rng: &mut crate::Rng) {
        self.conv1.init(rng);
        self.conv2.init(rng);
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, ResTape<T>)> {
        let (t, conv1) = self.conv1.forward_train(x)?;
        let (u, conv2) = self.conv2.forward_train(&t)?;
        let sum = u.add(x)?;
        Ok((relu(&sum), ResTape { conv1, conv2, sum }))
    }

    pub(crate) fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let t = self.conv1.forward_eval(x)?;
        let u = self.conv2.forward_eval(&t)?;
        Ok(relu(&u.add(x)?))
    }

    pub(crate) fn backward(&mut self, tape: &ResTape<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let gs = relu_backward(&tape.sum, grad_out)?;
        let gt = self.conv2.backward(&tape.conv2, &gs, true)?.expect("input grad requested");
        let gx = self.conv1.backward(&tape.conv1, &gt, true)?.expect("input grad requested");
        gx.add(&gs)
    }

    pub(crate) fn visit_params(&mut self, f: &mut ParamVisitor<'_, T>) -> Result<()> {
        self.conv1.visit_params(f)?;
        self.conv2.visit_params(f)
    }

    pub fn layers(&self) -> [&ConvBn<T>; 2] {
        [&self.conv1, &self.conv2]
    }

    pub(crate) fn layers_mut(&mut self) -> [&mut ConvBn<T>; 2] {
        [&mut self.conv1, &mut self.conv2]
    }

    pub(crate) fn cast<U: Real>(&self) -> ResModule<U> {
        ResModule {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
        }
    }
}

use super::Real;

/// A trainable buffer with its latest gradient and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub velocity: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![T::zero(); n],
            velocity: vec![T::zero(); n],
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![T::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Replaces the value and clears gradient and momentum.
    pub fn reset(&mut self, value: Vec<T>) {
        *self = Self::new(value);
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect();
        Param {
            value: c(&self.value),
            grad: c(&self.grad),
            velocity: c(&self.velocity),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One momentum-SGD update using the gradient stored in `param.grad`:
///
/// `v ← momentum·v − lr·(g + weight_decay·w)`, `w ← w + v`.
///
/// On a non-finite gradient nothing is modified and the offending element
/// index is returned.
pub fn sgd_step<T: Real>(param: &mut Param<T>, hyper: SgdHyper) -> Result<(), usize> {
    if let Some(i) = param.grad.iter().position(|g| !g.is_finite()) {
        return Err(i);
    }
    let Param {
        value,
        grad,
        velocity,
    } = param;
    for ((w, &g), v) in value.iter_mut().zip(grad.iter()).zip(velocity.iter_mut()) {
        let wf = w.f64();
        let vf = hyper.momentum * v.f64() - hyper.lr * (g.f64() + hyper.weight_decay * wf);
        *v = T::of(vf);
        *w = T::of(wf + vf);
    }
    Ok(())
}
